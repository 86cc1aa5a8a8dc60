#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "oprobe/backend.hpp"
#include "oprobe/errors.hpp"

namespace oprobe {

/**
 * Probabilistic finite automaton standing in for a model: each state owns a
 * next-token distribution, each (state, token) pair a successor. Emitting the
 * end token finishes the walk. Deterministic by construction, so searches and
 * decodes over it have exactly computable ground truth.
 *
 * Text form, one directive per line ('#' starts a comment):
 *
 *   end <token>
 *   start <state-id>            (optional; default is the first state line)
 *   state <state-id>
 *   edge <token> <prob> <next-state-id>
 *
 * File tokens are whitespace-free; `\s`, `\n` and `\\` escapes expand to
 * space, newline and backslash. Edges for the end token may use next-id -1.
 */
struct MockAutomaton {
  struct Edge {
    std::string token;
    double prob = 0.0;
    int next = -1;
  };

  std::map<int, std::vector<Edge>> states;
  int start = 0;
  std::string end_token = "<end>";

  void add_edge(int state, std::string token, double prob, int next = -1) {
    states[state].push_back({std::move(token), prob, next});
  }

  TokenDistribution distribution(int state) const {
    auto it = states.find(state);
    if (it == states.end()) throw ConfigError("automaton has no state " + std::to_string(state));
    TokenDistribution dist;
    for (const Edge& e : it->second) dist.entries.push_back({e.token, e.prob});
    dist.truncation_k = static_cast<int>(dist.entries.size());
    dist.sort_entries();
    return dist;
  }

  int transition(int state, const std::string& token) const {
    auto it = states.find(state);
    if (it == states.end()) throw ConfigError("automaton has no state " + std::to_string(state));
    for (const Edge& e : it->second) {
      if (e.token == token) return e.next;
    }
    throw ConfigError("state " + std::to_string(state) + " has no edge for token '" + token + "'");
  }

  void validate(double tol = 1e-9) const {
    if (end_token.empty()) throw ConfigError("automaton end token is empty");
    if (!states.count(start)) throw ConfigError("automaton start state missing");
    for (const auto& [id, edges] : states) {
      if (edges.empty()) throw ConfigError("state " + std::to_string(id) + " has no edges");
      double mass = 0.0;
      for (const Edge& e : edges) {
        if (e.prob <= 0.0)
          throw ConfigError("edge '" + e.token + "' in state " + std::to_string(id) +
                            " needs probability > 0");
        mass += e.prob;
        if (e.token != end_token && !states.count(e.next))
          throw ConfigError("edge '" + e.token + "' in state " + std::to_string(id) +
                            " targets missing state " + std::to_string(e.next));
      }
      if (mass < 1.0 - tol || mass > 1.0 + tol)
        throw ConfigError("state " + std::to_string(id) + " probabilities sum to " +
                          std::to_string(mass) + ", expected 1");
      for (std::size_t i = 0; i < edges.size(); ++i)
        for (std::size_t j = i + 1; j < edges.size(); ++j)
          if (edges[i].token == edges[j].token)
            throw ConfigError("state " + std::to_string(id) + " repeats token '" +
                              edges[i].token + "'");
    }
  }

  static std::string unescape_token(const std::string& raw) {
    std::string out;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 1 < raw.size()) {
        const char c = raw[++i];
        if (c == 's') out += ' ';
        else if (c == 'n') out += '\n';
        else if (c == '\\') out += '\\';
        else { out += '\\'; out += c; }
      } else {
        out += raw[i];
      }
    }
    return out;
  }

  static MockAutomaton from_string(const std::string& text) {
    MockAutomaton a;
    a.end_token.clear();
    bool start_set = false;
    bool first_state_seen = false;
    int current = -1;

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      std::istringstream ls(line);
      std::string kw;
      if (!(ls >> kw)) continue;

      auto fail = [&](const std::string& why) {
        throw ConfigError("automaton line " + std::to_string(lineno) + ": " + why);
      };

      if (kw == "end") {
        std::string tok;
        if (!(ls >> tok)) fail("end needs a token");
        a.end_token = unescape_token(tok);
      } else if (kw == "start") {
        if (!(ls >> a.start)) fail("start needs a state id");
        start_set = true;
      } else if (kw == "state") {
        if (!(ls >> current)) fail("state needs an id");
        a.states[current];  // declare even before any edge
        if (!first_state_seen && !start_set) a.start = current;
        first_state_seen = true;
      } else if (kw == "edge") {
        std::string tok;
        double prob = 0.0;
        int next = -1;
        if (current < 0) fail("edge before any state");
        if (!(ls >> tok >> prob)) fail("edge needs <token> <prob> [next-id]");
        ls >> next;  // optional for end-token edges
        a.add_edge(current, unescape_token(tok), prob, next);
      } else {
        fail("unknown directive '" + kw + "'");
      }
    }
    if (a.end_token.empty()) throw ConfigError("automaton text never declares an end token");
    a.validate();
    return a;
  }

  static MockAutomaton from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NoSuchFile("cannot open automaton file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str());
  }
};

/// Backend over a MockAutomaton. The prompt text is ignored; the state is
/// determined entirely by the continuation tokens walked from the start.
class MockBackend : public Backend {
 public:
  explicit MockBackend(MockAutomaton automaton) : automaton_(std::move(automaton)) {
    automaton_.validate();
  }

  const MockAutomaton& automaton() const { return automaton_; }

  TokenDistribution next_distribution(const Continuation& cont, const DecodingParams&) override {
    int state = automaton_.start;
    for (const std::string& tok : cont.tokens) {
      if (tok == automaton_.end_token)
        throw ConfigError("continuation walks past the end token");
      state = automaton_.transition(state, tok);
    }
    return automaton_.distribution(state);
  }

  std::optional<std::string> stop_token() const override { return automaton_.end_token; }

 private:
  MockAutomaton automaton_;
};

}  // namespace oprobe
