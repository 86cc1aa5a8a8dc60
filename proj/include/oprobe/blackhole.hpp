#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "oprobe/backend.hpp"
#include "oprobe/errors.hpp"

namespace oprobe {

/**
 * A reasoning blackhole is a decode that collapses into a short token cycle
 * emitted with near-certainty. Detection demands both signals at once:
 * sustained top-1 probability (windowed average) and an actual repeating
 * token cycle.
 */
struct BlackholeConfig {
  int window = 50;           // moving-average width, in steps
  double prob_floor = 0.99;  // windowed top-1 average must stay at or above
  int min_run = 50;          // consecutive qualifying windows required
  int min_cycles = 3;        // full repetitions before a cycle counts
  int max_period = 64;       // longest cycle period searched

  void validate() const {
    if (window < 1 || min_run < 1 || min_cycles < 1 || max_period < 1)
      throw ConfigError("blackhole parameters must be positive");
    if (prob_floor < 0.0 || prob_floor > 1.0)
      throw ConfigError("prob_floor must be in [0, 1]");
  }
};

/// Trailing-window means: element k covers input[k .. k+window-1].
inline std::vector<double> moving_average(const std::vector<double>& xs, int window) {
  if (window < 1) throw ConfigError("window must be positive");
  std::vector<double> out;
  if (xs.size() < static_cast<std::size_t>(window)) return out;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) sum += xs[i];
  out.push_back(sum / window);
  for (std::size_t i = window; i < xs.size(); ++i) {
    sum += xs[i] - xs[i - window];
    out.push_back(sum / window);
  }
  return out;
}

struct CycleInfo {
  bool found = false;
  int period = 0;   // minimal period, in tokens
  int onset = 0;    // first index of the maximal periodic suffix
  int repeats = 0;  // full cycle repetitions inside that suffix
};

/**
 * Smallest period p <= max_period whose periodic suffix covers at least
 * min_cycles full repetitions. Scanning p in ascending order makes the first
 * hit the minimal period.
 */
inline CycleInfo detect_cycle(const std::vector<std::string>& tokens, int min_cycles = 3,
                              int max_period = 64) {
  if (min_cycles < 1 || max_period < 1) throw ConfigError("cycle parameters must be positive");
  const int n = static_cast<int>(tokens.size());
  CycleInfo info;
  for (int p = 1; p <= max_period; ++p) {
    if (n < p * min_cycles) break;
    int j = n - 1;
    while (j - p >= 0 && tokens[j] == tokens[j - p]) --j;
    const int length = (n - 1 - j) + p;  // matched extensions plus the base cycle
    if (length / p >= min_cycles) {
      info.found = true;
      info.period = p;
      info.onset = n - length;
      info.repeats = length / p;
      return info;
    }
  }
  return info;
}

struct BlackholeReport {
  bool detected = false;
  CycleInfo cycle;
  int prob_run_start = -1;  // step index where the qualifying window run begins
  int prob_run_length = 0;  // qualifying windows in that run
  int onset = -1;           // later of the two signals; -1 when not detected
};

inline BlackholeReport detect_blackhole(const std::vector<std::string>& tokens,
                                        const std::vector<double>& top1_probs,
                                        const BlackholeConfig& cfg = {}) {
  cfg.validate();
  if (tokens.empty()) throw EmptyTrace("no steps to analyze");
  if (tokens.size() != top1_probs.size())
    throw ConfigError("token and probability counts differ");

  BlackholeReport rep;
  rep.cycle = detect_cycle(tokens, cfg.min_cycles, cfg.max_period);

  const std::vector<double> avg = moving_average(top1_probs, cfg.window);
  int run = 0;
  for (std::size_t k = 0; k < avg.size(); ++k) {
    if (avg[k] >= cfg.prob_floor) {
      ++run;
      if (run >= cfg.min_run && rep.prob_run_start < 0) {
        // report in step indices: window k ends at step k + window - 1
        rep.prob_run_start = static_cast<int>(k) - run + 1 + cfg.window - 1;
        rep.prob_run_length = run;
      }
      if (rep.prob_run_start >= 0) rep.prob_run_length = run;
    } else {
      if (rep.prob_run_start >= 0) break;  // first qualifying run is the one reported
      run = 0;
    }
  }

  rep.detected = rep.cycle.found && rep.prob_run_start >= 0;
  if (rep.detected) rep.onset = std::max(rep.cycle.onset, rep.prob_run_start);
  return rep;
}

inline BlackholeReport detect_blackhole(const GenerationTrace& trace,
                                        const BlackholeConfig& cfg = {}) {
  std::vector<std::string> tokens;
  std::vector<double> probs;
  tokens.reserve(trace.steps.size());
  probs.reserve(trace.steps.size());
  for (const auto& s : trace.steps) {
    tokens.push_back(s.token);
    probs.push_back(s.top1_prob);
  }
  return detect_blackhole(tokens, probs, cfg);
}

/// Share of traces flagged, in percent rounded to one decimal.
inline double blackhole_rate(const std::vector<BlackholeReport>& reports) {
  if (reports.empty()) throw EmptyInput("no reports to aggregate");
  std::size_t hits = 0;
  for (const auto& r : reports)
    if (r.detected) ++hits;
  const double pct = 100.0 * static_cast<double>(hits) / static_cast<double>(reports.size());
  return std::round(pct * 10.0) / 10.0;
}

// ---------------------------------------------------------------------------
// attention score dumps (causal, lower-triangular) and locality

struct AttentionDump {
  std::uint32_t version = 1;
  std::uint32_t layer = 0;
  std::uint32_t head = 0;
  std::uint32_t n = 0;
  std::vector<double> scores;  // row-major lower triangle, n*(n+1)/2 values

  static std::size_t triangle_size(std::uint32_t n) {
    return static_cast<std::size_t>(n) * (n + 1) / 2;
  }

  double at(std::uint32_t i, std::uint32_t j) const {
    if (j > i || i >= n) throw NonTriangularDump("index above the diagonal");
    return scores[static_cast<std::size_t>(i) * (i + 1) / 2 + j];
  }

  double& at(std::uint32_t i, std::uint32_t j) {
    if (j > i || i >= n) throw NonTriangularDump("index above the diagonal");
    return scores[static_cast<std::size_t>(i) * (i + 1) / 2 + j];
  }

  void validate() const {
    if (scores.size() != triangle_size(n))
      throw NonTriangularDump("score count does not match a lower triangle");
  }
};

/// Fraction of absolute score mass within |i - j| <= band of the diagonal.
inline double attention_locality(const AttentionDump& dump, int band) {
  if (band < 0) throw ConfigError("band must be >= 0");
  dump.validate();
  double total = 0.0, near = 0.0;
  std::size_t idx = 0;
  for (std::uint32_t i = 0; i < dump.n; ++i) {
    for (std::uint32_t j = 0; j <= i; ++j, ++idx) {
      const double m = std::abs(dump.scores[idx]);
      total += m;
      if (i - j <= static_cast<std::uint32_t>(band)) near += m;
    }
  }
  if (total == 0.0) throw ZeroMass("attention dump holds no score mass");
  return near / total;
}

struct LocalityReport {
  struct HeadLocality {
    std::uint32_t layer = 0;
    std::uint32_t head = 0;
    double locality = 0.0;
  };
  std::vector<HeadLocality> heads;
  std::map<std::uint32_t, double> per_layer;  // mean over the layer's heads
  double overall = 0.0;                       // mean of the layer means
};

inline LocalityReport attention_locality_report(const std::vector<AttentionDump>& dumps,
                                                int band) {
  if (dumps.empty()) throw EmptyInput("no attention dumps");
  LocalityReport rep;
  std::map<std::uint32_t, std::pair<double, int>> acc;
  for (const auto& d : dumps) {
    const double loc = attention_locality(d, band);
    rep.heads.push_back({d.layer, d.head, loc});
    auto& [sum, count] = acc[d.layer];
    sum += loc;
    ++count;
  }
  double layer_sum = 0.0;
  for (const auto& [layer, sc] : acc) {
    rep.per_layer[layer] = sc.first / sc.second;
    layer_sum += rep.per_layer[layer];
  }
  rep.overall = layer_sum / static_cast<double>(acc.size());
  return rep;
}

// ---------------------------------------------------------------------------
// file formats

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ConfigError("attention dump truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw ConfigError("attention dump truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace detail

/// Binary layout: "ATTD", then version, layer, head, n as little-endian u32,
/// then n*(n+1)/2 little-endian f64 lower-triangle scores in row-major order.
inline void write_attention_dump(std::ostream& out, const AttentionDump& dump) {
  dump.validate();
  out.write("ATTD", 4);
  detail::put_u32(out, dump.version);
  detail::put_u32(out, dump.layer);
  detail::put_u32(out, dump.head);
  detail::put_u32(out, dump.n);
  for (double s : dump.scores) detail::put_f64(out, s);
}

inline void write_attention_dump(const std::string& path, const AttentionDump& dump) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NoSuchFile("cannot write attention dump: " + path);
  write_attention_dump(out, dump);
}

inline AttentionDump read_attention_dump(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string_view(magic, 4) != "ATTD")
    throw ConfigError("not an attention dump (bad magic)");
  AttentionDump dump;
  dump.version = detail::get_u32(in);
  dump.layer = detail::get_u32(in);
  dump.head = detail::get_u32(in);
  dump.n = detail::get_u32(in);
  const std::size_t count = AttentionDump::triangle_size(dump.n);
  dump.scores.resize(count);
  for (std::size_t i = 0; i < count; ++i) dump.scores[i] = detail::get_f64(in);
  return dump;
}

inline AttentionDump read_attention_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NoSuchFile("cannot open attention dump: " + path);
  return read_attention_dump(in);
}

/// CSV alternative: header "i,j,score", one lower-triangle entry per line.
/// Missing entries default to 0; any j > i is rejected.
inline AttentionDump read_attention_csv(std::istream& in, std::uint32_t layer = 0,
                                        std::uint32_t head = 0) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty attention csv");
  std::vector<std::tuple<std::uint32_t, std::uint32_t, double>> rows;
  std::uint32_t max_i = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string si, sj, ss;
    if (!std::getline(ls, si, ',') || !std::getline(ls, sj, ',') || !std::getline(ls, ss))
      throw ConfigError("attention csv line " + std::to_string(lineno) + " malformed");
    const long i = std::stol(si), j = std::stol(sj);
    if (i < 0 || j < 0) throw ConfigError("negative index in attention csv");
    if (j > i)
      throw NonTriangularDump("entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") above the diagonal");
    rows.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                      std::stod(ss));
    max_i = std::max(max_i, static_cast<std::uint32_t>(i));
  }
  AttentionDump dump;
  dump.layer = layer;
  dump.head = head;
  dump.n = rows.empty() ? 0 : max_i + 1;
  dump.scores.assign(AttentionDump::triangle_size(dump.n), 0.0);
  for (const auto& [i, j, s] : rows) dump.at(i, j) = s;
  return dump;
}

inline AttentionDump read_attention_csv(const std::string& path, std::uint32_t layer = 0,
                                        std::uint32_t head = 0) {
  std::ifstream in(path);
  if (!in) throw NoSuchFile("cannot open attention csv: " + path);
  return read_attention_csv(in, layer, head);
}

// ---------------------------------------------------------------------------
// decode trace CSV: index,token,chosen_prob,top1_prob

namespace detail {

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

/// Split one CSV record that is already known to end at a record boundary.
inline std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline void write_trace_csv(std::ostream& out, const GenerationTrace& trace) {
  out << "index,token,chosen_prob,top1_prob\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const auto& s = trace.steps[i];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", s.chosen_prob, s.top1_prob);
    out << i << ',' << detail::csv_quote(s.token) << ',' << buf << '\n';
  }
}

inline void write_trace_csv(const std::string& path, const GenerationTrace& trace) {
  std::ofstream out(path);
  if (!out) throw NoSuchFile("cannot write trace csv: " + path);
  write_trace_csv(out, trace);
}

/// Tokens may span lines (quoted newlines), so records are re-assembled until
/// their quotes balance.
inline GenerationTrace read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw EmptyTrace("trace csv has no header");
  GenerationTrace trace;
  std::string record;
  while (std::getline(in, line)) {
    record += line;
    const std::size_t quotes = std::count(record.begin(), record.end(), '"');
    if (quotes % 2 == 1) {
      record += '\n';
      continue;
    }
    if (record.empty()) continue;
    const auto fields = detail::csv_fields(record);
    record.clear();
    if (fields.size() != 4) throw ConfigError("trace csv record needs 4 fields");
    GenerationStep step;
    step.token = fields[1];
    step.chosen_prob = std::stod(fields[2]);
    step.top1_prob = std::stod(fields[3]);
    trace.steps.push_back(std::move(step));
  }
  if (trace.steps.empty()) throw EmptyTrace("trace csv has no rows");
  return trace;
}

inline GenerationTrace read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NoSuchFile("cannot open trace csv: " + path);
  return read_trace_csv(in);
}

}  // namespace oprobe
