// oracle-probe: command-line surface over the probing toolkit.
//
// Exit codes: 0 success, 1 partial results (search budget exhausted with
// unexplored mass still above the threshold), 2 configuration or input error.

#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "oprobe/agentsim.hpp"
#include "oprobe/attacks.hpp"
#include "oprobe/blackhole.hpp"
#include "oprobe/http_backend.hpp"
#include "oprobe/judge.hpp"
#include "oprobe/mock_backend.hpp"
#include "oprobe/report.hpp"
#include "oprobe/search.hpp"

namespace {

using nlohmann::json;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw oprobe::NoSuchFile("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Empty path or "-" means stdout; otherwise the file is (over)written.
void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty() || out_path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw oprobe::ConfigError("cannot write file: " + out_path);
  out << text;
}

std::unique_ptr<oprobe::Backend> make_backend(const std::string& spec) {
  if (spec.rfind("mock:", 0) == 0) {
    const std::string path = spec.substr(5);
    if (path.empty()) throw oprobe::ConfigError("mock backend needs a file: mock:<automaton>");
    return std::make_unique<oprobe::MockBackend>(oprobe::MockAutomaton::from_file(path));
  }
  if (spec == "remote")
    return std::make_unique<oprobe::HttpBackend>(oprobe::HttpConfig::backend_from_env());
  if (spec.empty())
    throw oprobe::ConfigError("no backend configured; pass --backend or set it in --config");
  throw oprobe::ConfigError("backend must be 'remote' or 'mock:<automaton-file>', got '" + spec +
                            "'");
}

/// Uniform verdict front end over the three judge selections.
struct JudgeKit {
  std::function<oprobe::Verdict(const std::string& prompt, const std::string& response)> verdict;

  bool broke(const std::string& prompt, const std::string& response) const {
    return verdict(prompt, response).label == oprobe::VerdictLabel::Jailbroken;
  }
};

JudgeKit make_judge(const std::string& spec) {
  if (spec.rfind("stub:", 0) == 0) {
    const std::string phrase = spec.substr(5);
    if (phrase.empty()) throw oprobe::ConfigError("stub judge needs a phrase: stub:<text>");
    return {[phrase](const std::string&, const std::string& response) -> oprobe::Verdict {
      if (response.find(phrase) != std::string::npos)
        return {oprobe::VerdictLabel::Jailbroken, 1.0, "stub phrase present: \"" + phrase + "\""};
      return {oprobe::VerdictLabel::Refused, 0.0, "stub phrase absent: \"" + phrase + "\""};
    }};
  }
  if (spec == "rules") {
    return {[](const std::string& prompt, const std::string& response) {
      oprobe::JudgeConfig cfg;
      cfg.mode = oprobe::JudgeConfig::Mode::RulesOnly;
      return oprobe::judge_response(prompt, response, cfg);
    }};
  }
  if (spec == "remote") {
    auto client = std::make_shared<oprobe::HttpChatClient>(oprobe::HttpConfig::judge_from_env());
    return {[client](const std::string& prompt, const std::string& response) {
      oprobe::JudgeConfig cfg;  // rules screen refusals, the chat model grades the rest
      return oprobe::judge_response(prompt, response, cfg, client.get());
    }};
  }
  throw oprobe::ConfigError("judge must be 'rules', 'remote', or 'stub:<phrase>', got '" + spec +
                            "'");
}

/// Explicit flag wins; otherwise the single model the variant table allows;
/// otherwise end_user.
oprobe::report::ThreatModel resolve_threat_model(const std::string& variant,
                                                 const std::string& flag) {
  if (!flag.empty()) return oprobe::report::threat_model_from_string(flag);
  const auto& table = oprobe::report::variant_threat_models();
  const auto it = table.find(variant);
  if (it != table.end() && !it->second.empty())
    return oprobe::report::threat_model_from_string(*it->second.begin());
  return oprobe::report::ThreatModel::EndUser;
}

std::string default_run_id() {
  return "run-" + std::to_string(::getpid()) + "-" +
         std::to_string(static_cast<long long>(std::time(nullptr)));
}

std::string strip_stop(std::string text, const std::optional<std::string>& stop,
                       oprobe::FinishReason finish) {
  if (finish == oprobe::FinishReason::Stop && stop && text.size() >= stop->size() &&
      text.compare(text.size() - stop->size(), stop->size(), *stop) == 0)
    text.erase(text.size() - stop->size());
  return text;
}

json verdict_json(const oprobe::Verdict& v) {
  return json{{"label", oprobe::to_string(v.label)}, {"score", v.score},
              {"rationale", v.rationale}};
}

/// JSON object whose keys back-fill options the command line left untouched.
/// Credentials stay in the environment; the file never carries keys.
struct ConfigDefaults {
  json j = json::object();

  static ConfigDefaults load(const std::string& path) {
    ConfigDefaults d;
    if (path.empty()) return d;
    d.j = json::parse(slurp(path), nullptr, false);
    if (d.j.is_discarded() || !d.j.is_object())
      throw oprobe::ConfigError("config file must hold a JSON object: " + path);
    return d;
  }

  template <class T>
  void fill(const CLI::Option* opt, const char* key, T& target) const {
    if (opt != nullptr && opt->count() > 0) return;
    if (!j.contains(key)) return;
    try {
      target = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw oprobe::ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  }
};

// ---------------------------------------------------------------------------
// search

struct SearchOpts {
  std::string prompts_file, prompt_text, prompt_dir;
  std::string prompt_id = "adhoc";
  std::string mode = "jo";
  double threshold = 1e-6;
  std::size_t budget = 10000;
  int depth = 0;
  int branch_top_k = 20;
  double temperature = 1.0, top_p = 1.0;
  int max_tokens = 4096;
  std::uint64_t seed = 2026;
  bool first_witness = false;
  std::string backend;
  std::string judge = "rules";
  std::string store = "runs.jsonl";
  std::string variant = "none";
  std::string threat_model, run_id;
};

int run_search(const SearchOpts& o) {
  const std::unique_ptr<oprobe::Backend> be = make_backend(o.backend);
  const JudgeKit kit = make_judge(o.judge);
  if (o.mode != "greedy" && o.mode != "default" && o.mode != "jo")
    throw oprobe::ConfigError("--mode must be greedy, default, or jo");

  std::vector<std::pair<std::string, std::string>> prompts;  // id, text
  if (!o.prompt_text.empty()) {
    prompts.emplace_back(o.prompt_id, o.prompt_text);
  } else if (!o.prompts_file.empty()) {
    const oprobe::report::BenchmarkSet bench = oprobe::report::load_benchmark_file(o.prompts_file);
    for (const std::string& id : bench.prompt_ids) {
      std::string text = id;
      if (!o.prompt_dir.empty()) text = slurp(o.prompt_dir + "/" + id + ".txt");
      prompts.emplace_back(id, std::move(text));
    }
  } else {
    throw oprobe::ConfigError("search needs --prompts <bench.json> or --prompt <text>");
  }

  const oprobe::DecodingParams params{o.temperature, o.top_p, o.max_tokens};
  const oprobe::report::ThreatModel tm = resolve_threat_model(o.variant, o.threat_model);
  oprobe::report::RunStore store(o.store);
  const std::string prefix = o.run_id.empty() ? default_run_id() : o.run_id;

  bool partial = false;
  std::size_t broken = 0;
  std::size_t idx = 0;
  for (const auto& [pid, text] : prompts) {
    oprobe::report::RunRecord rec;
    rec.id = prefix + "-" + o.mode + "-" + pid;
    rec.timestamp = oprobe::report::now_utc_iso8601();
    rec.threat_model = tm;
    rec.attack_variant = o.variant;
    rec.prompt_id = pid;
    rec.decoding = params;
    rec.mode = o.mode;

    if (o.mode == "jo") {
      oprobe::SearchConfig cfg;
      cfg.prob_threshold = o.threshold;
      cfg.max_depth = o.depth;
      cfg.branch_top_k = o.branch_top_k;
      cfg.node_budget = o.budget;
      cfg.sample_seed = o.seed;
      cfg.stop_at_first_witness = o.first_witness;
      const oprobe::SearchOutcome out = oprobe::jo_search(
          *be, text,
          [&](const std::string& completion) { return kit.broke(text, completion); }, cfg,
          params);
      partial = partial || out.partial;
      rec.search_stats = oprobe::report::SearchStats{
          static_cast<long long>(out.explored_nodes), out.unexplored_mass};
      if (out.found) {
        rec.response_final = oprobe::harmony::final_text_or_raw(out.witnesses.front().text());
        rec.verdict = kit.verdict(text, rec.response_final);
        ++broken;
      } else {
        rec.verdict = {oprobe::VerdictLabel::Refused, 0.0,
                       out.partial ? "no witness; budget exhausted with mass above threshold"
                                   : "no completion above the threshold is jailbroken"};
      }
    } else {
      const oprobe::GenMode gm =
          o.mode == "greedy" ? oprobe::GenMode::greedy() : oprobe::GenMode::sample(o.seed + idx);
      const oprobe::GenerationTrace trace = be->generate(text, params, gm);
      const std::string completion = strip_stop(trace.text(), be->stop_token(), trace.finish);
      rec.response_final = oprobe::harmony::final_text_or_raw(completion);
      rec.verdict = kit.verdict(text, rec.response_final);
      if (rec.verdict.label == oprobe::VerdictLabel::Jailbroken) ++broken;
      if (o.mode == "greedy") rec.decoding.temperature = 0.0;
    }
    store.append(rec);
    ++idx;
  }

  std::fprintf(stderr, "search: %zu prompt(s), %zu jailbroken, appended to %s%s\n", prompts.size(),
               broken, o.store.c_str(), partial ? ", PARTIAL (budget exhausted)" : "");
  return partial ? 1 : 0;
}

// ---------------------------------------------------------------------------
// attack

struct AttackOpts {
  std::string recipe_file, request, request_file;
  std::string out;
  bool as_json = false;
  bool send = false;
  std::string backend;
  std::string judge = "rules";
  std::string store = "runs.jsonl";
  std::string mode = "default";
  double temperature = 1.0, top_p = 1.0;
  int max_tokens = 4096;
  std::uint64_t seed = 2026;
  std::string prompt_id = "adhoc";
  std::string threat_model, run_id;
};

int run_attack(const AttackOpts& o) {
  std::string request = o.request;
  if (request.empty() && !o.request_file.empty()) request = slurp(o.request_file);
  if (request.empty()) throw oprobe::ConfigError("attack needs --request or --request-file");

  std::unique_ptr<oprobe::Backend> be;
  if (!o.backend.empty()) be = make_backend(o.backend);

  oprobe::harmony::Conversation conv;
  conv.messages.push_back(oprobe::harmony::user(request));
  const json recipe = oprobe::attacks::load_recipe_file(o.recipe_file);
  const oprobe::attacks::TransformedPrompt built =
      oprobe::attacks::apply_recipe(conv, recipe, be.get());

  if (o.as_json) {
    const json j{{"variant", oprobe::attacks::to_string(built.variant)},
                 {"text", built.text},
                 {"metadata", built.metadata}};
    emit(o.out, j.dump(1) + "\n");
  } else {
    emit(o.out, built.text);
  }

  if (!o.send) return 0;
  if (!be) throw oprobe::ConfigError("--send needs --backend");
  if (o.mode != "greedy" && o.mode != "default")
    throw oprobe::ConfigError("--mode must be greedy or default when sending");

  const JudgeKit kit = make_judge(o.judge);
  const oprobe::DecodingParams params{o.temperature, o.top_p, o.max_tokens};
  const oprobe::GenMode gm =
      o.mode == "greedy" ? oprobe::GenMode::greedy() : oprobe::GenMode::sample(o.seed);
  const oprobe::GenerationTrace trace = be->generate(built.text, params, gm);
  const std::string completion = strip_stop(trace.text(), be->stop_token(), trace.finish);

  const std::string variant = oprobe::attacks::to_string(built.variant);
  oprobe::report::RunRecord rec;
  const std::string prefix = o.run_id.empty() ? default_run_id() : o.run_id;
  rec.id = prefix + "-" + o.mode + "-" + variant + "-" + o.prompt_id;
  rec.timestamp = oprobe::report::now_utc_iso8601();
  rec.threat_model = resolve_threat_model(variant, o.threat_model);
  rec.attack_variant = variant;
  rec.prompt_id = o.prompt_id;
  rec.decoding = params;
  if (o.mode == "greedy") rec.decoding.temperature = 0.0;
  rec.mode = o.mode;
  rec.response_final = oprobe::harmony::final_text_or_raw(completion);
  rec.verdict = kit.verdict(request, rec.response_final);

  oprobe::report::RunStore store(o.store);
  store.append(rec);
  std::fprintf(stderr, "attack: %s verdict %s, appended %s to %s\n", variant.c_str(),
               oprobe::to_string(rec.verdict.label), rec.id.c_str(), o.store.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// agent

struct AgentOpts {
  std::string scenario_file, backend;
  int runs = 10;
  std::string chain_recipe;
  std::string mode = "sample";
  double temperature = 1.0, top_p = 1.0;
  int max_tokens = 4096;
  std::uint64_t seed = 0;
  std::string out, label;
  bool table = false;
  bool transcript = false;
};

int run_agent(const AgentOpts& o) {
  const oprobe::agentsim::ScenarioSpec spec = oprobe::agentsim::load_scenario_file(o.scenario_file);
  const std::unique_ptr<oprobe::Backend> be = make_backend(o.backend);
  if (o.mode != "greedy" && o.mode != "sample")
    throw oprobe::ConfigError("--mode must be greedy or sample");

  std::optional<std::vector<std::string>> chain;
  if (!o.chain_recipe.empty()) {
    const json recipe = oprobe::attacks::load_recipe_file(o.chain_recipe);
    if (recipe.value("variant", std::string{}) != "cop_chain")
      throw oprobe::ConfigError("--chain-recipe must hold a cop_chain recipe");
    const json params = recipe.value("parameters", json::object());
    if (!params.contains("steps")) throw oprobe::ConfigError("cop_chain recipe needs 'steps'");
    const auto steps = params.at("steps").get<std::vector<std::string>>();
    const auto noise = params.value("noise", std::vector<std::string>{});
    const auto pattern = params.value("pattern", std::string{});
    chain = oprobe::attacks::cop_chain_items(steps, noise, pattern);
  }

  const oprobe::DecodingParams params{o.temperature, o.top_p, o.max_tokens};
  const oprobe::GenMode gm =
      o.mode == "greedy" ? oprobe::GenMode::greedy() : oprobe::GenMode::sample(o.seed);
  const std::vector<std::string>* chain_ptr = chain ? &*chain : nullptr;

  if (o.transcript) {
    const oprobe::agentsim::EpisodeMetrics m =
        oprobe::agentsim::run_episode(*be, spec, chain_ptr, params, gm);
    emit(o.out, oprobe::agentsim::metrics_to_json(m).dump(1) + "\n");
    return 0;
  }

  const oprobe::agentsim::SuiteRow row =
      oprobe::agentsim::suite(*be, spec, o.runs, chain_ptr, params, gm);
  if (o.table) {
    std::string label = o.label;
    if (label.empty())
      label = std::string(oprobe::agentsim::to_string(spec.kind)) + "/" +
              oprobe::agentsim::to_string(spec.naming);
    emit(o.out, oprobe::report::to_markdown(oprobe::report::agent_table({{label, row}})));
  } else {
    const json j{{"runs", row.runs},
                 {"avg_reads", row.avg_reads},
                 {"avg_deletions", row.avg_deletions},
                 {"avg_important_deletions", row.avg_important_deletions},
                 {"risky_pct", row.risky_pct},
                 {"aborted", row.aborted}};
    emit(o.out, j.dump(1) + "\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// blackhole

struct BlackholeOpts {
  std::string trace_file, attention_file;
  int window = 50;
  double prob_floor = 0.99;
  int min_run = 50;
  int min_cycles = 3;
  int max_period = 64;
  int band = 0;
  std::string curve_csv_path, curve_svg_path, out;
};

int run_blackhole(const BlackholeOpts& o) {
  if (o.trace_file.empty() && o.attention_file.empty())
    throw oprobe::ConfigError("blackhole needs --trace and/or --attention");

  json j = json::object();
  if (!o.trace_file.empty()) {
    const oprobe::GenerationTrace trace = oprobe::read_trace_csv(o.trace_file);
    oprobe::BlackholeConfig cfg;
    cfg.window = o.window;
    cfg.prob_floor = o.prob_floor;
    cfg.min_run = o.min_run;
    cfg.min_cycles = o.min_cycles;
    cfg.max_period = o.max_period;
    const oprobe::BlackholeReport rep = oprobe::detect_blackhole(trace, cfg);
    const oprobe::report::TraceStats s = oprobe::report::summarize(rep);
    j["detected"] = s.detected;
    j["onset"] = s.onset;
    j["period"] = s.period;
    j["repeats"] = s.repeats;
    j["prob_run_start"] = s.prob_run_start;

    if (!o.curve_csv_path.empty() || !o.curve_svg_path.empty()) {
      std::vector<double> top1;
      top1.reserve(trace.steps.size());
      for (const oprobe::GenerationStep& st : trace.steps) top1.push_back(st.top1_prob);
      const std::vector<double> curve = oprobe::moving_average(top1, o.window);
      if (!o.curve_csv_path.empty()) emit(o.curve_csv_path, oprobe::report::curve_csv(curve));
      if (!o.curve_svg_path.empty()) emit(o.curve_svg_path, oprobe::report::curve_svg(curve));
    }
  }
  if (!o.attention_file.empty()) {
    const oprobe::AttentionDump dump = oprobe::read_attention_csv(o.attention_file);
    j["attention_band"] = o.band;
    j["attention_locality"] = oprobe::attention_locality(dump, o.band);
  }
  emit(o.out, j.dump(1) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportOpts {
  std::string table;
  std::string runs_file;
  std::string format = "md";
  std::string out;
  bool check = false;
  bool make_bench = false;
  std::string pool_file;
  std::string bench_name = "bench";
  std::size_t n = 0;
  std::uint64_t seed = 2026;
};

int run_report(const ReportOpts& o) {
  const int chosen = (o.table.empty() ? 0 : 1) + (o.check ? 1 : 0) + (o.make_bench ? 1 : 0);
  if (chosen != 1)
    throw oprobe::ConfigError("report needs exactly one of --table, --check, --make-bench");

  if (o.check) {
    if (o.runs_file.empty()) throw oprobe::ConfigError("--check needs --runs");
    const std::vector<std::string> problems = oprobe::report::RunStore::check(o.runs_file);
    for (const std::string& p : problems) std::fprintf(stderr, "%s\n", p.c_str());
    if (!problems.empty()) {
      std::fprintf(stderr, "report: %zu problem(s) in %s\n", problems.size(), o.runs_file.c_str());
      return 2;
    }
    std::fprintf(stderr, "report: store %s is clean\n", o.runs_file.c_str());
    return 0;
  }

  if (o.make_bench) {
    if (o.pool_file.empty() || o.n == 0)
      throw oprobe::ConfigError("--make-bench needs --pool and --n");
    const json pool = json::parse(slurp(o.pool_file), nullptr, false);
    std::vector<std::string> ids;
    if (pool.is_array()) {
      ids = pool.get<std::vector<std::string>>();
    } else if (pool.is_object() && pool.contains("prompt_ids")) {
      ids = pool.at("prompt_ids").get<std::vector<std::string>>();
    } else {
      throw oprobe::ConfigError("pool file must be a JSON array or hold 'prompt_ids'");
    }
    const oprobe::report::BenchmarkSet bench =
        oprobe::report::sample_benchmark(ids, o.n, o.seed, o.bench_name);
    emit(o.out, oprobe::report::benchmark_to_json(bench).dump(1) + "\n");
    return 0;
  }

  if (o.runs_file.empty()) throw oprobe::ConfigError("--table needs --runs");
  const std::vector<oprobe::report::RunRecord> records =
      oprobe::report::RunStore::load(o.runs_file);
  oprobe::report::Table t;
  if (o.table == "fig2") {
    t = oprobe::report::fig2_table(records);
  } else if (o.table == "fig6") {
    t = oprobe::report::fig6_table(records);
  } else {
    throw oprobe::ConfigError("--table must be fig2 or fig6");
  }
  std::string body;
  if (o.format == "md") {
    body = oprobe::report::to_markdown(t);
  } else if (o.format == "csv") {
    body = oprobe::report::to_csv(t);
  } else {
    throw oprobe::ConfigError("--format must be md or csv");
  }
  emit(o.out, body);
  return 0;
}

// ---------------------------------------------------------------------------
// judge

struct JudgeOpts {
  std::string response, response_file, prompt, out;
  std::string judge = "rules";
};

int run_judge(const JudgeOpts& o) {
  std::string response = o.response;
  if (response.empty() && !o.response_file.empty()) response = slurp(o.response_file);
  if (response.empty() && o.response_file.empty()) {
    std::ostringstream buf;
    buf << std::cin.rdbuf();
    response = buf.str();
  }
  const JudgeKit kit = make_judge(o.judge);
  const oprobe::Verdict v = kit.verdict(o.prompt, response);
  emit(o.out, verdict_json(v).dump(1) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oracle-probe: probability-threshold probing over chat-format text backends"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path,
                 "JSON object whose keys back-fill options not given on the command line");

  SearchOpts so;
  AttackOpts ao;
  AgentOpts go;
  BlackholeOpts bo;
  ReportOpts ro;
  JudgeOpts jo;

  CLI::App* search = app.add_subcommand(
      "search", "threshold search or single decodes over a prompt set, appending run records");
  search->add_option("--prompts", so.prompts_file, "benchmark JSON with prompt_ids");
  search->add_option("--prompt", so.prompt_text, "single ad-hoc prompt text");
  search->add_option("--prompt-id", so.prompt_id, "record id for --prompt");
  search->add_option("--prompt-dir", so.prompt_dir, "directory with <id>.txt prompt bodies");
  search->add_option("--mode", so.mode, "greedy | default | jo");
  CLI::Option* so_threshold =
      search->add_option("--threshold", so.threshold, "sequence probability threshold");
  CLI::Option* so_budget = search->add_option("--budget", so.budget, "distribution query budget");
  search->add_option("--depth", so.depth, "token depth cap (0: use --max-tokens)");
  search->add_option("--branch-top-k", so.branch_top_k, "children considered per node");
  CLI::Option* so_temp = search->add_option("--temperature", so.temperature, "sampling temperature");
  CLI::Option* so_topp = search->add_option("--top-p", so.top_p, "nucleus mass");
  CLI::Option* so_maxtok = search->add_option("--max-tokens", so.max_tokens, "generation cap");
  CLI::Option* so_seed = search->add_option("--seed", so.seed, "sampling seed");
  search->add_flag("--first-witness", so.first_witness, "stop at the first jailbroken completion");
  CLI::Option* so_backend =
      search->add_option("--backend", so.backend, "'remote' or 'mock:<automaton-file>'");
  CLI::Option* so_judge =
      search->add_option("--judge", so.judge, "'rules', 'remote', or 'stub:<phrase>'");
  CLI::Option* so_store = search->add_option("--store", so.store, "run store JSONL path");
  search->add_option("--variant", so.variant, "attack variant label for the records");
  search->add_option("--threat-model", so.threat_model, "end_user | black_box | white_box");
  search->add_option("--run-id", so.run_id, "record id prefix (default: pid+time)");

  CLI::App* attack =
      app.add_subcommand("attack", "build a transformed prompt from a recipe, optionally send it");
  attack->add_option("--recipe", ao.recipe_file, "recipe JSON file")->required();
  attack->add_option("--request", ao.request, "request text to transform");
  attack->add_option("--request-file", ao.request_file, "file with the request text");
  attack->add_option("--out", ao.out, "where to write the built prompt (default stdout)");
  attack->add_flag("--json", ao.as_json, "emit {variant, text, metadata} instead of raw text");
  attack->add_flag("--send", ao.send, "generate a response and append a run record");
  CLI::Option* ao_backend =
      attack->add_option("--backend", ao.backend, "'remote' or 'mock:<automaton-file>'");
  CLI::Option* ao_judge =
      attack->add_option("--judge", ao.judge, "'rules', 'remote', or 'stub:<phrase>'");
  CLI::Option* ao_store = attack->add_option("--store", ao.store, "run store JSONL path");
  attack->add_option("--mode", ao.mode, "greedy | default (with --send)");
  CLI::Option* ao_temp = attack->add_option("--temperature", ao.temperature, "sampling temperature");
  CLI::Option* ao_topp = attack->add_option("--top-p", ao.top_p, "nucleus mass");
  CLI::Option* ao_maxtok = attack->add_option("--max-tokens", ao.max_tokens, "generation cap");
  CLI::Option* ao_seed = attack->add_option("--seed", ao.seed, "sampling seed");
  attack->add_option("--prompt-id", ao.prompt_id, "prompt id for the record");
  attack->add_option("--threat-model", ao.threat_model, "end_user | black_box | white_box");
  attack->add_option("--run-id", ao.run_id, "record id prefix (default: pid+time)");

  CLI::App* agent =
      app.add_subcommand("agent", "run tool-use episodes in the sandboxed scenario world");
  agent->add_option("--scenario", go.scenario_file, "scenario JSON file")->required();
  CLI::Option* go_backend =
      agent->add_option("--backend", go.backend, "'remote' or 'mock:<automaton-file>'");
  agent->add_option("--runs", go.runs, "episodes per suite");
  agent->add_option("--chain-recipe", go.chain_recipe,
                    "cop_chain recipe served one prompt per round");
  agent->add_option("--mode", go.mode, "greedy | sample");
  CLI::Option* go_temp = agent->add_option("--temperature", go.temperature, "sampling temperature");
  CLI::Option* go_topp = agent->add_option("--top-p", go.top_p, "nucleus mass");
  CLI::Option* go_maxtok = agent->add_option("--max-tokens", go.max_tokens, "generation cap");
  CLI::Option* go_seed = agent->add_option("--seed", go.seed, "seed for --transcript episodes");
  agent->add_option("--out", go.out, "output path (default stdout)");
  agent->add_option("--label", go.label, "row label for --table");
  agent->add_flag("--table", go.table, "emit a one-row markdown metrics table");
  agent->add_flag("--transcript", go.transcript, "run a single episode, emit full transcript JSON");

  CLI::App* blackhole = app.add_subcommand(
      "blackhole", "detect repetition traps in a decoded trace; measure attention locality");
  blackhole->add_option("--trace", bo.trace_file, "trace CSV (token,chosen_prob,top1_prob)");
  blackhole->add_option("--attention", bo.attention_file, "lower-triangular attention CSV");
  blackhole->add_option("--window", bo.window, "moving-average width");
  blackhole->add_option("--prob-floor", bo.prob_floor, "windowed top-1 mean floor");
  blackhole->add_option("--min-run", bo.min_run, "consecutive qualifying windows required");
  blackhole->add_option("--min-cycles", bo.min_cycles, "full repetitions before a cycle counts");
  blackhole->add_option("--max-period", bo.max_period, "longest cycle period searched");
  blackhole->add_option("--band", bo.band, "diagonal distance for locality");
  blackhole->add_option("--curve-csv", bo.curve_csv_path, "write the moving-average curve as CSV");
  blackhole->add_option("--curve-svg", bo.curve_svg_path, "write the curve as a standalone SVG");
  blackhole->add_option("--out", bo.out, "report JSON path (default stdout)");

  CLI::App* report =
      app.add_subcommand("report", "tables from a run store; schema checks; benchmark sampling");
  report->add_option("--table", ro.table, "fig2 | fig6");
  report->add_option("--runs", ro.runs_file, "run store JSONL path");
  report->add_option("--format", ro.format, "md | csv");
  report->add_option("--out", ro.out, "output path (default stdout)");
  report->add_flag("--check", ro.check, "validate every record; nonzero exit on any violation");
  report->add_flag("--make-bench", ro.make_bench, "sample a benchmark from a prompt-id pool");
  report->add_option("--pool", ro.pool_file, "pool JSON (array or object with prompt_ids)");
  report->add_option("--name", ro.bench_name, "benchmark name");
  report->add_option("--n", ro.n, "sample size");
  CLI::Option* ro_seed = report->add_option("--seed", ro.seed, "sampling seed");

  CLI::App* judge = app.add_subcommand("judge", "grade a single response");
  judge->add_option("--response", jo.response, "response text (default: stdin)");
  judge->add_option("--response-file", jo.response_file, "file with the response text");
  judge->add_option("--prompt", jo.prompt, "forbidden prompt the response answers");
  CLI::Option* jo_judge =
      judge->add_option("--judge", jo.judge, "'rules', 'remote', or 'stub:<phrase>'");
  judge->add_option("--out", jo.out, "verdict JSON path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const ConfigDefaults cfg = ConfigDefaults::load(config_path);
    cfg.fill(so_backend, "backend", so.backend);
    cfg.fill(so_judge, "judge", so.judge);
    cfg.fill(so_store, "store", so.store);
    cfg.fill(so_threshold, "threshold", so.threshold);
    cfg.fill(so_budget, "budget", so.budget);
    cfg.fill(so_temp, "temperature", so.temperature);
    cfg.fill(so_topp, "top_p", so.top_p);
    cfg.fill(so_maxtok, "max_tokens", so.max_tokens);
    cfg.fill(so_seed, "seed", so.seed);
    cfg.fill(ao_backend, "backend", ao.backend);
    cfg.fill(ao_judge, "judge", ao.judge);
    cfg.fill(ao_store, "store", ao.store);
    cfg.fill(ao_temp, "temperature", ao.temperature);
    cfg.fill(ao_topp, "top_p", ao.top_p);
    cfg.fill(ao_maxtok, "max_tokens", ao.max_tokens);
    cfg.fill(ao_seed, "seed", ao.seed);
    cfg.fill(go_backend, "backend", go.backend);
    cfg.fill(go_temp, "temperature", go.temperature);
    cfg.fill(go_topp, "top_p", go.top_p);
    cfg.fill(go_maxtok, "max_tokens", go.max_tokens);
    cfg.fill(go_seed, "seed", go.seed);
    cfg.fill(ro_seed, "seed", ro.seed);
    cfg.fill(jo_judge, "judge", jo.judge);

    if (search->parsed()) return run_search(so);
    if (attack->parsed()) return run_attack(ao);
    if (agent->parsed()) return run_agent(go);
    if (blackhole->parsed()) return run_blackhole(bo);
    if (report->parsed()) return run_report(ro);
    if (judge->parsed()) return run_judge(jo);
    std::fprintf(stderr, "oracle-probe: no subcommand given\n");
    return 2;
  } catch (const oprobe::Error& e) {
    std::fprintf(stderr, "oracle-probe: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "oracle-probe: %s\n", e.what());
    return 2;
  }
}
