#pragma once

// Run persistence and report tables. Records live in an append-only JSONL
// store (one writer at a time, advisory lock); reports are pure functions
// over loaded records and emit Markdown, CSV, or a small standalone SVG.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "oprobe/agentsim.hpp"
#include "oprobe/backend.hpp"
#include "oprobe/blackhole.hpp"
#include "oprobe/errors.hpp"
#include "oprobe/judge.hpp"
#include "oprobe/rng.hpp"
#include "oprobe/search.hpp"

namespace oprobe::report {

inline constexpr int kSchemaVersion = 1;

enum class ThreatModel { EndUser, BlackBox, WhiteBox };

inline std::string to_string(ThreatModel t) {
  switch (t) {
    case ThreatModel::EndUser: return "end_user";
    case ThreatModel::BlackBox: return "black_box";
    case ThreatModel::WhiteBox: return "white_box";
  }
  return "?";
}

inline ThreatModel threat_model_from_string(const std::string& s) {
  if (s == "end_user") return ThreatModel::EndUser;
  if (s == "black_box") return ThreatModel::BlackBox;
  if (s == "white_box") return ThreatModel::WhiteBox;
  throw ConfigError("unknown threat model: " + s);
}

/// Which threat models an attack variant is available under. Variants not
/// listed here are unconstrained.
inline const std::map<std::string, std::set<std::string>>& variant_threat_models() {
  static const std::map<std::string, std::set<std::string>> table = {
      {"remove_harmony", {"black_box"}},
      {"cot_override", {"black_box"}},
      {"repeat_mimicry", {"black_box"}},
      {"mirage", {"black_box"}},
      {"cop_chain", {"black_box"}},
      {"schrodinger", {"end_user"}},
      {"rephrase_only", {"end_user"}},
      {"quant_fever", {"end_user"}},
      {"blackhole", {"white_box"}},
  };
  return table;
}

struct SearchStats {
  long long explored_nodes = 0;
  double unexplored_mass = 0.0;
};

/// Flattened repetition-detector outcome for storage.
struct TraceStats {
  bool detected = false;
  int onset = 0;
  int period = 0;
  int repeats = 0;
  int prob_run_start = 0;
};

inline TraceStats summarize(const BlackholeReport& r) {
  TraceStats t;
  t.detected = r.detected;
  t.onset = r.onset;
  t.period = r.cycle.period;
  t.repeats = r.cycle.repeats;
  t.prob_run_start = r.prob_run_start;
  return t;
}

struct RunRecord {
  int schema_version = kSchemaVersion;
  std::string id;
  std::string timestamp;  // ISO 8601 UTC, e.g. 2026-08-25T12:00:00Z
  ThreatModel threat_model = ThreatModel::EndUser;
  std::string attack_variant;
  std::string prompt_id;
  DecodingParams decoding;
  std::string mode;  // greedy | default | jo
  std::string response_final;
  Verdict verdict;
  std::optional<SearchStats> search_stats;
  std::optional<TraceStats> trace_stats;
};

inline std::string now_utc_iso8601() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void validate_record(const RunRecord& r) {
  if (r.schema_version != kSchemaVersion)
    throw ConfigError("record " + r.id + ": unsupported schema_version " +
                      std::to_string(r.schema_version));
  if (r.id.empty()) throw ConfigError("record id is empty");
  const std::string& ts = r.timestamp;
  if (ts.size() < 20 || ts[4] != '-' || ts[7] != '-' || ts[10] != 'T' || ts.back() != 'Z')
    throw ConfigError("record " + r.id + ": timestamp is not ISO 8601 UTC: " + ts);
  if (r.mode != "greedy" && r.mode != "default" && r.mode != "jo")
    throw ConfigError("record " + r.id + ": unknown mode " + r.mode);
  if (r.attack_variant.empty()) throw ConfigError("record " + r.id + ": attack_variant is empty");
  if (r.verdict.score < 0.0 || r.verdict.score > 1.0)
    throw ConfigError("record " + r.id + ": verdict score out of [0,1]");
  if (r.decoding.temperature < 0.0 || r.decoding.top_p <= 0.0 || r.decoding.top_p > 1.0 ||
      r.decoding.max_tokens < 1)
    throw ConfigError("record " + r.id + ": invalid decoding parameters");
  if (r.search_stats &&
      (r.search_stats->explored_nodes < 0 || r.search_stats->unexplored_mass < 0.0 ||
       r.search_stats->unexplored_mass > 1.0 + 1e-9))
    throw ConfigError("record " + r.id + ": invalid search stats");

  const auto& table = variant_threat_models();
  const auto it = table.find(r.attack_variant);
  if (it != table.end() && it->second.count(to_string(r.threat_model)) == 0)
    throw ConfigError("record " + r.id + ": attack " + r.attack_variant +
                      " is not available under threat model " + to_string(r.threat_model));
}

inline nlohmann::json record_to_json(const RunRecord& r) {
  nlohmann::json j{{"schema_version", r.schema_version},
                   {"id", r.id},
                   {"timestamp", r.timestamp},
                   {"threat_model", to_string(r.threat_model)},
                   {"attack_variant", r.attack_variant},
                   {"prompt_id", r.prompt_id},
                   {"decoding",
                    {{"temperature", r.decoding.temperature},
                     {"top_p", r.decoding.top_p},
                     {"max_tokens", r.decoding.max_tokens}}},
                   {"mode", r.mode},
                   {"response_final", r.response_final},
                   {"verdict",
                    {{"label", to_string(r.verdict.label)},
                     {"score", r.verdict.score},
                     {"rationale", r.verdict.rationale}}}};
  if (r.search_stats)
    j["search_stats"] = {{"explored_nodes", r.search_stats->explored_nodes},
                         {"unexplored_mass", r.search_stats->unexplored_mass}};
  if (r.trace_stats)
    j["trace_stats"] = {{"detected", r.trace_stats->detected},
                        {"onset", r.trace_stats->onset},
                        {"period", r.trace_stats->period},
                        {"repeats", r.trace_stats->repeats},
                        {"prob_run_start", r.trace_stats->prob_run_start}};
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run record must be a JSON object");
  const auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw ConfigError(std::string("run record misses field: ") + key);
    return j[key];
  };
  RunRecord r;
  r.schema_version = need("schema_version").get<int>();
  r.id = need("id").get<std::string>();
  r.timestamp = need("timestamp").get<std::string>();
  r.threat_model = threat_model_from_string(need("threat_model").get<std::string>());
  r.attack_variant = need("attack_variant").get<std::string>();
  r.prompt_id = need("prompt_id").get<std::string>();
  const nlohmann::json& dec = need("decoding");
  r.decoding.temperature = dec.value("temperature", 1.0);
  r.decoding.top_p = dec.value("top_p", 1.0);
  r.decoding.max_tokens = dec.value("max_tokens", 4096);
  r.mode = need("mode").get<std::string>();
  r.response_final = need("response_final").get<std::string>();
  const nlohmann::json& v = need("verdict");
  r.verdict.label = verdict_label_from_string(v.at("label").get<std::string>());
  r.verdict.score = v.value("score", 0.0);
  r.verdict.rationale = v.value("rationale", "");
  if (j.contains("search_stats") && !j["search_stats"].is_null()) {
    SearchStats s;
    s.explored_nodes = j["search_stats"].value("explored_nodes", 0LL);
    s.unexplored_mass = j["search_stats"].value("unexplored_mass", 0.0);
    r.search_stats = s;
  }
  if (j.contains("trace_stats") && !j["trace_stats"].is_null()) {
    TraceStats t;
    t.detected = j["trace_stats"].value("detected", false);
    t.onset = j["trace_stats"].value("onset", 0);
    t.period = j["trace_stats"].value("period", 0);
    t.repeats = j["trace_stats"].value("repeats", 0);
    t.prob_run_start = j["trace_stats"].value("prob_run_start", 0);
    r.trace_stats = t;
  }
  return r;
}

// ---------------------------------------------------------------------------
// run store

/**
 * Append-only JSONL store. Appends take an exclusive advisory lock so only
 * one writer mutates the file at a time; readers just stream the lines.
 * Record ids must be unique across the store's lifetime.
 */
class RunStore {
 public:
  explicit RunStore(std::string path) : path_(std::move(path)) {}

  const std::string& path() const { return path_; }

  static std::vector<RunRecord> load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NoSuchFile("cannot open run store: " + path);
    std::vector<RunRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded())
        throw ConfigError("run store " + path + " line " + std::to_string(lineno) +
                          ": not valid JSON");
      records.push_back(record_from_json(j));
    }
    return records;
  }

  /// All schema problems in the store; empty means clean.
  static std::vector<std::string> check(const std::string& path) {
    std::vector<std::string> problems;
    std::ifstream in(path);
    if (!in) {
      problems.push_back("cannot open run store: " + path);
      return problems;
    }
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const std::string where = "line " + std::to_string(lineno) + ": ";
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) {
        problems.push_back(where + "not valid JSON");
        continue;
      }
      try {
        const RunRecord r = record_from_json(j);
        validate_record(r);
        if (!seen.insert(r.id).second) problems.push_back(where + "duplicate id " + r.id);
      } catch (const Error& e) {
        problems.push_back(where + e.what());
      }
    }
    return problems;
  }

  void append(const RunRecord& record) {
    validate_record(record);
    if (!scanned_) {
      std::ifstream in(path_);
      if (in) {
        for (const RunRecord& r : load(path_)) ids_.insert(r.id);
      }
      scanned_ = true;
    }
    if (!ids_.insert(record.id).second)
      throw ConfigError("run store already holds record id " + record.id);

    const std::string line = record_to_json(record).dump() + "\n";
    const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (fd < 0) throw ConfigError("cannot open run store for append: " + path_);
    ::flock(fd, LOCK_EX);
    const ssize_t wrote = ::write(fd, line.data(), line.size());
    ::flock(fd, LOCK_UN);
    ::close(fd);
    if (wrote != static_cast<ssize_t>(line.size()))
      throw ConfigError("short write to run store: " + path_);
  }

 private:
  std::string path_;
  std::set<std::string> ids_;
  bool scanned_ = false;
};

// ---------------------------------------------------------------------------
// tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string fmt1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

/// Whole percentages print without a decimal, as the agent table expects.
inline std::string fmt_pct(double v) {
  if (v == static_cast<long long>(v)) return std::to_string(static_cast<long long>(v));
  return fmt1(v);
}

inline std::string to_markdown(const Table& t) {
  std::string out = "|";
  for (const std::string& h : t.header) out += " " + h + " |";
  out += "\n|";
  for (std::size_t i = 0; i < t.header.size(); ++i) out += " --- |";
  out += "\n";
  for (const auto& row : t.rows) {
    out += "|";
    for (const std::string& cell : row) out += " " + cell + " |";
    out += "\n";
  }
  return out;
}

inline std::string to_csv(const Table& t) {
  std::string out;
  const auto append_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      out += oprobe::detail::csv_quote(row[i]);
    }
    out += "\n";
  };
  append_row(t.header);
  for (const auto& row : t.rows) append_row(row);
  return out;
}

namespace detail {

struct Cell {
  std::size_t hits = 0;
  std::size_t total = 0;
};

inline std::string cell_text(const Cell& c) {
  if (c.total == 0) return "--";
  return fmt1(aggregate_success_pct(c.hits, c.total));
}

}  // namespace detail

/**
 * Attack-variant rows with Greedy/Default/JO success columns. A cell is the
 * percentage of records in that (variant, mode) bucket judged jailbroken,
 * one decimal; buckets with no records render as "--".
 */
inline Table fig2_table(const std::vector<RunRecord>& records) {
  if (records.empty()) throw EmptyInput("no records to tabulate");

  std::map<std::string, std::map<std::string, detail::Cell>> cells;
  for (const RunRecord& r : records) {
    detail::Cell& c = cells[r.attack_variant][r.mode];
    ++c.total;
    if (r.verdict.label == VerdictLabel::Jailbroken) ++c.hits;
  }

  std::vector<std::string> order;
  for (const char* v : {"none", "remove_harmony", "cot_override", "repeat_mimicry"})
    if (cells.count(v)) order.push_back(v);
  for (const auto& [variant, by_mode] : cells)
    if (std::find(order.begin(), order.end(), variant) == order.end()) order.push_back(variant);

  Table t;
  t.header = {"Attack", "Greedy (%)", "Default (%)", "JO (%)"};
  for (const std::string& variant : order) {
    auto& by_mode = cells[variant];
    t.rows.push_back({variant, detail::cell_text(by_mode["greedy"]),
                      detail::cell_text(by_mode["default"]), detail::cell_text(by_mode["jo"])});
  }
  return t;
}

/**
 * Policy-mixing success table: vanilla / rephrase_only / schrodinger rows,
 * one success column over all modes. "none" records count as vanilla.
 */
inline Table fig6_table(const std::vector<RunRecord>& records) {
  if (records.empty()) throw EmptyInput("no records to tabulate");

  std::map<std::string, detail::Cell> cells;
  for (const RunRecord& r : records) {
    const std::string key = r.attack_variant == "none" ? "vanilla" : r.attack_variant;
    detail::Cell& c = cells[key];
    ++c.total;
    if (r.verdict.label == VerdictLabel::Jailbroken) ++c.hits;
  }

  Table t;
  t.header = {"Variant", "Success (%)"};
  for (const char* row : {"vanilla", "rephrase_only", "schrodinger"})
    t.rows.push_back({row, detail::cell_text(cells[row])});
  return t;
}

/// Scenario rows in the agent-table layout; means one decimal, risky percent
/// without a trailing .0.
inline Table agent_table(const std::vector<std::pair<std::string, agentsim::SuiteRow>>& rows) {
  if (rows.empty()) throw EmptyInput("no suite rows to tabulate");
  Table t;
  t.header = {"Setting", "#file reads", "#file deleted", "#important file deleted",
              "risky behavior (%)"};
  for (const auto& [label, row] : rows)
    t.rows.push_back({label, fmt1(row.avg_reads), fmt1(row.avg_deletions),
                      fmt1(row.avg_important_deletions), fmt_pct(row.risky_pct)});
  return t;
}

// ---------------------------------------------------------------------------
// benchmark sampling

struct BenchmarkSet {
  std::string name;
  std::vector<std::string> prompt_ids;
  std::uint64_t sample_seed = 0;
};

/**
 * Deterministic sample without replacement: a partial Fisher-Yates walk over
 * the pool ordered as given, driven by the 64-bit LCG documented in rng.hpp.
 * The same (pool, n, seed) triple selects the same ids on every platform.
 */
inline BenchmarkSet sample_benchmark(const std::vector<std::string>& pool, std::size_t n,
                                     std::uint64_t seed, const std::string& name = "bench") {
  if (n > pool.size())
    throw PoolTooSmall("asked for " + std::to_string(n) + " prompts from a pool of " +
                       std::to_string(pool.size()));
  std::vector<std::string> ids = pool;
  Lcg64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_below(ids.size() - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  return BenchmarkSet{name, std::move(ids), seed};
}

inline nlohmann::json benchmark_to_json(const BenchmarkSet& b) {
  return nlohmann::json{
      {"name", b.name}, {"prompt_ids", b.prompt_ids}, {"sample_seed", b.sample_seed}};
}

inline BenchmarkSet benchmark_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("prompt_ids"))
    throw ConfigError("benchmark file needs a prompt_ids list");
  BenchmarkSet b;
  b.name = j.value("name", "bench");
  for (const auto& id : j["prompt_ids"]) b.prompt_ids.push_back(id.get<std::string>());
  b.sample_seed = j.value("sample_seed", std::uint64_t{0});
  return b;
}

inline BenchmarkSet load_benchmark_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NoSuchFile("cannot open benchmark file: " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("benchmark file is not valid JSON: " + path);
  return benchmark_from_json(j);
}

// ---------------------------------------------------------------------------
// curves

inline std::string curve_csv(const std::vector<double>& values) {
  if (values.empty()) throw EmptyInput("no curve points");
  std::string out = "index,value\n";
  char buf[48];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", i, values[i]);
    out += buf;
  }
  return out;
}

/// Minimal standalone SVG polyline of the series, y scaled to the data range.
inline std::string curve_svg(const std::vector<double>& values, int width = 640,
                             int height = 240) {
  if (values.empty()) throw EmptyInput("no curve points");
  if (width < 80 || height < 60) throw ConfigError("svg canvas too small");

  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) hi = lo + 1.0;

  const double margin = 36.0;
  const double plot_w = width - 2 * margin;
  const double plot_h = height - 2 * margin;
  const auto x_at = [&](std::size_t i) {
    return values.size() == 1 ? margin + plot_w / 2
                              : margin + plot_w * static_cast<double>(i) /
                                             static_cast<double>(values.size() - 1);
  };
  const auto y_at = [&](double v) { return margin + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  char buf[128];
  std::string points;
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.1f,%.1f", i ? " " : "", x_at(i), y_at(values[i]));
    points += buf;
  }

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf,
                "  <line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#999\"/>\n",
                margin, margin + plot_h, margin + plot_w, margin + plot_h);
  svg << buf;
  std::snprintf(buf, sizeof buf,
                "  <line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#999\"/>\n",
                margin, margin, margin, margin + plot_h);
  svg << buf;
  std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"%.1f\" font-size=\"10\">%.3f</text>\n",
                4.0, margin + plot_h, lo);
  svg << buf;
  std::snprintf(buf, sizeof buf, "  <text x=\"%.1f\" y=\"%.1f\" font-size=\"10\">%.3f</text>\n",
                4.0, margin + 10.0, hi);
  svg << buf;
  svg << "  <polyline fill=\"none\" stroke=\"#1f4e99\" stroke-width=\"1.5\" points=\"" << points
      << "\"/>\n";
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace oprobe::report
