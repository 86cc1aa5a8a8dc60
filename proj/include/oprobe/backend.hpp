#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oprobe/errors.hpp"
#include "oprobe/rng.hpp"

namespace oprobe {

struct DecodingParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 4096;
};

struct TokenProb {
  std::string token;
  double prob = 0.0;

  friend bool operator==(const TokenProb&, const TokenProb&) = default;
};

/**
 * Next-token distribution as reported by a backend: the top `truncation_k`
 * tokens by probability. Mass may sum below 1 when the vocabulary was cut
 * off; it must never exceed 1 beyond rounding.
 *
 * Canonical order is probability descending, then token ascending, which
 * makes greedy picks and nucleus cuts deterministic under ties.
 */
struct TokenDistribution {
  std::vector<TokenProb> entries;
  int truncation_k = 20;  // 0 means the full vocabulary was reported

  void sort_entries() {
    std::sort(entries.begin(), entries.end(), [](const TokenProb& a, const TokenProb& b) {
      if (a.prob != b.prob) return a.prob > b.prob;
      return a.token < b.token;
    });
  }

  double total_mass() const {
    double sum = 0.0;
    for (const auto& e : entries) sum += e.prob;
    return sum;
  }

  std::optional<double> prob_of(const std::string& token) const {
    for (const auto& e : entries)
      if (e.token == token) return e.prob;
    return std::nullopt;
  }

  void validate(double tol = 1e-9) const {
    for (const auto& e : entries) {
      if (e.prob < 0.0) throw ConfigError("negative probability for token '" + e.token + "'");
    }
    if (total_mass() > 1.0 + tol) throw ConfigError("distribution mass exceeds 1");
  }
};

/**
 * Apply temperature then nucleus truncation.
 *
 * Temperature T rescales each probability to p^(1/T) and renormalizes over
 * the reported entries (with a truncated vocabulary this is the only mass we
 * can renormalize over). Nucleus keeps the smallest canonical-order prefix
 * whose mass reaches top_p, then renormalizes again. T == 1 and top_p >= 1 is
 * an exact passthrough: sub-1 mass of truncated distributions is preserved.
 *
 * T == 0 is not a distribution; greedy decoding expresses it instead.
 */
inline TokenDistribution adjust(const TokenDistribution& dist, const DecodingParams& params) {
  if (params.temperature == 0.0) throw ZeroTemperature();
  if (params.temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (params.top_p <= 0.0 || params.top_p > 1.0) throw ConfigError("top_p must be in (0, 1]");

  TokenDistribution out = dist;
  out.sort_entries();
  if (params.temperature == 1.0 && params.top_p >= 1.0) return out;

  if (params.temperature != 1.0) {
    const double inv_t = 1.0 / params.temperature;
    for (auto& e : out.entries) e.prob = std::pow(e.prob, inv_t);
    out.sort_entries();  // exponent preserves order but refresh ties anyway
  }
  double mass = out.total_mass();
  if (mass <= 0.0) throw ZeroMass("all reported tokens have zero probability");
  for (auto& e : out.entries) e.prob /= mass;

  if (params.top_p < 1.0) {
    double cum = 0.0;
    std::size_t keep = out.entries.size();
    for (std::size_t i = 0; i < out.entries.size(); ++i) {
      cum += out.entries[i].prob;
      if (cum >= params.top_p - 1e-12) {
        keep = i + 1;
        break;
      }
    }
    out.entries.resize(keep);
    double kept = out.total_mass();
    if (kept <= 0.0) throw ZeroMass("nucleus retained no probability mass");
    for (auto& e : out.entries) e.prob /= kept;
  }
  return out;
}

struct GenerationStep {
  std::string token;
  double chosen_prob = 0.0;  // unadjusted model probability of `token`
  double top1_prob = 0.0;    // unadjusted probability of the argmax token
  TokenDistribution alternatives;
  bool below_truncation = false;  // token absent from the reported top-k
};

enum class FinishReason { Stop, Length };

struct GenerationTrace {
  std::vector<GenerationStep> steps;
  FinishReason finish = FinishReason::Length;

  std::string text() const {
    std::string out;
    for (const auto& s : steps) out += s.token;
    return out;
  }
};

/// Prompt plus the tokens already forced after it.
struct Continuation {
  std::string prompt;
  std::vector<std::string> tokens;

  std::string full_text() const {
    std::string out = prompt;
    for (const auto& t : tokens) out += t;
    return out;
  }
};

struct GenMode {
  enum class Kind { Greedy, Sample };
  Kind kind = Kind::Greedy;
  std::uint64_t seed = 2026;

  static GenMode greedy() { return {Kind::Greedy, 0}; }
  static GenMode sample(std::uint64_t seed) { return {Kind::Sample, seed}; }
};

/// Pick an index by inverse-CDF walk; u is scaled by total mass so truncated
/// distributions never select past the end.
inline std::size_t sample_index(const TokenDistribution& dist, Lcg64& rng) {
  if (dist.entries.empty()) throw ZeroMass("cannot sample an empty distribution");
  const double u = rng.next_double() * dist.total_mass();
  double cum = 0.0;
  for (std::size_t i = 0; i < dist.entries.size(); ++i) {
    cum += dist.entries[i].prob;
    if (u < cum) return i;
  }
  return dist.entries.size() - 1;
}

/**
 * Anything that can report next-token distributions. `generate` has a default
 * decode loop on top of `next_distribution`; remote backends may override it
 * with a single server-side call.
 */
class Backend {
 public:
  virtual ~Backend() = default;

  virtual TokenDistribution next_distribution(const Continuation& cont,
                                              const DecodingParams& params) = 0;

  /// Token that ends a generation, when the backend has one.
  virtual std::optional<std::string> stop_token() const { return std::nullopt; }

  virtual GenerationTrace generate(const std::string& prompt, const DecodingParams& params,
                                   const GenMode& mode) {
    GenerationTrace trace;
    Continuation cont{prompt, {}};
    Lcg64 rng(mode.seed);
    const std::optional<std::string> stop = stop_token();

    for (int i = 0; i < params.max_tokens; ++i) {
      TokenDistribution raw = next_distribution(cont, params);
      raw.sort_entries();
      if (raw.entries.empty()) throw ZeroMass("backend returned an empty distribution");

      std::size_t pick = 0;
      if (mode.kind == GenMode::Kind::Sample) {
        TokenDistribution adjusted = adjust(raw, params);
        const std::size_t j = sample_index(adjusted, rng);
        const std::string& tok = adjusted.entries[j].token;
        for (std::size_t k = 0; k < raw.entries.size(); ++k) {
          if (raw.entries[k].token == tok) {
            pick = k;
            break;
          }
        }
      }

      GenerationStep step;
      step.token = raw.entries[pick].token;
      step.chosen_prob = raw.entries[pick].prob;
      step.top1_prob = raw.entries[0].prob;
      step.alternatives = raw;
      trace.steps.push_back(std::move(step));
      cont.tokens.push_back(raw.entries[pick].token);

      if (stop && raw.entries[pick].token == *stop) {
        trace.finish = FinishReason::Stop;
        return trace;
      }
    }
    trace.finish = FinishReason::Length;
    return trace;
  }
};

}  // namespace oprobe
