#pragma once

// Remote logprobs backend speaking a completions-style HTTP contract, plus a
// chat client for judge calls. Credentials come from the environment only.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include "httplib.h"
#include "json.hpp"
#include "oprobe/backend.hpp"
#include "oprobe/errors.hpp"
#include "oprobe/judge.hpp"

namespace oprobe {

struct HttpConfig {
  std::string url;          // e.g. http://host:8000/v1/completions
  std::string api_key;      // sent as a bearer credential when non-empty
  std::string model;        // included in requests when non-empty
  int logprobs_k = 20;      // alternatives requested per step
  int timeout_ms = 30000;   // per request, connect and read
  int max_attempts = 3;     // connection failures and 5xx are retried
  int retry_backoff_ms = 100;

  void validate() const {
    if (url.empty()) throw ConfigError("backend url is empty");
    if (url.rfind("http://", 0) != 0 && url.rfind("https://", 0) != 0)
      throw ConfigError("backend url must start with http:// or https://");
    if (logprobs_k < 1) throw ConfigError("logprobs_k must be positive");
    if (timeout_ms < 1) throw ConfigError("timeout_ms must be positive");
    if (max_attempts < 1) throw ConfigError("max_attempts must be positive");
    if (retry_backoff_ms < 0) throw ConfigError("retry_backoff_ms must be nonnegative");
  }

  /// ORACLE_PROBE_BACKEND_URL is required; ORACLE_PROBE_BACKEND_KEY optional.
  static HttpConfig backend_from_env() {
    HttpConfig cfg;
    const char* url = std::getenv("ORACLE_PROBE_BACKEND_URL");
    if (!url || !*url) throw ConfigError("ORACLE_PROBE_BACKEND_URL is not set");
    cfg.url = url;
    if (const char* key = std::getenv("ORACLE_PROBE_BACKEND_KEY")) cfg.api_key = key;
    cfg.validate();
    return cfg;
  }

  /// ORACLE_PROBE_JUDGE_URL / ORACLE_PROBE_JUDGE_KEY, same shape.
  static HttpConfig judge_from_env() {
    HttpConfig cfg;
    const char* url = std::getenv("ORACLE_PROBE_JUDGE_URL");
    if (!url || !*url) throw ConfigError("ORACLE_PROBE_JUDGE_URL is not set");
    cfg.url = url;
    if (const char* key = std::getenv("ORACLE_PROBE_JUDGE_KEY")) cfg.api_key = key;
    cfg.validate();
    return cfg;
  }
};

namespace detail {

/// scheme://host[:port] and the path (default "/").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_at = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_at == std::string::npos) return {url, "/"};
  return {url.substr(0, path_at), url.substr(path_at)};
}

/**
 * One POST with bounded retries. Connection failures and 5xx responses are
 * retried with a linear backoff; anything else is classified immediately.
 * A fresh client per call keeps concurrent requests fully independent.
 */
inline std::string post_json(const HttpConfig& cfg, const std::string& body) {
  const auto [base, path] = split_url(cfg.url);
  std::string last_error = "no attempt made";

  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    if (attempt > 1 && cfg.retry_backoff_ms > 0)
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg.retry_backoff_ms * (attempt - 1)));

    httplib::Client client(base);
    client.set_connection_timeout(0, cfg.timeout_ms * 1000);
    client.set_read_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
    client.set_write_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);

    httplib::Headers headers;
    if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);

    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) return res->body;
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }

    // 4xx: classify once, no retry.
    const std::string& text = res->body;
    if (text.find("context") != std::string::npos || res->status == 413)
      throw ContextOverflow("backend rejected the prompt: HTTP " + std::to_string(res->status) +
                            " " + text);
    if (text.find("logprob") != std::string::npos)
      throw LogprobsUnsupported("backend rejected logprobs: HTTP " +
                                std::to_string(res->status) + " " + text);
    throw BackendUnavailable("backend rejected the request: HTTP " +
                             std::to_string(res->status) + " " + text);
  }
  throw BackendUnavailable("backend unreachable after " + std::to_string(cfg.max_attempts) +
                           " attempts (" + last_error + ")");
}

inline nlohmann::json parse_reply(const std::string& body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw BackendUnavailable("backend returned malformed JSON");
  return j;
}

/// Descending distribution from one {token: logprob, ...} object.
inline TokenDistribution dist_from_top_logprobs(const nlohmann::json& top, int k) {
  TokenDistribution dist;
  dist.truncation_k = k;
  if (!top.is_object()) throw LogprobsUnsupported("response carries no top_logprobs object");
  for (const auto& [token, lp] : top.items())
    dist.entries.push_back({token, std::exp(lp.get<double>())});
  if (dist.entries.empty()) throw LogprobsUnsupported("response carries empty top_logprobs");
  dist.sort_entries();
  return dist;
}

}  // namespace detail

/**
 * Completions-endpoint backend. Requests carry {prompt, max_tokens,
 * temperature, top_p, logprobs, echo:false}; replies must report per-token
 * chosen logprobs and top-k alternatives. `generate` is one server-side call
 * rather than a token-at-a-time loop.
 */
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(HttpConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const HttpConfig& config() const { return cfg_; }

  TokenDistribution next_distribution(const Continuation& cont,
                                      const DecodingParams& params) override {
    nlohmann::json req = base_request(cont.full_text(), params);
    req["max_tokens"] = 1;
    const nlohmann::json logprobs = fetch_logprobs(req);
    if (!logprobs.contains("top_logprobs") || logprobs["top_logprobs"].empty())
      throw LogprobsUnsupported("response carries no top_logprobs");
    return detail::dist_from_top_logprobs(logprobs["top_logprobs"][0], cfg_.logprobs_k);
  }

  GenerationTrace generate(const std::string& prompt, const DecodingParams& params,
                           const GenMode& mode) override {
    nlohmann::json req = base_request(prompt, params);
    if (mode.kind == GenMode::Kind::Greedy) {
      req["temperature"] = 0.0;
      req["top_p"] = 1.0;
    } else {
      req["seed"] = mode.seed;
    }

    const nlohmann::json reply = detail::parse_reply(detail::post_json(cfg_, req.dump()));
    if (!reply.contains("choices") || reply["choices"].empty())
      throw BackendUnavailable("backend reply carries no choices");
    const nlohmann::json& choice = reply["choices"][0];
    if (!choice.contains("logprobs") || choice["logprobs"].is_null())
      throw LogprobsUnsupported("backend reply carries no logprobs");
    const nlohmann::json& lp = choice["logprobs"];

    GenerationTrace trace;
    const auto& tokens = lp["tokens"];
    const auto& chosen = lp["token_logprobs"];
    const auto& tops = lp["top_logprobs"];
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      GenerationStep step;
      step.token = tokens[i].get<std::string>();
      step.chosen_prob = std::exp(chosen[i].get<double>());
      step.alternatives = detail::dist_from_top_logprobs(tops[i], cfg_.logprobs_k);
      step.top1_prob = step.alternatives.entries.front().prob;
      step.below_truncation = !step.alternatives.prob_of(step.token).has_value();
      trace.steps.push_back(std::move(step));
    }
    trace.finish = choice.value("finish_reason", "length") == "stop" ? FinishReason::Stop
                                                                     : FinishReason::Length;
    return trace;
  }

 private:
  nlohmann::json base_request(const std::string& prompt, const DecodingParams& params) const {
    nlohmann::json req{{"prompt", prompt},
                       {"max_tokens", params.max_tokens},
                       {"temperature", params.temperature},
                       {"top_p", params.top_p},
                       {"logprobs", cfg_.logprobs_k},
                       {"echo", false}};
    if (!cfg_.model.empty()) req["model"] = cfg_.model;
    return req;
  }

  nlohmann::json fetch_logprobs(const nlohmann::json& req) const {
    const nlohmann::json reply = detail::parse_reply(detail::post_json(cfg_, req.dump()));
    if (!reply.contains("choices") || reply["choices"].empty())
      throw BackendUnavailable("backend reply carries no choices");
    const nlohmann::json& choice = reply["choices"][0];
    if (!choice.contains("logprobs") || choice["logprobs"].is_null())
      throw LogprobsUnsupported("backend reply carries no logprobs");
    return choice["logprobs"];
  }

  HttpConfig cfg_;
};

/// Chat-completions client for judge rubric calls.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(HttpConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const HttpConfig& config() const { return cfg_; }

  std::string complete(const std::string& system_prompt, const std::string& user_prompt,
                       double temperature) override {
    nlohmann::json req{{"messages",
                        {{{"role", "system"}, {"content", system_prompt}},
                         {{"role", "user"}, {"content", user_prompt}}}},
                       {"temperature", temperature}};
    if (!cfg_.model.empty()) req["model"] = cfg_.model;

    std::string body;
    try {
      body = detail::post_json(cfg_, req.dump());
    } catch (const Error& e) {
      throw JudgeUnavailable(std::string("judge endpoint failed: ") + e.what());
    }
    const nlohmann::json reply = detail::parse_reply(body);
    if (!reply.contains("choices") || reply["choices"].empty() ||
        !reply["choices"][0].contains("message"))
      throw JudgeUnavailable("judge reply carries no message");
    return reply["choices"][0]["message"].value("content", "");
  }

 private:
  HttpConfig cfg_;
};

}  // namespace oprobe
