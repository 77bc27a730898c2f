#pragma once

// Policy backed by an OpenAI-compatible /v1/completions endpoint. Prompts are
// sent as token-id arrays and tokens come back as "token_id:<n>" strings
// (return_tokens_as_token_ids), falling back to vocabulary lookup of the token
// text when the server ignores that flag.

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "sage/error.hpp"
#include "sage/policy.hpp"

namespace sage {

struct RemotePolicySpec {
  std::string endpoint;  // "http://host:port" optionally followed by a path
  std::string model;
  std::string auth_env = "SAGE_API_KEY";
  std::size_t top_logprobs_limit = 20;
  std::chrono::milliseconds timeout{60000};
  std::size_t max_retries = 2;
};

struct ParsedEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // defaults to /v1/completions
};

inline ParsedEndpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorKind::Config, "endpoint '" + url + "' has no scheme");
  const auto slash = url.find('/', scheme + 3);
  ParsedEndpoint out;
  out.base = url.substr(0, slash);
  out.path = slash == std::string::npos ? std::string() : url.substr(slash);
  if (out.path.empty() || out.path == "/") out.path = "/v1/completions";
  return out;
}

class RemotePolicy final : public Policy {
 public:
  RemotePolicy(RemotePolicySpec spec, Vocabulary vocab, SpecialTokens special)
      : spec_(std::move(spec)), endpoint_(parse_endpoint(spec_.endpoint)), vocab_(std::move(vocab)),
        special_(std::move(special)) {}

  const Vocabulary& vocab() const override { return vocab_; }
  const SpecialTokens& special() const override { return special_; }
  std::size_t top_logprobs_limit() const override { return spec_.top_logprobs_limit; }
  const RemotePolicySpec& spec() const noexcept { return spec_; }

  TokenDistribution next_token_dist(std::span<const TokenId> context, std::size_t k) const override {
    if (k < 1) throw Error(ErrorKind::Config, "k must be >= 1");
    if (k > spec_.top_logprobs_limit)
      throw Error(ErrorKind::RemoteCapabilityExceeded,
                  "k=" + std::to_string(k) + " exceeds top-logprobs limit " + std::to_string(spec_.top_logprobs_limit));
    nlohmann::json body = base_body(context);
    body["max_tokens"] = 1;
    body["temperature"] = 0.0;
    body["logprobs"] = k;
    body["n"] = 1;
    const auto resp = post(body);
    const auto& lp = first_logprobs(resp);
    if (!lp.contains("top_logprobs") || !lp["top_logprobs"].is_array() || lp["top_logprobs"].empty() ||
        !lp["top_logprobs"][0].is_object())
      throw Error(ErrorKind::Protocol, "response carries no top_logprobs");
    TokenDistribution out;
    out.context_len = context.size();
    for (const auto& [tok, val] : lp["top_logprobs"][0].items()) out.entries.push_back({parse_token(tok), val.get<double>()});
    std::sort(out.entries.begin(), out.entries.end(), ranks_before);
    if (out.entries.size() > k) out.entries.resize(k);
    return out;
  }

  std::vector<StepProposal> sample_steps(std::span<const TokenId> context, const StepRequest& request) const override {
    validate(request);
    nlohmann::json body = base_body(context);
    body["max_tokens"] = request.budget;
    body["temperature"] = request.temperature;
    body["top_p"] = request.top_p;
    body["n"] = request.n;
    body["seed"] = request.seed;
    body["logprobs"] = 1;
    body["include_stop_str_in_output"] = true;
    std::vector<std::string> stop{vocab_.token(special_.think_close)};
    std::vector<TokenId> stop_ids{special_.think_close};
    if (request.stop_at_delimiter) {
      for (TokenId d : special_.step_delimiters) {
        stop.push_back(vocab_.token(d));
        stop_ids.push_back(d);
      }
    }
    body["stop"] = stop;
    body["stop_token_ids"] = stop_ids;

    const auto resp = post(body);
    if (!resp.contains("choices") || !resp["choices"].is_array())
      throw Error(ErrorKind::Protocol, "response has no choices");
    std::vector<StepProposal> out;
    for (const auto& choice : resp["choices"]) {
      if (!choice.contains("logprobs") || !choice["logprobs"].is_object())
        throw Error(ErrorKind::Protocol, "choice carries no logprobs");
      const auto& lp = choice["logprobs"];
      if (!lp.contains("tokens") || !lp.contains("token_logprobs") || !lp["token_logprobs"].is_array())
        throw Error(ErrorKind::Protocol, "choice carries no per-token log-probabilities");
      StepProposal p;
      for (const auto& t : lp["tokens"]) p.tokens.push_back(parse_token(t.get<std::string>()));
      for (const auto& v : lp["token_logprobs"]) {
        if (!v.is_number()) throw Error(ErrorKind::Protocol, "null token log-probability");
        p.logprobs.push_back(v.get<double>());
      }
      if (p.tokens.size() != p.logprobs.size() || p.tokens.empty())
        throw Error(ErrorKind::Protocol, "token and log-probability counts differ");
      p.end = classify_step_end(p.tokens, special_, request.stop_at_delimiter);
      out.push_back(std::move(p));
    }
    if (out.size() != request.n)
      throw Error(ErrorKind::Protocol, "expected " + std::to_string(request.n) + " choices, got " + std::to_string(out.size()));
    return out;
  }

 private:
  nlohmann::json base_body(std::span<const TokenId> context) const {
    nlohmann::json body;
    body["model"] = spec_.model;
    body["prompt"] = std::vector<TokenId>(context.begin(), context.end());
    body["return_tokens_as_token_ids"] = true;
    return body;
  }

  static const nlohmann::json& first_logprobs(const nlohmann::json& resp) {
    if (!resp.contains("choices") || !resp["choices"].is_array() || resp["choices"].empty())
      throw Error(ErrorKind::Protocol, "response has no choices");
    const auto& c = resp["choices"][0];
    if (!c.contains("logprobs") || !c["logprobs"].is_object())
      throw Error(ErrorKind::Protocol, "choice carries no logprobs");
    return c["logprobs"];
  }

  TokenId parse_token(const std::string& s) const {
    constexpr std::string_view tag = "token_id:";
    if (s.rfind(tag, 0) == 0) {
      const auto id = std::strtoull(s.c_str() + tag.size(), nullptr, 10);
      if (id >= vocab_.size()) throw Error(ErrorKind::Protocol, "token id " + s + " outside vocabulary");
      return static_cast<TokenId>(id);
    }
    if (auto id = vocab_.find(s)) return *id;
    throw Error(ErrorKind::Protocol, "unknown token string '" + s + "'");
  }

  nlohmann::json post(const nlohmann::json& body) const {
    httplib::Headers headers;
    if (const char* key = std::getenv(spec_.auth_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);
    const std::string payload = body.dump();
    for (std::size_t attempt = 0;; ++attempt) {
      httplib::Client cli(endpoint_.base);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(spec_.timeout);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(spec_.timeout - secs);
      cli.set_connection_timeout(secs.count(), usecs.count());
      cli.set_read_timeout(secs.count(), usecs.count());
      auto res = cli.Post(endpoint_.path, headers, payload, "application/json");
      const bool last = attempt >= spec_.max_retries;
      if (!res) {
        if (last) throw TransportError("request failed: " + httplib::to_string(res.error()), false, true);
        std::this_thread::sleep_for(std::chrono::milliseconds(50 << attempt));
        continue;
      }
      if (res->status == 401 || res->status == 403)
        throw TransportError("authentication rejected (HTTP " + std::to_string(res->status) + ")", true, false);
      if (res->status == 400) {
        const auto err = nlohmann::json::parse(res->body, nullptr, false);
        const std::string code = err.is_object() && err.contains("error") && err["error"].is_object()
                                     ? err["error"].value("code", std::string())
                                     : std::string();
        if (code == "logprobs_cap" || res->body.find("logprobs") != std::string::npos)
          throw Error(ErrorKind::RemoteCapabilityExceeded, "server rejected logprobs width: " + res->body);
        throw Error(ErrorKind::Protocol, "HTTP 400: " + res->body);
      }
      if (res->status >= 500) {
        if (last) throw TransportError("HTTP " + std::to_string(res->status), false, true);
        std::this_thread::sleep_for(std::chrono::milliseconds(50 << attempt));
        continue;
      }
      if (res->status != 200) throw TransportError("HTTP " + std::to_string(res->status), false, false);
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (parsed.is_discarded()) throw Error(ErrorKind::Protocol, "response body is not JSON");
      return parsed;
    }
  }

  RemotePolicySpec spec_;
  ParsedEndpoint endpoint_;
  Vocabulary vocab_;
  SpecialTokens special_;
};

}  // namespace sage
