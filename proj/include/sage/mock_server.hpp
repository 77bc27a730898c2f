#pragma once

// In-process OpenAI-compatible completions server answering from a synthetic
// policy. Used to conformance-test RemotePolicy over loopback.

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "sage/error.hpp"
#include "sage/synthetic_policy.hpp"

namespace sage {

struct MockServerOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::size_t logprobs_cap = 20;
  std::optional<std::string> api_key;  // when set, requests need "Authorization: Bearer <key>"
};

struct MockResponse {
  int status = 200;
  nlohmann::json body;
};

namespace detail {
inline nlohmann::json openai_error(const std::string& message, const std::string& type, const std::string& code) {
  return {{"error", {{"message", message}, {"type", type}, {"code", code}}}};
}
}  // namespace detail

class MockServer {
 public:
  MockServer(SyntheticPolicy policy, MockServerOptions options)
      : policy_(std::move(policy)), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
    // no SO_REUSEPORT: a taken port must fail to bind
    server_->set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    server_->Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto out = handle(req.get_header_value("Authorization"), req.body);
      res.status = out.status;
      res.set_content(out.body.dump(), "application/json");
    });
  }

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  ~MockServer() { stop(); }

  /// Binds and serves on a background thread.
  void start() {
    bind();
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
  }

  /// Binds and serves on the calling thread until stop() is called.
  void serve_forever() {
    bind();
    server_->listen_after_bind();
  }

  void stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }
  std::string base_url() const { return "http://" + options_.host + ":" + std::to_string(port_); }

  /// Transport-independent request handling.
  MockResponse handle(const std::string& authorization, const std::string& raw_body) const {
    if (options_.api_key && authorization != "Bearer " + *options_.api_key)
      return {401, detail::openai_error("invalid or missing API key", "authentication_error", "invalid_api_key")};
    const auto req = nlohmann::json::parse(raw_body, nullptr, false);
    if (!req.is_object()) return {400, detail::openai_error("body is not a JSON object", "invalid_request_error", "bad_json")};
    try {
      return {200, complete(req)};
    } catch (const CapExceeded& e) {
      return {400, detail::openai_error(e.what(), "invalid_request_error", "logprobs_cap")};
    } catch (const std::exception& e) {
      return {400, detail::openai_error(e.what(), "invalid_request_error", "bad_request")};
    }
  }

 private:
  struct CapExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  void bind() {
    if (options_.port == 0) {
      port_ = server_->bind_to_any_port(options_.host);
      if (port_ < 0) throw Error(ErrorKind::Bind, "cannot bind " + options_.host);
    } else {
      if (!server_->bind_to_port(options_.host, options_.port))
        throw Error(ErrorKind::Bind, "cannot bind " + options_.host + ":" + std::to_string(options_.port));
      port_ = options_.port;
    }
  }

  nlohmann::json complete(const nlohmann::json& req) const {
    const auto& vocab = policy_.vocab();
    std::vector<TokenId> context;
    const auto& prompt = req.at("prompt");
    if (prompt.is_string()) context = vocab.encode(prompt.get<std::string>());
    else context = prompt.get<std::vector<TokenId>>();
    for (TokenId t : context)
      if (t >= vocab.size()) throw std::runtime_error("prompt token out of range");

    const std::size_t max_tokens = req.value("max_tokens", std::size_t{16});
    const double temperature = req.value("temperature", 1.0);
    const double top_p = req.value("top_p", 1.0);
    const std::size_t n = req.value("n", std::size_t{1});
    const std::uint64_t seed = req.value("seed", std::uint64_t{0});
    const bool include_stop = req.value("include_stop_str_in_output", false);
    const bool as_ids = req.value("return_tokens_as_token_ids", false);
    std::optional<std::size_t> logprobs;
    if (req.contains("logprobs") && !req["logprobs"].is_null()) logprobs = req["logprobs"].get<std::size_t>();
    if (logprobs && *logprobs > options_.logprobs_cap)
      throw CapExceeded("logprobs=" + std::to_string(*logprobs) + " exceeds server cap " +
                        std::to_string(options_.logprobs_cap));
    if (temperature < 0.0) throw std::runtime_error("temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw std::runtime_error("top_p must be in (0, 1]");
    if (n < 1) throw std::runtime_error("n must be >= 1");

    std::set<TokenId> stop;
    for (TokenId id : req.value("stop_token_ids", std::vector<TokenId>{})) stop.insert(id);
    if (req.contains("stop")) {
      std::vector<std::string> strings;
      if (req["stop"].is_string()) strings.push_back(req["stop"].get<std::string>());
      else if (req["stop"].is_array()) strings = req["stop"].get<std::vector<std::string>>();
      for (const auto& s : strings)
        if (auto id = vocab.find(s)) stop.insert(*id);
    }

    auto name = [&](TokenId id) { return as_ids ? "token_id:" + std::to_string(id) : vocab.token(id); };
    const auto samples = policy_.sample(context, n, max_tokens, temperature, top_p, seed, stop);
    auto choices = nlohmann::json::array();
    std::size_t completion_tokens = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      auto tokens = samples[i].tokens;
      auto lps = samples[i].logprobs;
      if (samples[i].stopped && !include_stop) {
        tokens.pop_back();
        lps.pop_back();
      }
      completion_tokens += tokens.size();
      nlohmann::json choice;
      choice["index"] = i;
      choice["text"] = vocab.decode(tokens);
      choice["finish_reason"] = samples[i].stopped ? "stop" : "length";
      if (logprobs) {
        auto tok_names = nlohmann::json::array();
        auto top = nlohmann::json::array();
        std::vector<TokenId> ctx = context;
        for (TokenId t : tokens) {
          tok_names.push_back(name(t));
          nlohmann::json m = nlohmann::json::object();
          const auto& full = policy_.full_distribution(ctx);
          for (std::size_t k = 0; k < std::min(*logprobs, full.size()); ++k) m[name(full[k].id)] = full[k].logprob;
          top.push_back(std::move(m));
          ctx.push_back(t);
        }
        choice["logprobs"] = {{"tokens", tok_names}, {"token_logprobs", lps}, {"top_logprobs", top}};
      } else {
        choice["logprobs"] = nullptr;
      }
      choices.push_back(std::move(choice));
    }
    return {{"id", "cmpl-mock"},
            {"object", "text_completion"},
            {"model", req.value("model", std::string("synthetic"))},
            {"choices", std::move(choices)},
            {"usage",
             {{"prompt_tokens", context.size()},
              {"completion_tokens", completion_tokens},
              {"total_tokens", context.size() + completion_tokens}}}};
  }

  SyntheticPolicy policy_;
  MockServerOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

/// Starts a mock server on a background thread; BindError when the port is taken.
inline std::unique_ptr<MockServer> mock_server(const SyntheticPolicySpec& spec, int port,
                                               MockServerOptions options = {}) {
  options.port = port;
  auto server = std::make_unique<MockServer>(SyntheticPolicy(spec), std::move(options));
  server->start();
  return server;
}

}  // namespace sage
