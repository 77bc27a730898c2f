// sage_cli: run decoding experiments, sweeps, metric recomputation and the
// mock completions server.

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <iostream>

#include "sage/harness.hpp"
#include "sage/mock_server.hpp"

namespace {

struct Options {
  std::string config;
  std::string strategy = "sage";
  std::string tr;
  std::string max_steps;
  sage::ExperimentSpec spec;
};

void add_experiment_flags(CLI::App& cmd, Options& o) {
  auto& s = o.spec;
  cmd.add_option("--config", o.config, "flat key=value file; keys are flag names without dashes");
  cmd.add_option("--problems", s.problems_path, "problems JSONL")->required();
  cmd.add_option("--policy", s.policy, "synthetic policy JSON, or an http(s) completions endpoint")->required();
  cmd.add_option("--strategy", o.strategy, "greedy|random|beam|tsearch_phi|tsearch_phi_token|sage|degrade_sage")
      ->capture_default_str();
  cmd.add_option("--r", s.r, "completions returned per query")->capture_default_str();
  cmd.add_option("--tr", o.tr, "tolerance ratio h/2m (tsearch only; default 1.0)");
  cmd.add_option("--max-steps", o.max_steps, "T_max: tokens (token-level) or steps (step-level)");
  cmd.add_option("--per-step-budget", s.per_step_budget, "max tokens per reasoning step")->capture_default_str();
  cmd.add_option("--answer-budget", s.answer_budget, "max tokens after </think>")->capture_default_str();
  cmd.add_option("--runs", s.runs, "independent runs per problem")->capture_default_str();
  cmd.add_option("--seed", s.seed, "base seed")->capture_default_str();
  cmd.add_option("--out", s.out_dir, "output directory")->required();
  cmd.add_option("--model", s.model, "model name sent to a remote endpoint");
  cmd.add_option("--vocab", s.vocab_path, "remote only: spec-format JSON with the vocabulary and special tokens");
  cmd.add_option("--auth-env", s.auth_env, "environment variable holding the bearer key")->capture_default_str();
  cmd.add_option("--top-logprobs-limit", s.top_logprobs_limit, "remote top-logprobs cap")->capture_default_str();
  cmd.add_option("--temperature", s.temperature, "sampling temperature")->capture_default_str();
  cmd.add_option("--top-p", s.top_p, "nucleus mass")->capture_default_str();
  cmd.add_option("--jobs", s.jobs, "worker threads")->capture_default_str();
  cmd.add_flag("!--no-sot", s.insert_sot, "do not append <think> to the prompt");
}

void finish(Options& o) {
  o.spec.strategy = sage::parse_strategy(o.strategy);
  if (!o.tr.empty()) o.spec.tr = std::stod(o.tr);
  if (!o.max_steps.empty()) o.spec.max_steps = std::stoull(o.max_steps);
}

/// Expands `--config FILE` into `--key=value` arguments placed right after the
/// subcommand, so explicit flags (parsed later, last one wins) override it.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    std::size_t erase = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      erase = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      erase = 1;
    } else {
      continue;
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + erase));
    std::vector<std::string> extra;
    for (const auto& item : CLI::ConfigINI().from_file(path)) {
      std::string value;
      for (const auto& in : item.inputs) value += (value.empty() ? "" : ",") + in;
      extra.push_back("--" + item.name + "=" + value);
    }
    args.insert(args.begin() + (args.empty() ? 0 : 1), extra.begin(), extra.end());
    break;
  }
  std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
  return args;
}

sage::MockServer* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"test-time search and group rollouts for reasoning models"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Options run_opts;
  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--ew", run_opts.spec.ew, "exploration width m")->capture_default_str();
  add_experiment_flags(*run, run_opts);

  Options sweep_opts;
  std::vector<std::size_t> widths{0, 1, 2, 4};
  auto* sweep = app.add_subcommand("sweep", "run one experiment per exploration width");
  sweep->add_option("--ew", widths, "comma-separated widths")->delimiter(',')->capture_default_str();
  add_experiment_flags(*sweep, sweep_opts);

  std::string metrics_dir;
  auto* metrics = app.add_subcommand("metrics", "recompute metrics from an output directory");
  metrics->add_option("dir", metrics_dir, "directory written by run")->required();

  std::string serve_policy, serve_host = "127.0.0.1";
  int serve_port = 8000;
  std::size_t serve_cap = 20;
  std::string serve_key_env;
  auto* serve = app.add_subcommand("serve", "serve a synthetic policy over the completions protocol");
  serve->add_option("--policy", serve_policy, "synthetic policy JSON")->required();
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--port", serve_port)->capture_default_str();
  serve->add_option("--logprobs-cap", serve_cap, "largest logprobs accepted")->capture_default_str();
  serve->add_option("--auth-env", serve_key_env, "require the bearer key held in this environment variable");

  std::vector<std::string> args;
  try {
    args = expand_config(argc, argv);
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) {
      finish(run_opts);
      const auto res = sage::run_experiment(run_opts.spec);
      std::cout << sage::metrics_pretty(res.row);
    } else if (*sweep) {
      finish(sweep_opts);
      std::cout << sage::run_sweep(sweep_opts.spec, widths);
    } else if (*metrics) {
      std::cout << sage::metrics_pretty(sage::recompute_metrics(metrics_dir));
    } else if (*serve) {
      sage::MockServerOptions opts;
      opts.host = serve_host;
      opts.port = serve_port;
      opts.logprobs_cap = serve_cap;
      if (!serve_key_env.empty()) {
        const char* key = std::getenv(serve_key_env.c_str());
        if (!key || !*key) throw sage::Error(sage::ErrorKind::Config, serve_key_env + " is not set");
        opts.api_key = key;
      }
      sage::MockServer server(sage::SyntheticPolicy(sage::load_synthetic_spec(serve_policy)), opts);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
      });
      std::fprintf(stderr, "serving on %s:%d\n", serve_host.c_str(), serve_port);
      server.serve_forever();
      g_server = nullptr;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
