#pragma once

// Experiment runner: problem ingestion, strategy dispatch, per-(problem, run)
// seeding, bounded-parallel execution and deterministic result persistence.

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sage/error.hpp"
#include "sage/metrics.hpp"
#include "sage/remote_policy.hpp"
#include "sage/rng.hpp"
#include "sage/sage.hpp"
#include "sage/synthetic_policy.hpp"
#include "sage/tsearch.hpp"
#include "sage/verifier.hpp"

namespace sage {

struct ProblemRecord {
  std::string id;
  std::string prompt;
  std::string gold_answer;
  Verifier verifier;
};

/// One problem per JSONL line: {"id", "prompt", "answer", "verifier"?}. Blank
/// lines are skipped but still counted for error positions.
inline std::vector<ProblemRecord> parse_problems(std::istream& in) {
  std::vector<ProblemRecord> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_object()) throw IngestError(lineno, "not a JSON object");
    auto text_field = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_string()) throw IngestError(lineno, std::string("missing string field '") + key + "'");
      return j[key].get<std::string>();
    };
    ProblemRecord rec;
    rec.id = text_field("id");
    rec.prompt = text_field("prompt");
    if (j.contains("answer") && j["answer"].is_number()) rec.gold_answer = j["answer"].dump();
    else rec.gold_answer = text_field("answer");
    if (j.contains("verifier") && !j["verifier"].is_null()) {
      if (!j["verifier"].is_string()) throw IngestError(lineno, "verifier must be a string");
      try {
        rec.verifier = Verifier::parse(j["verifier"].get<std::string>());
      } catch (const Error& e) {
        throw IngestError(lineno, e.what());
      }
    }
    if (!ids.insert(rec.id).second) throw IngestError(lineno, "duplicate id '" + rec.id + "'");
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<ProblemRecord> ingest_problems(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError(0, "cannot open '" + path + "'");
  return parse_problems(in);
}

enum class Strategy { Greedy, Random, Beam, TSearchPhi, TSearchPhiToken, Sage, DegradeSage };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::Greedy: return "greedy";
    case Strategy::Random: return "random";
    case Strategy::Beam: return "beam";
    case Strategy::TSearchPhi: return "tsearch_phi";
    case Strategy::TSearchPhiToken: return "tsearch_phi_token";
    case Strategy::Sage: return "sage";
    case Strategy::DegradeSage: return "degrade_sage";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (auto v : {Strategy::Greedy, Strategy::Random, Strategy::Beam, Strategy::TSearchPhi, Strategy::TSearchPhiToken,
                 Strategy::Sage, Strategy::DegradeSage})
    if (s == to_string(v)) return v;
  throw Error(ErrorKind::Config, "unknown strategy '" + std::string(s) + "'");
}

inline bool is_step_strategy(Strategy s) { return s == Strategy::Sage || s == Strategy::DegradeSage; }
inline bool is_tsearch(Strategy s) { return s == Strategy::TSearchPhi || s == Strategy::TSearchPhiToken; }

struct ExperimentSpec {
  std::string problems_path;
  Strategy strategy = Strategy::Sage;
  std::size_t ew = 4;
  std::size_t r = 1;
  std::optional<double> tr;  // tsearch only; defaults to 1.0
  /// Tokens for token-level strategies, reasoning steps for step-level ones.
  /// Defaults: 32768 tokens, 10 steps.
  std::optional<std::size_t> max_steps;
  std::size_t per_step_budget = 100;
  std::size_t answer_budget = 100;
  std::size_t runs = 1;
  std::uint64_t seed = 0;
  std::string policy;      // synthetic spec file, or an http(s) endpoint
  std::string vocab_path;  // remote only: spec-format file supplying vocab and special ids
  std::string model;
  std::string auth_env = "SAGE_API_KEY";
  std::size_t top_logprobs_limit = 20;
  double temperature = 1.0;
  double top_p = 0.95;
  bool insert_sot = true;
  std::string out_dir;
  std::size_t jobs = 1;
};

inline std::size_t effective_max_steps(const ExperimentSpec& spec) {
  if (spec.max_steps) return *spec.max_steps;
  return is_step_strategy(spec.strategy) ? 10 : 32768;
}

inline void validate(const ExperimentSpec& spec) {
  if (spec.tr && !is_tsearch(spec.strategy))
    throw Error(ErrorKind::Config, std::string("tolerance ratio applies to tsearch strategies only, not ") +
                                       to_string(spec.strategy));
  if (spec.runs < 1) throw Error(ErrorKind::Config, "runs must be >= 1");
  if (spec.jobs < 1) throw Error(ErrorKind::Config, "jobs must be >= 1");
  if ((spec.strategy == Strategy::Beam || spec.strategy == Strategy::Sage) && spec.ew < 1)
    throw Error(ErrorKind::Config, std::string(to_string(spec.strategy)) + " needs ew >= 1");
  if (is_tsearch(spec.strategy)) {
    SearchConfig cfg;
    cfg.m = spec.ew;
    cfg.r = spec.r;
    cfg.h = tolerance_rank(spec.tr.value_or(1.0), spec.ew);
    validate(cfg);
  }
  if (spec.strategy == Strategy::Sage && (spec.r < 1 || spec.r > spec.ew))
    throw Error(ErrorKind::Config, "sage needs 1 <= r <= ew");
  if (!(spec.temperature > 0.0)) throw Error(ErrorKind::Config, "temperature must be > 0");
  if (!(spec.top_p > 0.0 && spec.top_p <= 1.0)) throw Error(ErrorKind::Config, "top_p must be in (0, 1]");
  if (spec.policy.empty()) throw Error(ErrorKind::Config, "no policy given");
}

/// Display id carrying the configuration, e.g. "tsearch_phi(4,1,h8)".
inline std::string strategy_label(const ExperimentSpec& spec) {
  const std::string name = to_string(spec.strategy);
  const auto m = std::to_string(spec.ew), r = std::to_string(spec.r);
  switch (spec.strategy) {
    case Strategy::TSearchPhi:
    case Strategy::TSearchPhiToken:
      return name + "(" + m + "," + r + ",h" + std::to_string(tolerance_rank(spec.tr.value_or(1.0), spec.ew)) + ")";
    case Strategy::Sage: return name + "(" + m + "," + r + ")";
    case Strategy::Beam: return name + "(" + m + "," + m + ")";
    default: return name;
  }
}

inline bool is_remote(const std::string& policy) {
  return policy.rfind("http://", 0) == 0 || policy.rfind("https://", 0) == 0;
}

inline std::unique_ptr<Policy> load_policy(const ExperimentSpec& spec) {
  if (!is_remote(spec.policy)) return std::make_unique<SyntheticPolicy>(load_synthetic_spec(spec.policy));
  if (spec.vocab_path.empty()) throw Error(ErrorKind::Config, "remote policy needs a vocabulary file");
  auto vocab_spec = load_synthetic_spec(spec.vocab_path);
  std::vector<std::string> strings = vocab_spec.token_strings;
  if (strings.empty()) throw Error(ErrorKind::Config, "vocabulary file lists no token strings");
  RemotePolicySpec rs;
  rs.endpoint = spec.policy;
  rs.model = spec.model;
  rs.auth_env = spec.auth_env;
  rs.top_logprobs_limit = spec.top_logprobs_limit;
  return std::make_unique<RemotePolicy>(rs, Vocabulary(std::move(strings)), vocab_spec.special);
}

/// One line of completions.jsonl.
struct CompletionRecord {
  std::string problem_id;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::string strategy;
  std::size_t index = 0;
  std::vector<TokenId> think_tokens;
  std::vector<double> think_logprobs;
  std::vector<TokenId> answer_tokens;
  std::string think_text;
  std::string answer_text;
  double phi = 0.0;
  bool forced = false;
  bool correct = false;
  std::optional<double> rfcs;

  std::size_t think_len() const { return think_tokens.size(); }
  std::size_t len() const { return think_tokens.size() + answer_tokens.size(); }
};

inline nlohmann::json to_json(const CompletionRecord& r) {
  return {{"problem_id", r.problem_id},
          {"run", r.run},
          {"seed", r.seed},
          {"strategy", r.strategy},
          {"index", r.index},
          {"think_tokens", r.think_tokens},
          {"think_logprobs", r.think_logprobs},
          {"answer_tokens", r.answer_tokens},
          {"think_text", r.think_text},
          {"answer_text", r.answer_text},
          {"phi", r.phi},
          {"forced", r.forced},
          {"correct", r.correct},
          {"rfcs", r.rfcs ? nlohmann::json(*r.rfcs) : nlohmann::json(nullptr)},
          {"think_len", r.think_len()},
          {"len", r.len()}};
}

inline CompletionRecord completion_record_from_json(const nlohmann::json& j) {
  CompletionRecord r;
  r.problem_id = j.at("problem_id").get<std::string>();
  r.run = j.at("run").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.strategy = j.at("strategy").get<std::string>();
  r.index = j.at("index").get<std::size_t>();
  r.think_tokens = j.at("think_tokens").get<std::vector<TokenId>>();
  r.think_logprobs = j.at("think_logprobs").get<std::vector<double>>();
  r.answer_tokens = j.at("answer_tokens").get<std::vector<TokenId>>();
  r.think_text = j.at("think_text").get<std::string>();
  r.answer_text = j.at("answer_text").get<std::string>();
  r.phi = j.at("phi").get<double>();
  r.forced = j.at("forced").get<bool>();
  r.correct = j.at("correct").get<bool>();
  if (!j.at("rfcs").is_null()) r.rfcs = j.at("rfcs").get<double>();
  return r;
}

/// Output of one (problem, run) work item.
struct RunOutput {
  std::vector<CompletionRecord> completions;
  SearchTrace trace;
};

inline RunOutput run_one(const Policy& policy, const ExperimentSpec& spec, const ProblemRecord& problem,
                         std::size_t run) {
  const std::uint64_t seed = derive_seed(spec.seed, problem.id, run);
  QueryContext ctx{policy.vocab().encode(problem.prompt), spec.insert_sot};
  const std::size_t t_max = effective_max_steps(spec);

  RunOutput out;
  std::vector<Completion> completions;
  switch (spec.strategy) {
    case Strategy::Greedy:
      completions.push_back(greedy_decode(policy, ctx, t_max, spec.answer_budget));
      break;
    case Strategy::Random:
      completions.push_back(random_decode(policy, ctx, t_max, spec.temperature, spec.top_p, seed, spec.answer_budget));
      break;
    case Strategy::Beam: {
      auto res = vanilla_beam_search(policy, ctx, spec.ew, t_max, spec.answer_budget);
      completions = std::move(res.completions);
      out.trace = std::move(res.trace);
      break;
    }
    case Strategy::TSearchPhi:
    case Strategy::TSearchPhiToken: {
      SearchConfig cfg;
      cfg.m = spec.ew;
      cfg.r = spec.r;
      cfg.h = tolerance_rank(spec.tr.value_or(1.0), spec.ew);
      cfg.t_max = t_max;
      cfg.score_key = spec.strategy == Strategy::TSearchPhi ? ScoreKey::Phi : ScoreKey::LastTokenLogprob;
      cfg.answer_budget = spec.answer_budget;
      auto res = tsearch(policy, ctx, cfg, seed);
      completions = std::move(res.completions);
      out.trace = std::move(res.trace);
      break;
    }
    case Strategy::Sage:
    case Strategy::DegradeSage: {
      SageConfig cfg;
      cfg.m = std::max<std::size_t>(spec.ew, 1);
      cfg.r = spec.strategy == Strategy::Sage ? spec.r : 1;
      cfg.t_max = t_max;
      cfg.per_step_budget = spec.per_step_budget;
      cfg.temperature = spec.temperature;
      cfg.top_p = spec.top_p;
      cfg.answer_budget = spec.answer_budget;
      if (spec.strategy == Strategy::Sage) {
        auto res = sage_search(policy, ctx, cfg, seed);
        completions = std::move(res.completions);
        out.trace = std::move(res.trace);
      } else {
        completions.push_back(degrade_sage(policy, ctx, cfg, seed));
      }
      break;
    }
  }
  if (out.trace.strategy.empty()) out.trace.strategy = to_string(spec.strategy);

  const auto& vocab = policy.vocab();
  const std::string label = strategy_label(spec);
  for (std::size_t i = 0; i < completions.size(); ++i) {
    const auto& c = completions[i];
    CompletionRecord rec;
    rec.problem_id = problem.id;
    rec.run = run;
    rec.seed = seed;
    rec.strategy = label;
    rec.index = i;
    rec.think_tokens = c.chain.tokens();
    rec.think_logprobs = c.chain.logprobs();
    rec.answer_tokens = c.answer;
    auto body = std::span<const TokenId>(c.chain.tokens());
    if (!body.empty() && body.back() == policy.special().think_close) body = body.first(body.size() - 1);
    rec.think_text = vocab.decode(body);
    rec.answer_text = vocab.decode(c.answer);
    rec.phi = c.phi;
    rec.forced = c.forced;
    rec.correct = problem.verifier.verify(rec.answer_text, problem.gold_answer);
    if (rec.correct && !reasoning_steps(rec.think_text).empty())
      rec.rfcs = rfcs(rec.think_text, rec.answer_text, problem.gold_answer, problem.verifier);
    out.completions.push_back(std::move(rec));
  }
  return out;
}

/// Aggregates completion records (file order) and `</think>` observations
/// into one metric row. Pure function of its inputs.
inline MetricRow compute_metrics(const std::string& strategy, const std::vector<CompletionRecord>& records,
                                 const std::vector<EotObservation>& eot) {
  MetricRow row;
  row.strategy = strategy;
  if (records.empty()) return row;

  // run -> problem -> (correct sum, count), in first-seen order
  std::map<std::size_t, std::vector<std::pair<double, std::size_t>>> per_run;
  std::map<std::size_t, std::map<std::string, std::size_t>> slot;
  double len_sum = 0.0, think_sum = 0.0;
  std::vector<double> rfcs_values;
  std::vector<std::string> problem_order;
  std::map<std::string, std::vector<double>> rfcs_by_problem;
  for (const auto& r : records) {
    auto& problems = slot[r.run];
    auto [it, fresh] = problems.emplace(r.problem_id, per_run[r.run].size());
    if (fresh) per_run[r.run].push_back({0.0, 0});
    auto& cell = per_run[r.run][it->second];
    cell.first += r.correct ? 1.0 : 0.0;
    cell.second += 1;
    len_sum += static_cast<double>(r.len());
    think_sum += static_cast<double>(r.think_len());
    if (!rfcs_by_problem.count(r.problem_id)) problem_order.push_back(r.problem_id);
    auto& pr = rfcs_by_problem[r.problem_id];
    if (r.rfcs) {
      rfcs_values.push_back(*r.rfcs);
      pr.push_back(*r.rfcs);
    }
  }
  double pass_sum = 0.0;
  for (const auto& [run, cells] : per_run) {
    double acc = 0.0;
    for (const auto& [ok, n] : cells) acc += ok / static_cast<double>(n);
    pass_sum += acc / static_cast<double>(cells.size());
  }
  const double n = static_cast<double>(records.size());
  row.pass1 = pass_sum / static_cast<double>(per_run.size());
  row.mean_len = len_sum / n;
  row.mean_think_len = think_sum / n;
  row.token_efficiency = row.mean_len > 0.0 ? token_efficiency(row.pass1 * 100.0, row.mean_len) : 0.0;

  if (!rfcs_values.empty()) {
    double s = 0.0;
    for (double v : rfcs_values) {
      s += v;
      if (v < 1.0) ++row.rfcs_lt1_count;
    }
    row.rfcs_avg = s / static_cast<double>(rfcs_values.size());
    double ps = 0.0;
    std::size_t np = 0;
    for (const auto& id : problem_order) {
      const auto& vals = rfcs_by_problem[id];
      if (vals.empty()) continue;
      double m = 0.0;
      for (double v : vals) m += v;
      m /= static_cast<double>(vals.size());
      ps += m;
      ++np;
      if (m < 1.0) ++row.problems_with_rfcs_lt1;
    }
    row.rfcs_avg_per_problem = ps / static_cast<double>(np);
  }
  if (!eot.empty()) row.eot_rank_ratio = eot_rank_ratio_stats(std::span<const EotObservation>(eot));
  return row;
}

struct ExperimentResult {
  MetricRow row;
  std::string csv;
  std::vector<CompletionRecord> records;
  std::vector<SearchTrace> traces;
};

namespace detail {
inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::Config, "cannot write '" + p.string() + "'");
  out << content;
}

inline std::string trace_line(const std::string& problem_id, std::size_t run, const SearchTrace& t) {
  nlohmann::json j;
  j["problem_id"] = problem_id;
  j["run"] = run;
  j["trace"] = to_json(t);
  return j.dump() + "\n";
}
}  // namespace detail

/// Runs every problem `spec.runs` times. Work items execute on up to
/// spec.jobs threads; results are collected by (problem, run) index and
/// written in that order, so output bytes do not depend on scheduling.
inline ExperimentResult run_experiment(const ExperimentSpec& spec, const Policy* policy_override = nullptr) {
  validate(spec);
  const auto problems = ingest_problems(spec.problems_path);
  std::unique_ptr<Policy> owned;
  const Policy* policy = policy_override;
  if (!policy) {
    owned = load_policy(spec);
    policy = owned.get();
  }

  const std::size_t total = problems.size() * spec.runs;
  std::vector<RunOutput> outputs(total);
  std::vector<std::exception_ptr> errors(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < total;) {
      try {
        outputs[i] = run_one(*policy, spec, problems[i / spec.runs], i % spec.runs);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(spec.jobs, std::max<std::size_t>(total, 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  ExperimentResult result;
  std::vector<EotObservation> eot;
  std::string completions_jsonl, traces_jsonl;
  for (std::size_t i = 0; i < total; ++i) {
    const auto& problem = problems[i / spec.runs];
    for (auto& rec : outputs[i].completions) {
      completions_jsonl += to_json(rec).dump() + "\n";
      result.records.push_back(std::move(rec));
    }
    eot.insert(eot.end(), outputs[i].trace.eot.begin(), outputs[i].trace.eot.end());
    traces_jsonl += detail::trace_line(problem.id, i % spec.runs, outputs[i].trace);
    result.traces.push_back(std::move(outputs[i].trace));
  }
  result.row = compute_metrics(strategy_label(spec), result.records, eot);
  result.csv = metrics_csv_header() + metrics_csv_row(result.row);

  if (!spec.out_dir.empty()) {
    std::filesystem::create_directories(spec.out_dir);
    const std::filesystem::path dir(spec.out_dir);
    detail::write_file(dir / "completions.jsonl", completions_jsonl);
    detail::write_file(dir / "traces.jsonl", traces_jsonl);
    detail::write_file(dir / "metrics.csv", result.csv);
    detail::write_file(dir / "metrics.txt", metrics_pretty(result.row));
  }
  return result;
}

/// Rebuilds the metric row from the dumps written by run_experiment.
inline MetricRow recompute_metrics(const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  std::vector<CompletionRecord> records;
  std::vector<EotObservation> eot;
  std::string line;
  std::size_t lineno = 0;
  std::ifstream comp(dir / "completions.jsonl");
  if (!comp) throw IngestError(0, "cannot open completions.jsonl in '" + out_dir + "'");
  while (std::getline(comp, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(completion_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(lineno, e.what());
    }
  }
  std::ifstream traces(dir / "traces.jsonl");
  lineno = 0;
  while (traces && std::getline(traces, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto obs = eot_from_json(nlohmann::json::parse(line).at("trace"));
      eot.insert(eot.end(), obs.begin(), obs.end());
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(lineno, e.what());
    }
  }
  const std::string strategy = records.empty() ? std::string() : records.front().strategy;
  return compute_metrics(strategy, records, eot);
}

/// Runs the same experiment for each exploration width, each into
/// out_dir/ew<m>, and returns the combined CSV (also written to out_dir/sweep.csv).
inline std::string run_sweep(ExperimentSpec spec, const std::vector<std::size_t>& widths,
                             const Policy* policy_override = nullptr) {
  const std::string root = spec.out_dir;
  std::string csv = metrics_csv_header();
  for (std::size_t m : widths) {
    spec.ew = m;
    if (!root.empty()) spec.out_dir = (std::filesystem::path(root) / ("ew" + std::to_string(m))).string();
    csv += metrics_csv_row(run_experiment(spec, policy_override).row);
  }
  if (!root.empty()) detail::write_file(std::filesystem::path(root) / "sweep.csv", csv);
  return csv;
}

}  // namespace sage
