#pragma once

// Step-wise exploration: candidates grow by whole sampled reasoning steps and
// are ranked by path confidence. Also the single-proposal ablation and plain
// ancestral sampling.

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "sage/candidate.hpp"
#include "sage/rng.hpp"
#include "sage/trace.hpp"
#include "sage/tsearch.hpp"

namespace sage {

struct SageConfig {
  std::size_t m = 4;  // exploration width
  std::size_t r = 1;  // completions to return
  std::size_t t_max = 10;  // reasoning steps
  std::size_t per_step_budget = 100;  // tokens per step
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t answer_budget = 100;
  /// Proposals per candidate and iteration; 2m when unset.
  std::optional<std::size_t> proposals;
  /// Drop proposals whose tokens repeat an earlier proposal from the same parent.
  bool dedup = false;
  PhiNormalization norm = PhiNormalization::GeneratedOnly;

  std::size_t proposal_count() const { return proposals.value_or(2 * m); }
};

inline void validate(const SageConfig& cfg) {
  if (cfg.m < 1) throw Error(ErrorKind::Config, "m must be >= 1");
  if (cfg.r < 1 || cfg.r > cfg.m) throw Error(ErrorKind::Config, "r must satisfy 1 <= r <= m");
  if (cfg.per_step_budget < 1) throw Error(ErrorKind::InvalidBudget, "per-step budget must be >= 1");
  if (cfg.proposals && *cfg.proposals < 1) throw Error(ErrorKind::Config, "proposal count must be >= 1");
  if (!(cfg.temperature > 0.0)) throw Error(ErrorKind::Config, "temperature must be > 0");
  if (!(cfg.top_p > 0.0 && cfg.top_p <= 1.0)) throw Error(ErrorKind::Config, "top_p must be in (0, 1]");
}

/// Seed of the proposal batch drawn for beam slot `parent` at `iteration`.
inline std::uint64_t proposal_seed(std::uint64_t seed, std::size_t iteration, std::size_t parent) {
  return derive_seed(seed, {static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(parent)});
}

inline std::string sage_name(const SageConfig&) { return "sage"; }

inline SearchResult sage_search(const Policy& policy, const QueryContext& ctx, const SageConfig& cfg,
                                std::uint64_t seed) {
  validate(cfg);
  const TokenId eot = policy.special().think_close;
  const std::vector<TokenId> prompt = ctx.prompt(policy.special());
  const ScoreOptions opt{ScoreKey::Phi, cfg.norm, prompt.size()};
  const std::size_t n = cfg.proposal_count();

  SearchResult result;
  SearchTrace& trace = result.trace;
  trace.strategy = sage_name(cfg);
  trace.window = n;

  struct Done {
    CandidateSequence chain;
    bool forced;
  };
  std::vector<Done> done;
  std::vector<CandidateSequence> beam{CandidateSequence::empty(eot)};
  std::size_t last_step = 0;

  for (std::size_t step = 1; step <= cfg.t_max && done.size() < cfg.r && !beam.empty(); ++step) {
    last_step = step;
    std::vector<CandidateSequence> pool;
    std::vector<CandidateSequence> finished;
    std::vector<std::size_t> finished_parent;

    for (std::size_t j = 0; j < beam.size(); ++j) {
      StepRequest req;
      req.n = n;
      req.budget = cfg.per_step_budget;
      req.temperature = cfg.temperature;
      req.top_p = cfg.top_p;
      req.seed = proposal_seed(seed, step, j);
      auto proposals = policy.sample_steps(detail::concat(prompt, beam[j]), req);
      std::set<std::vector<TokenId>> seen;
      for (const auto& p : proposals) {
        if (cfg.dedup && !seen.insert(p.tokens).second) continue;
        auto child = beam[j].extend(p);
        if (p.end == StepEnd::EndThink) {
          finished.push_back(std::move(child));
          finished_parent.push_back(j);
        } else {
          pool.push_back(std::move(child));
        }
      }
    }

    std::vector<double> keys;
    for (const auto& c : finished) keys.push_back(phi_score(c, opt.norm, opt.prompt_len));
    for (std::size_t i : top_indices(keys, finished.size())) {
      const bool take = done.size() < cfg.r;
      trace.events.push_back(
          {take ? EventKind::Accepted : EventKind::Surplus, step, finished_parent[i], 0, finished[i].tokens(), keys[i]});
      if (take) done.push_back({finished[i], false});
    }

    StepRecord rec{step, pool.size(), {}};
    if (done.size() >= cfg.r) {
      beam.clear();
    } else {
      beam = pool.empty() ? std::vector<CandidateSequence>{} : retain_top(pool, cfg.m, opt);
      rec.beam = detail::beam_entries(beam, opt);
    }
    trace.steps.push_back(std::move(rec));
  }

  if (done.size() < cfg.r && !beam.empty()) {
    std::vector<CandidateSequence> closed;
    std::vector<double> keys;
    for (const auto& c : beam) {
      closed.push_back(detail::force_close(policy, prompt, c));
      keys.push_back(phi_score(closed.back(), opt.norm, opt.prompt_len));
    }
    for (std::size_t i : top_indices(keys, cfg.r - done.size())) {
      trace.events.push_back({EventKind::Forced, last_step, i, 0, closed[i].tokens(), keys[i]});
      done.push_back({closed[i], true});
    }
  }

  for (auto& d : done)
    result.completions.push_back(make_completion(policy, prompt, std::move(d.chain), d.forced, trace.strategy, seed,
                                                 cfg.answer_budget, opt));
  return result;
}

/// One sampled step per iteration, no ranking; closes the chain at t_max.
/// Draws from the same seed stream as beam slot 0 of sage_search.
inline Completion degrade_sage(const Policy& policy, const QueryContext& ctx, const SageConfig& cfg,
                               std::uint64_t seed) {
  validate(cfg);
  const TokenId eot = policy.special().think_close;
  const std::vector<TokenId> prompt = ctx.prompt(policy.special());
  auto chain = CandidateSequence::empty(eot);
  for (std::size_t step = 1; step <= cfg.t_max; ++step) {
    StepRequest req;
    req.n = 1;
    req.budget = cfg.per_step_budget;
    req.temperature = cfg.temperature;
    req.top_p = cfg.top_p;
    req.seed = proposal_seed(seed, step, 0);
    const auto proposals = policy.sample_steps(detail::concat(prompt, chain), req);
    chain = chain.extend(proposals.front());
    if (proposals.front().end == StepEnd::EndThink) break;
  }
  const bool forced = !chain.terminated();
  if (forced) chain = detail::force_close(policy, prompt, chain);
  return make_completion(policy, prompt, std::move(chain), forced, "degrade_sage", seed, cfg.answer_budget,
                         ScoreOptions{ScoreKey::Phi, cfg.norm, prompt.size()});
}

/// Ancestral sampling up to `t_max_tokens` reasoning tokens, then a greedy answer.
inline Completion random_decode(const Policy& policy, const QueryContext& ctx, std::size_t t_max_tokens,
                                double temperature, double top_p, std::uint64_t seed,
                                std::size_t answer_budget = 100) {
  const TokenId eot = policy.special().think_close;
  const std::vector<TokenId> prompt = ctx.prompt(policy.special());
  auto chain = CandidateSequence::empty(eot);
  if (t_max_tokens > 0) {
    StepRequest req;
    req.n = 1;
    req.budget = t_max_tokens;
    req.temperature = temperature;
    req.top_p = top_p;
    req.seed = seed;
    req.stop_at_delimiter = false;
    chain = chain.extend(policy.sample_steps(prompt, req).front());
  }
  const bool forced = !chain.terminated();
  if (forced) chain = detail::force_close(policy, prompt, chain);
  return make_completion(policy, prompt, std::move(chain), forced, "random", seed, answer_budget,
                         ScoreOptions{ScoreKey::Phi, PhiNormalization::GeneratedOnly, prompt.size()});
}

}  // namespace sage
