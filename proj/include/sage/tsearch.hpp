#pragma once

// Token-wise reasoning-path exploration with confidence-based termination,
// plus the greedy and vanilla beam-search baselines it is compared against.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sage/candidate.hpp"
#include "sage/error.hpp"
#include "sage/policy.hpp"
#include "sage/trace.hpp"

namespace sage {

struct SearchConfig {
  std::size_t m = 4;  // exploration width; 0 degenerates to greedy decoding
  std::size_t r = 1;  // completions to return
  std::size_t h = 8;  // `</think>` accepted when ranked within the top-h of the 2m window
  std::size_t t_max = 32768;  // generation steps (tokens)
  ScoreKey score_key = ScoreKey::Phi;
  std::size_t answer_budget = 100;
  PhiNormalization norm = PhiNormalization::GeneratedOnly;
};

/// Tolerance rank h for a tolerance ratio h / 2m. The ratio must hit an
/// integer rank exactly.
inline std::size_t tolerance_rank(double ratio, std::size_t m) {
  if (m == 0) return 1;
  const double h = ratio * static_cast<double>(2 * m);
  const double rounded = std::round(h);
  if (std::abs(h - rounded) > 1e-9 || rounded < 1.0 || rounded > static_cast<double>(2 * m))
    throw Error(ErrorKind::Config, "tolerance ratio " + std::to_string(ratio) + " does not map to a rank in 1.." +
                                       std::to_string(2 * m));
  return static_cast<std::size_t>(rounded);
}

inline void validate(const SearchConfig& cfg) {
  if (cfg.r < 1 || cfg.r > std::max<std::size_t>(cfg.m, 1))
    throw Error(ErrorKind::Config, "r must satisfy 1 <= r <= max(m, 1)");
  if (cfg.m >= 1 && (cfg.h < 1 || cfg.h > 2 * cfg.m))
    throw Error(ErrorKind::Config, "h must satisfy 1 <= h <= 2m");
}

namespace detail {

inline std::vector<TokenId> concat(const std::vector<TokenId>& prompt, const CandidateSequence& c) {
  std::vector<TokenId> out;
  out.reserve(prompt.size() + c.size());
  out.insert(out.end(), prompt.begin(), prompt.end());
  out.insert(out.end(), c.tokens().begin(), c.tokens().end());
  return out;
}

/// Appends `</think>` with its true log-probability when the policy reports
/// it, otherwise with log-probability 0.
inline CandidateSequence force_close(const Policy& policy, const std::vector<TokenId>& prompt,
                                     const CandidateSequence& c) {
  const TokenId eot = policy.special().think_close;
  const std::size_t k = std::min(policy.vocab_size(), policy.top_logprobs_limit());
  const auto dist = policy.next_token_dist(concat(prompt, c), std::max<std::size_t>(k, 1));
  double lp = 0.0;
  for (const auto& e : dist.entries)
    if (e.id == eot) lp = e.logprob;
  return c.extend(eot, lp);
}

/// Number of log-probabilities to request for a 2m window; a window wider
/// than the vocabulary is clamped to it.
inline std::size_t require_window(const Policy& policy, std::size_t window) {
  const std::size_t k = std::min(window, policy.vocab_size());
  if (k > policy.top_logprobs_limit())
    throw Error(ErrorKind::RemoteCapabilityExceeded,
                "search needs top-" + std::to_string(window) + " log-probabilities, policy offers " +
                    std::to_string(policy.top_logprobs_limit()));
  return k;
}

inline std::vector<BeamEntry> beam_entries(const std::vector<CandidateSequence>& beam, const ScoreOptions& opt) {
  std::vector<BeamEntry> out;
  for (const auto& c : beam) out.push_back({c.tokens(), phi_score(c, opt.norm, opt.prompt_len)});
  return out;
}

}  // namespace detail

/// Greedy continuation after a closed reasoning chain, at most `budget`
/// tokens, stopping before the end-of-sequence token.
inline std::vector<TokenId> greedy_answer(const Policy& policy, const std::vector<TokenId>& prompt,
                                          const CandidateSequence& chain, std::size_t budget) {
  if (!chain.terminated()) throw Error(ErrorKind::Config, "answer requested for an unterminated chain");
  std::vector<TokenId> context = detail::concat(prompt, chain);
  std::vector<TokenId> answer;
  const auto eos = policy.special().eos;
  while (answer.size() < budget) {
    const auto dist = policy.next_token_dist(context, 1);
    if (dist.entries.empty()) break;
    const TokenId next = dist.entries.front().id;
    if (eos && next == *eos) break;
    answer.push_back(next);
    context.push_back(next);
  }
  return answer;
}

struct SearchResult {
  std::vector<Completion> completions;
  SearchTrace trace;
};

inline Completion make_completion(const Policy& policy, const std::vector<TokenId>& prompt, CandidateSequence chain,
                                  bool forced, const std::string& strategy, std::uint64_t seed,
                                  std::size_t answer_budget, const ScoreOptions& opt) {
  Completion c;
  c.answer = greedy_answer(policy, prompt, chain, answer_budget);
  c.phi = phi_score(chain, opt.norm, opt.prompt_len);
  c.chain = std::move(chain);
  c.forced = forced;
  c.strategy = strategy;
  c.seed = seed;
  return c;
}

inline std::string tsearch_name(const SearchConfig& cfg) {
  if (cfg.m == 0) return "greedy";
  return cfg.score_key == ScoreKey::Phi ? "tsearch_phi" : "tsearch_phi_token";
}

/// Token-wise exploration. Each of the (at most m) beams proposes its 2m most
/// probable next tokens. A child ending in `</think>` becomes a completion when
/// `</think>` ranks within the top-h of its parent's window and is discarded
/// otherwise; all other children compete for the m beam slots. The search
/// stops at r completions, or closes the best survivors at t_max.
inline SearchResult tsearch(const Policy& policy, const QueryContext& ctx, const SearchConfig& cfg,
                            std::uint64_t seed = 0) {
  validate(cfg);
  const bool greedy = cfg.m == 0;
  const std::size_t width = greedy ? 1 : cfg.m;
  const std::size_t window = greedy ? 1 : 2 * cfg.m;
  const std::size_t h = greedy ? 1 : cfg.h;
  const std::size_t r = cfg.r;
  const std::size_t request = detail::require_window(policy, window);

  const TokenId eot = policy.special().think_close;
  const std::vector<TokenId> prompt = ctx.prompt(policy.special());
  const ScoreOptions retain_opt{cfg.score_key, cfg.norm, prompt.size()};
  const ScoreOptions phi_opt{ScoreKey::Phi, cfg.norm, prompt.size()};

  SearchResult result;
  SearchTrace& trace = result.trace;
  trace.strategy = tsearch_name(cfg);
  trace.window = window;

  struct Done {
    CandidateSequence chain;
    bool forced;
  };
  std::vector<Done> done;
  std::vector<CandidateSequence> beam{CandidateSequence::empty(eot)};
  std::size_t last_step = 0;

  for (std::size_t step = 1; step <= cfg.t_max && done.size() < r && !beam.empty(); ++step) {
    last_step = step;
    std::vector<CandidateSequence> pool;
    struct Accept {
      CandidateSequence cand;
      std::size_t parent;
      std::size_t rank;
    };
    std::vector<Accept> accepted;

    for (std::size_t j = 0; j < beam.size(); ++j) {
      const auto dist = policy.next_token_dist(detail::concat(prompt, beam[j]), request);
      for (std::size_t k = 0; k < dist.entries.size(); ++k) {
        const auto& e = dist.entries[k];
        auto child = beam[j].extend(e.id, e.logprob);
        if (e.id != eot) {
          pool.push_back(std::move(child));
          continue;
        }
        const std::size_t rank = k + 1;
        trace.eot.push_back({step, j, rank, window});
        if (rank <= h) {
          accepted.push_back({std::move(child), j, rank});
        } else {
          trace.events.push_back({EventKind::Rejected, step, j, rank, child.tokens(), phi_score(child, cfg.norm, prompt.size())});
        }
      }
    }

    std::vector<double> accept_keys;
    for (const auto& a : accepted) accept_keys.push_back(phi_score(a.cand, cfg.norm, prompt.size()));
    for (std::size_t i : top_indices(accept_keys, accepted.size())) {
      const auto& a = accepted[i];
      const bool take = done.size() < r;
      trace.events.push_back({take ? EventKind::Accepted : EventKind::Surplus, step, a.parent, a.rank,
                              a.cand.tokens(), accept_keys[i]});
      if (take) done.push_back({a.cand, false});
    }

    StepRecord rec{step, pool.size(), {}};
    if (done.size() >= r) {
      beam.clear();
    } else {
      beam = pool.empty() ? std::vector<CandidateSequence>{} : retain_top(pool, width, retain_opt);
      rec.beam = detail::beam_entries(beam, phi_opt);
    }
    trace.steps.push_back(std::move(rec));
  }

  if (done.size() < r && !beam.empty()) {
    std::vector<CandidateSequence> closed;
    std::vector<double> keys;
    for (const auto& c : beam) {
      closed.push_back(detail::force_close(policy, prompt, c));
      keys.push_back(phi_score(closed.back(), cfg.norm, prompt.size()));
    }
    for (std::size_t i : top_indices(keys, r - done.size())) {
      trace.events.push_back({EventKind::Forced, last_step, i, 0, closed[i].tokens(), keys[i]});
      done.push_back({closed[i], true});
    }
  }

  for (auto& d : done)
    result.completions.push_back(make_completion(policy, prompt, std::move(d.chain), d.forced, trace.strategy, seed,
                                                 cfg.answer_budget, phi_opt));
  return result;
}

/// Argmax at every position until `</think>` or t_max, then a greedy answer.
inline Completion greedy_decode(const Policy& policy, const QueryContext& ctx, std::size_t t_max,
                                std::size_t answer_budget) {
  const TokenId eot = policy.special().think_close;
  const std::vector<TokenId> prompt = ctx.prompt(policy.special());
  std::vector<TokenId> context = prompt;
  auto chain = CandidateSequence::empty(eot);
  for (std::size_t i = 0; i < t_max; ++i) {
    const auto dist = policy.next_token_dist(context, 1);
    const auto& best = dist.entries.front();
    chain = chain.extend(best.id, best.logprob);
    context.push_back(best.id);
    if (best.id == eot) break;
  }
  const bool forced = !chain.terminated();
  if (forced) chain = detail::force_close(policy, prompt, chain);
  return make_completion(policy, prompt, std::move(chain), forced, "greedy", 0, answer_budget,
                         ScoreOptions{ScoreKey::Phi, PhiNormalization::GeneratedOnly, prompt.size()});
}

/// Classic length-normalized beam search over the same 2m-token windows.
/// Finished beams are carried forward unexpanded and keep their slot only
/// while their score stays in the top m; nothing is accepted early. Returns
/// the final beam (best first), closing unfinished beams at t_max.
inline SearchResult vanilla_beam_search(const Policy& policy, const QueryContext& ctx, std::size_t m,
                                        std::size_t t_max, std::size_t answer_budget = 100) {
  if (m < 1) throw Error(ErrorKind::Config, "beam width must be >= 1");
  const std::size_t window = 2 * m;
  const std::size_t request = detail::require_window(policy, window);
  const TokenId eot = policy.special().think_close;
  const std::vector<TokenId> prompt = ctx.prompt(policy.special());
  const ScoreOptions opt{ScoreKey::Phi, PhiNormalization::GeneratedOnly, prompt.size()};

  SearchResult result;
  SearchTrace& trace = result.trace;
  trace.strategy = "beam";
  trace.window = window;

  std::vector<CandidateSequence> beam{CandidateSequence::empty(eot)};
  std::size_t last_step = 0;
  for (std::size_t step = 1; step <= t_max; ++step) {
    bool all_finished = true;
    for (const auto& c : beam) all_finished = all_finished && c.terminated();
    if (all_finished) break;
    last_step = step;

    std::vector<CandidateSequence> pool;
    std::vector<std::size_t> parent_of;
    for (std::size_t j = 0; j < beam.size(); ++j) {
      if (beam[j].terminated()) {
        pool.push_back(beam[j]);
        parent_of.push_back(j);
        continue;
      }
      const auto dist = policy.next_token_dist(detail::concat(prompt, beam[j]), request);
      for (std::size_t k = 0; k < dist.entries.size(); ++k) {
        const auto& e = dist.entries[k];
        if (e.id == eot) trace.eot.push_back({step, j, k + 1, window});
        pool.push_back(beam[j].extend(e.id, e.logprob));
        parent_of.push_back(j);
      }
    }
    std::vector<double> keys;
    for (const auto& c : pool) keys.push_back(phi_score(c, opt.norm, opt.prompt_len));
    const auto keep = top_indices(keys, m);
    std::vector<bool> kept(pool.size(), false);
    for (std::size_t i : keep) kept[i] = true;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (!kept[i] && pool[i].terminated())
        trace.events.push_back({EventKind::PrunedTerminated, step, parent_of[i], 0, pool[i].tokens(), keys[i]});

    std::vector<CandidateSequence> next;
    for (std::size_t i : keep) next.push_back(pool[i]);
    beam = std::move(next);
    trace.steps.push_back({step, pool.size(), detail::beam_entries(beam, opt)});
  }

  std::vector<CandidateSequence> finals;
  std::vector<bool> forced;
  std::vector<double> keys;
  for (std::size_t j = 0; j < beam.size(); ++j) {
    const bool f = !beam[j].terminated();
    finals.push_back(f ? detail::force_close(policy, prompt, beam[j]) : beam[j]);
    forced.push_back(f);
    keys.push_back(phi_score(finals.back(), opt.norm, opt.prompt_len));
    if (f) trace.events.push_back({EventKind::Forced, last_step, j, 0, finals.back().tokens(), keys.back()});
  }
  for (std::size_t i : top_indices(keys, finals.size()))
    result.completions.push_back(
        make_completion(policy, prompt, finals[i], forced[i], "beam", 0, answer_budget, opt));
  return result;
}

}  // namespace sage
