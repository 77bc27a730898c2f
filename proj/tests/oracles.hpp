#pragma once

// Independent reference implementations and random generators for property
// tests. Nothing here calls into the search code under test: distributions are
// read straight off the SyntheticPolicySpec table and every score is
// recomputed from scratch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "sage/policy.hpp"
#include "sage/synthetic_policy.hpp"

namespace oracle {

using sage::TokenId;

// Token layout shared by the generated policies.
inline constexpr TokenId kThinkOpen = 0;
inline constexpr TokenId kThinkClose = 1;
inline constexpr TokenId kDelim = 2;

struct Ranked {
  TokenId id;
  double logprob;
};

/// Longest-prefix row for `generated` (Generated scope only), by linear scan.
inline const std::vector<double>& lookup(const sage::SyntheticPolicySpec& spec, const std::vector<TokenId>& generated) {
  const std::vector<double>* best = &spec.default_dist;
  std::size_t best_len = 0;
  bool found = false;
  for (const auto& row : spec.table) {
    if (row.prefix.size() > generated.size()) continue;
    if (!std::equal(row.prefix.begin(), row.prefix.end(), generated.begin())) continue;
    if (!found || row.prefix.size() > best_len) {
      best = &row.probs;
      best_len = row.prefix.size();
      found = true;
    }
  }
  return *best;
}

/// Nonzero tokens, most probable first, ties by smaller id.
inline std::vector<Ranked> ranked(const std::vector<double>& probs) {
  std::vector<Ranked> out;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) out.push_back({static_cast<TokenId>(i), std::log(probs[i])});
  for (std::size_t i = 1; i < out.size(); ++i)  // insertion sort, stable on id order
    for (std::size_t j = i; j > 0; --j) {
      const auto& a = out[j - 1];
      const auto& b = out[j];
      if (b.logprob > a.logprob) std::swap(out[j - 1], out[j]);
      else break;
    }
  return out;
}

struct Path {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs;

  double phi() const {
    double s = 0.0;
    for (double v : logprobs) s += v;
    return s / static_cast<double>(logprobs.size());
  }
  double last() const { return logprobs.back(); }
  Path with(TokenId t, double lp) const {
    Path p = *this;
    p.tokens.push_back(t);
    p.logprobs.push_back(lp);
    return p;
  }
};

/// Indices of `keys` sorted best first by repeated selection of the maximum
/// (first index wins ties).
inline std::vector<std::size_t> select_best(const std::vector<double>& keys, std::size_t k) {
  std::vector<bool> used(keys.size(), false);
  std::vector<std::size_t> out;
  while (out.size() < std::min(k, keys.size())) {
    std::size_t best = keys.size();
    for (std::size_t i = 0; i < keys.size(); ++i) {
      if (used[i]) continue;
      if (best == keys.size() || keys[i] > keys[best]) best = i;
    }
    used[best] = true;
    out.push_back(best);
  }
  return out;
}

inline std::vector<TokenId> greedy_answer(const sage::SyntheticPolicySpec& spec, std::vector<TokenId> generated,
                                          std::size_t budget) {
  std::vector<TokenId> answer;
  while (answer.size() < budget) {
    const auto r = ranked(lookup(spec, generated));
    const TokenId next = r.front().id;
    if (spec.special.eos && next == *spec.special.eos) break;
    answer.push_back(next);
    generated.push_back(next);
  }
  return answer;
}

/// Appends `</think>` with its log-probability, or 0 when it has none.
inline Path close(const sage::SyntheticPolicySpec& spec, const Path& p) {
  const double prob = lookup(spec, p.tokens)[spec.special.think_close];
  return p.with(spec.special.think_close, prob > 0.0 ? std::log(prob) : 0.0);
}

struct RefCompletion {
  Path chain;
  bool forced = false;
  std::vector<TokenId> answer;
};

struct RefAccept {
  std::size_t step, parent, rank;
  std::vector<TokenId> tokens;
  double phi;
};

struct RefResult {
  std::vector<RefCompletion> completions;
  std::vector<RefAccept> accepts;
  std::vector<std::vector<Path>> beams;  // beam after each step (empty once done)
  std::size_t max_pool = 0;
};

/// Exhaustive token-level reference: every step materializes all children of
/// every beam over its full 2m window, then applies the acceptance rule and the
/// top-m cut.
inline RefResult tsearch(const sage::SyntheticPolicySpec& spec, std::size_t m, std::size_t r, std::size_t h,
                         std::size_t t_max, bool by_phi, std::size_t answer_budget) {
  const TokenId eot = spec.special.think_close;
  RefResult out;
  std::vector<Path> beam{Path{}};
  std::vector<std::pair<Path, bool>> done;
  std::size_t step = 0;
  while (step < t_max && done.size() < r && !beam.empty()) {
    ++step;
    struct Child {
      Path path;
      std::size_t parent, rank;
    };
    std::vector<Child> all;
    for (std::size_t j = 0; j < beam.size(); ++j) {
      const auto r_all = ranked(lookup(spec, beam[j].tokens));
      for (std::size_t k = 0; k < r_all.size() && k < 2 * m; ++k)
        all.push_back({beam[j].with(r_all[k].id, r_all[k].logprob), j, k + 1});
    }
    out.max_pool = std::max(out.max_pool, all.size());

    std::vector<Child> accepted, rest;
    for (auto& c : all) {
      if (c.path.tokens.back() == eot) {
        if (c.rank <= h) accepted.push_back(c);
      } else {
        rest.push_back(c);
      }
    }
    std::vector<double> akeys;
    for (const auto& a : accepted) akeys.push_back(a.path.phi());
    for (std::size_t i : select_best(akeys, accepted.size())) {
      if (done.size() >= r) break;
      out.accepts.push_back({step, accepted[i].parent, accepted[i].rank, accepted[i].path.tokens, akeys[i]});
      done.push_back({accepted[i].path, false});
    }
    if (done.size() >= r) {
      beam.clear();
    } else {
      std::vector<double> keys;
      for (const auto& c : rest) keys.push_back(by_phi ? c.path.phi() : c.path.last());
      std::vector<Path> next;
      for (std::size_t i : select_best(keys, m)) next.push_back(rest[i].path);
      beam = std::move(next);
    }
    out.beams.push_back(beam);
  }
  if (done.size() < r && !beam.empty()) {
    std::vector<Path> closed;
    std::vector<double> keys;
    for (const auto& b : beam) {
      closed.push_back(close(spec, b));
      keys.push_back(closed.back().phi());
    }
    for (std::size_t i : select_best(keys, r - done.size())) done.push_back({closed[i], true});
  }
  for (auto& [p, forced] : done) out.completions.push_back({p, forced, greedy_answer(spec, p.tokens, answer_budget)});
  return out;
}

// ---------------------------------------------------------------- generators

inline std::vector<double> random_probs(std::mt19937_64& g, std::size_t n, bool ties) {
  std::vector<double> w(n);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::uniform_int_distribution<int> small(1, 4);
  double total = 0.0;
  for (auto& v : w) {
    v = ties ? static_cast<double>(small(g)) : u(g);
    total += v;
  }
  for (auto& v : w) v /= total;
  return w;
}

/// Random table over vocab <= 6 with prefixes up to `depth`, strictly positive
/// probabilities, Generated scope. Ids 0/1/2 are `<think>`, `</think>` and the
/// step delimiter.
inline sage::SyntheticPolicySpec random_policy(std::mt19937_64& g, std::size_t prompt_len, std::size_t depth = 6) {
  sage::SyntheticPolicySpec spec;
  std::uniform_int_distribution<std::size_t> vdist(3, 6);
  spec.vocab_size = vdist(g);
  spec.special.think_open = kThinkOpen;
  spec.special.think_close = kThinkClose;
  spec.special.step_delimiters = {kDelim};
  if (spec.vocab_size >= 4 && g() % 2 == 0) spec.special.eos = static_cast<TokenId>(spec.vocab_size - 1);
  spec.scope = sage::MatchScope::Generated;
  spec.prompt_len = prompt_len;
  const bool ties = g() % 3 == 0;
  spec.default_dist = random_probs(g, spec.vocab_size, ties);

  std::set<std::vector<TokenId>> prefixes{{}};
  std::uniform_int_distribution<std::size_t> rows(4, 40), len(1, depth);
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(spec.vocab_size - 1));
  const std::size_t n = rows(g);
  for (std::size_t i = 0; i < n; ++i) {
    // grow from an existing prefix so deep rows are actually reachable
    auto it = prefixes.begin();
    std::advance(it, static_cast<std::ptrdiff_t>(g() % prefixes.size()));
    std::vector<TokenId> p = *it;
    const std::size_t target = len(g);
    while (p.size() < target) {
      TokenId t = tok(g);
      if (t == kThinkClose && g() % 4 != 0) t = static_cast<TokenId>(spec.vocab_size - 1);
      p.push_back(t);
      if (t == kThinkClose) break;
    }
    if (p.size() > depth) p.resize(depth);
    prefixes.insert(p);
  }
  for (const auto& p : prefixes) spec.table.push_back({p, random_probs(g, spec.vocab_size, ties)});
  return spec;
}

/// True when some row has two equally likely tokens (argmax not unique).
inline bool has_ties(const sage::SyntheticPolicySpec& spec) {
  auto tied = [](std::vector<double> p) {
    std::sort(p.begin(), p.end());
    return std::adjacent_find(p.begin(), p.end()) != p.end();
  };
  if (tied(spec.default_dist)) return true;
  for (const auto& row : spec.table)
    if (tied(row.probs)) return true;
  return false;
}

inline sage::SyntheticPolicySpec random_untied_policy(std::mt19937_64& g, std::size_t prompt_len) {
  for (;;) {
    auto spec = random_policy(g, prompt_len);
    if (!has_ties(spec)) return spec;
  }
}

// ------------------------------------------------------------ step trees

/// Step-tree layout: 0 <think>, 1 </think>, 2 delimiter, 3..5 step openers
/// a/b/c, 6 filler, 7 eos.
inline constexpr TokenId kFiller = 6;
inline constexpr TokenId kEos = 7;
inline constexpr std::size_t kTreeVocab = 8;

struct TreeStep {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs;
};

/// Random step tree: at every step boundary up to 3 next steps (including
/// possibly `</think>`), each step being opener [+ filler] + delimiter.
/// Boundaries at `depth` steps close with probability 1.
inline sage::SyntheticPolicySpec random_step_tree(std::mt19937_64& g, std::size_t prompt_len, std::size_t depth) {
  sage::SyntheticPolicySpec spec;
  spec.vocab_size = kTreeVocab;
  spec.special.think_open = kThinkOpen;
  spec.special.think_close = kThinkClose;
  spec.special.step_delimiters = {kDelim};
  spec.special.eos = kEos;
  spec.scope = sage::MatchScope::Generated;
  spec.prompt_len = prompt_len;
  spec.default_dist.assign(kTreeVocab, 0.0);
  spec.default_dist[kEos] = 1.0;

  auto onehot = [](TokenId t) {
    std::vector<double> p(kTreeVocab, 0.0);
    p[t] = 1.0;
    return p;
  };
  std::vector<std::vector<TokenId>> frontier{{}};
  for (std::size_t d = 0; d <= depth; ++d) {
    std::vector<std::vector<TokenId>> next;
    for (const auto& prefix : frontier) {
      if (d == depth) {
        spec.table.push_back({prefix, onehot(kThinkClose)});
        continue;
      }
      std::vector<TokenId> options{kThinkClose, 3, 4, 5};
      std::shuffle(options.begin(), options.end(), g);
      options.resize(1 + g() % 3);
      const auto w = random_probs(g, options.size(), g() % 3 == 0);
      std::vector<double> probs(kTreeVocab, 0.0);
      for (std::size_t i = 0; i < options.size(); ++i) probs[options[i]] = w[i];
      spec.table.push_back({prefix, probs});
      for (TokenId o : options) {
        if (o == kThinkClose) continue;
        auto p = prefix;
        p.push_back(o);
        if (g() % 2 == 0) {
          spec.table.push_back({p, onehot(kFiller)});
          p.push_back(kFiller);
        }
        spec.table.push_back({p, onehot(kDelim)});
        p.push_back(kDelim);
        next.push_back(p);
      }
    }
    frontier = std::move(next);
  }
  return spec;
}

/// Every step reachable from boundary `prefix` with its log-probabilities.
inline std::vector<TreeStep> enumerate_steps(const sage::SyntheticPolicySpec& spec, const std::vector<TokenId>& prefix,
                                             std::size_t budget) {
  std::vector<TreeStep> out;
  std::vector<TreeStep> open{{}};
  while (!open.empty()) {
    auto s = open.back();
    open.pop_back();
    std::vector<TokenId> ctx = prefix;
    ctx.insert(ctx.end(), s.tokens.begin(), s.tokens.end());
    for (const auto& e : ranked(lookup(spec, ctx))) {
      TreeStep c = s;
      c.tokens.push_back(e.id);
      c.logprobs.push_back(e.logprob);
      if (e.id == kThinkClose || e.id == kDelim || c.tokens.size() >= budget) out.push_back(c);
      else open.push_back(c);
    }
  }
  return out;
}

}  // namespace oracle
