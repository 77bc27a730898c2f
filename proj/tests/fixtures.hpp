#pragma once

#include <cmath>
#include <initializer_list>
#include <vector>

#include "oracles.hpp"
#include "sage/candidate.hpp"
#include "sage/synthetic_policy.hpp"

namespace fx {

using sage::TokenId;

/// Generated-scope spec with the oracle token layout (0 `<think>`,
/// 1 `</think>`, 2 delimiter) and a one-token query.
inline sage::SyntheticPolicySpec spec(std::size_t vocab, std::vector<double> default_dist,
                                      std::vector<sage::SyntheticRow> table = {}) {
  sage::SyntheticPolicySpec s;
  s.vocab_size = vocab;
  s.special.think_open = oracle::kThinkOpen;
  s.special.think_close = oracle::kThinkClose;
  s.special.step_delimiters = {oracle::kDelim};
  s.scope = sage::MatchScope::Generated;
  s.prompt_len = 2;  // query token + `<think>`
  s.default_dist = std::move(default_dist);
  s.table = std::move(table);
  return s;
}

/// Query used with spec(): a single delimiter token, `<think>` appended.
inline sage::QueryContext query() { return sage::QueryContext{{oracle::kDelim}, true}; }

inline std::vector<double> onehot(std::size_t vocab, TokenId t) {
  std::vector<double> p(vocab, 0.0);
  p[t] = 1.0;
  return p;
}

}  // namespace fx
