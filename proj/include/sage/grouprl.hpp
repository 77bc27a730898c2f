#pragma once

// Rollout groups that mix step-wise-search completions with random samples,
// and exact evaluation of the group-relative clipped objectives (token-level
// and sequence-level importance ratios). Values only; nothing is optimized.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/error.hpp"
#include "sage/rng.hpp"
#include "sage/sage.hpp"
#include "sage/verifier.hpp"

namespace sage {

enum class RolloutSource { Sage, Random };

inline const char* to_string(RolloutSource s) { return s == RolloutSource::Sage ? "sage" : "random"; }

struct GroupMember {
  Completion completion;
  RolloutSource source = RolloutSource::Random;
  std::optional<double> reward;  // unset until scored
  double advantage = 0.0;
  std::string answer_text;
};

/// G completions for one query; search-sourced members come first.
struct RolloutGroup {
  std::string query_id;
  std::vector<GroupMember> members;
  std::size_t r_sage = 0;
  bool degenerate = false;

  std::size_t size() const noexcept { return members.size(); }
};

struct SamplingConfig {
  std::size_t max_tokens = 32768;
  double temperature = 1.0;
  double top_p = 1.0;
  std::size_t answer_budget = 100;
};

/// r_sage members from sage_search (with r = r_sage), the remaining G - r_sage
/// from random_decode, each stream seeded independently from `seed`.
inline RolloutGroup build_group(const Policy& policy, const QueryContext& ctx, std::string query_id, std::size_t G,
                                std::size_t r_sage, SageConfig sage_cfg, const SamplingConfig& sampling,
                                std::uint64_t seed) {
  if (r_sage < 1 || r_sage > G) throw Error(ErrorKind::Config, "r_sage must satisfy 1 <= r_sage <= G");
  sage_cfg.r = r_sage;
  RolloutGroup group;
  group.query_id = std::move(query_id);
  group.r_sage = r_sage;
  auto searched = sage_search(policy, ctx, sage_cfg, derive_seed(seed, {0}));
  for (auto& c : searched.completions) group.members.push_back({std::move(c), RolloutSource::Sage, {}, 0.0, {}});
  for (std::size_t i = 0; i < G - r_sage; ++i) {
    auto c = random_decode(policy, ctx, sampling.max_tokens, sampling.temperature, sampling.top_p,
                           derive_seed(seed, {1, i}), sampling.answer_budget);
    group.members.push_back({std::move(c), RolloutSource::Random, {}, 0.0, {}});
  }
  return group;
}

/// Binary rule-based rewards from the verifier applied to each rendered answer.
inline RolloutGroup score_group(RolloutGroup group, const Verifier& verifier, std::string_view gold,
                                const Vocabulary& vocab) {
  for (auto& m : group.members) {
    m.answer_text = vocab.decode(m.completion.answer);
    m.reward = verifier.verify(m.answer_text, gold) ? 1.0 : 0.0;
  }
  return group;
}

enum class StdKind { Population, Sample };

struct Advantages {
  std::vector<double> values;
  bool degenerate = false;  // zero reward variance; all advantages are zero
};

/// (r_i - mean) / std over the group.
inline Advantages group_advantages(std::span<const double> rewards, StdKind kind = StdKind::Population) {
  if (rewards.size() < 2) throw Error(ErrorKind::GroupTooSmall, "advantages need at least two rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double ss = 0.0;
  for (double r : rewards) ss += (r - mean) * (r - mean);
  const double sd = std::sqrt(ss / (kind == StdKind::Population ? n : n - 1.0));
  Advantages out;
  out.values.assign(rewards.size(), 0.0);
  if (sd == 0.0) {
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) out.values[i] = (rewards[i] - mean) / sd;
  return out;
}

inline RolloutGroup assign_advantages(RolloutGroup group, StdKind kind = StdKind::Population) {
  std::vector<double> rewards;
  for (const auto& m : group.members) {
    if (!m.reward) throw Error(ErrorKind::Config, "group member has no reward; score the group first");
    rewards.push_back(*m.reward);
  }
  const auto adv = group_advantages(rewards, kind);
  for (std::size_t i = 0; i < group.members.size(); ++i) group.members[i].advantage = adv.values[i];
  group.degenerate = adv.degenerate;
  return group;
}

/// min(w * A, clip(w, 1 - eps, 1 + eps) * A)
inline double clipped_surrogate(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

/// Per-token log-probabilities of each completion under the current and the
/// behaviour policy.
struct RatioInputs {
  std::vector<std::vector<double>> new_logprobs;
  std::vector<std::vector<double>> old_logprobs;
  double epsilon = 0.2;
};

inline void validate(const RatioInputs& in) {
  if (in.new_logprobs.size() != in.old_logprobs.size())
    throw Error(ErrorKind::ShapeMismatch, "new/old completion counts differ");
  for (std::size_t i = 0; i < in.new_logprobs.size(); ++i) {
    if (in.new_logprobs[i].size() != in.old_logprobs[i].size())
      throw Error(ErrorKind::ShapeMismatch, "completion " + std::to_string(i) + ": new/old lengths differ");
    if (in.new_logprobs[i].empty())
      throw Error(ErrorKind::ShapeMismatch, "completion " + std::to_string(i) + " is empty");
  }
  if (!(in.epsilon > 0.0 && in.epsilon < 1.0)) throw Error(ErrorKind::Config, "epsilon must be in (0, 1)");
}

struct TokenTerms {
  std::vector<std::vector<double>> ratios;
  std::vector<std::vector<double>> terms;
  std::vector<double> per_completion;  // (1/|y_i|) sum_t term
  double objective = 0.0;              // (1/G) sum_i per_completion
};

inline TokenTerms grpo_token_terms(const RatioInputs& in, std::span<const double> advantages) {
  validate(in);
  if (advantages.size() != in.new_logprobs.size())
    throw Error(ErrorKind::ShapeMismatch, "one advantage per completion required");
  TokenTerms out;
  double total = 0.0;
  for (std::size_t i = 0; i < in.new_logprobs.size(); ++i) {
    std::vector<double> ratios, terms;
    double sum = 0.0;
    for (std::size_t t = 0; t < in.new_logprobs[i].size(); ++t) {
      const double w = std::exp(in.new_logprobs[i][t] - in.old_logprobs[i][t]);
      const double term = clipped_surrogate(w, advantages[i], in.epsilon);
      ratios.push_back(w);
      terms.push_back(term);
      sum += term;
    }
    const double mean = sum / static_cast<double>(terms.size());
    out.per_completion.push_back(mean);
    total += mean;
    out.ratios.push_back(std::move(ratios));
    out.terms.push_back(std::move(terms));
  }
  out.objective = total / static_cast<double>(in.new_logprobs.size());
  return out;
}

/// The same objective summed separately over the first r_sage (search-sourced)
/// and the remaining (randomly sampled) completions.
struct PartitionedObjective {
  double sage_sum = 0.0;
  double random_sum = 0.0;
  double total = 0.0;  // (sage_sum + random_sum) / G
};

inline PartitionedObjective partition(std::span<const double> per_completion, std::size_t r_sage) {
  if (r_sage > per_completion.size()) throw Error(ErrorKind::ShapeMismatch, "r_sage exceeds group size");
  PartitionedObjective out;
  for (std::size_t i = 0; i < per_completion.size(); ++i) (i < r_sage ? out.sage_sum : out.random_sum) += per_completion[i];
  out.total = (out.sage_sum + out.random_sum) / static_cast<double>(per_completion.size());
  return out;
}

inline PartitionedObjective sage_grpo_objective(const RatioInputs& in, std::span<const double> advantages,
                                                std::size_t r_sage) {
  const auto terms = grpo_token_terms(in, advantages);
  return partition(terms.per_completion, r_sage);
}

/// exp(mean_t (lp_new - lp_old)): the length-normalized sequence ratio.
inline double gspo_sequence_ratio(std::span<const double> lp_new, std::span<const double> lp_old) {
  if (lp_new.size() != lp_old.size() || lp_new.empty())
    throw Error(ErrorKind::ShapeMismatch, "sequence ratio needs equal, non-empty log-probability arrays");
  double sum = 0.0;
  for (std::size_t t = 0; t < lp_new.size(); ++t) sum += lp_new[t] - lp_old[t];
  return std::exp(sum / static_cast<double>(lp_new.size()));
}

inline std::vector<double> gspo_terms(std::span<const double> ratios, std::span<const double> advantages, double eps) {
  if (ratios.size() != advantages.size() || ratios.empty())
    throw Error(ErrorKind::ShapeMismatch, "ratios and advantages must align");
  if (!(eps > 0.0)) throw Error(ErrorKind::Config, "epsilon must be > 0");
  std::vector<double> out;
  for (std::size_t i = 0; i < ratios.size(); ++i) out.push_back(clipped_surrogate(ratios[i], advantages[i], eps));
  return out;
}

inline double gspo_objective(std::span<const double> ratios, std::span<const double> advantages, double eps) {
  const auto terms = gspo_terms(ratios, advantages, eps);
  double sum = 0.0;
  for (double t : terms) sum += t;
  return sum / static_cast<double>(terms.size());
}

inline PartitionedObjective sage_gspo_objective(std::span<const double> ratios, std::span<const double> advantages,
                                                double eps, std::size_t r_sage) {
  return partition(gspo_terms(ratios, advantages, eps), r_sage);
}

/// One JSON object per member: {query_id, source, tokens, logprobs, answer_tokens, reward, advantage}.
inline std::string group_to_jsonl(const RolloutGroup& group) {
  std::string out;
  for (const auto& m : group.members) {
    nlohmann::json j;
    j["query_id"] = group.query_id;
    j["source"] = to_string(m.source);
    j["tokens"] = m.completion.chain.tokens();
    j["logprobs"] = m.completion.chain.logprobs();
    j["answer_tokens"] = m.completion.answer;
    j["reward"] = m.reward ? nlohmann::json(*m.reward) : nlohmann::json(nullptr);
    j["advantage"] = m.advantage;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace sage
