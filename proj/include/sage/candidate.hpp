#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "sage/error.hpp"
#include "sage/policy.hpp"

namespace sage {

/// Query tokens plus the optional `<think>` opener appended at prompt end.
struct QueryContext {
  std::vector<TokenId> query_tokens;
  bool insert_sot = true;

  std::vector<TokenId> prompt(const SpecialTokens& special) const {
    if (query_tokens.empty()) throw Error(ErrorKind::Config, "query must contain at least one token");
    std::vector<TokenId> out = query_tokens;
    if (insert_sot) out.push_back(special.think_open);
    return out;
  }
};

/// Whether path confidence averages over generated tokens only, or over the
/// prompt as well (the latter reproduces a known reference implementation).
enum class PhiNormalization { GeneratedOnly, PromptInclusive };

/// Generated tokens with their log-probabilities and a cached running sum.
/// Value type: extend() returns a new candidate and leaves the original alone.
class CandidateSequence {
 public:
  CandidateSequence() = default;

  CandidateSequence(std::vector<TokenId> tokens, std::vector<double> logprobs, TokenId think_close)
      : tokens_(std::move(tokens)), logprobs_(std::move(logprobs)), think_close_(think_close) {
    if (tokens_.size() != logprobs_.size())
      throw Error(ErrorKind::ShapeMismatch, "token and log-probability counts differ");
    for (double lp : logprobs_) cum_ += lp;
  }

  static CandidateSequence empty(TokenId think_close) { return CandidateSequence({}, {}, think_close); }

  const std::vector<TokenId>& tokens() const noexcept { return tokens_; }
  const std::vector<double>& logprobs() const noexcept { return logprobs_; }
  double cum_logprob() const noexcept { return cum_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  TokenId think_close() const noexcept { return think_close_; }

  bool terminated() const noexcept { return !tokens_.empty() && tokens_.back() == think_close_; }

  /// Log-probability of the most recent token (the local score).
  double last_logprob() const {
    if (logprobs_.empty()) throw Error(ErrorKind::EmptyCandidate, "candidate has no tokens");
    return logprobs_.back();
  }

  CandidateSequence extend(TokenId tok, double lp) const {
    CandidateSequence out = *this;
    out.tokens_.push_back(tok);
    out.logprobs_.push_back(lp);
    out.cum_ += lp;
    return out;
  }

  CandidateSequence extend(const StepProposal& step) const {
    CandidateSequence out = *this;
    for (std::size_t i = 0; i < step.tokens.size(); ++i) {
      out.tokens_.push_back(step.tokens[i]);
      out.logprobs_.push_back(step.logprobs[i]);
      out.cum_ += step.logprobs[i];
    }
    return out;
  }

 private:
  std::vector<TokenId> tokens_;
  std::vector<double> logprobs_;
  double cum_ = 0.0;
  TokenId think_close_ = 0;
};

/// Average log-probability of the generated tokens.
inline double phi_score(const CandidateSequence& c,
                        PhiNormalization norm = PhiNormalization::GeneratedOnly, std::size_t prompt_len = 0) {
  if (c.empty()) throw Error(ErrorKind::EmptyCandidate, "phi of an empty candidate is undefined");
  const std::size_t denom = norm == PhiNormalization::GeneratedOnly ? c.size() : c.size() + prompt_len;
  return c.cum_logprob() / static_cast<double>(denom);
}

enum class ScoreKey {
  Phi,             // path-average log-probability
  LastTokenLogprob // log-probability of the newest token only
};

struct ScoreOptions {
  ScoreKey key = ScoreKey::Phi;
  PhiNormalization norm = PhiNormalization::GeneratedOnly;
  std::size_t prompt_len = 0;
};

inline double score(const CandidateSequence& c, const ScoreOptions& opt) {
  return opt.key == ScoreKey::Phi ? phi_score(c, opt.norm, opt.prompt_len) : c.last_logprob();
}

/// Indices of the top-m entries of `keys`: descending key, ties by ascending
/// index. Result is in that order.
inline std::vector<std::size_t> top_indices(std::span<const double> keys, std::size_t m) {
  std::vector<std::size_t> idx(keys.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return keys[a] > keys[b]; });
  idx.resize(std::min(m, idx.size()));
  return idx;
}

/// Keeps the min(m, |cands|) best candidates; input order is the generation
/// order used for tie-breaking.
inline std::vector<CandidateSequence> retain_top(const std::vector<CandidateSequence>& cands, std::size_t m,
                                                 const ScoreOptions& opt = {}) {
  if (m < 1) throw Error(ErrorKind::Config, "retain_top requires m >= 1");
  std::vector<double> keys;
  keys.reserve(cands.size());
  for (const auto& c : cands) keys.push_back(score(c, opt));
  std::vector<CandidateSequence> out;
  for (std::size_t i : top_indices(keys, m)) out.push_back(cands[i]);
  return out;
}

}  // namespace sage
