#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sage/vocabulary.hpp"

namespace sage {

struct TokenEntry {
  TokenId id = 0;
  double logprob = 0.0;

  friend bool operator==(const TokenEntry&, const TokenEntry&) = default;
};

/// Top-k slice of a next-token distribution, sorted by descending log-probability
/// with ties broken by ascending token id.
struct TokenDistribution {
  std::vector<TokenEntry> entries;
  std::size_t context_len = 0;

  friend bool operator==(const TokenDistribution&, const TokenDistribution&) = default;
};

/// Canonical top-k order: descending log-probability, then ascending id.
inline bool ranks_before(const TokenEntry& a, const TokenEntry& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return a.id < b.id;
}

struct SpecialTokens {
  TokenId think_open = 0;
  TokenId think_close = 0;
  std::vector<TokenId> step_delimiters;
  std::optional<TokenId> eos;

  bool is_delimiter(TokenId id) const {
    for (TokenId d : step_delimiters)
      if (d == id) return true;
    return false;
  }
};

enum class StepEnd { Delimiter, EndThink, Budget };

inline const char* to_string(StepEnd e) {
  switch (e) {
    case StepEnd::Delimiter: return "delimiter";
    case StepEnd::EndThink: return "end_think";
    case StepEnd::Budget: return "budget";
  }
  return "?";
}

/// One sampled reasoning step. Log-probabilities are those of the base
/// distribution, regardless of the temperature/top-p used to draw the tokens.
struct StepProposal {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs;
  StepEnd end = StepEnd::Budget;

  friend bool operator==(const StepProposal&, const StepProposal&) = default;
};

struct StepRequest {
  std::size_t n = 1;
  std::size_t budget = 100;
  double temperature = 1.0;
  double top_p = 1.0;
  std::uint64_t seed = 0;
  /// When false only `</think>` (or the budget) ends a proposal.
  bool stop_at_delimiter = true;
};

inline void validate(const StepRequest& req) {
  if (req.n < 1) throw Error(ErrorKind::InvalidBudget, "proposal count must be >= 1");
  if (req.budget < 1) throw Error(ErrorKind::InvalidBudget, "step budget must be >= 1");
  if (!(req.temperature > 0.0)) throw Error(ErrorKind::Config, "temperature must be > 0");
  if (!(req.top_p > 0.0 && req.top_p <= 1.0)) throw Error(ErrorKind::Config, "top_p must be in (0, 1]");
}

inline StepEnd classify_step_end(const std::vector<TokenId>& tokens, const SpecialTokens& special,
                                 bool stop_at_delimiter) {
  if (!tokens.empty()) {
    TokenId last = tokens.back();
    if (last == special.think_close) return StepEnd::EndThink;
    if (stop_at_delimiter && special.is_delimiter(last)) return StepEnd::Delimiter;
  }
  return StepEnd::Budget;
}

/// A language model seen as a next-token oracle and a step sampler. The
/// context passed to both queries is the full token sequence (prompt followed
/// by generated tokens). Implementations are immutable and thread-safe.
class Policy {
 public:
  virtual ~Policy() = default;

  virtual const Vocabulary& vocab() const = 0;
  virtual const SpecialTokens& special() const = 0;

  /// Largest k accepted by next_token_dist.
  virtual std::size_t top_logprobs_limit() const = 0;

  virtual TokenDistribution next_token_dist(std::span<const TokenId> context, std::size_t k) const = 0;

  virtual std::vector<StepProposal> sample_steps(std::span<const TokenId> context,
                                                 const StepRequest& request) const = 0;

  std::size_t vocab_size() const { return vocab().size(); }
};

}  // namespace sage
