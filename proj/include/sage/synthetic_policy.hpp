#pragma once

// Table-driven language model used as a test oracle substrate and by the mock
// completions server. Distributions are looked up by longest-prefix match over
// either the generated tokens or the whole context.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sage/error.hpp"
#include "sage/policy.hpp"
#include "sage/rng.hpp"

namespace sage {

enum class MatchScope {
  Generated,  // keys are matched against tokens after the prompt
  Context,    // keys are matched against the full context
  Suffix,     // keys are matched against the tail of the context (n-gram style)
};

struct SyntheticRow {
  std::vector<TokenId> prefix;
  std::vector<double> probs;
};

struct SyntheticPolicySpec {
  std::size_t vocab_size = 0;
  /// Optional token strings; defaults to "t<id>" when empty.
  std::vector<std::string> token_strings;
  std::vector<SyntheticRow> table;
  std::vector<double> default_dist;
  SpecialTokens special;
  MatchScope scope = MatchScope::Generated;
  /// Leading context tokens skipped before matching when scope == Generated.
  std::size_t prompt_len = 0;
};

namespace detail {

inline void check_probability_vector(const std::vector<double>& p, std::size_t vocab_size,
                                     const std::string& where) {
  if (p.size() != vocab_size)
    throw Error(ErrorKind::SpecValidation, where + ": probability vector has length " +
                                               std::to_string(p.size()) + ", expected " +
                                               std::to_string(vocab_size));
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error(ErrorKind::SpecValidation, where + ": negative or non-finite probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw Error(ErrorKind::SpecValidation, where + ": probabilities sum to " + std::to_string(sum));
}

/// Nonzero-probability entries as log-probabilities in canonical top-k order.
inline std::vector<TokenEntry> sorted_log_entries(const std::vector<double>& probs) {
  std::vector<TokenEntry> out;
  out.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] > 0.0) out.push_back({static_cast<TokenId>(i), std::log(probs[i])});
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

/// Draws one entry after tempering by 1/temperature and nucleus truncation at
/// top_p. A temperature of zero means argmax. `entries` must be in canonical order.
inline std::size_t draw_tempered(const std::vector<TokenEntry>& entries, double temperature, double top_p,
                                 Rng& rng) {
  if (entries.size() == 1 || temperature <= 0.0) return 0;
  const double top = entries.front().logprob;
  std::vector<double> w(entries.size());
  double total = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    w[i] = std::exp((entries[i].logprob - top) / temperature);
    total += w[i];
  }
  std::size_t keep = entries.size();
  if (top_p < 1.0) {
    double cum = 0.0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      cum += w[i] / total;
      if (cum >= top_p) {
        keep = i + 1;
        break;
      }
    }
  }
  double kept_total = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept_total += w[i];
  const double u = rng.uniform() * kept_total;
  double cum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cum += w[i];
    if (u < cum) return i;
  }
  return keep - 1;
}

}  // namespace detail

inline void validate(const SyntheticPolicySpec& spec) {
  if (spec.vocab_size == 0) throw Error(ErrorKind::SpecValidation, "vocab_size must be positive");
  if (!spec.token_strings.empty() && spec.token_strings.size() != spec.vocab_size)
    throw Error(ErrorKind::SpecValidation, "token_strings length differs from vocab_size");
  detail::check_probability_vector(spec.default_dist, spec.vocab_size, "default_dist");
  std::set<std::vector<TokenId>> seen;
  for (std::size_t r = 0; r < spec.table.size(); ++r) {
    const auto& row = spec.table[r];
    const std::string where = "table row " + std::to_string(r);
    detail::check_probability_vector(row.probs, spec.vocab_size, where);
    for (TokenId t : row.prefix)
      if (t >= spec.vocab_size) throw Error(ErrorKind::SpecValidation, where + ": prefix token out of range");
    if (!seen.insert(row.prefix).second) throw Error(ErrorKind::SpecValidation, where + ": duplicate prefix");
  }
  auto in_range = [&](TokenId id) { return id < spec.vocab_size; };
  if (!in_range(spec.special.think_open) || !in_range(spec.special.think_close))
    throw Error(ErrorKind::SpecValidation, "special token id out of range");
  for (TokenId d : spec.special.step_delimiters)
    if (!in_range(d)) throw Error(ErrorKind::SpecValidation, "step delimiter id out of range");
  if (spec.special.eos && !in_range(*spec.special.eos))
    throw Error(ErrorKind::SpecValidation, "eos id out of range");
}

/// One sampled continuation under an arbitrary stop set (used by the mock server).
struct SyntheticSample {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs;
  bool stopped = false;  // ended on a stop token rather than the budget
};

class SyntheticPolicy final : public Policy {
 public:
  explicit SyntheticPolicy(SyntheticPolicySpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    std::vector<std::string> strings = spec_.token_strings;
    if (strings.empty()) {
      for (std::size_t i = 0; i < spec_.vocab_size; ++i) strings.push_back("t" + std::to_string(i));
    }
    vocab_ = Vocabulary(std::move(strings));
    default_entries_ = detail::sorted_log_entries(spec_.default_dist);
    for (const auto& row : spec_.table) {
      rows_.emplace(row.prefix, detail::sorted_log_entries(row.probs));
      max_key_len_ = std::max(max_key_len_, row.prefix.size());
    }
  }

  const SyntheticPolicySpec& spec() const noexcept { return spec_; }
  const Vocabulary& vocab() const override { return vocab_; }
  const SpecialTokens& special() const override { return spec_.special; }
  std::size_t top_logprobs_limit() const override { return spec_.vocab_size; }

  /// Full nonzero support at `context`, canonical order.
  const std::vector<TokenEntry>& full_distribution(std::span<const TokenId> context) const {
    std::span<const TokenId> key = context;
    if (spec_.scope == MatchScope::Generated) {
      const std::size_t skip = spec_.prompt_len;
      key = context.size() >= skip ? context.subspan(skip) : std::span<const TokenId>{};
    }
    std::vector<TokenId> probe;
    if (spec_.scope == MatchScope::Suffix) {
      for (std::size_t len = std::min(key.size(), max_key_len_) + 1; len-- > 0;) {
        probe.assign(key.end() - static_cast<std::ptrdiff_t>(len), key.end());
        auto it = rows_.find(probe);
        if (it != rows_.end()) return it->second;
      }
      return default_entries_;
    }
    for (std::size_t len = std::min(key.size(), max_key_len_) + 1; len-- > 0;) {
      probe.assign(key.begin(), key.begin() + static_cast<std::ptrdiff_t>(len));
      auto it = rows_.find(probe);
      if (it != rows_.end()) return it->second;
    }
    return default_entries_;
  }

  TokenDistribution next_token_dist(std::span<const TokenId> context, std::size_t k) const override {
    if (k < 1) throw Error(ErrorKind::Config, "k must be >= 1");
    const auto& full = full_distribution(context);
    TokenDistribution out;
    out.context_len = context.size();
    out.entries.assign(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(std::min(k, full.size())));
    return out;
  }

  /// Generic sampler: each of `n` samples runs until a token in `stop` or
  /// `max_tokens`. temperature == 0 selects the argmax.
  std::vector<SyntheticSample> sample(std::span<const TokenId> context, std::size_t n, std::size_t max_tokens,
                                      double temperature, double top_p, std::uint64_t seed,
                                      const std::set<TokenId>& stop) const {
    Rng rng(seed);
    std::vector<SyntheticSample> out(n);
    std::vector<TokenId> buf;
    for (auto& s : out) {
      buf.assign(context.begin(), context.end());
      while (s.tokens.size() < max_tokens) {
        const auto& entries = full_distribution(buf);
        const auto& pick = entries[detail::draw_tempered(entries, temperature, top_p, rng)];
        s.tokens.push_back(pick.id);
        s.logprobs.push_back(pick.logprob);
        buf.push_back(pick.id);
        if (stop.count(pick.id)) {
          s.stopped = true;
          break;
        }
      }
    }
    return out;
  }

  std::vector<StepProposal> sample_steps(std::span<const TokenId> context,
                                         const StepRequest& request) const override {
    validate(request);
    std::set<TokenId> stop{spec_.special.think_close};
    if (request.stop_at_delimiter) stop.insert(spec_.special.step_delimiters.begin(), spec_.special.step_delimiters.end());
    auto samples = sample(context, request.n, request.budget, request.temperature, request.top_p, request.seed, stop);
    std::vector<StepProposal> out;
    out.reserve(samples.size());
    for (auto& s : samples) {
      StepProposal p;
      p.end = classify_step_end(s.tokens, spec_.special, request.stop_at_delimiter);
      p.tokens = std::move(s.tokens);
      p.logprobs = std::move(s.logprobs);
      out.push_back(std::move(p));
    }
    return out;
  }

 private:
  SyntheticPolicySpec spec_;
  Vocabulary vocab_;
  std::map<std::vector<TokenId>, std::vector<TokenEntry>> rows_;
  std::vector<TokenEntry> default_entries_;
  std::size_t max_key_len_ = 0;
};

/// Validates and builds a policy; throws SpecValidation naming the first violation.
inline SyntheticPolicy synthetic_from_spec(SyntheticPolicySpec spec) { return SyntheticPolicy(std::move(spec)); }

// JSON file format:
// {
//   "vocab": ["a", "b", "</think>", ...] | "vocab_size": N,
//   "think_open": id, "think_close": id, "step_delimiters": [id...], "eos": id?,
//   "match": "generated" | "context" | "suffix", "prompt_len": n (generated scope only),
//   "default": [p...],
//   "table": [{"prefix": [id...], "probs": [p...]}, ...]
// }

inline SyntheticPolicySpec spec_from_json(const nlohmann::json& j) {
  try {
    SyntheticPolicySpec spec;
    if (j.contains("vocab")) {
      spec.token_strings = j.at("vocab").get<std::vector<std::string>>();
      spec.vocab_size = spec.token_strings.size();
      if (j.contains("vocab_size") && j.at("vocab_size").get<std::size_t>() != spec.vocab_size)
        throw Error(ErrorKind::SpecValidation, "vocab_size disagrees with vocab");
    } else {
      spec.vocab_size = j.at("vocab_size").get<std::size_t>();
    }
    spec.special.think_open = j.at("think_open").get<TokenId>();
    spec.special.think_close = j.at("think_close").get<TokenId>();
    spec.special.step_delimiters = j.value("step_delimiters", std::vector<TokenId>{});
    if (j.contains("eos") && !j.at("eos").is_null()) spec.special.eos = j.at("eos").get<TokenId>();
    const std::string match = j.value("match", std::string("generated"));
    if (match == "generated") spec.scope = MatchScope::Generated;
    else if (match == "context") spec.scope = MatchScope::Context;
    else if (match == "suffix") spec.scope = MatchScope::Suffix;
    else throw Error(ErrorKind::SpecValidation, "unknown match scope '" + match + "'");
    spec.prompt_len = j.value("prompt_len", std::size_t{0});
    spec.default_dist = j.at("default").get<std::vector<double>>();
    for (const auto& row : j.value("table", nlohmann::json::array())) {
      spec.table.push_back({row.at("prefix").get<std::vector<TokenId>>(), row.at("probs").get<std::vector<double>>()});
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SpecValidation, e.what());
  }
}

inline nlohmann::json spec_to_json(const SyntheticPolicySpec& spec) {
  nlohmann::json j;
  if (!spec.token_strings.empty()) j["vocab"] = spec.token_strings;
  else j["vocab_size"] = spec.vocab_size;
  j["think_open"] = spec.special.think_open;
  j["think_close"] = spec.special.think_close;
  j["step_delimiters"] = spec.special.step_delimiters;
  if (spec.special.eos) j["eos"] = *spec.special.eos;
  j["match"] = spec.scope == MatchScope::Generated ? "generated"
               : spec.scope == MatchScope::Context ? "context"
                                                   : "suffix";
  if (spec.scope == MatchScope::Generated) j["prompt_len"] = spec.prompt_len;
  j["default"] = spec.default_dist;
  auto table = nlohmann::json::array();
  for (const auto& row : spec.table) table.push_back({{"prefix", row.prefix}, {"probs", row.probs}});
  j["table"] = std::move(table);
  return j;
}

inline SyntheticPolicySpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::SpecValidation, "cannot open policy spec '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SpecValidation, path + ": " + e.what());
  }
  return spec_from_json(j);
}

}  // namespace sage
