#pragma once

#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sage/error.hpp"
#include "sage/trace.hpp"
#include "sage/verifier.hpp"

namespace sage {

inline constexpr std::string_view kStepDelimiter = "\n\n";

/// Splits on every occurrence of the delimiter; joining the pieces with the
/// delimiter gives back the input byte for byte.
inline std::vector<std::string> split_steps(std::string_view text, std::string_view delim = kStepDelimiter) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = text.find(delim, pos);
    if (hit == std::string_view::npos) {
      out.emplace_back(text.substr(pos));
      return out;
    }
    out.emplace_back(text.substr(pos, hit - pos));
    pos = hit + delim.size();
  }
}

inline std::string join_steps(const std::vector<std::string>& steps, std::string_view delim = kStepDelimiter) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (i) out += delim;
    out += steps[i];
  }
  return out;
}

/// Steps with visible content; whitespace-only pieces between delimiters are
/// not reasoning steps.
inline std::vector<std::string> reasoning_steps(std::string_view text) {
  std::vector<std::string> out;
  for (auto& s : split_steps(text))
    if (!detail::trim(s).empty()) out.push_back(std::move(s));
  return out;
}

/// Ratio of the first correct step: 1-based index of the first step in which a
/// verifying answer appears, over the number of steps. Defined only when the
/// final answer verifies.
inline std::optional<double> rfcs(std::string_view reasoning, std::string_view final_answer, std::string_view gold,
                                  const Verifier& verifier) {
  const auto steps = reasoning_steps(reasoning);
  if (steps.empty()) throw Error(ErrorKind::EmptyResponse, "response has no reasoning steps");
  if (!verifier.verify(final_answer, gold)) return std::nullopt;
  for (std::size_t i = 0; i < steps.size(); ++i)
    if (verifier.appears_in(steps[i], gold))
      return static_cast<double>(i + 1) / static_cast<double>(steps.size());
  // Correct final answer never stated in the reasoning itself.
  return 1.0;
}

/// Single-text form: the final step is taken as the final answer.
inline std::optional<double> rfcs(std::string_view response, std::string_view gold, const Verifier& verifier) {
  const auto steps = reasoning_steps(response);
  if (steps.empty()) throw Error(ErrorKind::EmptyResponse, "response has no reasoning steps");
  if (!verifier.appears_in(steps.back(), gold)) return std::nullopt;
  for (std::size_t i = 0; i < steps.size(); ++i)
    if (verifier.appears_in(steps[i], gold))
      return static_cast<double>(i + 1) / static_cast<double>(steps.size());
  return 1.0;
}

/// pass@1 in percent over mean response length in tokens.
inline double token_efficiency(double pass1_percent, double mean_len) {
  if (!(mean_len > 0.0)) throw Error(ErrorKind::ZeroLength, "mean length must be positive");
  return pass1_percent / mean_len;
}

/// Mean over runs of each run's accuracy over problems.
inline double pass_at_1_mean(const std::vector<std::vector<bool>>& runs) {
  if (runs.empty() || runs.front().empty()) throw Error(ErrorKind::EmptyGrid, "result grid is empty");
  const std::size_t q = runs.front().size();
  double total = 0.0;
  for (const auto& run : runs) {
    if (run.size() != q) throw Error(ErrorKind::EmptyGrid, "result grid is not rectangular");
    std::size_t ok = 0;
    for (bool b : run) ok += b ? 1 : 0;
    total += static_cast<double>(ok) / static_cast<double>(q);
  }
  return total / static_cast<double>(runs.size());
}

inline double eot_rank_ratio_stats(std::span<const EotObservation> observations) {
  if (observations.empty()) throw Error(ErrorKind::NoObservations, "no `</think>` observations");
  double sum = 0.0;
  for (const auto& o : observations) sum += static_cast<double>(o.rank) / static_cast<double>(o.window);
  return sum / static_cast<double>(observations.size());
}

/// Mean of rank / window over every window in which `</think>` appeared.
inline double eot_rank_ratio_stats(std::span<const SearchTrace> traces) {
  std::vector<EotObservation> all;
  for (const auto& t : traces) all.insert(all.end(), t.eot.begin(), t.eot.end());
  return eot_rank_ratio_stats(std::span<const EotObservation>(all));
}

struct MetricRow {
  std::string strategy;
  double pass1 = 0.0;  // fraction
  double mean_len = 0.0;
  double mean_think_len = 0.0;
  double token_efficiency = 0.0;  // pass1 as percent / mean_len
  std::size_t rfcs_lt1_count = 0;
  std::optional<double> rfcs_avg;
  std::optional<double> eot_rank_ratio;
  // Per-problem aggregates (pretty output only).
  std::size_t problems_with_rfcs_lt1 = 0;
  std::optional<double> rfcs_avg_per_problem;
};

inline std::string metrics_csv_header() { return "strategy,pass1,len,think_len,te,rfcs_lt1_count,rfcs_avg,eot_rank_ratio\n"; }

namespace detail {
inline std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
inline std::string fmt6(const std::optional<double>& v) { return v ? fmt6(*v) : std::string("NA"); }
}  // namespace detail

inline std::string metrics_csv_row(const MetricRow& row) {
  return row.strategy + "," + detail::fmt6(row.pass1) + "," + detail::fmt6(row.mean_len) + "," +
         detail::fmt6(row.mean_think_len) + "," + detail::fmt6(row.token_efficiency) + "," +
         std::to_string(row.rfcs_lt1_count) + "," + detail::fmt6(row.rfcs_avg) + "," +
         detail::fmt6(row.eot_rank_ratio) + "\n";
}

inline std::string metrics_pretty(const MetricRow& row) {
  std::string out;
  out += "strategy            " + row.strategy + "\n";
  out += "pass@1              " + detail::fmt6(row.pass1) + "\n";
  out += "mean length         " + detail::fmt6(row.mean_len) + "\n";
  out += "mean think length   " + detail::fmt6(row.mean_think_len) + "\n";
  out += "token efficiency    " + detail::fmt6(row.token_efficiency) + "\n";
  out += "RFCS<1 responses    " + std::to_string(row.rfcs_lt1_count) + "\n";
  out += "RFCS mean           " + detail::fmt6(row.rfcs_avg) + "\n";
  out += "RFCS<1 problems     " + std::to_string(row.problems_with_rfcs_lt1) + "\n";
  out += "RFCS mean/problem   " + detail::fmt6(row.rfcs_avg_per_problem) + "\n";
  out += "</think> rank ratio " + detail::fmt6(row.eot_rank_ratio) + "\n";
  return out;
}

}  // namespace sage
