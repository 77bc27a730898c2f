#pragma once

#include <cmath>
#include <cstdlib>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "sage/error.hpp"

namespace sage {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::string buf(s);
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<double> scan_numbers(std::string_view text) {
  static const std::regex number(R"([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)");
  std::vector<double> out;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), number); it != std::sregex_iterator(); ++it)
    out.push_back(std::strtod(it->str().c_str(), nullptr));
  return out;
}

}  // namespace detail

/// Contents of every `\boxed{...}` in order, with nested braces balanced.
inline std::vector<std::string> extract_all_boxed(std::string_view text) {
  std::vector<std::string> out;
  constexpr std::string_view tag = "\\boxed{";
  std::size_t pos = 0;
  while ((pos = text.find(tag, pos)) != std::string_view::npos) {
    std::size_t i = pos + tag.size();
    int depth = 1;
    const std::size_t start = i;
    for (; i < text.size() && depth > 0; ++i) {
      if (text[i] == '{') ++depth;
      else if (text[i] == '}') --depth;
    }
    if (depth != 0) break;  // unbalanced tail
    out.emplace_back(text.substr(start, i - 1 - start));
    pos = i;
  }
  return out;
}

inline std::optional<std::string> extract_boxed(std::string_view text) {
  auto all = extract_all_boxed(text);
  if (all.empty()) return std::nullopt;
  return all.back();
}

enum class VerifierKind { Exact, Boxed, Numeric };

/// Rule-based answer checker. Parsed from "exact", "boxed" or "numeric:<tol>".
class Verifier {
 public:
  Verifier() = default;
  Verifier(VerifierKind kind, double tolerance = 0.0) : kind_(kind), tolerance_(tolerance) {}

  static Verifier parse(std::string_view s) {
    s = detail::trim(s);
    if (s == "exact") return {VerifierKind::Exact};
    if (s == "boxed" || s.empty()) return {VerifierKind::Boxed};
    if (s == "numeric") return {VerifierKind::Numeric, 1e-6};
    if (s.substr(0, 8) == "numeric:") {
      auto tol = detail::parse_number(s.substr(8));
      if (!tol || *tol < 0.0) throw Error(ErrorKind::Verifier, "bad numeric tolerance in '" + std::string(s) + "'");
      return {VerifierKind::Numeric, *tol};
    }
    throw Error(ErrorKind::Verifier, "unknown verifier '" + std::string(s) + "'");
  }

  VerifierKind kind() const noexcept { return kind_; }
  double tolerance() const noexcept { return tolerance_; }

  std::string to_string() const {
    switch (kind_) {
      case VerifierKind::Exact: return "exact";
      case VerifierKind::Boxed: return "boxed";
      case VerifierKind::Numeric: {
        char buf[64];
        std::snprintf(buf, sizeof buf, "numeric:%g", tolerance_);
        return buf;
      }
    }
    return "boxed";
  }

  /// Judges a final answer string.
  bool verify(std::string_view answer, std::string_view gold) const {
    const auto g = checked_gold(gold);
    switch (kind_) {
      case VerifierKind::Exact:
        return detail::trim(answer) == g;
      case VerifierKind::Boxed: {
        const auto boxed = extract_boxed(answer);
        return detail::trim(boxed ? std::string_view(*boxed) : answer) == g;
      }
      case VerifierKind::Numeric: {
        const double gv = numeric_gold(g);
        if (const auto boxed = extract_boxed(answer)) {
          const auto v = detail::parse_number(*boxed);
          return v && std::abs(*v - gv) <= tolerance_;
        }
        const auto nums = detail::scan_numbers(answer);
        return !nums.empty() && std::abs(nums.back() - gv) <= tolerance_;
      }
    }
    return false;
  }

  /// Whether some answer extracted from `text` verifies: any boxed content,
  /// any whitespace-delimited word (outer punctuation stripped), or the whole
  /// text. Numeric verifiers accept any number in the text. Substrings of
  /// longer words never count, so "142" does not contain "42".
  bool appears_in(std::string_view text, std::string_view gold) const {
    const auto g = checked_gold(gold);
    if (kind_ == VerifierKind::Numeric) {
      const double gv = numeric_gold(g);
      for (double v : detail::scan_numbers(text))
        if (std::abs(v - gv) <= tolerance_) return true;
      return false;
    }
    for (const auto& b : extract_all_boxed(text))
      if (detail::trim(b) == g) return true;
    if (detail::trim(text) == g) return true;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto b = text.find_first_not_of(" \t\r\n", pos);
      if (b == std::string_view::npos) break;
      auto e = text.find_first_of(" \t\r\n", b);
      if (e == std::string_view::npos) e = text.size();
      auto word = text.substr(b, e - b);
      const auto* punct = ".,;:!?()[]\"'$";
      const auto wb = word.find_first_not_of(punct);
      if (wb != std::string_view::npos) {
        const auto we = word.find_last_not_of(punct);
        if (word.substr(wb, we - wb + 1) == g) return true;
      }
      pos = e;
    }
    return false;
  }

 private:
  static std::string_view checked_gold(std::string_view gold) {
    const auto g = detail::trim(gold);
    if (g.empty()) throw Error(ErrorKind::Verifier, "gold answer is empty");
    return g;
  }

  static double numeric_gold(std::string_view g) {
    const auto v = detail::parse_number(g);
    if (!v) throw Error(ErrorKind::Verifier, "gold answer '" + std::string(g) + "' is not numeric");
    return *v;
  }

  VerifierKind kind_ = VerifierKind::Boxed;
  double tolerance_ = 0.0;
};

}  // namespace sage
