#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sage/error.hpp"

namespace sage {

using TokenId = std::uint32_t;

/// Id <-> string table. Encoding is greedy longest-match over token strings,
/// which is exact for the synthetic vocabularies used in tests and samples.
class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const auto& t = tokens_[i];
      if (t.size() > max_len_) max_len_ = t.size();
      lookup_.emplace(t, static_cast<TokenId>(i));  // first id wins on duplicates
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) throw Error(ErrorKind::Tokenize, "token id " + std::to_string(id) + " out of range");
    return tokens_[id];
  }

  std::optional<TokenId> find(std::string_view s) const {
    auto it = lookup_.find(std::string(s));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      bool matched = false;
      for (std::size_t len = std::min(max_len_, text.size() - pos); len > 0; --len) {
        auto it = lookup_.find(std::string(text.substr(pos, len)));
        if (it != lookup_.end()) {
          out.push_back(it->second);
          pos += len;
          matched = true;
          break;
        }
      }
      if (!matched) {
        throw Error(ErrorKind::Tokenize, "no token matches text at offset " + std::to_string(pos));
      }
    }
    return out;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) out += token(id);
    return out;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::size_t max_len_ = 0;
};

}  // namespace sage
