#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace mtfc {

/// Lowercasing word-level tokenizer with a closed vocabulary.
///
/// Tokens are maximal runs of alphanumeric (or non-ASCII) bytes; every other
/// non-space byte is a token of its own. Ids 0-3 are reserved for
/// <pad>, </s>, <unk> and <s>.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEos = 1;
  static constexpr int kUnk = 2;
  static constexpr int kBos = 3;

  Tokenizer();

  /// Builds a vocabulary from `texts`: tokens seen at least `min_count` times,
  /// most frequent first (ties lexicographic), capped at `max_size` entries
  /// including specials (0 = no cap).
  static Tokenizer build(std::span<const std::string> texts, std::size_t min_count = 1,
                         std::size_t max_size = 0);

  static std::vector<std::string> split(std::string_view text);

  std::vector<int> encode(std::string_view text) const;
  /// Joins tokens with single spaces, stopping at </s> and skipping specials.
  std::string decode(std::span<const int> ids) const;

  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }
  int id(std::string_view token) const;

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);

  bool operator==(const Tokenizer& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  explicit Tokenizer(std::vector<std::string> tokens);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace mtfc
