#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace evcog {

using TokenId = std::int32_t;

inline constexpr int kVocabSize = 320;
inline constexpr int kContextLength = 26;
inline constexpr int kMaxIntegerToken = 300;

inline constexpr std::string_view kPadToken = "<PAD>";
inline constexpr std::string_view kAmbToken = "<AMB>";
inline constexpr std::string_view kUnkToken = "<UNK>";

// Fixed arithmetic vocabulary.
//
// Id layout (stable, part of the checkpoint format):
//   0 <PAD>, 1 <AMB>, 2 <UNK>
//   3..8   "+" "-" "*" "." "^" "="
//   9..309 integer tokens "0".."300"
//   310..319 reserved filler tokens "<R0>".."<R9>"
class Vocabulary {
 public:
  Vocabulary();

  static const Vocabulary& standard();

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& token(TokenId id) const;
  // Returns -1 when the string is not an entry.
  TokenId find(std::string_view token) const noexcept;
  TokenId id(std::string_view token) const;

  TokenId pad_id() const noexcept { return 0; }
  TokenId amb_id() const noexcept { return 1; }
  TokenId unk_id() const noexcept { return 2; }
  TokenId integer_id(int value) const;
  TokenId equals_id() const noexcept { return 8; }

  bool is_digit_token(TokenId id) const noexcept { return id >= 9 && id <= 309; }

  const std::vector<std::string>& entries() const noexcept { return entries_; }

  nlohmann::json to_json() const;
  // Validates that the serialized vocabulary matches the fixed layout.
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> entries_;
  std::unordered_map<std::string, TokenId> index_;
};

// Splits text into token ids without padding. Numbers are segmented by greedy
// longest-prefix match against the integer tokens, so "100" is one token and
// "510" becomes "51","0". Throws LexError on characters outside the grammar.
std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab = Vocabulary::standard());

// tokenize() followed by <PAD> right-padding to `context_length`. Throws
// LengthOverflowError when the unpadded sequence is longer than the context.
std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab = Vocabulary::standard(),
                            std::size_t context_length = kContextLength);

// Concatenates token strings, dropping the <PAD> suffix. Throws
// InvalidTokenError for ids outside the vocabulary.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab = Vocabulary::standard());

// Number of tokens `text` occupies before padding.
std::size_t token_count(std::string_view text, const Vocabulary& vocab = Vocabulary::standard());

}  // namespace evcog
