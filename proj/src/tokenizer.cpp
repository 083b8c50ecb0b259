#include "evcog/tokenizer.hpp"

#include <algorithm>

#include "evcog/errors.hpp"

namespace evcog {

namespace {

constexpr std::array<std::string_view, 6> kOperators = {"+", "-", "*", ".", "^", "="};
constexpr int kFirstIntegerId = 9;
constexpr int kFillerCount = 10;

}  // namespace

Vocabulary::Vocabulary() {
  entries_.reserve(kVocabSize);
  entries_.emplace_back(kPadToken);
  entries_.emplace_back(kAmbToken);
  entries_.emplace_back(kUnkToken);
  for (auto op : kOperators) entries_.emplace_back(op);
  for (int v = 0; v <= kMaxIntegerToken; ++v) entries_.push_back(std::to_string(v));
  for (int i = 0; i < kFillerCount; ++i) entries_.push_back("<R" + std::to_string(i) + ">");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    index_.emplace(entries_[i], static_cast<TokenId>(i));
  }
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab;
  return vocab;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= entries_.size()) {
    throw InvalidTokenError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(entries_.size()));
  }
  return entries_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::find(std::string_view token) const noexcept {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  TokenId id = find(token);
  if (id < 0) throw InvalidTokenError("unknown token \"" + std::string(token) + "\"");
  return id;
}

TokenId Vocabulary::integer_id(int value) const {
  if (value < 0 || value > kMaxIntegerToken) {
    throw InvalidTokenError("integer token out of range: " + std::to_string(value));
  }
  return kFirstIntegerId + value;
}

nlohmann::json Vocabulary::to_json() const {
  return {
      {"comment",
       "ids are stable: 0 <PAD>, 1 <AMB>, 2 <UNK>, 3-8 operators + - * . ^ =, 9-309 integers 0-300, "
       "310-319 reserved fillers"},
      {"tokens", entries_},
      {"special", {{"<PAD>", pad_id()}, {"<AMB>", amb_id()}, {"<UNK>", unk_id()}}},
  };
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary vocab;
  if (!j.contains("tokens") || j.at("tokens").get<std::vector<std::string>>() != vocab.entries_) {
    throw FormatError("serialized vocabulary does not match the fixed 320-entry layout");
  }
  return vocab;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c >= '0' && c <= '9') {
      // Greedy longest prefix over at most three digits.
      std::size_t run = 0;
      while (i + run < text.size() && run < 3 && text[i + run] >= '0' && text[i + run] <= '9') ++run;
      TokenId id = -1;
      std::size_t take = run;
      for (; take > 0; --take) {
        id = vocab.find(text.substr(i, take));
        if (id >= 0) break;
      }
      ids.push_back(id);
      i += take;
      continue;
    }
    if (c == '<') {
      auto close = text.find('>', i);
      if (close == std::string_view::npos) {
        throw LexError("unterminated special token at offset " + std::to_string(i) + " in \"" +
                       std::string(text) + "\"");
      }
      auto special = text.substr(i, close - i + 1);
      TokenId id = vocab.find(special);
      if (id < 0) {
        throw LexError("unknown special token " + std::string(special) + " in \"" + std::string(text) + "\"");
      }
      ids.push_back(id);
      i = close + 1;
      continue;
    }
    TokenId id = vocab.find(text.substr(i, 1));
    if (id < 0) {
      throw LexError("character '" + std::string(1, c) + "' at offset " + std::to_string(i) +
                     " is outside the equation grammar: \"" + std::string(text) + "\"");
    }
    ids.push_back(id);
    ++i;
  }
  return ids;
}

std::vector<TokenId> encode(std::string_view text, const Vocabulary& vocab, std::size_t context_length) {
  auto ids = tokenize(text, vocab);
  if (ids.size() > context_length) {
    throw LengthOverflowError(std::string(text), ids.size(), context_length);
  }
  ids.resize(context_length, vocab.pad_id());
  return ids;
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::size_t end = ids.size();
  while (end > 0 && ids[end - 1] == vocab.pad_id()) --end;
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& tok = vocab.token(ids[i]);  // validates every id, padding included
    if (i < end) out += tok;
  }
  return out;
}

std::size_t token_count(std::string_view text, const Vocabulary& vocab) {
  return tokenize(text, vocab).size();
}

}  // namespace evcog
