#include "unlearn/text.hpp"

#include <array>
#include <sstream>
#include <stdexcept>

namespace unlearn::text {

static_assert(kAlphabet.size() == static_cast<std::size_t>(kVocabSize - 1));

namespace {

constexpr std::array<TokenId, 256> build_lookup() {
  std::array<TokenId, 256> table{};
  for (auto& t : table) t = -1;
  for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
    table[static_cast<unsigned char>(kAlphabet[i])] = static_cast<TokenId>(i);
  }
  return table;
}

constexpr auto kLookup = build_lookup();

}  // namespace

bool representable(std::string_view s) noexcept {
  for (char c : s) {
    if (kLookup[static_cast<unsigned char>(c)] < 0) return false;
  }
  return true;
}

TokenSequence encode(std::string_view s) {
  TokenSequence out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const TokenId id = kLookup[static_cast<unsigned char>(s[i])];
    if (id < 0) {
      throw std::invalid_argument("encode: character at offset " + std::to_string(i) + " is outside the alphabet");
    }
    out.push_back(id);
  }
  return out;
}

std::string decode(const TokenSequence& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t == kEndOfSequence) continue;
    if (t < 0 || t >= kEndOfSequence) throw std::invalid_argument("decode: token id out of range");
    out.push_back(kAlphabet[static_cast<std::size_t>(t)]);
  }
  return out;
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::istringstream in{std::string(s)};
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

}  // namespace unlearn::text
