#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace unlearn {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

/// Character-level alphabet for the 64-token vocabulary.
///
/// Ids 0..62 map to the characters of `kAlphabet` in order; id 63 is the
/// end-of-sequence token and has no printable form.
namespace text {

inline constexpr std::string_view kAlphabet =
    " abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ.,?:'-!();";
inline constexpr TokenId kVocabSize = 64;
inline constexpr TokenId kEndOfSequence = kVocabSize - 1;

bool representable(std::string_view s) noexcept;

/// Throws std::invalid_argument on a character outside the alphabet.
TokenSequence encode(std::string_view s);

/// End-of-sequence tokens are dropped; any other id outside the alphabet throws.
std::string decode(const TokenSequence& tokens);

std::vector<std::string> split_words(std::string_view s);

}  // namespace text
}  // namespace unlearn
