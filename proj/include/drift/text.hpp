#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace drift::text {

// Unicode NFC normalization of UTF-8 text. Invalid sequences are replaced
// with U+FFFD rather than rejected.
std::string nfc(std::string_view utf8);

// NFC followed by full Unicode lowercasing (root locale).
std::string fold(std::string_view utf8);

// Maximal runs of letters/digits after fold(); everything else separates.
std::vector<std::string> words(std::string_view utf8);

std::string_view trim(std::string_view s);

}  // namespace drift::text
