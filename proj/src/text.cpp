#include "drift/text.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "drift/errors.hpp"

namespace drift::text {
namespace {

icu::UnicodeString normalized(std::string_view utf8) {
  auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString out = norm->normalize(src, status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalization failed");
  return out;
}

std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

}  // namespace

std::string nfc(std::string_view utf8) { return to_utf8(normalized(utf8)); }

std::string fold(std::string_view utf8) {
  auto s = normalized(utf8);
  s.toLower(icu::Locale::getRoot());
  return to_utf8(s);
}

std::vector<std::string> words(std::string_view utf8) {
  auto s = normalized(utf8);
  s.toLower(icu::Locale::getRoot());
  std::vector<std::string> out;
  icu::UnicodeString current;
  for (int32_t i = 0; i < s.length();) {
    UChar32 c = s.char32At(i);
    if (u_isalnum(c) || u_getIntPropertyValue(c, UCHAR_GENERAL_CATEGORY) == U_NON_SPACING_MARK) {
      current.append(c);
    } else if (!current.isEmpty()) {
      out.push_back(to_utf8(current));
      current.remove();
    }
    i += U16_LENGTH(c);
  }
  if (!current.isEmpty()) out.push_back(to_utf8(current));
  return out;
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace drift::text
