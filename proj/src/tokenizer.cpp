#include "drift/tokenizer.hpp"

#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "drift/errors.hpp"
#include "drift/text.hpp"

namespace drift {

std::string_view role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::agent: return "agent";
  }
  return "user";
}

Role parse_role(std::string_view s) {
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "agent" || s == "assistant") return Role::agent;
  throw ConfigError("unknown role '" + std::string(s) + "'");
}

History mirror_roles(const History& h) {
  History out = h;
  for (auto& m : out) {
    if (m.role == Role::user) m.role = Role::agent;
    else if (m.role == Role::agent) m.role = Role::user;
  }
  return out;
}

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!index_.emplace(vocab_[i], static_cast<TokenId>(i)).second) {
      throw FormatError("duplicate vocabulary entry '" + vocab_[i] + "'");
    }
  }
  auto special = [&](std::string_view s) {
    auto id = find(s);
    if (!id) throw FormatError("vocabulary lacks special token " + std::string(s));
    return *id;
  };
  unk_ = special(kUnk);
  sys_ = special(kSys);
  user_ = special(kUser);
  agent_ = special(kAgent);
  eot_ = special(kEot);
}

std::optional<TokenId> Tokenizer::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool Tokenizer::is_special(TokenId id) const {
  return id == unk_ || id == sys_ || id == user_ || id == agent_ || id == eot_;
}

std::vector<std::string> Tokenizer::split(std::string_view text) {
  auto s = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  std::vector<std::string> out;
  icu::UnicodeString cur;
  auto flush = [&] {
    if (!cur.isEmpty()) {
      std::string u;
      cur.toUTF8String(u);
      out.push_back(std::move(u));
      cur.remove();
    }
  };
  for (int32_t i = 0; i < s.length();) {
    UChar32 c = s.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      flush();
    } else if (u_ispunct(c) || (u_charType(c) == U_MATH_SYMBOL) || (u_charType(c) == U_CURRENCY_SYMBOL)) {
      flush();
      cur.append(c);
      flush();
    } else {
      cur.append(c);
    }
  }
  flush();
  return out;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& piece : split(text)) {
    if (auto id = find(piece)) {
      ids.push_back(*id);
    } else if (auto low = find(text::fold(piece))) {
      ids.push_back(*low);
    } else {
      ids.push_back(unk_);
    }
  }
  return ids;
}

namespace {

bool attaches_left(std::string_view p) {
  return p == "." || p == "," || p == "!" || p == "?" || p == ";" || p == ":" || p == ")" || p == "'";
}
bool attaches_right(std::string_view p) { return p == "(" || p == "'" || p == "¿" || p == "¡"; }

}  // namespace

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  bool glue = true;
  for (TokenId id : ids) {
    if (id >= vocab_.size()) throw DomainError("token id " + std::to_string(id) + " outside vocabulary");
    if (is_special(id) && id != unk_) continue;
    const std::string& p = vocab_[id];
    if (!glue && !attaches_left(p)) out += ' ';
    out += p;
    glue = attaches_right(p);
  }
  return out;
}

RenderedContext render_chat(const Tokenizer& tok, std::string_view system, const History& history) {
  RenderedContext r;
  if (!text::trim(system).empty()) {
    r.tokens.push_back(tok.sys());
    auto sys = tok.encode(system);
    r.tokens.insert(r.tokens.end(), sys.begin(), sys.end());
    r.system_len = r.tokens.size();
  }
  for (const auto& m : history) {
    if (m.role == Role::system) throw DomainError("system messages belong in the system segment");
    r.tokens.push_back(m.role == Role::user ? tok.user() : tok.agent());
    auto ids = tok.encode(m.text);
    r.tokens.insert(r.tokens.end(), ids.begin(), ids.end());
    r.tokens.push_back(tok.eot());
  }
  r.tokens.push_back(tok.agent());
  return r;
}

}  // namespace drift
