#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "drift/chat.hpp"
#include "drift/model.hpp"

namespace drift {

// Whitespace/punctuation tokenizer over a fixed vocabulary.
//
// Text is split on whitespace; every punctuation code point becomes its own
// token. A piece is looked up verbatim first, then lowercased, then mapped to
// <unk>. The vocabulary must contain the special tokens below.
class Tokenizer {
 public:
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kSys = "<sys>";
  static constexpr std::string_view kUser = "<user>";
  static constexpr std::string_view kAgent = "<agent>";
  static constexpr std::string_view kEot = "<eot>";

  explicit Tokenizer(std::vector<std::string> vocab);

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  std::optional<TokenId> find(std::string_view piece) const;
  const std::string& piece(TokenId id) const { return vocab_.at(id); }
  std::size_t size() const { return vocab_.size(); }
  bool is_special(TokenId id) const;

  TokenId unk() const { return unk_; }
  TokenId sys() const { return sys_; }
  TokenId user() const { return user_; }
  TokenId agent() const { return agent_; }
  TokenId eot() const { return eot_; }

  // Split without vocabulary lookup.
  static std::vector<std::string> split(std::string_view text);

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId unk_ = 0, sys_ = 0, user_ = 0, agent_ = 0, eot_ = 0;
};

// Context layout: [<sys> system...] then per message [<role> text... <eot>],
// then <agent> to open the reply. The system segment is omitted entirely when
// the system text is empty.
struct RenderedContext {
  std::vector<TokenId> tokens;
  std::size_t system_len = 0;  // <sys> tag plus system tokens
};

RenderedContext render_chat(const Tokenizer& tok, std::string_view system, const History& history);

}  // namespace drift
