#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace drift {

enum class Role { system, user, agent };

std::string_view role_name(Role r);
Role parse_role(std::string_view s);

// One utterance as a backend sees it. `hidden` marks text that is rendered to
// the model but never shown to users or to stability measures (repeated
// system prompts).
struct Message {
  Role role = Role::user;
  std::string text;
  bool hidden = false;

  bool operator==(const Message&) const = default;
};

using History = std::vector<Message>;

// Swap user and agent roles. The user-side model sees its own turns as
// assistant turns and the agent's as user turns.
History mirror_roles(const History& h);

}  // namespace drift
