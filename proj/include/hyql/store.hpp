#pragma once

// The shared database: users, devices, the action and event histories, and
// user preferences (raw reward records plus per-situation aggregates).
// Histories are append-only. A snapshot is a directory of tab-separated
// files that load() reads back all-or-nothing.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "hyql/agent.hpp"
#include "hyql/common.hpp"
#include "hyql/context.hpp"

namespace hyql::store {

enum class Capability : std::uint8_t { Display, GPS, Calendar, Call };
std::string to_string(Capability);
Capability parse_capability(std::string_view);

struct UserRecord {
  UserId id{};
  std::string login;
  GroupId group{};
  friend bool operator==(const UserRecord&, const UserRecord&) = default;
};

struct DeviceRecord {
  std::string id;
  UserId user{};
  std::set<Capability> capabilities;
  friend bool operator==(const DeviceRecord&, const DeviceRecord&) = default;
};

struct ActionEntry {
  UserId user{};
  agent::StepRecord record;
  friend bool operator==(const ActionEntry&, const ActionEntry&) = default;
};

struct EventEntry {
  std::uint64_t step = 0;
  context::RawEvent event;  // carries the calendar label, if any
  friend bool operator==(const EventEntry&, const EventEntry&) = default;
};

struct PreferenceRecord {
  UserId user{};
  context::SituationKey situation;
  ActionId action{};
  double reward = 0.0;
  std::uint64_t step = 0;
  friend bool operator==(const PreferenceRecord&, const PreferenceRecord&) = default;
};

struct PreferenceAggregate {
  std::uint64_t count = 0;
  double reward_sum = 0.0;
  double mean() const { return count ? reward_sum / static_cast<double>(count) : 0.0; }
  friend bool operator==(const PreferenceAggregate&, const PreferenceAggregate&) = default;
};

/// (user, situation key text, action)
using PreferenceKey = std::tuple<std::uint32_t, std::string, std::uint32_t>;

class Database {
 public:
  /// Throws SchemaError for a duplicate id or an empty login.
  void add_user(UserRecord user);
  /// Throws SchemaError for a duplicate id or an unknown user.
  void add_device(DeviceRecord device);

  /// Throws OrderingError when the step is below the last appended one.
  void append_action_history(UserId user, const agent::StepRecord& record);
  void append_event_history(std::uint64_t step, const context::RawEvent& event);

  /// Appends the raw record and folds it into the (user, situation, action)
  /// aggregate. Throws RangeError for a reward outside [0, 1].
  void upsert_preferences(const PreferenceRecord& record);

  std::span<const UserRecord> users() const { return users_; }
  std::span<const DeviceRecord> devices() const { return devices_; }
  std::span<const ActionEntry> action_history() const { return actions_; }
  std::span<const EventEntry> event_history() const { return events_; }
  std::span<const PreferenceRecord> preference_records() const { return preference_log_; }
  const std::map<PreferenceKey, PreferenceAggregate>& preferences() const { return aggregates_; }
  std::optional<PreferenceAggregate> preference(UserId user, const context::SituationKey& situation,
                                                ActionId action) const;

  /// Writes users.tsv, devices.tsv, history_actions.tsv, history_events.tsv
  /// and preferences.tsv into `dir` (created if missing). Throws IoError.
  void snapshot(const std::filesystem::path& dir) const;
  /// Throws ParseError (with the line number) on malformed files and
  /// IoError when a file cannot be opened; never returns a partial store.
  static Database load(const std::filesystem::path& dir);

  friend bool operator==(const Database&, const Database&) = default;

 private:
  std::vector<UserRecord> users_;
  std::vector<DeviceRecord> devices_;
  std::vector<ActionEntry> actions_;
  std::vector<EventEntry> events_;
  std::vector<PreferenceRecord> preference_log_;
  std::map<PreferenceKey, PreferenceAggregate> aggregates_;
};

}  // namespace hyql::store
