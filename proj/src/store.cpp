#include "hyql/store.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

namespace hyql::store {

namespace {

constexpr std::array<std::string_view, 4> kCapabilityNames{"Display", "GPS", "Calendar", "Call"};

constexpr std::string_view kUsersFile = "users.tsv";
constexpr std::string_view kDevicesFile = "devices.tsv";
constexpr std::string_view kActionsFile = "history_actions.tsv";
constexpr std::string_view kEventsFile = "history_events.tsv";
constexpr std::string_view kPreferencesFile = "preferences.tsv";

std::string header(std::string_view part) { return "# schema v1 " + std::string(part); }

bool plain_text(std::string_view text) { return text.find_first_of("\t\n\r,") == std::string_view::npos; }

void require_plain(std::string_view text, std::string_view what) {
  if (!plain_text(text)) throw SchemaError(std::string(what) + " must not contain tabs, commas or line breaks");
}

// Each file: header line, records, then `# end <count>` so a truncated file
// is detected even when it was cut on a line boundary.
class FileWriter {
 public:
  FileWriter(const std::filesystem::path& path, std::string_view part) : path_(path) { out_ << header(part) << '\n'; }
  std::ostream& record() {
    ++count_;
    return out_;
  }
  void commit() {
    out_ << "# end " << count_ << '\n';
    auto tmp = path_;
    tmp += ".tmp";
    {
      std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
      if (!file) throw IoError("cannot write " + tmp.string());
      file << out_.str();
      if (!file.flush()) throw IoError("cannot write " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path_, ec);
    if (ec) throw IoError("cannot write " + path_.string() + ": " + ec.message());
  }

 private:
  std::filesystem::path path_;
  std::ostringstream out_;
  std::size_t count_ = 0;
};

template <class Fn>
void read_file(const std::filesystem::path& path, std::string_view part, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string source = path.string();
  std::string line;
  std::size_t number = 0;
  std::size_t records = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (number == 1) {
      if (line != header(part)) throw ParseError(source, number, "expected header '" + header(part) + "'");
      continue;
    }
    if (ended) throw ParseError(source, number, "content after end marker");
    if (line.rfind("# end ", 0) == 0) {
      std::uint64_t declared = 0;
      try {
        declared = parse_uint(std::string_view(line).substr(6));
      } catch (const std::invalid_argument& e) {
        throw ParseError(source, number, e.what());
      }
      if (declared != records) throw ParseError(source, number, "end marker disagrees with record count");
      ended = true;
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    ++records;
    auto fields = split(line, '\t');
    try {
      fn(fields, number);
    } catch (const ParseError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, number, e.what());
    } catch (const Error& e) {
      throw ParseError(source, number, e.what());
    }
  }
  if (number == 0) throw ParseError(source, 0, "empty file");
  if (!ended) throw ParseError(source, number, "missing end marker (truncated file)");
}

void expect_fields(std::span<const std::string_view> fields, std::size_t n) {
  if (fields.size() != n)
    throw std::invalid_argument("expected " + std::to_string(n) + " tab-separated fields, got " +
                                std::to_string(fields.size()));
}

std::uint32_t parse_u32(std::string_view text) {
  const auto v = parse_uint(text);
  if (v > 0xFFFFFFFFull) throw std::invalid_argument("value out of range");
  return static_cast<std::uint32_t>(v);
}

std::string format_event(const context::RawEvent& e) {
  std::string out = std::to_string(raw(e.user)) + '\t' + std::to_string(e.timestamp) + '\t';
  out += e.geo ? format_real(e.geo->lat) + ',' + format_real(e.geo->lon) : "-";
  out += '\t';
  if (e.cognitive) {
    out += context::to_string(e.cognitive->kind);
    if (e.cognitive->item) out += ':' + std::to_string(raw(*e.cognitive->item));
  } else {
    out += '-';
  }
  out += '\t';
  if (e.calendar)
    out += e.calendar->label + ',' + std::to_string(e.calendar->start) + ',' + std::to_string(e.calendar->end);
  else
    out += '-';
  return out;
}

context::RawEvent parse_event(std::span<const std::string_view> f) {
  context::RawEvent e;
  e.user = UserId{parse_u32(f[0])};
  e.timestamp = parse_int(f[1]);
  if (f[2] != "-") {
    auto g = split(f[2], ',');
    if (g.size() != 2) throw std::invalid_argument("geo must be `lat,lon`");
    e.geo = context::GeoPoint{parse_real(g[0]), parse_real(g[1])};
  }
  if (f[3] != "-") {
    auto c = split(f[3], ':');
    if (c.size() > 2) throw std::invalid_argument("cognitive must be `class` or `class:item`");
    context::CognitiveAction action{context::parse_cognitive(c[0]), {}};
    if (c.size() == 2) action.item = ActionId{parse_u32(c[1])};
    e.cognitive = action;
  }
  if (f[4] != "-") {
    auto c = split(f[4], ',');
    if (c.size() != 3) throw std::invalid_argument("calendar must be `label,start,end`");
    e.calendar = context::CalendarEntry{std::string(c[0]), parse_int(c[1]), parse_int(c[2])};
  }
  e.validate();
  return e;
}

}  // namespace

std::string to_string(Capability c) { return std::string(kCapabilityNames.at(static_cast<std::size_t>(c))); }

Capability parse_capability(std::string_view text) {
  for (std::size_t i = 0; i < kCapabilityNames.size(); ++i)
    if (kCapabilityNames[i] == text) return static_cast<Capability>(i);
  throw std::invalid_argument("unknown capability '" + std::string(text) + "'");
}

void Database::add_user(UserRecord user) {
  if (user.login.empty()) throw SchemaError("login must not be empty");
  require_plain(user.login, "login");
  auto it = std::lower_bound(users_.begin(), users_.end(), user,
                             [](const UserRecord& a, const UserRecord& b) { return raw(a.id) < raw(b.id); });
  if (it != users_.end() && it->id == user.id) throw SchemaError("duplicate user " + std::to_string(raw(user.id)));
  users_.insert(it, std::move(user));
}

void Database::add_device(DeviceRecord device) {
  if (device.id.empty()) throw SchemaError("device id must not be empty");
  require_plain(device.id, "device id");
  const bool known = std::any_of(users_.begin(), users_.end(), [&](const UserRecord& u) { return u.id == device.user; });
  if (!known) throw SchemaError("device '" + device.id + "' belongs to unknown user");
  auto it = std::lower_bound(devices_.begin(), devices_.end(), device,
                             [](const DeviceRecord& a, const DeviceRecord& b) { return a.id < b.id; });
  if (it != devices_.end() && it->id == device.id) throw SchemaError("duplicate device '" + device.id + "'");
  devices_.insert(it, std::move(device));
}

void Database::append_action_history(UserId user, const agent::StepRecord& record) {
  if (!actions_.empty() && record.step < actions_.back().record.step)
    throw OrderingError("action history step " + std::to_string(record.step) + " precedes " +
                        std::to_string(actions_.back().record.step));
  actions_.push_back(ActionEntry{user, record});
}

void Database::append_event_history(std::uint64_t step, const context::RawEvent& event) {
  if (!events_.empty() && step < events_.back().step)
    throw OrderingError("event history step " + std::to_string(step) + " precedes " +
                        std::to_string(events_.back().step));
  event.validate();
  if (event.calendar) require_plain(event.calendar->label, "calendar label");
  events_.push_back(EventEntry{step, event});
}

void Database::upsert_preferences(const PreferenceRecord& record) {
  if (!(record.reward >= 0.0 && record.reward <= 1.0)) throw RangeError("preference reward outside [0, 1]");
  preference_log_.push_back(record);
  auto& agg = aggregates_[PreferenceKey{raw(record.user), context::to_string(record.situation), raw(record.action)}];
  ++agg.count;
  agg.reward_sum += record.reward;
}

std::optional<PreferenceAggregate> Database::preference(UserId user, const context::SituationKey& situation,
                                                        ActionId action) const {
  auto it = aggregates_.find(PreferenceKey{raw(user), context::to_string(situation), raw(action)});
  if (it == aggregates_.end()) return std::nullopt;
  return it->second;
}

void Database::snapshot(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  FileWriter users(dir / kUsersFile, kUsersFile);
  for (const auto& u : users_) users.record() << raw(u.id) << '\t' << u.login << '\t' << raw(u.group) << '\n';
  users.commit();

  FileWriter devices(dir / kDevicesFile, kDevicesFile);
  for (const auto& d : devices_) {
    auto& out = devices.record();
    out << d.id << '\t' << raw(d.user) << '\t';
    if (d.capabilities.empty()) out << '-';
    bool first = true;
    for (auto c : d.capabilities) {
      if (!first) out << ',';
      out << to_string(c);
      first = false;
    }
    out << '\n';
  }
  devices.commit();

  FileWriter actions(dir / kActionsFile, kActionsFile);
  for (const auto& a : actions_) {
    const auto& r = a.record;
    actions.record() << raw(a.user) << '\t' << r.step << '\t' << context::to_string(r.s) << '\t' << raw(r.a) << '\t'
                     << agent::to_string(r.branch) << '\t' << format_real(r.reward) << '\t'
                     << context::to_string(r.s_next) << '\n';
  }
  actions.commit();

  FileWriter events(dir / kEventsFile, kEventsFile);
  for (const auto& e : events_) events.record() << e.step << '\t' << format_event(e.event) << '\n';
  events.commit();

  FileWriter prefs(dir / kPreferencesFile, kPreferencesFile);
  for (const auto& p : preference_log_)
    prefs.record() << raw(p.user) << '\t' << context::to_string(p.situation) << '\t' << raw(p.action) << '\t'
                   << format_real(p.reward) << '\t' << p.step << '\n';
  prefs.commit();
}

Database Database::load(const std::filesystem::path& dir) {
  Database db;

  read_file(dir / kUsersFile, kUsersFile, [&](std::span<const std::string_view> f, std::size_t) {
    expect_fields(f, 3);
    db.add_user(UserRecord{UserId{parse_u32(f[0])}, std::string(f[1]), GroupId{parse_u32(f[2])}});
  });

  read_file(dir / kDevicesFile, kDevicesFile, [&](std::span<const std::string_view> f, std::size_t) {
    expect_fields(f, 3);
    DeviceRecord d{std::string(f[0]), UserId{parse_u32(f[1])}, {}};
    if (f[2] != "-")
      for (auto c : split(f[2], ',')) d.capabilities.insert(parse_capability(c));
    db.add_device(std::move(d));
  });

  read_file(dir / kActionsFile, kActionsFile, [&](std::span<const std::string_view> f, std::size_t) {
    expect_fields(f, 7);
    agent::StepRecord r;
    r.step = parse_uint(f[1]);
    r.s = context::parse_situation_key(f[2]);
    r.a = ActionId{parse_u32(f[3])};
    r.branch = agent::parse_branch(f[4]);
    r.reward = parse_real(f[5]);
    r.s_next = context::parse_situation_key(f[6]);
    db.append_action_history(UserId{parse_u32(f[0])}, r);
  });

  read_file(dir / kEventsFile, kEventsFile, [&](std::span<const std::string_view> f, std::size_t) {
    expect_fields(f, 6);
    db.append_event_history(parse_uint(f[0]), parse_event(f.subspan(1)));
  });

  read_file(dir / kPreferencesFile, kPreferencesFile, [&](std::span<const std::string_view> f, std::size_t) {
    expect_fields(f, 5);
    db.upsert_preferences(PreferenceRecord{UserId{parse_u32(f[0])}, context::parse_situation_key(f[1]),
                                           ActionId{parse_u32(f[2])}, parse_real(f[3]), parse_uint(f[4])});
  });

  return db;
}

}  // namespace hyql::store
