#pragma once

// Context model: raw sensor events, the time and place abstractions, and the
// aggregation of both (plus social group and cognitive activity) into the
// discrete situation keys that serve as reinforcement-learning states.

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "hyql/common.hpp"

namespace hyql::context {

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

enum class CognitiveClass : std::uint8_t { Navigate, SendEmail, Call, OpenFolder, Unknown };

struct CognitiveAction {
  CognitiveClass kind = CognitiveClass::Navigate;
  std::optional<ActionId> item;  // document opened, for Navigate
  friend bool operator==(const CognitiveAction&, const CognitiveAction&) = default;
};

struct CalendarEntry {
  std::string label;
  std::int64_t start = 0;  // inclusive
  std::int64_t end = 0;    // exclusive
  friend bool operator==(const CalendarEntry&, const CalendarEntry&) = default;
};

struct RawEvent {
  UserId user{};
  std::int64_t timestamp = 0;  // seconds since epoch, simulated local clock
  std::optional<GeoPoint> geo;
  std::optional<CognitiveAction> cognitive;
  std::optional<CalendarEntry> calendar;

  /// Throws RangeError when the invariants do not hold.
  void validate() const;
  friend bool operator==(const RawEvent&, const RawEvent&) = default;
};

// ---------------------------------------------------------------------------
// Time

enum class PartOfDay : std::uint8_t { Morning, Afternoon, Evening, Night };
enum class DayClass : std::uint8_t { Weekday, Weekend };
enum class CalendarState : std::uint8_t { InMeeting, Free };

struct TimeBucket {
  PartOfDay part_of_day = PartOfDay::Morning;
  DayClass day_class = DayClass::Weekday;
  CalendarState calendar_state = CalendarState::Free;
  friend auto operator<=>(const TimeBucket&, const TimeBucket&) = default;
};

/// Number of generalisation levels of a time bucket: the full bucket,
/// (part of day, day class), then part of day alone.
inline constexpr int kTimeLevels = 3;

/// True when `a` and `b` coincide after dropping the `level` finest fields.
bool time_matches_at(const TimeBucket& a, const TimeBucket& b, int level);

/// Hour boundaries of the parts of the day (local clock): [6,12) morning,
/// [12,18) afternoon, [18,23) evening, everything else night.
TimeBucket abstract_time(std::int64_t timestamp, std::span<const CalendarEntry> calendar);

std::string to_string(PartOfDay);
std::string to_string(DayClass);
std::string to_string(CalendarState);
std::string to_string(const TimeBucket&);
std::string to_string(CognitiveClass);

PartOfDay parse_part_of_day(std::string_view);
DayClass parse_day_class(std::string_view);
CalendarState parse_calendar_state(std::string_view);
TimeBucket parse_time_bucket(std::string_view);  // "Morning-Weekday-Free"
CognitiveClass parse_cognitive(std::string_view);

// ---------------------------------------------------------------------------
// Places

enum class PlaceType : std::uint8_t { Home, Office, ClientSite, Transit, Other };
std::string to_string(PlaceType);
PlaceType parse_place_type(std::string_view);

struct Region {
  double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;
  bool contains(const GeoPoint& p) const {
    return p.lat >= lat_min && p.lat <= lat_max && p.lon >= lon_min && p.lon <= lon_max;
  }
};

struct PlaceNode {
  std::string name;
  PlaceType type = PlaceType::Other;
  std::optional<std::size_t> parent;  // index into the gazetteer
  std::optional<Region> region;
  std::optional<GeoPoint> centroid;
  int depth = 0;  // root is 0
  bool leaf = true;
};

/// One line of a gazetteer file, before the hierarchy is resolved.
struct PlaceRecord {
  std::string name;
  PlaceType type = PlaceType::Other;
  std::string parent;  // empty for the root
  std::optional<Region> region;
  std::optional<GeoPoint> centroid;
};

/// Sentinel place for events without a geographic reading.
inline constexpr std::string_view kUnknownPlace = "Unknown";

/// Static reverse-geocoding table organised as a place hierarchy with a
/// single root.
class Gazetteer {
 public:
  /// Validates and links the records. Throws ConfigError on an empty table,
  /// duplicate or reserved names, missing parents, several roots or cycles.
  explicit Gazetteer(std::vector<PlaceRecord> records);

  /// Built-in two-level table (root -> district -> place) used by the
  /// canonical scenario.
  static Gazetteer canonical();

  /// Gazetteer file: `name,type,parent,lat_min,lat_max,lon_min,lon_max,
  /// centroid_lat,centroid_lon` per line; '#' starts a comment. Region and
  /// centroid fields may be left empty.
  static Gazetteer parse(std::istream& in, const std::string& source = "<gazetteer>");
  static Gazetteer load(const std::filesystem::path& path);
  void write(std::ostream& out) const;

  std::span<const PlaceNode> nodes() const { return nodes_; }
  const PlaceNode& node(std::size_t index) const { return nodes_.at(index); }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;  // throws ConfigError
  std::size_t root() const { return root_; }
  /// Maximum node depth.
  int depth() const { return depth_; }

  /// The ancestor `levels` steps above `index`, stopping at the root.
  std::size_t lift(std::size_t index, int levels) const;

 private:
  std::vector<PlaceNode> nodes_;
  std::size_t root_ = 0;
  int depth_ = 0;
};

/// Reverse geocoding: the deepest node whose region contains the point (ties
/// by lexicographically smaller name); otherwise the leaf with the nearest
/// centroid. Throws RangeError for invalid coordinates.
const PlaceNode& abstract_location(const GeoPoint& geo, const Gazetteer& gazetteer);

// ---------------------------------------------------------------------------
// Situations

struct SituationKey {
  TimeBucket time;
  std::string place;
  GroupId group{};
  CognitiveClass cognitive = CognitiveClass::Unknown;
  int level = 0;

  friend bool operator==(const SituationKey&, const SituationKey&) = default;
  friend auto operator<=>(const SituationKey& a, const SituationKey& b) {
    return std::tie(a.time, a.place, a.group, a.cognitive, a.level) <=>
           std::tie(b.time, b.place, b.group, b.cognitive, b.level);
  }

  /// Same situation ignoring the granularity level.
  bool same_content(const SituationKey& other) const {
    return time == other.time && place == other.place && group == other.group && cognitive == other.cognitive;
  }
};

/// Text form `Morning-Weekday-Free|Office|0|Navigate|0`. The group is `*` for
/// population-wide keys.
std::string to_string(const SituationKey& key);
SituationKey parse_situation_key(std::string_view text);

struct SituationKeyHash {
  std::size_t operator()(const SituationKey& key) const noexcept;
};

struct UserContextProfile {
  GroupId group{};
  /// Used when an event carries no cognitive reading.
  CognitiveClass prior_cognitive = CognitiveClass::Unknown;
};

/// Turns raw events into situation keys at a chosen granularity. Granularity
/// lifts the place through the gazetteer hierarchy; level 0 is the place
/// returned by reverse geocoding and level depth() is the root.
class ContextModel {
 public:
  explicit ContextModel(Gazetteer gazetteer) : gazetteer_(std::move(gazetteer)) {}

  const Gazetteer& gazetteer() const { return gazetteer_; }
  int depth() const { return gazetteer_.depth(); }

  /// Throws RangeError when `level` is outside [0, depth()].
  SituationKey aggregate(const RawEvent& event, const UserContextProfile& profile, int level) const;

  /// Keys from level 0 to depth(), skipping any whose content equals an
  /// earlier (more specific) key.
  std::vector<SituationKey> enumerate_granularities(const RawEvent& event, const UserContextProfile& profile) const;

  /// Lifts an existing key to a coarser level.
  SituationKey generalize(const SituationKey& key, int level) const;
  std::vector<SituationKey> chain(const SituationKey& level0) const;

  /// Place lineage from the top of the hierarchy down, root excluded, padded
  /// to depth() entries with the most specific known node.
  std::vector<std::string> place_path(std::string_view place) const;

 private:
  std::string lift_place(const std::string& place, int levels) const;

  Gazetteer gazetteer_;
};

}  // namespace hyql::context
