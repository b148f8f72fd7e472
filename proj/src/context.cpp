#include "hyql/context.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace hyql::context {

void RawEvent::validate() const {
  if (timestamp < 0) throw RangeError("event timestamp is negative");
  if (geo) {
    if (!(geo->lat >= -90.0 && geo->lat <= 90.0)) throw RangeError("latitude outside [-90, 90]");
    if (!(geo->lon >= -180.0 && geo->lon <= 180.0)) throw RangeError("longitude outside [-180, 180]");
  }
  if (!geo && !cognitive && !calendar) throw RangeError("event carries no sensor reading");
}

// ---------------------------------------------------------------------------
// Time

bool time_matches_at(const TimeBucket& a, const TimeBucket& b, int level) {
  switch (level) {
    case 0:
      return a == b;
    case 1:
      return a.part_of_day == b.part_of_day && a.day_class == b.day_class;
    case 2:
      return a.part_of_day == b.part_of_day;
    default:
      throw RangeError("time level out of range");
  }
}

TimeBucket abstract_time(std::int64_t timestamp, std::span<const CalendarEntry> calendar) {
  if (timestamp < 0) throw RangeError("timestamp is negative");
  constexpr std::int64_t kDay = 86400;
  const std::int64_t days = timestamp / kDay;
  const std::int64_t hour = (timestamp % kDay) / 3600;

  TimeBucket bucket;
  if (hour >= 6 && hour < 12)
    bucket.part_of_day = PartOfDay::Morning;
  else if (hour >= 12 && hour < 18)
    bucket.part_of_day = PartOfDay::Afternoon;
  else if (hour >= 18 && hour < 23)
    bucket.part_of_day = PartOfDay::Evening;
  else
    bucket.part_of_day = PartOfDay::Night;

  // 1970-01-01 was a Thursday; 0 = Sunday.
  const std::int64_t weekday = (days + 4) % 7;
  bucket.day_class = (weekday == 0 || weekday == 6) ? DayClass::Weekend : DayClass::Weekday;

  bucket.calendar_state = CalendarState::Free;
  for (const auto& entry : calendar) {
    if (timestamp >= entry.start && timestamp < entry.end) {
      bucket.calendar_state = CalendarState::InMeeting;
      break;
    }
  }
  return bucket;
}

namespace {

template <class Enum, std::size_t N>
Enum parse_enum(std::string_view text, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == text) return static_cast<Enum>(i);
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(text) + "'");
}

constexpr std::array<std::string_view, 4> kPartNames{"Morning", "Afternoon", "Evening", "Night"};
constexpr std::array<std::string_view, 2> kDayNames{"Weekday", "Weekend"};
constexpr std::array<std::string_view, 2> kCalendarNames{"InMeeting", "Free"};
constexpr std::array<std::string_view, 5> kCognitiveNames{"Navigate", "SendEmail", "Call", "OpenFolder", "Unknown"};
constexpr std::array<std::string_view, 5> kPlaceTypeNames{"Home", "Office", "ClientSite", "Transit", "Other"};

bool valid_name(std::string_view name) {
  if (name.empty() || name == kUnknownPlace) return false;
  return name.find_first_of("|,\t/\n\r") == std::string_view::npos && trim(name) == name;
}

}  // namespace

std::string to_string(PartOfDay v) { return std::string(kPartNames.at(static_cast<std::size_t>(v))); }
std::string to_string(DayClass v) { return std::string(kDayNames.at(static_cast<std::size_t>(v))); }
std::string to_string(CalendarState v) { return std::string(kCalendarNames.at(static_cast<std::size_t>(v))); }
std::string to_string(CognitiveClass v) { return std::string(kCognitiveNames.at(static_cast<std::size_t>(v))); }
std::string to_string(PlaceType v) { return std::string(kPlaceTypeNames.at(static_cast<std::size_t>(v))); }
std::string to_string(const TimeBucket& b) {
  return to_string(b.part_of_day) + "-" + to_string(b.day_class) + "-" + to_string(b.calendar_state);
}

PartOfDay parse_part_of_day(std::string_view t) { return parse_enum<PartOfDay>(t, kPartNames, "part of day"); }
DayClass parse_day_class(std::string_view t) { return parse_enum<DayClass>(t, kDayNames, "day class"); }
CalendarState parse_calendar_state(std::string_view t) {
  return parse_enum<CalendarState>(t, kCalendarNames, "calendar state");
}
CognitiveClass parse_cognitive(std::string_view t) {
  return parse_enum<CognitiveClass>(t, kCognitiveNames, "cognitive class");
}
PlaceType parse_place_type(std::string_view t) { return parse_enum<PlaceType>(t, kPlaceTypeNames, "place type"); }

TimeBucket parse_time_bucket(std::string_view text) {
  auto parts = split(text, '-');
  if (parts.size() != 3) throw std::invalid_argument("malformed time bucket '" + std::string(text) + "'");
  return TimeBucket{parse_part_of_day(parts[0]), parse_day_class(parts[1]), parse_calendar_state(parts[2])};
}

// ---------------------------------------------------------------------------
// Gazetteer

Gazetteer::Gazetteer(std::vector<PlaceRecord> records) {
  if (records.empty()) throw ConfigError("gazetteer is empty");
  nodes_.reserve(records.size());
  for (auto& rec : records) {
    if (!valid_name(rec.name)) throw ConfigError("invalid or reserved place name '" + rec.name + "'");
    if (find(rec.name)) throw ConfigError("duplicate place name '" + rec.name + "'");
    PlaceNode node;
    node.name = rec.name;
    node.type = rec.type;
    node.region = rec.region;
    node.centroid = rec.centroid;
    nodes_.push_back(std::move(node));
  }

  std::optional<std::size_t> root;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].parent.empty()) {
      if (root) throw ConfigError("gazetteer has more than one root");
      root = i;
      continue;
    }
    auto parent = find(records[i].parent);
    if (!parent) throw ConfigError("unknown parent '" + records[i].parent + "' of '" + records[i].name + "'");
    nodes_[i].parent = *parent;
    nodes_[*parent].leaf = false;
  }
  if (!root) throw ConfigError("gazetteer has no root");
  root_ = *root;

  // Depths; a walk longer than the node count means a cycle.
  for (auto& node : nodes_) {
    int depth = 0;
    const PlaceNode* cur = &node;
    while (cur->parent) {
      cur = &nodes_[*cur->parent];
      if (++depth > static_cast<int>(nodes_.size())) throw ConfigError("place hierarchy contains a cycle");
    }
    node.depth = depth;
    depth_ = std::max(depth_, depth);
  }
}

Gazetteer Gazetteer::canonical() {
  const auto box = [](double a, double b, double c, double d) { return Region{a, b, c, d}; };
  std::vector<PlaceRecord> records{
      {"Anywhere", PlaceType::Other, "", std::nullopt, std::nullopt},
      {"Paris", PlaceType::Other, "Anywhere", box(48.80, 48.92, 2.25, 2.42), GeoPoint{48.86, 2.34}},
      {"Office", PlaceType::Office, "Paris", box(48.86, 48.88, 2.28, 2.31), GeoPoint{48.87, 2.295}},
      {"ClientSite", PlaceType::ClientSite, "Paris", box(48.84, 48.86, 2.33, 2.36), GeoPoint{48.85, 2.345}},
      {"Suburbs", PlaceType::Other, "Anywhere", box(48.70, 48.80, 2.20, 2.50), GeoPoint{48.75, 2.35}},
      {"Home", PlaceType::Home, "Suburbs", box(48.72, 48.74, 2.40, 2.43), GeoPoint{48.73, 2.415}},
      {"Station", PlaceType::Transit, "Suburbs", box(48.76, 48.78, 2.25, 2.28), GeoPoint{48.77, 2.265}},
  };
  return Gazetteer(std::move(records));
}

Gazetteer Gazetteer::parse(std::istream& in, const std::string& source) {
  std::vector<PlaceRecord> records;
  for_each_record(in, [&](const std::string& line, std::size_t number) {
    auto f = split(line, ',');
    if (f.size() != 9) throw ParseError(source, number, "expected 9 comma-separated fields");
    try {
      PlaceRecord rec;
      rec.name = std::string(trim(f[0]));
      rec.type = parse_place_type(trim(f[1]));
      rec.parent = std::string(trim(f[2]));
      const bool has_region = !trim(f[3]).empty();
      if (has_region)
        rec.region = Region{parse_real(f[3]), parse_real(f[4]), parse_real(f[5]), parse_real(f[6])};
      else if (!trim(f[4]).empty() || !trim(f[5]).empty() || !trim(f[6]).empty())
        throw std::invalid_argument("partial region");
      if (!trim(f[7]).empty())
        rec.centroid = GeoPoint{parse_real(f[7]), parse_real(f[8])};
      else if (!trim(f[8]).empty())
        throw std::invalid_argument("partial centroid");
      if (rec.region && (rec.region->lat_min > rec.region->lat_max || rec.region->lon_min > rec.region->lon_max))
        throw std::invalid_argument("region bounds inverted");
      records.push_back(std::move(rec));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, number, e.what());
    }
  });
  return Gazetteer(std::move(records));
}

Gazetteer Gazetteer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gazetteer " + path.string());
  return parse(in, path.string());
}

void Gazetteer::write(std::ostream& out) const {
  out << "# name,type,parent,lat_min,lat_max,lon_min,lon_max,centroid_lat,centroid_lon\n";
  for (const auto& n : nodes_) {
    out << n.name << ',' << to_string(n.type) << ',' << (n.parent ? nodes_[*n.parent].name : "") << ',';
    if (n.region)
      out << format_real(n.region->lat_min) << ',' << format_real(n.region->lat_max) << ','
          << format_real(n.region->lon_min) << ',' << format_real(n.region->lon_max) << ',';
    else
      out << ",,,,";
    if (n.centroid)
      out << format_real(n.centroid->lat) << ',' << format_real(n.centroid->lon);
    else
      out << ',';
    out << '\n';
  }
}

std::optional<std::size_t> Gazetteer::find(std::string_view name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].name == name) return i;
  return std::nullopt;
}

std::size_t Gazetteer::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw ConfigError("unknown place '" + std::string(name) + "'");
}

std::size_t Gazetteer::lift(std::size_t index, int levels) const {
  std::size_t cur = index;
  for (int i = 0; i < levels && nodes_.at(cur).parent; ++i) cur = *nodes_[cur].parent;
  return cur;
}

const PlaceNode& abstract_location(const GeoPoint& geo, const Gazetteer& gazetteer) {
  if (!(geo.lat >= -90.0 && geo.lat <= 90.0) || !(geo.lon >= -180.0 && geo.lon <= 180.0))
    throw RangeError("coordinates out of range");

  const PlaceNode* best = nullptr;
  for (const auto& node : gazetteer.nodes()) {
    if (!node.region || !node.region->contains(geo)) continue;
    if (!best || node.depth > best->depth || (node.depth == best->depth && node.name < best->name)) best = &node;
  }
  if (best) return *best;

  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& node : gazetteer.nodes()) {
    if (!node.leaf || !node.centroid) continue;
    const double dlat = node.centroid->lat - geo.lat;
    const double dlon = node.centroid->lon - geo.lon;
    const double dist = dlat * dlat + dlon * dlon;
    if (dist < best_dist || (dist == best_dist && best && node.name < best->name)) {
      best = &node;
      best_dist = dist;
    }
  }
  if (!best) throw ConfigError("gazetteer has no leaf centroid to fall back on");
  return *best;
}

// ---------------------------------------------------------------------------
// Situation keys

std::string to_string(const SituationKey& key) {
  std::string out = to_string(key.time);
  out += '|';
  out += key.place;
  out += '|';
  out += key.group == kAnyGroup ? std::string("*") : std::to_string(raw(key.group));
  out += '|';
  out += to_string(key.cognitive);
  out += '|';
  out += std::to_string(key.level);
  return out;
}

SituationKey parse_situation_key(std::string_view text) {
  auto f = split(text, '|');
  if (f.size() != 5) throw std::invalid_argument("malformed situation key '" + std::string(text) + "'");
  SituationKey key;
  key.time = parse_time_bucket(f[0]);
  if (f[1].empty()) throw std::invalid_argument("empty place in situation key");
  key.place = std::string(f[1]);
  key.group = f[2] == "*" ? kAnyGroup : GroupId{static_cast<std::uint32_t>(parse_uint(f[2]))};
  key.cognitive = parse_cognitive(f[3]);
  key.level = static_cast<int>(parse_uint(f[4]));
  return key;
}

std::size_t SituationKeyHash::operator()(const SituationKey& key) const noexcept {
  std::size_t h = std::hash<std::string>{}(key.place);
  const std::size_t packed = (static_cast<std::size_t>(key.time.part_of_day) << 0) |
                             (static_cast<std::size_t>(key.time.day_class) << 3) |
                             (static_cast<std::size_t>(key.time.calendar_state) << 5) |
                             (static_cast<std::size_t>(key.cognitive) << 7) |
                             (static_cast<std::size_t>(key.level) << 11) |
                             (static_cast<std::size_t>(raw(key.group)) << 20);
  h ^= packed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

// ---------------------------------------------------------------------------
// Aggregation

std::string ContextModel::lift_place(const std::string& place, int levels) const {
  if (place == kUnknownPlace) return place;
  return gazetteer_.node(gazetteer_.lift(gazetteer_.index_of(place), levels)).name;
}

SituationKey ContextModel::aggregate(const RawEvent& event, const UserContextProfile& profile, int level) const {
  if (level < 0 || level > depth()) throw RangeError("granularity level " + std::to_string(level) + " outside [0, " +
                                                     std::to_string(depth()) + "]");
  event.validate();

  SituationKey key;
  if (event.calendar)
    key.time = abstract_time(event.timestamp, std::span<const CalendarEntry>(&*event.calendar, 1));
  else
    key.time = abstract_time(event.timestamp, {});
  key.place = event.geo ? lift_place(abstract_location(*event.geo, gazetteer_).name, level) : std::string(kUnknownPlace);
  key.group = profile.group;
  key.cognitive = event.cognitive ? event.cognitive->kind : profile.prior_cognitive;
  key.level = level;
  return key;
}

std::vector<SituationKey> ContextModel::enumerate_granularities(const RawEvent& event,
                                                                const UserContextProfile& profile) const {
  return chain(aggregate(event, profile, 0));
}

SituationKey ContextModel::generalize(const SituationKey& key, int level) const {
  if (level < key.level || level > depth())
    throw RangeError("cannot generalise level " + std::to_string(key.level) + " key to level " + std::to_string(level));
  SituationKey out = key;
  out.place = lift_place(key.place, level - key.level);
  out.level = level;
  return out;
}

std::vector<SituationKey> ContextModel::chain(const SituationKey& level0) const {
  std::vector<SituationKey> keys;
  keys.reserve(static_cast<std::size_t>(depth()) + 1);
  keys.push_back(level0);
  for (int level = level0.level + 1; level <= depth(); ++level) {
    SituationKey next = generalize(keys.back(), level);
    if (next.same_content(keys.back())) continue;
    keys.push_back(std::move(next));
  }
  return keys;
}

std::vector<std::string> ContextModel::place_path(std::string_view place) const {
  const auto n = static_cast<std::size_t>(depth());
  if (place == kUnknownPlace) return std::vector<std::string>(n, std::string(kUnknownPlace));

  std::vector<std::string> lineage;  // node first, root excluded
  for (std::size_t cur = gazetteer_.index_of(place); gazetteer_.node(cur).parent; cur = *gazetteer_.node(cur).parent)
    lineage.push_back(gazetteer_.node(cur).name);
  if (lineage.empty()) lineage.push_back(std::string(place));  // the root itself
  std::reverse(lineage.begin(), lineage.end());
  while (lineage.size() < n) lineage.push_back(lineage.back());
  return lineage;
}

}  // namespace hyql::context
