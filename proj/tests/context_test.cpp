#include <filesystem>
#include <map>
#include <sstream>

#include "doctest.h"
#include "hyql/context.hpp"
#include "support.hpp"

using namespace hyql;
using namespace hyql::context;
using test::at;

TEST_CASE("abstract_time buckets") {
  CHECK(abstract_time(at(1, 9), {}) == TimeBucket{PartOfDay::Morning, DayClass::Weekday, CalendarState::Free});

  std::vector<CalendarEntry> cal{{"review", at(5, 12), at(5, 14)}};
  CHECK(abstract_time(at(5, 13), cal) == TimeBucket{PartOfDay::Afternoon, DayClass::Weekend, CalendarState::InMeeting});

  CHECK(abstract_time(at(0, 3, 30), {}) == TimeBucket{PartOfDay::Night, DayClass::Weekday, CalendarState::Free});
}

TEST_CASE("abstract_time boundaries") {
  CHECK(abstract_time(at(2, 6), {}).part_of_day == PartOfDay::Morning);
  CHECK(abstract_time(at(2, 5, 59), {}).part_of_day == PartOfDay::Night);
  CHECK(abstract_time(at(2, 12), {}).part_of_day == PartOfDay::Afternoon);
  CHECK(abstract_time(at(2, 18), {}).part_of_day == PartOfDay::Evening);
  CHECK(abstract_time(at(2, 23), {}).part_of_day == PartOfDay::Night);
  CHECK(abstract_time(at(6, 10), {}).day_class == DayClass::Weekend);

  std::vector<CalendarEntry> cal{{"m", at(1, 10), at(1, 11)}};
  CHECK(abstract_time(at(1, 10), cal).calendar_state == CalendarState::InMeeting);
  CHECK(abstract_time(at(1, 11), cal).calendar_state == CalendarState::Free);
  CHECK_THROWS_AS(abstract_time(-1, {}), RangeError);
}

TEST_CASE("abstract_time is total and pure over sampled timestamps") {
  Rng rng(7);
  std::vector<CalendarEntry> cal{{"x", 5'000'000'000, 5'000'100'000}};
  for (int i = 0; i < 20000; ++i) {
    auto ts = static_cast<std::int64_t>(rng.next() * 1e10);
    const auto a = abstract_time(ts, cal);
    CHECK(a == abstract_time(ts, cal));
    CHECK(parse_time_bucket(to_string(a)) == a);
  }
}

TEST_CASE("reverse geocoding") {
  const auto g = Gazetteer::canonical();
  CHECK(abstract_location(test::kOfficePoint, g).name == "Office");
  // inside Paris but no leaf region
  CHECK(abstract_location({48.90, 2.40}, g).name == "Paris");
  CHECK_THROWS_AS(abstract_location({91.0, 0.0}, g), RangeError);
}

TEST_CASE("reverse geocoding falls back to the nearest leaf centroid") {
  const auto g = Gazetteer::canonical();
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    GeoPoint p{40.0 + rng.next() * 5.0, -5.0 + rng.next() * 5.0};  // nowhere near any region
    std::string expect;
    double best = 1e300;
    for (const auto& n : g.nodes()) {
      if (!n.leaf || !n.centroid) continue;
      const double d = (n.centroid->lat - p.lat) * (n.centroid->lat - p.lat) +
                       (n.centroid->lon - p.lon) * (n.centroid->lon - p.lon);
      if (d < best || (d == best && n.name < expect)) {
        best = d;
        expect = n.name;
      }
    }
    CHECK(abstract_location(p, g).name == expect);
  }
}

TEST_CASE("shared boundary goes to the smaller name") {
  std::vector<PlaceRecord> recs{
      {"Root", PlaceType::Other, "", std::nullopt, std::nullopt},
      {"Zeta", PlaceType::Office, "Root", Region{0, 1, 0, 1}, GeoPoint{0.5, 0.5}},
      {"Alpha", PlaceType::Home, "Root", Region{0, 1, 1, 2}, GeoPoint{0.5, 1.5}},
  };
  Gazetteer g(std::move(recs));
  CHECK(abstract_location({0.5, 1.0}, g).name == "Alpha");
  CHECK(abstract_location({0.5, 0.2}, g).name == "Zeta");
}

TEST_CASE("gazetteer validation and file round trip") {
  CHECK_THROWS_AS(Gazetteer(std::vector<PlaceRecord>{}), ConfigError);
  CHECK_THROWS_AS(Gazetteer({{"A", PlaceType::Other, "", {}, {}}, {"B", PlaceType::Other, "", {}, {}}}), ConfigError);
  CHECK_THROWS_AS(Gazetteer({{"A", PlaceType::Other, "", {}, {}}, {"B", PlaceType::Other, "C", {}, {}}}), ConfigError);
  CHECK_THROWS_AS(Gazetteer({{"A", PlaceType::Other, "", {}, {}}, {"A", PlaceType::Other, "A", {}, {}}}), ConfigError);
  CHECK_THROWS_AS(Gazetteer({{"R", PlaceType::Other, "", {}, {}}, {"Unknown", PlaceType::Other, "R", {}, {}}}),
                  ConfigError);

  const auto g = Gazetteer::canonical();
  std::stringstream buf;
  g.write(buf);
  const auto back = Gazetteer::parse(buf);
  REQUIRE(back.nodes().size() == g.nodes().size());
  for (std::size_t i = 0; i < g.nodes().size(); ++i) {
    CHECK(back.node(i).name == g.node(i).name);
    CHECK(back.node(i).depth == g.node(i).depth);
  }

  std::istringstream bad("Root,Other,,,,,,,\nOffice,Office,Root,1,2,3\n");
  try {
    Gazetteer::parse(bad, "g.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("aggregate") {
  const auto model = test::canonical_model();
  UserContextProfile profile{GroupId{0}, CognitiveClass::Unknown};
  const auto ev = test::event_at(at(1, 9), test::kHomePoint);

  const auto k0 = model->aggregate(ev, profile, 0);
  CHECK(to_string(k0.time) == "Morning-Weekday-Free");
  CHECK(k0.place == "Home");
  CHECK(k0.group == GroupId{0});
  CHECK(k0.cognitive == CognitiveClass::Navigate);

  CHECK(model->aggregate(ev, profile, model->depth()).place == "Anywhere");
  CHECK_THROWS_AS(model->aggregate(ev, profile, model->depth() + 1), RangeError);
  CHECK_THROWS_AS(model->aggregate(ev, profile, -1), RangeError);

  auto blind = test::event_at(at(1, 9), std::nullopt);
  CHECK(model->aggregate(blind, profile, 0).place == kUnknownPlace);

  auto no_cog = ev;
  no_cog.cognitive.reset();
  CHECK(model->aggregate(no_cog, {GroupId{0}, CognitiveClass::Call}, 0).cognitive == CognitiveClass::Call);
}

TEST_CASE("enumerate_granularities") {
  const auto model = test::canonical_model();
  UserContextProfile profile{GroupId{3}, CognitiveClass::Unknown};

  const auto keys = model->enumerate_granularities(test::event_at(at(1, 9), test::kOfficePoint), profile);
  REQUIRE(keys.size() == 3);
  CHECK(keys[0].place == "Office");
  CHECK(keys[1].place == "Paris");
  CHECK(keys[2].place == "Anywhere");
  for (std::size_t i = 1; i < keys.size(); ++i) CHECK(keys[i - 1].level < keys[i].level);

  const auto unknown = model->enumerate_granularities(test::event_at(at(1, 9), std::nullopt), profile);
  CHECK(unknown.size() == 1);

  CHECK(model->enumerate_granularities(test::event_at(at(1, 9, 10), test::kOfficePoint), profile) ==
        model->enumerate_granularities(test::event_at(at(1, 10, 40), test::kOfficePoint), profile));
}

TEST_CASE("generalisation is a function of the finer key") {
  const auto model = test::canonical_model();
  UserContextProfile profile{GroupId{0}, CognitiveClass::Unknown};
  Rng rng(11);
  std::map<SituationKey, SituationKey> seen;
  for (int i = 0; i < 3000; ++i) {
    auto ts = test::kMonday + static_cast<std::int64_t>(rng.next() * 14 * test::kDay);
    GeoPoint p{48.70 + rng.next() * 0.22, 2.20 + rng.next() * 0.30};
    const auto ev = test::event_at(ts, p);
    for (int k = 0; k < model->depth(); ++k) {
      const auto fine = model->aggregate(ev, profile, k);
      const auto coarse = model->aggregate(ev, profile, k + 1);
      auto [it, fresh] = seen.emplace(fine, coarse);
      if (!fresh) CHECK(it->second == coarse);
      CHECK(model->generalize(fine, k + 1) == coarse);
    }
  }
}

TEST_CASE("situation key text round trip and hashing") {
  SituationKey k{{PartOfDay::Evening, DayClass::Weekend, CalendarState::InMeeting}, "Station", GroupId{4},
                 CognitiveClass::OpenFolder, 1};
  CHECK(to_string(k) == "Evening-Weekend-InMeeting|Station|4|OpenFolder|1");
  CHECK(parse_situation_key(to_string(k)) == k);
  auto pooled = k;
  pooled.group = kAnyGroup;
  CHECK(parse_situation_key(to_string(pooled)) == pooled);
  SituationKey copy = k;
  CHECK(SituationKeyHash{}(copy) == SituationKeyHash{}(k));
}

TEST_CASE("raw event validation") {
  RawEvent e;
  e.timestamp = 0;
  CHECK_THROWS_AS(e.validate(), RangeError);  // nothing but a timestamp
  e.geo = GeoPoint{0, 0};
  CHECK_NOTHROW(e.validate());
  e.geo = GeoPoint{0, 181};
  CHECK_THROWS_AS(e.validate(), RangeError);
  e.geo = GeoPoint{0, 0};
  e.timestamp = -5;
  CHECK_THROWS_AS(e.validate(), RangeError);
}

TEST_CASE("shipped gazetteer file matches the built-in table") {
  const auto file = Gazetteer::load(std::filesystem::path(HYQL_SOURCE_DIR) / "scenarios" / "gazetteer.csv");
  const auto built = Gazetteer::canonical();
  REQUIRE(file.nodes().size() == built.nodes().size());
  for (std::size_t i = 0; i < built.nodes().size(); ++i) {
    const auto& a = file.node(i);
    const auto& b = built.node(i);
    CHECK(a.name == b.name);
    CHECK(a.parent == b.parent);
    CHECK(a.centroid == b.centroid);
  }
}
