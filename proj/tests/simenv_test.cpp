#include <cmath>
#include <map>

#include "doctest.h"
#include "hyql/simenv.hpp"
#include "support.hpp"

using namespace hyql;
using namespace hyql::sim;
using context::CalendarState;
using context::CognitiveClass;
using context::DayClass;
using context::PartOfDay;

namespace {

WorldConfig small(std::size_t users = 4, std::size_t items = 5, std::uint64_t seed = 3) {
  WorldConfig c;
  c.n_users = users;
  c.n_items = items;
  c.seed = seed;
  return c;
}

WorldConfig single_situation(std::size_t items) {
  auto c = small(2, items);
  c.routine = {{{PartOfDay::Morning, DayClass::Weekday, CalendarState::Free}, "Office", CognitiveClass::Navigate, 1.0}};
  return c;
}

double mean_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("population mixing extremes") {
  auto c = small(6, 8);
  c.affinity = 1.0;
  const auto same = build_population(c);
  for (std::size_t s = 0; s < c.routine.size(); ++s)
    for (std::uint32_t u = 1; u < 6; ++u) CHECK(same.relevance_at(UserId{u}, s) == same.relevance_at(UserId{0}, s));

  auto d = small(300, 20);
  d.affinity = 0.0;
  const auto free = build_population(d);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, n = 0;
  for (std::uint32_t u = 0; u < 300; ++u)
    for (std::size_t s = 0; s < d.routine.size(); ++s) {
      const auto& row = free.relevance_at(UserId{u}, s);
      const auto& proto = free.prototype(GroupId{0}, s);
      for (std::size_t i = 0; i < row.size(); ++i) {
        sx += proto[i];
        sy += row[i];
        sxx += proto[i] * proto[i];
        syy += row[i] * row[i];
        sxy += proto[i] * row[i];
        n += 1;
      }
    }
  const double cov = sxy / n - sx / n * sy / n;
  const double corr = cov / std::sqrt((sxx / n - sx / n * sx / n) * (syy / n - sy / n * sy / n));
  CHECK(std::abs(corr) < 0.05);
}

TEST_CASE("population build is deterministic") {
  auto c = small(10, 20, 77);
  const auto a = build_population(c), b = build_population(c);
  for (std::uint32_t u = 0; u < 10; ++u)
    for (std::size_t s = 0; s < c.routine.size(); ++s) CHECK(a.relevance_at(UserId{u}, s) == b.relevance_at(UserId{u}, s));
  c.seed = 78;
  CHECK(build_population(c).relevance_at(UserId{0}, 0) != a.relevance_at(UserId{0}, 0));
}

TEST_CASE("population validation") {
  auto c = small();
  c.n_users = 0;
  CHECK_THROWS_AS(build_population(c), ParameterError);
  c = small();
  c.n_items = 0;
  CHECK_THROWS_AS(build_population(c), ParameterError);
  c = small();
  c.n_groups = 0;
  CHECK_THROWS_AS(build_population(c), ParameterError);
  c = small();
  c.routine[0].weight = 0.5;
  CHECK_THROWS_AS(build_population(c), ConfigError);
  c = small();
  c.routine[0].place = "Paris";  // not a leaf
  CHECK_THROWS_AS(build_population(c), ConfigError);
  c = small();
  c.drift = {DriftOp{5, DriftOp::Target::Group, 3, DriftKind::SwapTopItems, std::nullopt}};
  CHECK_THROWS_AS(build_population(c), ConfigError);
}

TEST_CASE("group coherence grows with affinity") {
  double prev = 1e9;
  for (double aff : {0.0, 0.5, 1.0}) {
    auto c = small(40, 20, 5);
    c.n_groups = 2;
    c.affinity = aff;
    const auto w = build_population(c);
    double total = 0;
    int pairs = 0;
    for (std::uint32_t u = 0; u + 2 < 40; ++u)
      for (std::size_t s = 0; s < c.routine.size(); ++s) {
        total += mean_abs_diff(w.relevance_at(UserId{u}, s), w.relevance_at(UserId{u + 2}, s));
        ++pairs;
      }
    const double diff = total / pairs;
    CHECK(diff <= prev);
    prev = diff;
  }
  CHECK(prev == 0.0);
}

TEST_CASE("events follow the routine") {
  const auto one = build_population(single_situation(3));
  Rng rng(1);
  const auto model = one.model();
  const auto expect = one.situation_key(UserId{0}, 0);
  for (std::uint64_t t = 0; t < 500; ++t) {
    const auto g = gen_event(one, UserId{0}, t, rng);
    CHECK(model->aggregate(g.event, one.user(UserId{0}).context(), 0) == expect);
  }

  const auto w = build_population(small());
  Rng a(9), b(9);
  for (std::uint64_t t = 0; t < 200; ++t) CHECK(gen_event(w, UserId{1}, t, a).event == gen_event(w, UserId{1}, t, b).event);
}

TEST_CASE("routine frequencies and event consistency") {
  const auto w = build_population(small());
  const auto model = w.model();
  Rng rng(2024);
  std::vector<int> counts(w.situations().size(), 0);
  const int n = 10000;
  for (int t = 0; t < n; ++t) {
    const auto g = gen_event(w, UserId{2}, static_cast<std::uint64_t>(t), rng);
    CHECK_NOTHROW(g.event.validate());
    const auto key = model->aggregate(g.event, w.user(UserId{2}).context(), 0);
    REQUIRE(w.situation_index(UserId{2}, key) == g.situation);
    ++counts[g.situation];
  }
  for (std::size_t i = 0; i < counts.size(); ++i)
    CHECK(std::abs(counts[i] / static_cast<double>(n) - w.situations()[i].weight) <= 0.02);
}

TEST_CASE("reward draws") {
  auto w = build_population(single_situation(3));
  w.set_relevance(UserId{0}, 0, {1.0, 0.0, 0.5});
  const auto s = w.situation_key(UserId{0}, 0);
  Rng rng(4);
  double half = 0;
  for (int i = 0; i < 10000; ++i) {
    CHECK(reward(w, UserId{0}, s, ActionId{0}, rng) == 1.0);
    CHECK(reward(w, UserId{0}, s, ActionId{1}, rng) == 0.0);
    half += reward(w, UserId{0}, s, ActionId{2}, rng);
  }
  CHECK(std::abs(half / 10000 - 0.5) <= 0.02);

  auto other = s;
  other.place = "Home";
  CHECK_THROWS_AS(reward(w, UserId{0}, other, ActionId{0}, rng), CoverageError);
  CHECK_THROWS_AS(reward(w, UserId{0}, s, ActionId{3}, rng), CatalogError);
  CHECK_THROWS_AS(w.set_relevance(UserId{0}, 0, {1.0, 0.0, 1.5}), RangeError);
}

TEST_CASE("swap drift") {
  auto c = single_situation(3);
  c.drift = {DriftOp{10, DriftOp::Target::User, 0, DriftKind::SwapTopItems, std::nullopt}};
  auto w = build_population(c);
  w.set_relevance(UserId{0}, 0, {0.9, 0.1, 0.5});
  const auto untouched = w.relevance_at(UserId{1}, 0);

  CHECK(w.apply_drift(9) == 0);
  CHECK(w.relevance_at(UserId{0}, 0) == std::vector<double>{0.9, 0.1, 0.5});
  CHECK(w.apply_drift(10) == 1);
  CHECK(w.relevance_at(UserId{0}, 0) == std::vector<double>{0.1, 0.9, 0.5});
  CHECK(w.apply_drift(11) == 0);
  CHECK(w.relevance_at(UserId{0}, 0) == std::vector<double>{0.1, 0.9, 0.5});
  CHECK(w.relevance_at(UserId{1}, 0) == untouched);
  CHECK(w.drift_applied(0));
}

TEST_CASE("scoped drift changes the optimum of scoped rows only") {
  auto c = small(3, 10, 8);
  const auto scope = SituationKey{c.routine[2].time, c.routine[2].place, GroupId{0}, c.routine[2].cognitive, 0};
  c.drift = {DriftOp{0, DriftOp::Target::Group, 0, DriftKind::SwapTopItems, scope}};
  auto w = build_population(c);
  std::vector<std::vector<std::vector<double>>> before(3);
  for (std::uint32_t u = 0; u < 3; ++u)
    for (std::size_t s = 0; s < c.routine.size(); ++s) before[u].push_back(w.relevance_at(UserId{u}, s));
  w.apply_drift(0);
  for (std::uint32_t u = 0; u < 3; ++u)
    for (std::size_t s = 0; s < c.routine.size(); ++s) {
      const auto& old = before[u][s];
      const auto& now = w.relevance_at(UserId{u}, s);
      if (s != 2) {
        CHECK(now == old);
        continue;
      }
      const auto best_old = std::max_element(old.begin(), old.end()) - old.begin();
      const auto best_new = std::max_element(now.begin(), now.end()) - now.begin();
      if (*std::max_element(old.begin(), old.end()) != *std::min_element(old.begin(), old.end()))
        CHECK(best_old != best_new);
    }
}

TEST_CASE("relevance stays in [0, 1] under any drift") {
  auto c = small(5, 12, 13);
  c.n_groups = 2;
  Rng rng(6);
  for (std::uint64_t k = 0; k < 40; ++k) {
    DriftOp op;
    op.step = k;
    op.target = rng.next() < 0.5 ? DriftOp::Target::User : DriftOp::Target::Group;
    op.target_id = static_cast<std::uint32_t>(rng.below(op.target == DriftOp::Target::User ? 5 : 2));
    op.kind = rng.next() < 0.5 ? DriftKind::SwapTopItems : DriftKind::ResampleRow;
    c.drift.push_back(op);
  }
  auto w = build_population(c);
  for (std::uint64_t t = 0; t < 40; ++t) {
    CHECK(w.apply_drift(t) == 1);
    for (std::uint32_t u = 0; u < 5; ++u)
      for (std::size_t s = 0; s < c.routine.size(); ++s)
        for (double v : w.relevance_at(UserId{u}, s)) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
  }
}

TEST_CASE("simulator steps") {
  auto world = build_population(single_situation(2));
  world.set_relevance(UserId{0}, 0, {1.0, 0.0});
  Simulator env(std::move(world), 5);
  double total = 0;
  for (std::uint64_t t = 0; t < 300; ++t) {
    env.observe(UserId{0}, t);
    total += env.execute(UserId{0}, t, ActionId{0}).reward;
  }
  CHECK(total == 300.0);
  CHECK_THROWS_AS(env.execute(UserId{0}, 300, ActionId{2}), EnvironmentRefusal);
}

TEST_CASE("same seed and actions give the same stream") {
  const auto c = small(3, 6, 21);
  Simulator a(build_population(c), 8), b(build_population(c), 8);
  Rng actions(1);
  for (std::uint64_t t = 0; t < 1000; ++t) {
    const UserId u{static_cast<std::uint32_t>(t % 3)};
    const ActionId act{static_cast<std::uint32_t>(actions.below(6))};
    CHECK(a.observe(u, t) == b.observe(u, t));
    const auto ra = a.execute(u, t, act), rb = b.execute(u, t, act);
    CHECK(ra.reward == rb.reward);
    CHECK(ra.next_event == rb.next_event);
  }
}

TEST_CASE("optimal expected reward matches a long oracle run") {
  const auto c = small(2, 8, 31);
  Simulator env(build_population(c), 3);
  const auto& w = env.world();
  double closed = 0;
  for (std::size_t s = 0; s < c.routine.size(); ++s) {
    const auto& row = w.relevance_at(UserId{1}, s);
    closed += c.routine[s].weight * *std::max_element(row.begin(), row.end());
  }
  CHECK(w.optimal_expected_reward(UserId{1}) == doctest::Approx(closed).epsilon(1e-12));

  double total = 0;
  const int n = 40000;
  for (std::uint64_t t = 0; t < static_cast<std::uint64_t>(n); ++t) {
    env.observe(UserId{1}, t);
    const auto& row = w.relevance_at(UserId{1}, env.current_situation(UserId{1}));
    const auto best = static_cast<std::uint32_t>(std::max_element(row.begin(), row.end()) - row.begin());
    total += env.execute(UserId{1}, t, ActionId{best}).reward;
  }
  CHECK(std::abs(total / n - closed) < 0.02);
}

TEST_CASE("clock follows the position in the day") {
  const auto w = build_population(single_situation(2));
  Rng rng(3);
  std::int64_t last = -1;
  for (std::uint64_t t = 0; t < w.day_length(); ++t) {
    const auto ts = gen_event(w, UserId{0}, t, rng).event.timestamp;
    const auto in_day = (ts - test::kMonday) % test::kDay;
    CHECK(in_day >= 6 * test::kHour);
    CHECK(in_day < 12 * test::kHour);
    CHECK(in_day >= last);
    last = in_day;
  }
}
