#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. Written from the definitions, independent of the library code.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "hyql/casebase.hpp"
#include "hyql/collab.hpp"
#include "hyql/random.hpp"

namespace hyql::oracle {

using Ratings = std::map<std::uint32_t, std::vector<double>>;

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

struct Scored {
  std::uint32_t user;
  double sim;
};

inline std::vector<Scored> hood(const Ratings& r, std::uint32_t target, std::size_t k) {
  std::vector<Scored> all;
  auto me = r.find(target);
  if (me == r.end()) return all;
  for (const auto& [u, row] : r) {
    if (u == target) continue;
    const double s = cosine(me->second, row);
    if (s > 0.0) all.push_back({u, s});
  }
  // selection, not std::sort: pick the best remaining each round
  std::vector<Scored> out;
  while (!all.empty() && out.size() < k) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < all.size(); ++i)
      if (all[i].sim > all[b].sim || (all[i].sim == all[b].sim && all[i].user < all[b].user)) b = i;
    out.push_back(all[b]);
    all.erase(all.begin() + static_cast<std::ptrdiff_t>(b));
  }
  return out;
}

inline double rating(const Ratings& r, std::uint32_t user, std::size_t item) {
  auto it = r.find(user);
  return it == r.end() ? 0.0 : it->second[item];
}

inline std::optional<double> predict(const Ratings& r, std::uint32_t target, std::size_t item, std::size_t k) {
  const auto h = hood(r, target, k);
  if (h.empty()) return std::nullopt;
  double num = 0.0, den = 0.0;
  for (const auto& n : h) {
    num += n.sim * rating(r, n.user, item);
    den += n.sim;
  }
  return num / den;
}

struct Ranked {
  std::size_t item;
  double score;
};

inline std::vector<Ranked> top(const Ratings& r, std::uint32_t target, std::size_t n_items, std::size_t n,
                               bool exclude_rated, std::size_t k) {
  std::vector<Ranked> scored;
  for (std::size_t i = 0; i < n_items; ++i) {
    if (exclude_rated && rating(r, target, i) > 0.0) continue;
    if (auto p = predict(r, target, i, k)) scored.push_back({i, *p});
  }
  std::vector<Ranked> out;
  while (!scored.empty() && out.size() < n) {
    std::size_t b = 0;
    for (std::size_t i = 1; i < scored.size(); ++i)
      if (scored[i].score > scored[b].score || (scored[i].score == scored[b].score && scored[i].item < scored[b].item))
        b = i;
    out.push_back(scored[b]);
    scored.erase(scored.begin() + static_cast<std::ptrdiff_t>(b));
  }
  return out;
}

/// Random implicit-rating store: 1..8 users, 1..10 items, ratings in {0, 1}.
inline Ratings random_ratings(UniformSource& rng, std::size_t& n_items) {
  n_items = 1 + rng.below(10);
  const std::size_t n_users = 1 + rng.below(8);
  const double density = 0.1 + 0.8 * rng.next();
  Ratings r;
  for (std::size_t u = 0; u < n_users; ++u) {
    std::vector<double> row(n_items);
    for (auto& v : row) v = rng.next() < density ? 1.0 : 0.0;
    r[static_cast<std::uint32_t>(u * 3 % 11)] = row;  // ids not contiguous
  }
  return r;
}

inline cf::RatingMatrix to_matrix(const Ratings& r, std::size_t n_items) {
  cf::RatingMatrix m(n_items);
  for (const auto& [u, row] : r)
    for (std::size_t i = 0; i < n_items; ++i) m.set(UserId{u}, ActionId{static_cast<std::uint32_t>(i)}, row[i]);
  return m;
}

/// Cross-checks predict_rating and top_n for every user of one store.
/// Returns the number of disagreements.
inline std::size_t cf_mismatches(const Ratings& r, std::size_t n_items) {
  const auto m = to_matrix(r, n_items);
  std::size_t bad = 0;
  for (const auto& [u, row] : r) {
    for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{10}}) {
      for (std::size_t i = 0; i < n_items; ++i) {
        const auto got = cf::predict_rating(m, UserId{u}, ActionId{static_cast<std::uint32_t>(i)}, k);
        const auto want = predict(r, u, i, k);
        if (got.has_value() != want.has_value() || (got && got->score != *want)) ++bad;
      }
      for (bool excl : {false, true}) {
        const std::size_t n = 1 + (u % n_items);
        const auto got = cf::top_n(m, UserId{u}, n, excl, k);
        const auto want = top(r, u, n_items, n, excl, k);
        if (got.size() != want.size()) {
          ++bad;
          continue;
        }
        for (std::size_t j = 0; j < got.size(); ++j)
          if (raw(got[j].item) != want[j].item || got[j].score != want[j].score) ++bad;
      }
    }
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Case retrieval

inline double case_sim(const cbr::CaseProblem& a, const cbr::CaseProblem& b, const cbr::FeatureWeights& w) {
  if (a == b) return 1.0;
  double t = 1.0;
  if (!(a.time == b.time)) {
    int n = 0;
    if (a.time.part_of_day == b.time.part_of_day && a.time.day_class == b.time.day_class) ++n;
    if (a.time.part_of_day == b.time.part_of_day) ++n;
    t = n / 3.0;
  }
  double p = 1.0;
  if (a.place_path != b.place_path) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.place_path.size(); ++i) n += a.place_path[i] == b.place_path[i];
    p = static_cast<double>(n) / static_cast<double>(a.place_path.size());
  }
  const double s = w.time * t + w.place * p + w.group * (a.group == b.group ? 1.0 : 0.0) +
                   w.cognitive * (a.cognitive == b.cognitive ? 1.0 : 0.0);
  return std::clamp(s, 0.0, 1.0);
}

/// Index of the best case: highest similarity, then more visits, then the
/// earlier provenance step, then the earlier position. None below threshold.
inline std::optional<std::size_t> linear_retrieve(std::span<const cbr::Case> cases, const cbr::CaseProblem& q,
                                                  const cbr::CaseBaseConfig& cfg) {
  std::optional<std::size_t> best;
  double best_sim = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const double s = case_sim(q, cases[i].problem, cfg.weights);
    if (s < cfg.retrieval_threshold) continue;
    if (!best) {
      best = i;
      best_sim = s;
      continue;
    }
    const auto& c = cases[i];
    const auto& b = cases[*best];
    const bool better =
        s > best_sim ||
        (s == best_sim && (c.outcome.visits > b.outcome.visits ||
                           (c.outcome.visits == b.outcome.visits && c.provenance.step < b.provenance.step)));
    if (better) {
      best = i;
      best_sim = s;
    }
  }
  return best;
}

/// Problems over the canonical place hierarchy (depth 2).
inline cbr::CaseProblem random_problem(UniformSource& rng, std::size_t n_groups = 3) {
  static const std::vector<std::vector<std::string>> paths{
      {"Paris", "Office"}, {"Paris", "ClientSite"}, {"Paris", "Paris"},
      {"Suburbs", "Home"}, {"Suburbs", "Station"},  {"Suburbs", "Suburbs"}};
  cbr::CaseProblem p;
  p.time.part_of_day = static_cast<context::PartOfDay>(rng.below(4));
  p.time.day_class = static_cast<context::DayClass>(rng.below(2));
  p.time.calendar_state = static_cast<context::CalendarState>(rng.below(2));
  p.place_path = paths[rng.below(paths.size())];
  p.group = GroupId{static_cast<std::uint32_t>(rng.below(n_groups))};
  p.cognitive = static_cast<context::CognitiveClass>(rng.below(5));
  return p;
}

inline cbr::Case random_case(UniformSource& rng, std::size_t n_actions, std::uint64_t step, std::size_t n_groups = 3) {
  cbr::Case c;
  c.problem = random_problem(rng, n_groups);
  c.solution.resize(n_actions);
  for (auto& v : c.solution) v = rng.next();
  c.outcome.visits = 5 + rng.below(4);
  c.outcome.mean_reward = std::floor(rng.next() * 10) / 10;
  c.provenance = {UserId{static_cast<std::uint32_t>(rng.below(5))}, step};
  return c;
}

}  // namespace hyql::oracle
