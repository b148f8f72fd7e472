// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <unistd.h>

#include "../oracles.hpp"
#include "hyql/bench.hpp"
#include "hyql/qlearning.hpp"

using namespace hyql;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = HYQL_SOURCE_DIR;
const fs::path kBenchExe = HYQL_BENCH_EXE;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s %-22s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hyql-acceptance-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  return p;
}

// (variant, seed) -> value of one metric; none is +inf
std::map<std::string, std::map<std::uint64_t, double>> by_variant(const std::vector<bench::MetricRow>& rows,
                                                                    const std::string& metric) {
  std::map<std::string, std::map<std::uint64_t, double>> out;
  for (const auto& r : rows)
    if (r.metric == metric) out[r.variant][r.seed] = r.value ? *r.value : INFINITY;
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  if (n % 2) return v[n / 2];
  const double lo = v[n / 2 - 1], hi = v[n / 2];
  if (std::isinf(lo) || std::isinf(hi)) return std::isinf(lo) ? lo : hi;
  return (lo + hi) / 2;
}

std::vector<bench::MetricRow> run_spec(const std::string& file) {
  auto spec = bench::load_experiment(kRoot / "experiments" / file);
  spec.output_dir = scratch(file);
  return bench::run_experiment(spec, 1);
}

// ---------------------------------------------------------------------------

void q_convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng mdp_rng(2024);
  const auto mdp = rl::FiniteMdp::random(5, 3, mdp_rng);
  rl::LearningParams lp;
  lp.p = 0.8;
  lp.schedule = rl::LearningRateSchedule::InverseVisits;
  const auto q_star = rl::value_iteration(mdp, lp.gamma, 1e-12);

  std::vector<context::SituationKey> states(5);
  for (std::size_t s = 0; s < 5; ++s) states[s].place = "s" + std::to_string(s);
  const auto catalog = rl::ActionCatalog::numbered(3);
  rl::QTable table(3);
  Rng rng(7);
  std::size_t s = 0;
  for (int step = 0; step < 50000; ++step) {
    const auto [a, branch] = rl::epsilon_greedy_action(table, states[s], catalog, lp.p, rng);
    const auto& row = mdp.transition[s][raw(a)];
    const double u = rng.next();
    std::size_t next = row.size() - 1;
    double acc = 0;
    for (std::size_t t = 0; t < row.size(); ++t) {
      acc += row[t];
      if (u < acc) {
        next = t;
        break;
      }
    }
    rl::q_update(table, states[s], a, mdp.reward[s][raw(a)], states[next], lp);
    s = next;
  }
  double err = 0;
  for (std::size_t x = 0; x < 5; ++x)
    for (std::uint32_t a = 0; a < 3; ++a) err = std::max(err, std::abs(table.value(states[x], ActionId{a}) - q_star[x][a]));
  const double secs = seconds_since(t0);
  report(err < 0.05 && secs < 5.0, "q-convergence",
         fmt("max|Q-Q*| = %.4f (< 0.05) after 50000 steps, gamma %.2f, %.2f s (< 5 s)", err, lp.gamma, secs));
}

void cold_start() {
  const auto rows = run_spec("cold_start.json");
  auto cr = by_variant(rows, "CumulativeReward");
  const auto& hy = cr["HyQL"];
  const auto& eg = cr["EpsilonGreedyQ"];
  int wins = 0;
  double sum_h = 0, sum_e = 0;
  for (const auto& [seed, v] : hy) {
    wins += v > eg.at(seed);
    sum_h += v;
    sum_e += eg.at(seed);
  }
  const double n = static_cast<double>(hy.size());
  const bool ok = n == 30 && wins >= 0.8 * n && sum_h > sum_e;
  report(ok, "cold-start",
         fmt("HyQL beats EpsilonGreedyQ in %.0f/%.0f seeds (>= 80%%); pooled mean %.1f vs %.1f", wins, n, sum_h / n,
             sum_e / n));
}

void learning_speed() {
  const auto rows = run_spec("learning_speed.json");
  auto st = by_variant(rows, "StepsToThreshold");
  std::vector<double> seeded, empty;
  for (const auto& [seed, v] : st["HyQL-seeded"]) seeded.push_back(v);
  for (const auto& [seed, v] : st["HyQL-empty"]) empty.push_back(v);
  const double ms = median(seeded), me = median(empty);
  const bool ok = seeded.size() == 30 && empty.size() == 30 && ms < me;
  report(ok, "learning-speed",
         fmt("median steps to 0.8 x optimum: %.1f with seeded case base vs %.1f empty (strictly smaller)", ms, me));
}

void drift() {
  const auto rows = run_spec("drift.json");
  auto dr = by_variant(rows, "DriftRecoverySteps");
  int hy_finite = 0, gr_none = 0;
  for (const auto& [seed, v] : dr["HyQL"]) hy_finite += std::isfinite(v);
  for (const auto& [seed, v] : dr["GreedyQ"]) gr_none += std::isinf(v);
  const double n = static_cast<double>(dr["HyQL"].size());
  const bool ok = n == 30 && dr["GreedyQ"].size() == 30 && hy_finite >= 0.9 * n && gr_none >= 0.9 * n;
  report(ok, "drift-recovery",
         fmt("HyQL recovers in %.0f/30 seeds (>= 27); GreedyQ never recovers in %.0f/30 seeds (>= 27)", hy_finite,
             gr_none));
}

void cf_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1000);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    std::size_t n_items = 0;
    const auto r = oracle::random_ratings(rng, n_items);
    bad += oracle::cf_mismatches(r, n_items);
  }
  const double secs = seconds_since(t0);
  report(bad == 0 && secs < 10.0, "cf-oracle",
         fmt("%.0f mismatches over 1000 random stores (<= 8 users x 10 items), %.2f s (< 10 s)", bad, secs));
}

void cbr_retrieval() {
  std::size_t bad = 0, hits = 0;
  for (double threshold : {0.0, 0.8}) {
    Rng rng(10000);
    cbr::CaseBaseConfig cfg;
    cfg.retrieval_threshold = threshold;
    cfg.max_size = 10000;
    cbr::CaseBase base(cfg);
    std::uint64_t step = 0;
    while (base.size() < 10000) base.retain(oracle::random_case(rng, 5, (step++) % 997, 60));
    for (int q = 0; q < 100; ++q) {
      const auto query = oracle::random_problem(rng, 60);
      const auto got = base.retrieve(query);
      const auto want = oracle::linear_retrieve(base.cases(), query, cfg);
      if (got.has_value() != want.has_value() || (got && !(got->matched == base.cases()[*want]))) ++bad;
      hits += got.has_value();
    }
  }
  report(bad == 0, "cbr-retrieval",
         fmt("%.0f mismatches, 10000 cases x 100 queries at thresholds 0 and 0.8 (%.0f hits)", bad, hits));
}

std::map<std::string, std::string> files_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    out[fs::relative(e.path(), dir).string()] = s.str();
  }
  return out;
}

void determinism() {
  const auto spec = kRoot / "experiments" / "cold_start.json";
  const auto a = scratch("det-a"), b = scratch("det-b");
  const auto run = [&](const fs::path& out, int parallel) {
    const std::string cmd = "\"" + kBenchExe.string() + "\" run \"" + spec.string() + "\" --out \"" + out.string() +
                            "\" --parallel " + std::to_string(parallel) + " > /dev/null";
    return std::system(cmd.c_str());
  };
  const int ra = run(a, 1), rb = run(b, 1);
  const auto fa = files_under(a), fb = files_under(b);
  std::size_t traces = 0;
  for (const auto& [name, body] : fa) traces += name.ends_with("trace.csv");
  const bool same = ra == 0 && rb == 0 && fa == fb && traces == 60;
  const std::string cmd = "\"" + kBenchExe.string() + "\" verify \"" + a.string() + "\" > /dev/null";
  const int verify = std::system(cmd.c_str());
  report(same && verify == 0, "determinism",
         fmt("two runs: %.0f files, %.0f traces, byte-identical = %.0f; verify exit %.0f", fa.size(), traces,
             fa == fb ? 1 : 0, WEXITSTATUS(verify)));
}

void reduction_identities() {
  // p = 1: the hybrid policy is the greedy policy
  const auto scenario = bench::load_scenario(kRoot / "scenarios" / "canonical.json");
  std::size_t differing = 0, bootstrapped = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    bench::VariantSpec hy, gr;
    hy.name = "HyQL";
    hy.config.variant = agent::Variant::HyQL;
    hy.config.params.p = 1.0;
    hy.config.params.alpha = 0.3;
    gr = hy;
    gr.name = "GreedyQ";
    gr.config.variant = agent::Variant::GreedyQ;
    const auto th = bench::run_trial(scenario, hy, seed);
    const auto tg = bench::run_trial(scenario, gr, seed);
    bool same = th.trace.size() == tg.trace.size();
    for (std::size_t i = 0; same && i < th.trace.size(); ++i) same = th.trace[i].a == tg.trace[i].a;
    differing += !same;
    for (const auto& r : th.trace) bootstrapped += r.branch == agent::Branch::CaseBootstrapped;
  }
  report(differing == 0, "p1-greedy-identity",
         fmt("HyQL(p=1) and GreedyQ action traces differ in %.0f/30 seeds (%.0f case bootstraps)", differing,
             bootstrapped));

  // no advice and no cases: HyQL explores exactly like epsilon-greedy
  sim::WorldConfig wc;
  wc.n_users = 1;
  wc.seed = 3;
  const auto world = sim::build_population(wc);
  std::map<agent::Variant, std::map<agent::Branch, double>> hist;
  const double n = 10000, p = 0.9;
  for (auto v : {agent::Variant::HyQL, agent::Variant::EpsilonGreedyQ}) {
    agent::AgentConfig cfg;
    cfg.variant = v;
    cfg.params.p = p;
    cfg.seed = v == agent::Variant::HyQL ? 101 : 202;
    cfg.casebase.retain_min_visits = ~std::uint64_t{0};
    agent::Agent ag(cfg, UserId{0}, world.user(UserId{0}).context(), world.model(), world.catalog());
    sim::Simulator env(world, 11);
    for (std::uint64_t t = 0; t < static_cast<std::uint64_t>(n); t += cfg.episode_length)
      for (const auto& r : ag.run_episode(env, t, cfg.episode_length)) hist[v][r.branch] += 1;
  }
  const double ph = hist[agent::Variant::HyQL][agent::Branch::Exploit] / n;
  const double pe = hist[agent::Variant::EpsilonGreedyQ][agent::Branch::Exploit] / n;
  const double half_width = 2.576 * std::sqrt(p * (1 - p) * 2 / n);  // 99% two-sample interval
  const bool clean = hist[agent::Variant::HyQL][agent::Branch::Advise] == 0 &&
                     hist[agent::Variant::HyQL][agent::Branch::CaseBootstrapped] == 0;
  report(clean && std::abs(ph - pe) <= half_width, "empty-hybrid-identity",
         fmt("exploit share HyQL %.4f vs EpsilonGreedyQ %.4f, |diff| <= %.4f; advise/bootstrap steps %.0f", ph, pe,
             half_width, hist[agent::Variant::HyQL][agent::Branch::Advise] +
                             hist[agent::Variant::HyQL][agent::Branch::CaseBootstrapped]));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void()>>> criteria{
      {"q-convergence", q_convergence}, {"cold-start", cold_start},   {"learning-speed", learning_speed},
      {"drift-recovery", drift},        {"cf-oracle", cf_oracle},     {"cbr-retrieval", cbr_retrieval},
      {"determinism", determinism},     {"reduction", reduction_identities}};
  for (const auto& [name, fn] : criteria) {
    try {
      fn();
    } catch (const std::exception& e) {
      report(false, name, std::string("error: ") + e.what());
    }
  }
  fs::remove_all(fs::temp_directory_path() / ("hyql-acceptance-" + std::to_string(::getpid())));
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
