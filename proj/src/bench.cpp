#include "hyql/bench.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace hyql::bench {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 4> kMetricNames{"CumulativeReward", "StepsToThreshold", "DriftRecoverySteps",
                                                       "BranchHistogram"};
constexpr std::string_view kCsvHeader = "variant,seed,metric,value,from,to";

enum : std::uint64_t { kTagTeam = 11, kTagFocal = 12, kTagPretrain = 13 };

// ---------------------------------------------------------------------------
// JSON helpers

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      throw ConfigError("unknown key '" + item.key() + "' in " + std::string(what));
  }
}

template <class T>
T field(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

template <class T>
T required(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(std::string("missing key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

template <class Fn>
auto translate(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string scope_to_string(const context::SituationKey& key) {
  return context::to_string(key.time) + '|' + key.place + '|' + context::to_string(key.cognitive);
}

context::SituationKey parse_scope(std::string_view text) {
  auto f = split(text, '|');
  if (f.size() != 3) throw std::invalid_argument("drift scope must be `time|place|cognitive`");
  return context::SituationKey{context::parse_time_bucket(f[0]), std::string(f[1]), GroupId{0},
                               context::parse_cognitive(f[2]), 0};
}

bool safe_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
           c == '.';
  });
}

std::string format_value(const std::optional<double>& v) { return v ? format_real(*v) : std::string("none"); }

std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& variant, std::uint64_t seed) {
  return root / "runs" / variant / ("seed-" + std::to_string(seed));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw IoError("cannot write " + path.string());
}

}  // namespace

std::string to_string(Metric m) { return std::string(kMetricNames.at(static_cast<std::size_t>(m))); }

Metric parse_metric(std::string_view text) {
  for (std::size_t i = 0; i < kMetricNames.size(); ++i)
    if (kMetricNames[i] == text) return static_cast<Metric>(i);
  throw std::invalid_argument("unknown metric '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Configuration

std::shared_ptr<const context::ContextModel> ScenarioConfig::context_model() const {
  return std::make_shared<const context::ContextModel>(gazetteer ? *gazetteer : context::Gazetteer::canonical());
}

sim::WorldConfig ScenarioConfig::world_for(std::uint64_t seed) const {
  sim::WorldConfig wc = world;
  wc.n_users = team_size + 1;
  wc.seed = seed;
  for (auto& op : wc.drift) op.step += warmup_steps;
  return wc;
}

void ExperimentSpec::validate() const {
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (variants.empty()) throw ConfigError("at least one variant is required");
  if (window < 1) throw ConfigError("window must be at least 1");
  if (!(threshold_fraction > 0.0 && threshold_fraction <= 1.0)) throw ConfigError("threshold_fraction must be in (0, 1]");
  if (!(recovery_fraction > 0.0 && recovery_fraction <= 1.0)) throw ConfigError("recovery_fraction must be in (0, 1]");
  if (metrics.empty()) throw ConfigError("at least one metric is required");
  if (scenario.run_steps < 1) throw ConfigError("run_steps must be at least 1");
  std::set<std::string> names;
  for (const auto& v : variants) {
    if (!safe_name(v.name)) throw ConfigError("variant name '" + v.name + "' must match [A-Za-z0-9_.-]+");
    if (!names.insert(v.name).second) throw ConfigError("duplicate variant name '" + v.name + "'");
    try {
      v.config.validate();
    } catch (const Error& e) {
      throw ConfigError("variant " + v.name + ": " + e.what());
    }
  }
  if (metrics.contains(Metric::DriftRecoverySteps)) {
    auto step = drift_step(scenario);
    if (!step) throw ConfigError("DriftRecoverySteps needs a drift op in the scenario");
    if (*step >= scenario.warmup_steps + scenario.run_steps)
      throw ConfigError("drift is scheduled after the end of the run");
  }
  try {
    scenario.world_for(trial_seed(0)).validate();
    scenario.team_agent.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

agent::AgentConfig agent_config_from_json(const json& j) {
  check_keys(j,
             {"variant", "alpha", "gamma", "p", "schedule", "episode_length", "neighborhood", "popularity_fallback",
              "casebase"},
             "agent config");
  return translate([&] {
    agent::AgentConfig c;
    c.variant = agent::parse_variant(field<std::string>(j, "variant", agent::to_string(c.variant)));
    c.params.alpha = field(j, "alpha", c.params.alpha);
    c.params.gamma = field(j, "gamma", c.params.gamma);
    c.params.p = field(j, "p", c.params.p);
    const auto schedule = field<std::string>(j, "schedule", "Constant");
    if (schedule == "Constant")
      c.params.schedule = rl::LearningRateSchedule::Constant;
    else if (schedule == "InverseVisits")
      c.params.schedule = rl::LearningRateSchedule::InverseVisits;
    else
      throw ConfigError("unknown schedule '" + schedule + "'");
    c.episode_length = field(j, "episode_length", c.episode_length);
    c.advice.neighborhood = field(j, "neighborhood", c.advice.neighborhood);
    c.advice.popularity_fallback = field(j, "popularity_fallback", c.advice.popularity_fallback);
    if (auto it = j.find("casebase"); it != j.end()) {
      const auto& cb = *it;
      check_keys(cb, {"weights", "retrieval_threshold", "max_size", "retain_min_visits"}, "casebase config");
      if (auto w = cb.find("weights"); w != cb.end()) {
        auto v = w->get<std::vector<double>>();
        if (v.size() != 4) throw ConfigError("casebase weights must list time, place, group, cognitive");
        c.casebase.weights = {v[0], v[1], v[2], v[3]};
      }
      c.casebase.retrieval_threshold = field(cb, "retrieval_threshold", c.casebase.retrieval_threshold);
      c.casebase.max_size = field(cb, "max_size", c.casebase.max_size);
      c.casebase.retain_min_visits = field(cb, "retain_min_visits", c.casebase.retain_min_visits);
    }
    try {
      c.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    return c;
  });
}

json agent_config_to_json(const agent::AgentConfig& c) {
  const auto& w = c.casebase.weights;
  return json{
      {"variant", agent::to_string(c.variant)},
      {"alpha", c.params.alpha},
      {"gamma", c.params.gamma},
      {"p", c.params.p},
      {"schedule", c.params.schedule == rl::LearningRateSchedule::Constant ? "Constant" : "InverseVisits"},
      {"episode_length", c.episode_length},
      {"neighborhood", c.advice.neighborhood},
      {"popularity_fallback", c.advice.popularity_fallback},
      {"casebase",
       {{"weights", {w.time, w.place, w.group, w.cognitive}},
        {"retrieval_threshold", c.casebase.retrieval_threshold},
        {"max_size", c.casebase.max_size},
        {"retain_min_visits", c.casebase.retain_min_visits}}},
  };
}

ScenarioConfig scenario_from_json(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j,
             {"team_size", "groups", "items", "affinity", "relevance_shape", "day_length", "warmup_steps",
              "run_steps", "advice_scope", "routine", "drift", "team_agent", "gazetteer"},
             "scenario");
  return translate([&] {
    ScenarioConfig s;
    s.team_size = field(j, "team_size", s.team_size);
    s.world.n_groups = field(j, "groups", s.world.n_groups);
    s.world.n_items = field(j, "items", s.world.n_items);
    s.world.affinity = field(j, "affinity", s.world.affinity);
    s.world.relevance_shape = field(j, "relevance_shape", s.world.relevance_shape);
    s.world.day_length = field(j, "day_length", s.world.day_length);
    s.warmup_steps = field(j, "warmup_steps", s.warmup_steps);
    s.run_steps = field(j, "run_steps", s.run_steps);
    const auto scope = field<std::string>(j, "advice_scope", "SocialGroup");
    if (scope == "SocialGroup")
      s.advice_scope = cf::AdviceScope::SocialGroup;
    else if (scope == "Population")
      s.advice_scope = cf::AdviceScope::Population;
    else
      throw ConfigError("unknown advice_scope '" + scope + "'");

    if (auto it = j.find("routine"); it != j.end()) {
      if (!it->is_array()) throw ConfigError("routine must be an array");
      s.world.routine.clear();
      for (const auto& e : *it) {
        check_keys(e, {"time", "place", "cognitive", "weight"}, "routine entry");
        s.world.routine.push_back(sim::RoutineEntry{context::parse_time_bucket(required<std::string>(e, "time")),
                                                    required<std::string>(e, "place"),
                                                    context::parse_cognitive(required<std::string>(e, "cognitive")),
                                                    required<double>(e, "weight")});
      }
    }
    if (auto it = j.find("drift"); it != j.end()) {
      if (!it->is_array()) throw ConfigError("drift must be an array");
      for (const auto& e : *it) {
        check_keys(e, {"step", "target", "id", "op", "scope"}, "drift op");
        sim::DriftOp op;
        op.step = required<std::uint64_t>(e, "step");
        const auto target = required<std::string>(e, "target");
        if (target == "group")
          op.target = sim::DriftOp::Target::Group;
        else if (target == "user")
          op.target = sim::DriftOp::Target::User;
        else
          throw ConfigError("drift target must be 'group' or 'user'");
        op.target_id = required<std::uint32_t>(e, "id");
        op.kind = sim::parse_drift_kind(required<std::string>(e, "op"));
        if (auto sc = e.find("scope"); sc != e.end() && !sc->is_null()) op.scope = parse_scope(sc->get<std::string>());
        s.world.drift.push_back(op);
      }
    }
    if (auto it = j.find("team_agent"); it != j.end()) s.team_agent = agent_config_from_json(*it);
    if (auto it = j.find("gazetteer"); it != j.end()) {
      if (it->is_string()) {
        s.gazetteer = context::Gazetteer::load(base_dir / it->get<std::string>());
      } else if (it->is_object() && it->contains("csv")) {
        std::istringstream in(it->at("csv").get<std::string>());
        s.gazetteer = context::Gazetteer::parse(in, "<scenario gazetteer>");
      } else {
        throw ConfigError("gazetteer must be a path or {\"csv\": text}");
      }
    }
    s.world.n_users = s.team_size + 1;
    if (s.team_size < 1) throw ConfigError("team_size must be at least 1");
    try {
      sim::WorldModel probe(s.world_for(0), s.context_model());
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    return s;
  });
}

json scenario_to_json(const ScenarioConfig& s) {
  json routine = json::array();
  for (const auto& e : s.world.routine)
    routine.push_back({{"time", context::to_string(e.time)},
                       {"place", e.place},
                       {"cognitive", context::to_string(e.cognitive)},
                       {"weight", e.weight}});
  json drift = json::array();
  for (const auto& op : s.world.drift) {
    json o{{"step", op.step},
           {"target", op.target == sim::DriftOp::Target::Group ? "group" : "user"},
           {"id", op.target_id},
           {"op", sim::to_string(op.kind)}};
    o["scope"] = op.scope ? json(scope_to_string(*op.scope)) : json(nullptr);
    drift.push_back(std::move(o));
  }
  json j{{"team_size", s.team_size},
         {"groups", s.world.n_groups},
         {"items", s.world.n_items},
         {"affinity", s.world.affinity},
         {"relevance_shape", s.world.relevance_shape},
         {"day_length", s.world.day_length},
         {"warmup_steps", s.warmup_steps},
         {"run_steps", s.run_steps},
         {"advice_scope", s.advice_scope == cf::AdviceScope::SocialGroup ? "SocialGroup" : "Population"},
         {"routine", routine},
         {"drift", drift},
         {"team_agent", agent_config_to_json(s.team_agent)}};
  if (s.gazetteer) {
    std::ostringstream out;
    s.gazetteer->write(out);
    j["gazetteer"] = {{"csv", out.str()}};
  }
  return j;
}

ExperimentSpec experiment_from_json(const json& j, const std::filesystem::path& base_dir) {
  check_keys(j,
             {"scenario", "variants", "trials", "base_seed", "metrics", "window", "threshold_fraction",
              "recovery_fraction", "output_dir"},
             "experiment");
  return translate([&] {
    ExperimentSpec spec;
    const auto sc = j.find("scenario");
    if (sc == j.end()) throw ConfigError("missing key 'scenario'");
    if (sc->is_string()) {
      const auto path = base_dir / sc->get<std::string>();
      spec.scenario = scenario_from_json(read_json(path), path.parent_path());
    } else {
      spec.scenario = scenario_from_json(*sc, base_dir);
    }
    spec.trials = field(j, "trials", spec.trials);
    spec.base_seed = field(j, "base_seed", spec.base_seed);
    spec.window = field(j, "window", spec.window);
    spec.threshold_fraction = field(j, "threshold_fraction", spec.threshold_fraction);
    spec.recovery_fraction = field(j, "recovery_fraction", spec.recovery_fraction);
    if (auto it = j.find("output_dir"); it != j.end()) spec.output_dir = base_dir / it->get<std::string>();
    if (auto it = j.find("metrics"); it != j.end()) {
      spec.metrics.clear();
      for (const auto& m : *it) spec.metrics.insert(parse_metric(m.get<std::string>()));
    }
    const auto vs = j.find("variants");
    if (vs == j.end() || !vs->is_array()) throw ConfigError("variants must be an array");
    for (const auto& v : *vs) {
      check_keys(v, {"name", "agent", "pretrain_steps", "keep"}, "variant");
      VariantSpec variant;
      variant.name = required<std::string>(v, "name");
      if (auto a = v.find("agent"); a != v.end()) variant.config = agent_config_from_json(*a);
      variant.pretrain_steps = field(v, "pretrain_steps", variant.pretrain_steps);
      if (auto k = v.find("keep"); k != v.end()) {
        for (const auto& part : *k) {
          const auto name = part.get<std::string>();
          if (name == "qtable")
            variant.keep.qtable = true;
          else if (name == "casebase")
            variant.keep.casebase = true;
          else if (name == "cf")
            variant.keep.cf = true;
          else
            throw ConfigError("unknown keep component '" + name + "'");
        }
      }
      spec.variants.push_back(std::move(variant));
    }
    spec.validate();
    return spec;
  });
}

json experiment_to_json(const ExperimentSpec& spec) {
  json variants = json::array();
  for (const auto& v : spec.variants) {
    json keep = json::array();
    if (v.keep.qtable) keep.push_back("qtable");
    if (v.keep.casebase) keep.push_back("casebase");
    if (v.keep.cf) keep.push_back("cf");
    variants.push_back({{"name", v.name},
                        {"agent", agent_config_to_json(v.config)},
                        {"pretrain_steps", v.pretrain_steps},
                        {"keep", keep}});
  }
  json metrics = json::array();
  for (auto m : spec.metrics) metrics.push_back(to_string(m));
  return json{{"scenario", scenario_to_json(spec.scenario)},
              {"variants", variants},
              {"trials", spec.trials},
              {"base_seed", spec.base_seed},
              {"metrics", metrics},
              {"window", spec.window},
              {"threshold_fraction", spec.threshold_fraction},
              {"recovery_fraction", spec.recovery_fraction}};
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(read_json(path), path.parent_path());
}

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  return experiment_from_json(read_json(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Metrics

double metric_cumulative_reward(std::span<const double> rewards) {
  double total = 0.0;
  for (double r : rewards) total += r;
  return total;
}

namespace {
double window_mean(std::span<const double> rewards, std::size_t end, std::size_t window) {
  double sum = 0.0;
  for (std::size_t i = end + 1 - window; i <= end; ++i) sum += rewards[i];
  return sum / static_cast<double>(window);
}
}  // namespace

std::optional<std::size_t> metric_steps_to_threshold(std::span<const double> rewards, std::size_t window,
                                                     double threshold) {
  if (window < 1) throw ParameterError("window must be at least 1");
  for (std::size_t end = window - 1; end < rewards.size(); ++end)
    if (window_mean(rewards, end, window) >= threshold) return end + 1;
  return std::nullopt;
}

std::optional<std::size_t> metric_drift_recovery(std::span<const double> rewards, std::size_t drift_pos,
                                                 std::size_t window, double fraction, double post_optimal) {
  if (window < 1) throw ParameterError("window must be at least 1");
  if (drift_pos >= rewards.size()) throw RangeError("drift step lies outside the trace");
  const double target = fraction * post_optimal;
  for (std::size_t end = drift_pos + window - 1; end < rewards.size(); ++end)
    if (window_mean(rewards, end, window) >= target) return end - drift_pos + 1;
  return std::nullopt;
}

std::vector<double> rewards_of(std::span<const agent::StepRecord> trace) {
  std::vector<double> out;
  out.reserve(trace.size());
  for (const auto& r : trace) out.push_back(r.reward);
  return out;
}

void sort_rows(std::vector<MetricRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.variant, a.seed, a.metric) < std::tie(b.variant, b.seed, b.metric);
  });
}

void write_csv(std::ostream& out, std::vector<MetricRow> rows) {
  sort_rows(rows);
  out << kCsvHeader << '\n';
  for (const auto& r : rows)
    out << r.variant << ',' << r.seed << ',' << r.metric << ',' << format_value(r.value) << ',' << r.from << ','
        << r.to << '\n';
}

std::vector<MetricRow> read_csv(std::istream& in, const std::string& source) {
  std::vector<MetricRow> rows;
  bool header = false;
  for_each_record(in, [&](const std::string& line, std::size_t number) {
    if (!header) {
      if (line != kCsvHeader) throw ParseError(source, number, "expected header '" + std::string(kCsvHeader) + "'");
      header = true;
      return;
    }
    auto f = split(line, ',');
    if (f.size() != 6) throw ParseError(source, number, "expected 6 comma-separated fields");
    try {
      MetricRow r;
      r.variant = std::string(f[0]);
      r.seed = parse_uint(f[1]);
      r.metric = std::string(f[2]);
      if (f[3] != "none") r.value = parse_real(f[3]);
      r.from = parse_uint(f[4]);
      r.to = parse_uint(f[5]);
      rows.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, number, e.what());
    }
  });
  if (!header) throw ParseError(source, 0, "missing header");
  return rows;
}

void emit_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  if (rows.empty()) throw ParameterError("no metric rows to write");
  std::ostringstream out;
  write_csv(out, rows);
  write_text(path, out.str());
}

void emit_plot_script(const std::vector<MetricRow>& rows, const std::filesystem::path& path, std::size_t window) {
  if (rows.empty()) throw ParameterError("no metric rows to plot");
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.variant);
  std::string variants;
  for (const auto& n : names) variants += (variants.empty() ? "\"" : ", \"") + n + "\"";

  std::ostringstream s;
  s << R"PY(#!/usr/bin/env python3
"""Trailing mean reward of the newcomer per step, averaged over seeds.

Reads runs/<variant>/seed-*/trace.csv next to this script and writes
plot_rewards.png (or the path given as the first argument).
"""
import glob
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

)PY" << "WINDOW = " << window << "\nVARIANTS = [" << variants << "]\n"
    << R"PY(HERE = os.path.dirname(os.path.abspath(__file__))


def load(path):
    rewards = []
    with open(path) as f:
        for line in f:
            if not line.strip() or line.startswith("#"):
                continue
            rewards.append(float(line.split(",")[4]))
    return rewards


def trailing(xs, w):
    out, acc = [], 0.0
    for i, x in enumerate(xs):
        acc += x
        if i >= w:
            acc -= xs[i - w]
        out.append(acc / min(i + 1, w))
    return out


def main():
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for name in VARIANTS:
        paths = sorted(glob.glob(os.path.join(HERE, "runs", name, "seed-*", "trace.csv")))
        runs = [trailing(load(p), WINDOW) for p in paths]
        runs = [r for r in runs if r]
        if not runs:
            continue
        n = min(len(r) for r in runs)
        mean = [sum(r[i] for r in runs) / len(runs) for i in range(n)]
        ax.plot(range(1, n + 1), mean, label=f"{name} ({len(runs)} seeds)")
    ax.set_xlabel("newcomer step")
    ax.set_ylabel(f"mean reward, trailing {WINDOW} steps")
    ax.set_ylim(0.0, 1.0)
    ax.legend()
    fig.tight_layout()
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(HERE, "plot_rewards.png")
    fig.savefig(out, dpi=120)


if __name__ == "__main__":
    main()
)PY";
  write_text(path, s.str());
}

// ---------------------------------------------------------------------------
// Trials

std::optional<std::uint64_t> drift_step(const ScenarioConfig& scenario) {
  std::optional<std::uint64_t> first;
  for (const auto& op : scenario.world.drift) {
    const std::uint64_t global = scenario.warmup_steps + op.step;
    if (!first || global < *first) first = global;
  }
  return first;
}

ReferenceOptima reference_optima(const ScenarioConfig& scenario, std::uint64_t seed) {
  sim::WorldModel world(scenario.world_for(seed), scenario.context_model());
  ReferenceOptima optima;
  optima.pre_drift = world.optimal_expected_reward(scenario.focal_user());
  world.apply_drift(std::numeric_limits<std::uint64_t>::max());
  optima.post_drift = world.optimal_expected_reward(scenario.focal_user());
  return optima;
}

TrialResult run_trial(const ScenarioConfig& scenario, const VariantSpec& variant, std::uint64_t seed) {
  const auto model = scenario.context_model();
  const auto world_config = scenario.world_for(seed);
  sim::Simulator env(sim::WorldModel(world_config, model), seed);
  const auto catalog = env.world().catalog();
  auto team_store = std::make_shared<cf::TransactionStore>(catalog.size(), scenario.advice_scope);

  const auto day_end = [](const agent::Agent& a, std::uint64_t t) { return (t + 1) % a.config().episode_length == 0; };

  std::vector<agent::Agent> team;
  team.reserve(scenario.team_size);
  for (std::uint32_t u = 0; u < scenario.team_size; ++u) {
    auto config = scenario.team_agent;
    config.seed = derive_seed(seed, {kTagTeam, u});
    team.emplace_back(config, UserId{u}, env.world().user(UserId{u}).context(), model, catalog, team_store);
  }
  const auto step_team = [&](std::uint64_t t) {
    for (auto& a : team) {
      a.step(env, t);
      if (day_end(a, t)) a.end_episode(t);
    }
  };
  for (std::uint64_t t = 0; t < scenario.warmup_steps; ++t) step_team(t);

  const UserId focal_id = scenario.focal_user();
  const auto profile = env.world().user(focal_id).context();
  auto config = variant.config;
  config.seed = derive_seed(seed, {kTagFocal});

  std::optional<agent::Agent> focal;
  if (variant.pretrain_steps > 0) {
    focal.emplace(config, focal_id, profile, model, catalog);
    auto private_world = world_config;
    private_world.drift.clear();
    sim::Simulator rehearsal(sim::WorldModel(private_world, model), derive_seed(seed, {kTagPretrain}));
    for (std::uint64_t t = 0; t < variant.pretrain_steps; ++t) {
      focal->step(rehearsal, t);
      if (day_end(*focal, t)) focal->end_episode(t);
    }
    focal->reset(variant.keep);
    focal->set_cf_store(team_store);
  } else {
    focal.emplace(config, focal_id, profile, model, catalog, team_store);
  }

  TrialResult result;
  result.variant = variant.name;
  result.seed = seed;
  result.database.add_user(store::UserRecord{focal_id, "user" + std::to_string(raw(focal_id)), profile.group});
  result.database.add_device(store::DeviceRecord{
      "phone-" + std::to_string(raw(focal_id)),
      focal_id,
      {store::Capability::Display, store::Capability::GPS, store::Capability::Calendar, store::Capability::Call}});

  const std::uint64_t first = scenario.warmup_steps;
  for (std::uint64_t t = first; t < first + scenario.run_steps; ++t) {
    step_team(t);
    result.database.append_event_history(t, env.observe(focal_id, t));
    if (auto record = focal->step(env, t)) {
      result.database.append_action_history(focal_id, *record);
      result.database.upsert_preferences(store::PreferenceRecord{focal_id, record->s, record->a, record->reward, t});
      result.trace.push_back(std::move(*record));
    }
    if (day_end(*focal, t)) focal->end_episode(t);
  }

  result.q_table = focal->q_table();
  result.case_base = focal->case_base();
  result.optima = reference_optima(scenario, seed);
  return result;
}

std::vector<MetricRow> compute_metrics(const ExperimentSpec& spec, const TrialResult& trial) {
  std::vector<MetricRow> rows;
  const auto rewards = rewards_of(trial.trace);
  const std::uint64_t from = trial.trace.empty() ? 0 : trial.trace.front().step;
  const std::uint64_t to = trial.trace.empty() ? 0 : trial.trace.back().step;
  const auto row = [&](std::string metric, std::optional<double> value, std::uint64_t a, std::uint64_t b) {
    rows.push_back(MetricRow{trial.variant, trial.seed, std::move(metric), value, a, b});
  };
  const auto count = [](std::optional<std::size_t> v) -> std::optional<double> {
    if (!v) return std::nullopt;
    return static_cast<double>(*v);
  };

  for (auto m : spec.metrics) {
    switch (m) {
      case Metric::CumulativeReward:
        row(to_string(m), metric_cumulative_reward(rewards), from, to);
        break;
      case Metric::StepsToThreshold:
        row(to_string(m),
            count(metric_steps_to_threshold(rewards, spec.window, spec.threshold_fraction * trial.optima.pre_drift)),
            from, to);
        break;
      case Metric::DriftRecoverySteps: {
        const auto step = drift_step(spec.scenario);
        if (!step) throw ConfigError("DriftRecoverySteps needs a drift op in the scenario");
        auto it = std::find_if(trial.trace.begin(), trial.trace.end(),
                               [&](const agent::StepRecord& r) { return r.step >= *step; });
        if (it == trial.trace.end()) throw RangeError("drift step lies outside the trace");
        const auto pos = static_cast<std::size_t>(it - trial.trace.begin());
        row(to_string(m),
            count(metric_drift_recovery(rewards, pos, spec.window, spec.recovery_fraction, trial.optima.post_drift)),
            *step, to);
        break;
      }
      case Metric::BranchHistogram: {
        std::array<std::size_t, 4> counts{};
        for (const auto& r : trial.trace) ++counts.at(static_cast<std::size_t>(r.branch));
        for (std::size_t b = 0; b < counts.size(); ++b)
          row(to_string(m) + ":" + agent::to_string(static_cast<agent::Branch>(b)), static_cast<double>(counts[b]),
              from, to);
        break;
      }
    }
  }
  return rows;
}

namespace {

void persist_trial(const std::filesystem::path& root, const TrialResult& trial) {
  const auto dir = run_dir(root, trial.variant, trial.seed);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream trace, qtable, cases;
  agent::write_trace(trace, trial.trace);
  trial.q_table.write(qtable);
  trial.case_base.write(cases);
  write_text(dir / "trace.csv", trace.str());
  write_text(dir / "qtable.tsv", qtable.str());
  write_text(dir / "casebase.tsv", cases.str());
  trial.database.snapshot(dir);
}

}  // namespace

std::vector<MetricRow> run_experiment(const ExperimentSpec& spec, std::size_t parallel) {
  spec.validate();
  const std::size_t jobs = spec.variants.size() * spec.trials;
  std::vector<std::vector<MetricRow>> results(jobs);
  std::vector<std::exception_ptr> errors(jobs);

  std::error_code ec;
  std::filesystem::create_directories(spec.output_dir, ec);
  if (ec) throw IoError("cannot create " + spec.output_dir.string() + ": " + ec.message());

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t job = next++; job < jobs; job = next++) {
      try {
        const auto& variant = spec.variants[job / spec.trials];
        const auto trial = run_trial(spec.scenario, variant, spec.trial_seed(job % spec.trials));
        persist_trial(spec.output_dir, trial);
        results[job] = compute_metrics(spec, trial);
      } catch (...) {
        errors[job] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(parallel, 1, std::max<std::size_t>(jobs, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<MetricRow> rows;
  for (auto& r : results) rows.insert(rows.end(), r.begin(), r.end());
  sort_rows(rows);

  write_text(spec.output_dir / "spec.json", experiment_to_json(spec).dump(2) + "\n");
  emit_csv(rows, spec.output_dir / "metrics.csv");
  emit_plot_script(rows, spec.output_dir / "plot_rewards.py", spec.window);
  return rows;
}

VerifyReport verify_output(const std::filesystem::path& dir) {
  const auto spec = experiment_from_json(read_json(dir / "spec.json"), dir);
  std::ifstream csv(dir / "metrics.csv");
  if (!csv) throw IoError("cannot open " + (dir / "metrics.csv").string());
  auto recorded = read_csv(csv, (dir / "metrics.csv").string());
  sort_rows(recorded);

  VerifyReport report;
  std::vector<MetricRow> expected;
  for (const auto& variant : spec.variants) {
    for (std::size_t i = 0; i < spec.trials; ++i) {
      TrialResult trial;
      trial.variant = variant.name;
      trial.seed = spec.trial_seed(i);
      const auto run = run_dir(dir, variant.name, trial.seed);
      std::ifstream in(run / "trace.csv");
      if (!in) {
        report.mismatches.push_back("missing " + (run / "trace.csv").string());
        continue;
      }
      trial.trace = agent::read_trace(in, (run / "trace.csv").string());
      trial.optima = reference_optima(spec.scenario, trial.seed);
      try {
        const auto db = store::Database::load(run);
        std::vector<agent::StepRecord> stored;
        for (const auto& e : db.action_history()) stored.push_back(e.record);
        if (stored != trial.trace) report.mismatches.push_back(run.string() + ": action history differs from trace");
      } catch (const Error& e) {
        report.mismatches.push_back(run.string() + ": " + e.what());
      }
      auto rows = compute_metrics(spec, trial);
      expected.insert(expected.end(), rows.begin(), rows.end());
    }
  }
  sort_rows(expected);

  const auto key = [](const MetricRow& r) {
    return r.variant + ",seed " + std::to_string(r.seed) + "," + r.metric;
  };
  std::size_t i = 0, j = 0;
  while (i < expected.size() || j < recorded.size()) {
    if (j == recorded.size() ||
        (i < expected.size() && std::tie(expected[i].variant, expected[i].seed, expected[i].metric) <
                                    std::tie(recorded[j].variant, recorded[j].seed, recorded[j].metric))) {
      report.mismatches.push_back("missing row " + key(expected[i++]));
      continue;
    }
    if (i == expected.size() || std::tie(recorded[j].variant, recorded[j].seed, recorded[j].metric) <
                                    std::tie(expected[i].variant, expected[i].seed, expected[i].metric)) {
      report.mismatches.push_back("unexpected row " + key(recorded[j++]));
      continue;
    }
    const auto& e = expected[i++];
    const auto& r = recorded[j++];
    ++report.checked;
    if (format_value(e.value) != format_value(r.value) || e.from != r.from || e.to != r.to)
      report.mismatches.push_back(key(e) + ": recorded " + format_value(r.value) + " [" + std::to_string(r.from) +
                                  "," + std::to_string(r.to) + "], recomputed " + format_value(e.value) + " [" +
                                  std::to_string(e.from) + "," + std::to_string(e.to) + "]");
  }
  return report;
}

void write_report(std::ostream& out, const std::vector<MetricRow>& input) {
  auto rows = input;
  sort_rows(rows);
  std::map<std::pair<std::string, std::string>, std::vector<const MetricRow*>> groups;
  for (const auto& r : rows) groups[{r.metric, r.variant}].push_back(&r);

  out << std::left << std::setw(34) << "metric" << std::setw(18) << "variant" << std::right << std::setw(7) << "n"
      << std::setw(7) << "none" << std::setw(14) << "mean" << std::setw(14) << "ci95" << '\n';
  for (const auto& [k, members] : groups) {
    std::vector<double> values;
    for (const auto* r : members)
      if (r->value) values.push_back(*r->value);
    double mean = 0.0, half = 0.0;
    if (!values.empty()) {
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        half = 1.96 * std::sqrt(ss / static_cast<double>(values.size() - 1)) /
               std::sqrt(static_cast<double>(values.size()));
      }
    }
    std::ostringstream m, h;
    m << std::fixed << std::setprecision(3) << mean;
    h << std::fixed << std::setprecision(3) << half;
    out << std::left << std::setw(34) << k.first << std::setw(18) << k.second << std::right << std::setw(7)
        << members.size() << std::setw(7) << members.size() - values.size() << std::setw(14)
        << (values.empty() ? "-" : m.str()) << std::setw(14) << (values.empty() ? "-" : h.str()) << '\n';
  }
}

}  // namespace hyql::bench
