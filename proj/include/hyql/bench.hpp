#pragma once

// Experiment harness: scenario and experiment configuration, the paired-seed
// trial runner, the metrics, and the CSV / plot-script emitters.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hyql/agent.hpp"
#include "hyql/collab.hpp"
#include "hyql/simenv.hpp"
#include "hyql/store.hpp"
#include "json.hpp"

namespace hyql::bench {

enum class Metric : std::uint8_t { CumulativeReward, StepsToThreshold, DriftRecoverySteps, BranchHistogram };
std::string to_string(Metric);
Metric parse_metric(std::string_view);

/// Population, routine, drift and schedule of one simulated trial. Drift op
/// steps count from the newcomer's first step.
struct ScenarioConfig {
  sim::WorldConfig world;  // n_users = team_size + 1, seed set per trial
  std::size_t team_size = 10;
  std::size_t warmup_steps = 1000;
  std::size_t run_steps = 500;
  cf::AdviceScope advice_scope = cf::AdviceScope::SocialGroup;
  agent::AgentConfig team_agent;
  /// Empty: the built-in gazetteer.
  std::optional<context::Gazetteer> gazetteer;

  UserId focal_user() const { return UserId{static_cast<std::uint32_t>(team_size)}; }
  std::shared_ptr<const context::ContextModel> context_model() const;
  /// World for a trial seed, drift steps shifted onto the global clock.
  sim::WorldConfig world_for(std::uint64_t seed) const;
};

struct VariantSpec {
  std::string name;
  agent::AgentConfig config;
  /// Steps the newcomer first spends alone in a private copy of the world.
  std::size_t pretrain_steps = 0;
  /// What survives the reset that follows pretraining.
  agent::Keep keep;
};

struct ExperimentSpec {
  ScenarioConfig scenario;
  std::vector<VariantSpec> variants;
  std::size_t trials = 1;
  std::uint64_t base_seed = 1;
  std::set<Metric> metrics{Metric::CumulativeReward};
  std::size_t window = 50;
  double threshold_fraction = 0.8;
  double recovery_fraction = 0.9;
  std::filesystem::path output_dir = "out";

  std::uint64_t trial_seed(std::size_t trial) const { return base_seed + trial; }
  void validate() const;
};

// JSON (de)serialisation. Parsing throws ConfigError.
ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json scenario_to_json(const ScenarioConfig& scenario);
agent::AgentConfig agent_config_from_json(const nlohmann::json& j);
nlohmann::json agent_config_to_json(const agent::AgentConfig& config);
/// `scenario` may be a path (relative to `base_dir`) or an inline object.
ExperimentSpec experiment_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json experiment_to_json(const ExperimentSpec& spec);
ScenarioConfig load_scenario(const std::filesystem::path& path);
ExperimentSpec load_experiment(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Metrics. Windows are trailing and must be full.

double metric_cumulative_reward(std::span<const double> rewards);
/// 1-based count of steps until the first window whose mean reaches
/// `threshold`, or none.
std::optional<std::size_t> metric_steps_to_threshold(std::span<const double> rewards, std::size_t window,
                                                     double threshold);
/// Steps from position `drift_pos` to the end of the first window lying
/// entirely after the drift whose mean reaches fraction * post_optimal, or
/// none. Throws RangeError when drift_pos is outside the trace.
std::optional<std::size_t> metric_drift_recovery(std::span<const double> rewards, std::size_t drift_pos,
                                                 std::size_t window, double fraction, double post_optimal);

std::vector<double> rewards_of(std::span<const agent::StepRecord> trace);

struct MetricRow {
  std::string variant;
  std::uint64_t seed = 0;
  std::string metric;
  std::optional<double> value;  // none: threshold never reached
  std::uint64_t from = 0;
  std::uint64_t to = 0;
  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// Sort order of emitted rows: variant, seed, metric.
void sort_rows(std::vector<MetricRow>& rows);
void write_csv(std::ostream& out, std::vector<MetricRow> rows);
std::vector<MetricRow> read_csv(std::istream& in, const std::string& source = "<metrics>");
/// Throws ParameterError on no rows and IoError when the file cannot be written.
void emit_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path);
/// Standalone matplotlib script plotting the trailing mean reward per step
/// of every variant from the persisted traces next to it.
void emit_plot_script(const std::vector<MetricRow>& rows, const std::filesystem::path& path, std::size_t window);

// ---------------------------------------------------------------------------
// Trials

/// Expected reward of the best policy for the focal user before and after
/// the scheduled drift.
struct ReferenceOptima {
  double pre_drift = 0.0;
  double post_drift = 0.0;
};
ReferenceOptima reference_optima(const ScenarioConfig& scenario, std::uint64_t seed);

struct TrialResult {
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<agent::StepRecord> trace;  // focal user only
  store::Database database;              // focal user only
  rl::QTable q_table{1};
  cbr::CaseBase case_base;
  ReferenceOptima optima;
};

/// One (variant, seed) run: team warm-up, optional newcomer pretraining,
/// then the newcomer and the team interleaved for run_steps.
TrialResult run_trial(const ScenarioConfig& scenario, const VariantSpec& variant, std::uint64_t seed);

/// Global step at which the first drift op fires, if any.
std::optional<std::uint64_t> drift_step(const ScenarioConfig& scenario);

std::vector<MetricRow> compute_metrics(const ExperimentSpec& spec, const TrialResult& trial);

/// Runs every (variant, seed), persists traces and stores under
/// output_dir/runs, writes spec.json, metrics.csv and plot_rewards.py.
/// Output does not depend on `parallel`.
std::vector<MetricRow> run_experiment(const ExperimentSpec& spec, std::size_t parallel = 1);

struct VerifyReport {
  std::size_t checked = 0;
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty(); }
};
/// Recomputes every metric of an output directory from its trace files.
VerifyReport verify_output(const std::filesystem::path& dir);

/// Per (variant, metric) mean, 95% interval and none-count.
void write_report(std::ostream& out, const std::vector<MetricRow>& rows);

}  // namespace hyql::bench
