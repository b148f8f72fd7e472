#pragma once

// Synthetic ubiquitous environment. A population of users with routines of
// (time bucket, place, cognitive activity) triples, hidden per-situation item
// relevance built from group prototypes plus personal noise, Bernoulli
// rewards and scheduled interest drift.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hyql/agent.hpp"
#include "hyql/common.hpp"
#include "hyql/context.hpp"
#include "hyql/qlearning.hpp"
#include "hyql/random.hpp"

namespace hyql::sim {

using context::SituationKey;

struct RoutineEntry {
  context::TimeBucket time;
  std::string place;  // gazetteer node name
  context::CognitiveClass cognitive = context::CognitiveClass::Navigate;
  double weight = 0.0;
  friend bool operator==(const RoutineEntry&, const RoutineEntry&) = default;
};

struct UserProfile {
  UserId id{};
  GroupId group{};
  double group_affinity = 0.0;
  std::vector<RoutineEntry> routine;

  context::UserContextProfile context() const { return {group, context::CognitiveClass::Unknown}; }
};

enum class DriftKind : std::uint8_t { SwapTopItems, ResampleRow };
std::string to_string(DriftKind);
DriftKind parse_drift_kind(std::string_view);

struct DriftOp {
  std::uint64_t step = 0;
  enum class Target : std::uint8_t { User, Group } target = Target::Group;
  std::uint32_t target_id = 0;
  DriftKind kind = DriftKind::SwapTopItems;
  /// Scoped situation (time, place and cognitive class are compared); none
  /// means every situation.
  std::optional<SituationKey> scope;
};

struct WorldConfig {
  std::size_t n_users = 11;
  std::size_t n_groups = 1;
  std::size_t n_items = 20;
  double affinity = 0.8;
  /// Relevance draws are u^shape with u ~ U[0,1); larger values make good
  /// items rarer.
  double relevance_shape = 2.0;
  std::size_t day_length = 50;
  std::vector<RoutineEntry> routine = canonical_routine();
  std::vector<DriftOp> drift;
  std::uint64_t seed = 0;

  static std::vector<RoutineEntry> canonical_routine();
  void validate() const;
};

class WorldModel {
 public:
  /// Builds the population: user i joins group i mod n_groups, every group
  /// gets one prototype row per situation, and each user's row mixes the
  /// prototype with a personal draw. Throws ParameterError on invalid
  /// counts and ConfigError on routines the gazetteer cannot place.
  WorldModel(const WorldConfig& config, std::shared_ptr<const context::ContextModel> model);

  const WorldConfig& config() const { return config_; }
  std::span<const UserProfile> users() const { return users_; }
  const UserProfile& user(UserId id) const;
  const rl::ActionCatalog& catalog() const { return catalog_; }
  const std::shared_ptr<const context::ContextModel>& model() const { return model_; }
  std::size_t day_length() const { return config_.day_length; }
  std::uint64_t seed() const { return config_.seed; }
  std::span<const RoutineEntry> situations() const { return config_.routine; }

  /// Level-0 key of routine situation `index` as seen by `user`.
  SituationKey situation_key(UserId user, std::size_t index) const;
  /// Routine index of a level-0 key, or none.
  std::optional<std::size_t> situation_index(UserId user, const SituationKey& key) const;

  /// Relevance row for (user, level-0 situation). Throws CoverageError.
  const std::vector<double>& relevance(UserId user, const SituationKey& key) const;
  const std::vector<double>& relevance_at(UserId user, std::size_t index) const;
  const std::vector<double>& prototype(GroupId group, std::size_t index) const;
  /// Overwrites a relevance row (test hook). Values must lie in [0, 1].
  void set_relevance(UserId user, std::size_t index, std::vector<double> row);

  /// Expected reward per step of the best item in every situation, weighted
  /// by the user's routine.
  double optimal_expected_reward(UserId user) const;

  /// Runs every not yet applied drift op scheduled at or before `step`.
  /// Returns the number of ops applied.
  std::size_t apply_drift(std::uint64_t step);
  bool drift_applied(std::size_t op) const { return drift_applied_.at(op); }

 private:
  std::vector<double> draw_row(UniformSource& rng) const;
  std::vector<double> mix(double affinity, const std::vector<double>& proto, const std::vector<double>& personal) const;
  bool in_scope(const DriftOp& op, std::size_t index) const;

  WorldConfig config_;
  std::shared_ptr<const context::ContextModel> model_;
  rl::ActionCatalog catalog_;
  std::vector<UserProfile> users_;
  std::vector<std::vector<std::vector<double>>> prototypes_;  // [group][situation][item]
  std::vector<std::vector<std::vector<double>>> relevance_;   // [user][situation][item]
  std::vector<bool> drift_applied_;
  Rng drift_rng_;
};

/// Convenience: world on the canonical gazetteer.
WorldModel build_population(const WorldConfig& config);

struct GeneratedEvent {
  context::RawEvent event;
  std::size_t situation = 0;  // routine index
};

/// Samples a routine triple by weight and synthesises a matching event. The
/// clock hour follows the step's position within the day.
GeneratedEvent gen_event(const WorldModel& world, UserId user, std::uint64_t step, UniformSource& rng);

/// Bernoulli draw with the relevance of `a` in `s`. Throws CoverageError for
/// an uncovered situation and CatalogError for an unknown item.
double reward(const WorldModel& world, UserId user, const SituationKey& s, ActionId a, UniformSource& rng);

/// The environment the agents interact with. Every user has private event
/// and reward streams derived from the stream seed, so two simulators with
/// the same world and seed produce the same events for the same actions.
class Simulator final : public agent::Environment {
 public:
  Simulator(WorldModel world, std::uint64_t stream_seed);

  context::RawEvent observe(UserId user, std::uint64_t step) override;
  /// Applies drift for `step`, draws the reward in the user's current
  /// situation and generates the next event. Throws EnvironmentRefusal for
  /// an item outside the catalog.
  agent::StepOutcome execute(UserId user, std::uint64_t step, ActionId action) override;

  const WorldModel& world() const { return world_; }
  WorldModel& world() { return world_; }
  /// Routine index of the user's pending event.
  std::size_t current_situation(UserId user);

 private:
  struct Stream {
    Rng events;
    Rng rewards;
    std::optional<GeneratedEvent> pending;
    std::uint64_t pending_step = 0;
  };
  Stream& stream(UserId user);
  GeneratedEvent& pending(UserId user, std::uint64_t step);

  WorldModel world_;
  std::uint64_t stream_seed_;
  std::unordered_map<UserId, Stream> streams_;
};

}  // namespace hyql::sim
