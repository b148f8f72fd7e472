#pragma once

// The recommender agents. All five variants share one contract: observe the
// user's current event, abstract it into a situation, pick an item, execute
// it in the environment and learn from the reward.
//
//   GreedyQ         Q-learning, always greedy
//   EpsilonGreedyQ  Q-learning, random exploration with probability 1 - p
//   CFOnly          collaborative-filtering advice, random when none
//   CBRQ            EpsilonGreedyQ plus case-based bootstrap of new states
//   HyQL            case bootstrap + Q-learning + CF-advised exploration

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hyql/casebase.hpp"
#include "hyql/collab.hpp"
#include "hyql/common.hpp"
#include "hyql/context.hpp"
#include "hyql/qlearning.hpp"
#include "hyql/random.hpp"

namespace hyql::agent {

using context::SituationKey;

enum class Variant : std::uint8_t { GreedyQ, EpsilonGreedyQ, CFOnly, CBRQ, HyQL };
enum class Branch : std::uint8_t { Exploit, Advise, RandomFallback, CaseBootstrapped };

std::string to_string(Variant);
std::string to_string(Branch);
Variant parse_variant(std::string_view);
Branch parse_branch(std::string_view);

inline bool uses_q(Variant v) { return v != Variant::CFOnly; }
inline bool uses_cases(Variant v) { return v == Variant::CBRQ || v == Variant::HyQL; }

struct AgentConfig {
  rl::LearningParams params;
  /// Steps per episode (one simulated working day).
  std::size_t episode_length = 50;
  Variant variant = Variant::HyQL;
  std::uint64_t seed = 0;
  cbr::CaseBaseConfig casebase;
  cf::AdviceSettings advice;

  void validate() const;
};

struct StepRecord {
  std::uint64_t step = 0;
  SituationKey s;
  ActionId a{};
  Branch branch = Branch::Exploit;
  double reward = 0.0;
  SituationKey s_next;
  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// Trace file: `step,situation_key,action,branch,reward,next_situation_key`.
void write_trace(std::ostream& out, std::span<const StepRecord> trace);
std::vector<StepRecord> read_trace(std::istream& in, const std::string& source = "<trace>");

struct StepOutcome {
  double reward = 0.0;
  context::RawEvent next_event;
};

class Environment {
 public:
  virtual ~Environment() = default;
  /// The user's current event for `step`.
  virtual context::RawEvent observe(UserId user, std::uint64_t step) = 0;
  /// Executes `action` for the user. Throws EnvironmentRefusal when the
  /// action cannot be executed.
  virtual StepOutcome execute(UserId user, std::uint64_t step, ActionId action) = 0;
};

/// Error raised while running an episode, tagged with the failing step.
class StepError : public Error {
 public:
  StepError(std::uint64_t step, const std::string& what);
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

/// Draws q ~ U[0,1). q <= p: greedy action (Exploit). Otherwise the CF advice
/// for the state (Advise), or a uniformly random item when there is none
/// (RandomFallback). `situations` is the state's granularity chain.
std::pair<ActionId, Branch> hybrid_policy(const rl::QTable& table, std::span<const SituationKey> situations,
                                          UserId user, const rl::ActionCatalog& catalog, double p,
                                          const cf::TransactionStore& store, UniformSource& rng,
                                          const cf::AdviceSettings& advice = {});

/// Components preserved by Agent::reset.
struct Keep {
  bool qtable = false;
  bool casebase = false;
  bool cf = false;
};

struct AgentStats {
  std::uint64_t steps = 0;
  std::uint64_t aborted = 0;
  std::uint64_t bootstraps = 0;
  std::uint64_t retained = 0;
  double last_bootstrap_cost = 0.0;
};

class Agent {
 public:
  /// `store` is the transaction store shared with the user's group; a
  /// private one is created when null.
  Agent(AgentConfig config, UserId user, context::UserContextProfile profile,
        std::shared_ptr<const context::ContextModel> model, rl::ActionCatalog catalog,
        std::shared_ptr<cf::TransactionStore> store = nullptr);

  /// One pass through the loop. Returns nothing, and leaves the agent as it
  /// was, when the environment refuses the action.
  std::optional<StepRecord> step(Environment& env, std::uint64_t step);

  /// `length` steps starting at `first_step`, then end_episode. Errors other
  /// than refusals are rethrown as StepError.
  std::vector<StepRecord> run_episode(Environment& env, std::uint64_t first_step, std::size_t length);

  /// Retains a case for every situation with enough visits (case-using
  /// variants only). Returns how many cases were stored.
  std::size_t end_episode(std::uint64_t step);

  /// Wipes every component not in `keep` and reseeds the random stream.
  void reset(Keep keep);

  const AgentConfig& config() const { return config_; }
  UserId user() const { return user_; }
  const context::UserContextProfile& profile() const { return profile_; }
  const rl::QTable& q_table() const { return table_; }
  rl::QTable& q_table() { return table_; }
  const cbr::CaseBase& case_base() const { return case_base_; }
  void set_case_base(cbr::CaseBase base) { case_base_ = std::move(base); }
  const std::shared_ptr<cf::TransactionStore>& cf_store() const { return store_; }
  /// Switches to another transaction store (same catalog size).
  void set_cf_store(std::shared_ptr<cf::TransactionStore> store);
  const AgentStats& stats() const { return stats_; }
  const rl::ActionCatalog& catalog() const { return catalog_; }

 private:
  struct SituationStats {
    std::uint64_t visits = 0;
    double reward_sum = 0.0;
  };

  std::pair<ActionId, Branch> select(std::span<const SituationKey> situations);

  AgentConfig config_;
  UserId user_;
  context::UserContextProfile profile_;
  std::shared_ptr<const context::ContextModel> model_;
  rl::ActionCatalog catalog_;
  std::shared_ptr<cf::TransactionStore> store_;
  rl::QTable table_;
  cbr::CaseBase case_base_;
  Rng rng_;
  AgentStats stats_;
  std::unordered_map<SituationKey, SituationStats, context::SituationKeyHash> situation_stats_;
};

}  // namespace hyql::agent
