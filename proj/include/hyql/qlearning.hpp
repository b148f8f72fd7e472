#pragma once

// Tabular Q-learning: the action catalog, the Q-table, the temporal
// difference update, greedy and p-greedy selection, and an exact
// value-iteration solver used as a test oracle.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hyql/common.hpp"
#include "hyql/context.hpp"
#include "hyql/random.hpp"

namespace hyql::rl {

using context::SituationKey;

/// Ordered set of recommendable items; item i has ActionId{i}.
class ActionCatalog {
 public:
  explicit ActionCatalog(std::vector<std::string> names);
  /// Items named `<prefix>00`, `<prefix>01`, ...
  static ActionCatalog numbered(std::size_t count, std::string_view prefix = "doc");

  std::size_t size() const { return names_.size(); }
  bool contains(ActionId a) const { return raw(a) < names_.size(); }
  const std::string& name(ActionId a) const { return names_.at(raw(a)); }
  ActionId at(std::size_t index) const;

 private:
  std::vector<std::string> names_;
};

enum class LearningRateSchedule : std::uint8_t {
  Constant,      ///< alpha on every update
  InverseVisits  ///< 1 / (1 + prior visits of the pair)
};

struct LearningParams {
  double alpha = 0.1;
  double gamma = 0.2;
  /// Probability of exploiting; the remaining mass goes to exploration.
  double p = 0.9;
  LearningRateSchedule schedule = LearningRateSchedule::Constant;

  /// Throws ParameterError unless 0 < alpha <= 1, 0 <= gamma < 1, 0 <= p <= 1.
  void validate() const;
};

class QTable {
 public:
  explicit QTable(std::size_t n_actions, double default_value = 0.0);

  std::size_t n_actions() const { return n_actions_; }
  double default_value() const { return default_value_; }

  double value(const SituationKey& s, ActionId a) const;
  /// The full row; defaults when the situation was never stored.
  std::vector<double> row(const SituationKey& s) const;
  double max_value(const SituationKey& s) const;

  void set(const SituationKey& s, ActionId a, double value);
  /// Overwrites a row's values. Visit counts are left untouched.
  void set_row(const SituationKey& s, std::span<const double> values);
  /// Removes a row entirely (values and visits).
  void erase_row(const SituationKey& s);

  std::uint64_t visits(const SituationKey& s, ActionId a) const;
  std::uint64_t row_visits(const SituationKey& s) const;
  bool has_row(const SituationKey& s) const { return rows_.contains(s); }
  bool row_visited(const SituationKey& s) const { return row_visits(s) > 0; }
  void count_visit(const SituationKey& s, ActionId a);

  std::size_t row_count() const { return rows_.size(); }
  /// Stored situations in canonical (sorted) order.
  std::vector<SituationKey> situations() const;

  /// Snapshot: `situation_key<TAB>action_id<TAB>value` per stored entry,
  /// rows in canonical order. Visit counts are not persisted.
  void write(std::ostream& out) const;
  static QTable read(std::istream& in, std::size_t n_actions, const std::string& source = "<qtable>");

  friend bool operator==(const QTable& a, const QTable& b);

 private:
  struct Row {
    std::vector<double> values;
    std::vector<std::uint64_t> visits;
  };
  Row& ensure_row(const SituationKey& s);
  void check_action(ActionId a) const;

  std::size_t n_actions_;
  double default_value_;
  std::unordered_map<SituationKey, Row, context::SituationKeyHash> rows_;
};

/// One temporal-difference backup of the (s, a) entry:
///   Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)).
/// Counts the visit and returns the new value. Throws NumericError when r or
/// the result is not finite.
double q_update(QTable& table, const SituationKey& s, ActionId a, double reward, const SituationKey& s_next,
                const LearningParams& params);

/// argmax_a Q(s,a), ties to the smallest index.
ActionId greedy_action(const QTable& table, const SituationKey& s, const ActionCatalog& catalog);

enum class SelectionBranch : std::uint8_t { Exploit, Explore };

/// Draws q ~ U[0,1); exploits when q <= p, otherwise picks a uniformly random
/// catalog item.
std::pair<ActionId, SelectionBranch> epsilon_greedy_action(const QTable& table, const SituationKey& s,
                                                           const ActionCatalog& catalog, double p,
                                                           UniformSource& rng);

// ---------------------------------------------------------------------------
// Explicit MDPs

struct FiniteMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  /// transition[s][a][s'] = P(s' | s, a)
  std::vector<std::vector<std::vector<double>>> transition;
  /// reward[s][a] = expected immediate reward
  std::vector<std::vector<double>> reward;

  void validate() const;
  /// Random MDP with dense transition rows and rewards in [0, 1).
  static FiniteMdp random(std::size_t n_states, std::size_t n_actions, UniformSource& rng);
};

using QMatrix = std::vector<std::vector<double>>;

/// Bellman optimality backups until the max-norm change drops below
/// `tolerance`. Throws ParameterError when gamma is outside [0, 1).
QMatrix value_iteration(const FiniteMdp& mdp, double gamma, double tolerance);

}  // namespace hyql::rl
