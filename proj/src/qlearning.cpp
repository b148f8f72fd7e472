#include "hyql/qlearning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace hyql::rl {

ActionCatalog::ActionCatalog(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw CatalogError("action catalog is empty");
}

ActionCatalog ActionCatalog::numbered(std::size_t count, std::string_view prefix) {
  std::vector<std::string> names;
  names.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%02zu", i);
    names.push_back(std::string(prefix) + buf);
  }
  return ActionCatalog(std::move(names));
}

ActionId ActionCatalog::at(std::size_t index) const {
  if (index >= names_.size()) throw CatalogError("action index out of range");
  return ActionId{static_cast<std::uint32_t>(index)};
}

void LearningParams::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in (0, 1]");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ParameterError("gamma must lie in [0, 1)");
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("p must lie in [0, 1]");
}

// ---------------------------------------------------------------------------

QTable::QTable(std::size_t n_actions, double default_value) : n_actions_(n_actions), default_value_(default_value) {
  if (n_actions == 0) throw CatalogError("Q-table needs at least one action");
  if (!std::isfinite(default_value)) throw NumericError("default Q-value must be finite");
}

void QTable::check_action(ActionId a) const {
  if (raw(a) >= n_actions_) throw CatalogError("action " + std::to_string(raw(a)) + " outside the catalog");
}

QTable::Row& QTable::ensure_row(const SituationKey& s) {
  auto it = rows_.find(s);
  if (it == rows_.end())
    it = rows_.emplace(s, Row{std::vector<double>(n_actions_, default_value_), std::vector<std::uint64_t>(n_actions_, 0)})
             .first;
  return it->second;
}

double QTable::value(const SituationKey& s, ActionId a) const {
  check_action(a);
  auto it = rows_.find(s);
  return it == rows_.end() ? default_value_ : it->second.values[raw(a)];
}

std::vector<double> QTable::row(const SituationKey& s) const {
  auto it = rows_.find(s);
  return it == rows_.end() ? std::vector<double>(n_actions_, default_value_) : it->second.values;
}

double QTable::max_value(const SituationKey& s) const {
  auto it = rows_.find(s);
  if (it == rows_.end()) return default_value_;
  return *std::max_element(it->second.values.begin(), it->second.values.end());
}

void QTable::set(const SituationKey& s, ActionId a, double value) {
  check_action(a);
  if (!std::isfinite(value)) throw NumericError("Q-value must be finite");
  ensure_row(s).values[raw(a)] = value;
}

void QTable::set_row(const SituationKey& s, std::span<const double> values) {
  if (values.size() != n_actions_) throw CatalogError("row width does not match the catalog");
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError("Q-value must be finite");
  auto& row = ensure_row(s);
  std::copy(values.begin(), values.end(), row.values.begin());
}

void QTable::erase_row(const SituationKey& s) { rows_.erase(s); }

std::uint64_t QTable::visits(const SituationKey& s, ActionId a) const {
  check_action(a);
  auto it = rows_.find(s);
  return it == rows_.end() ? 0 : it->second.visits[raw(a)];
}

std::uint64_t QTable::row_visits(const SituationKey& s) const {
  auto it = rows_.find(s);
  if (it == rows_.end()) return 0;
  std::uint64_t total = 0;
  for (auto v : it->second.visits) total += v;
  return total;
}

void QTable::count_visit(const SituationKey& s, ActionId a) {
  check_action(a);
  ++ensure_row(s).visits[raw(a)];
}

std::vector<SituationKey> QTable::situations() const {
  std::vector<SituationKey> keys;
  keys.reserve(rows_.size());
  for (const auto& [key, row] : rows_) keys.push_back(key);
  std::sort(keys.begin(), keys.end(), [](const SituationKey& a, const SituationKey& b) {
    return context::to_string(a) < context::to_string(b);
  });
  return keys;
}

void QTable::write(std::ostream& out) const {
  for (const auto& key : situations()) {
    const std::string text = context::to_string(key);
    const auto& values = rows_.at(key).values;
    for (std::size_t a = 0; a < values.size(); ++a) out << text << '\t' << a << '\t' << format_real(values[a]) << '\n';
  }
}

QTable QTable::read(std::istream& in, std::size_t n_actions, const std::string& source) {
  QTable table(n_actions);
  for_each_record(in, [&](const std::string& line, std::size_t number) {
    auto f = split(line, '\t');
    if (f.size() != 3) throw ParseError(source, number, "expected 3 tab-separated fields");
    try {
      auto key = context::parse_situation_key(f[0]);
      auto action = parse_uint(f[1]);
      if (action >= n_actions) throw std::invalid_argument("action outside the catalog");
      double value = parse_real(f[2]);
      if (!std::isfinite(value)) throw std::invalid_argument("non-finite value");
      table.set(key, ActionId{static_cast<std::uint32_t>(action)}, value);
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, number, e.what());
    }
  });
  return table;
}

bool operator==(const QTable& a, const QTable& b) {
  if (a.n_actions_ != b.n_actions_ || a.default_value_ != b.default_value_ || a.rows_.size() != b.rows_.size())
    return false;
  for (const auto& [key, row] : a.rows_) {
    auto it = b.rows_.find(key);
    if (it == b.rows_.end() || it->second.values != row.values) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

double q_update(QTable& table, const SituationKey& s, ActionId a, double reward, const SituationKey& s_next,
                const LearningParams& params) {
  if (!std::isfinite(reward)) throw NumericError("reward is not finite");
  const double old_value = table.value(s, a);
  const double alpha = params.schedule == LearningRateSchedule::InverseVisits
                           ? 1.0 / (1.0 + static_cast<double>(table.visits(s, a)))
                           : params.alpha;
  const double target = reward + params.gamma * table.max_value(s_next);
  const double updated = old_value + alpha * (target - old_value);
  if (!std::isfinite(updated)) throw NumericError("Q-update produced a non-finite value");
  table.set(s, a, updated);
  table.count_visit(s, a);
  return updated;
}

ActionId greedy_action(const QTable& table, const SituationKey& s, const ActionCatalog& catalog) {
  const auto row = table.row(s);
  std::size_t best = 0;
  for (std::size_t a = 1; a < catalog.size(); ++a)
    if (row[a] > row[best]) best = a;
  return ActionId{static_cast<std::uint32_t>(best)};
}

std::pair<ActionId, SelectionBranch> epsilon_greedy_action(const QTable& table, const SituationKey& s,
                                                           const ActionCatalog& catalog, double p,
                                                           UniformSource& rng) {
  const double q = rng.next();
  if (q <= p) return {greedy_action(table, s, catalog), SelectionBranch::Exploit};
  return {catalog.at(rng.below(catalog.size())), SelectionBranch::Explore};
}

// ---------------------------------------------------------------------------

void FiniteMdp::validate() const {
  if (n_states == 0 || n_actions == 0) throw ParameterError("MDP needs states and actions");
  if (transition.size() != n_states || reward.size() != n_states) throw ParameterError("MDP table sizes");
  for (std::size_t s = 0; s < n_states; ++s) {
    if (transition[s].size() != n_actions || reward[s].size() != n_actions) throw ParameterError("MDP table sizes");
    for (std::size_t a = 0; a < n_actions; ++a) {
      if (transition[s][a].size() != n_states) throw ParameterError("MDP table sizes");
      double total = 0.0;
      for (double pr : transition[s][a]) {
        if (pr < 0.0) throw ParameterError("negative transition probability");
        total += pr;
      }
      if (std::abs(total - 1.0) > 1e-9) throw ParameterError("transition row does not sum to one");
      if (!std::isfinite(reward[s][a])) throw ParameterError("non-finite reward");
    }
  }
}

FiniteMdp FiniteMdp::random(std::size_t n_states, std::size_t n_actions, UniformSource& rng) {
  FiniteMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.transition.assign(n_states, std::vector<std::vector<double>>(n_actions, std::vector<double>(n_states)));
  mdp.reward.assign(n_states, std::vector<double>(n_actions));
  for (std::size_t s = 0; s < n_states; ++s) {
    for (std::size_t a = 0; a < n_actions; ++a) {
      double total = 0.0;
      for (auto& pr : mdp.transition[s][a]) {
        pr = 0.05 + rng.next();
        total += pr;
      }
      for (auto& pr : mdp.transition[s][a]) pr /= total;
      mdp.reward[s][a] = rng.next();
    }
  }
  return mdp;
}

QMatrix value_iteration(const FiniteMdp& mdp, double gamma, double tolerance) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ParameterError("value iteration needs 0 <= gamma < 1");
  if (!(tolerance > 0.0)) throw ParameterError("tolerance must be positive");
  mdp.validate();

  QMatrix q(mdp.n_states, std::vector<double>(mdp.n_actions, 0.0));
  std::vector<double> v(mdp.n_states, 0.0);
  while (true) {
    double change = 0.0;
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        double expected = 0.0;
        for (std::size_t t = 0; t < mdp.n_states; ++t) expected += mdp.transition[s][a][t] * v[t];
        const double backup = mdp.reward[s][a] + gamma * expected;
        change = std::max(change, std::abs(backup - q[s][a]));
        q[s][a] = backup;
      }
    }
    for (std::size_t s = 0; s < mdp.n_states; ++s) v[s] = *std::max_element(q[s].begin(), q[s].end());
    if (change < tolerance) return q;
  }
}

}  // namespace hyql::rl
