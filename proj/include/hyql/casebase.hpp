#pragma once

// Case-based reasoning over situations. A case pairs a problem description
// (the situation's features) with the Q-row learned there; reuse copies a
// similarity-scaled version of that row into a never-visited state.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyql/common.hpp"
#include "hyql/context.hpp"
#include "hyql/qlearning.hpp"

namespace hyql::cbr {

using context::SituationKey;

struct CaseProblem {
  context::TimeBucket time;
  /// Place lineage from the top of the hierarchy down (root excluded).
  std::vector<std::string> place_path;
  GroupId group{};
  context::CognitiveClass cognitive = context::CognitiveClass::Unknown;

  static CaseProblem from(const SituationKey& key, const context::ContextModel& model);
  friend bool operator==(const CaseProblem&, const CaseProblem&) = default;
};

/// `Morning-Weekday-Free|Paris/Office|0|Navigate`
std::string to_string(const CaseProblem& problem);
CaseProblem parse_case_problem(std::string_view text);

struct FeatureWeights {
  double time = 0.25;
  double place = 0.25;
  double group = 0.25;
  double cognitive = 0.25;

  /// Throws ParameterError unless all weights are >= 0 and sum to 1.
  void validate() const;
};

struct Outcome {
  std::uint64_t visits = 1;
  double mean_reward = 0.0;
  friend bool operator==(const Outcome&, const Outcome&) = default;
};

struct Provenance {
  UserId user{};
  std::uint64_t step = 0;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Case {
  CaseProblem problem;
  std::vector<double> solution;  // Q-row at retention time
  Outcome outcome;
  Provenance provenance;
  friend bool operator==(const Case&, const Case&) = default;
};

struct RetrievalResult {
  Case matched;
  double similarity = 0.0;
  double cost = 0.0;
};

struct CaseBaseConfig {
  FeatureWeights weights;
  double retrieval_threshold = 0.8;
  std::size_t max_size = 1000;
  std::uint64_t retain_min_visits = 5;
};

/// Weighted sum over the four features. Time and place score the fraction
/// of hierarchy levels at which they coincide; group and cognitive class
/// are exact matches. Throws SchemaError when the place paths differ in
/// length.
double case_similarity(const CaseProblem& a, const CaseProblem& b, const FeatureWeights& weights);

/// Adaptation distance, 1 - similarity. Throws RangeError outside [0, 1].
double compute_cost(double similarity);

class CaseBase {
 public:
  explicit CaseBase(CaseBaseConfig config = {});

  const CaseBaseConfig& config() const { return config_; }
  std::span<const Case> cases() const { return cases_; }
  std::size_t size() const { return cases_.size(); }
  bool empty() const { return cases_.empty(); }
  void clear() { cases_.clear(); }

  /// Most similar case at or above the threshold. Ties go to more visits,
  /// then to the earlier provenance step, then to the earlier stored case.
  std::optional<RetrievalResult> retrieve(const CaseProblem& problem) const;

  /// Stores a case. A case whose problem matches with similarity 1 is
  /// replaced in place; past max_size the case with the lowest mean reward
  /// (oldest first on ties) is evicted. Cases with fewer than
  /// retain_min_visits visits are ignored; returns whether the case was kept.
  bool retain(Case incoming);

  /// `problem<TAB>solution<TAB>visits<TAB>mean_reward<TAB>user<TAB>step`,
  /// solution as `action:value` pairs separated by ';'.
  void write(std::ostream& out) const;
  static CaseBase read(std::istream& in, CaseBaseConfig config, const std::string& source = "<casebase>");

 private:
  CaseBaseConfig config_;
  std::vector<Case> cases_;
};

/// Writes similarity * solution into the target row when the row has never
/// been visited. Returns false (and leaves the table alone) otherwise.
bool adapt(const RetrievalResult& result, const SituationKey& target, rl::QTable& table);

}  // namespace hyql::cbr
