#include "hyql/casebase.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace hyql::cbr {

CaseProblem CaseProblem::from(const SituationKey& key, const context::ContextModel& model) {
  return CaseProblem{key.time, model.place_path(key.place), key.group, key.cognitive};
}

std::string to_string(const CaseProblem& problem) {
  std::string out = context::to_string(problem.time);
  out += '|';
  for (std::size_t i = 0; i < problem.place_path.size(); ++i) {
    if (i) out += '/';
    out += problem.place_path[i];
  }
  out += '|';
  out += problem.group == kAnyGroup ? std::string("*") : std::to_string(raw(problem.group));
  out += '|';
  out += context::to_string(problem.cognitive);
  return out;
}

CaseProblem parse_case_problem(std::string_view text) {
  auto f = split(text, '|');
  if (f.size() != 4) throw std::invalid_argument("malformed case problem '" + std::string(text) + "'");
  CaseProblem problem;
  problem.time = context::parse_time_bucket(f[0]);
  for (auto part : split(f[1], '/')) {
    if (part.empty()) throw std::invalid_argument("empty place in case problem");
    problem.place_path.emplace_back(part);
  }
  problem.group = f[2] == "*" ? kAnyGroup : GroupId{static_cast<std::uint32_t>(parse_uint(f[2]))};
  problem.cognitive = context::parse_cognitive(f[3]);
  return problem;
}

void FeatureWeights::validate() const {
  for (double w : {time, place, group, cognitive})
    if (!(w >= 0.0)) throw ParameterError("feature weights must be non-negative");
  if (std::abs(time + place + group + cognitive - 1.0) > 1e-9) throw ParameterError("feature weights must sum to 1");
}

double case_similarity(const CaseProblem& a, const CaseProblem& b, const FeatureWeights& weights) {
  if (a.place_path.size() != b.place_path.size()) throw SchemaError("case problems use different place hierarchies");
  if (a == b) return 1.0;

  double time_match = 1.0;
  if (!(a.time == b.time)) {
    int levels = 0;
    for (int level = 0; level < context::kTimeLevels; ++level)
      if (context::time_matches_at(a.time, b.time, level)) ++levels;
    time_match = static_cast<double>(levels) / context::kTimeLevels;
  }

  double place_match = 1.0;
  if (a.place_path != b.place_path) {
    std::size_t levels = 0;
    for (std::size_t i = 0; i < a.place_path.size(); ++i)
      if (a.place_path[i] == b.place_path[i]) ++levels;
    place_match = static_cast<double>(levels) / static_cast<double>(a.place_path.size());
  }

  const double group_match = a.group == b.group ? 1.0 : 0.0;
  const double cognitive_match = a.cognitive == b.cognitive ? 1.0 : 0.0;

  const double sim = weights.time * time_match + weights.place * place_match + weights.group * group_match +
                     weights.cognitive * cognitive_match;
  return std::clamp(sim, 0.0, 1.0);
}

double compute_cost(double similarity) {
  if (!(similarity >= 0.0 && similarity <= 1.0)) throw RangeError("similarity outside [0, 1]");
  return 1.0 - similarity;
}

// ---------------------------------------------------------------------------

CaseBase::CaseBase(CaseBaseConfig config) : config_(config) {
  config_.weights.validate();
  if (!(config_.retrieval_threshold >= 0.0 && config_.retrieval_threshold <= 1.0))
    throw ParameterError("retrieval threshold must lie in [0, 1]");
  if (config_.max_size == 0) throw ParameterError("case base max_size must be positive");
}

std::optional<RetrievalResult> CaseBase::retrieve(const CaseProblem& problem) const {
  const Case* best = nullptr;
  double best_sim = -1.0;
  for (const auto& c : cases_) {
    const double sim = case_similarity(problem, c.problem, config_.weights);
    bool better = sim > best_sim;
    if (!better && sim == best_sim) {
      better = c.outcome.visits > best->outcome.visits ||
               (c.outcome.visits == best->outcome.visits && c.provenance.step < best->provenance.step);
    }
    if (better) {
      best = &c;
      best_sim = sim;
    }
  }
  if (!best || best_sim < config_.retrieval_threshold) return std::nullopt;
  return RetrievalResult{*best, best_sim, compute_cost(best_sim)};
}

bool CaseBase::retain(Case incoming) {
  if (incoming.outcome.visits < std::max<std::uint64_t>(1, config_.retain_min_visits)) return false;
  for (double v : incoming.solution)
    if (!std::isfinite(v)) throw NumericError("case solution must be finite");
  if (!(incoming.outcome.mean_reward >= 0.0 && incoming.outcome.mean_reward <= 1.0))
    throw RangeError("case mean reward outside [0, 1]");

  for (auto& existing : cases_) {
    if (case_similarity(existing.problem, incoming.problem, config_.weights) == 1.0) {
      existing = std::move(incoming);
      return true;
    }
  }
  cases_.push_back(std::move(incoming));
  if (cases_.size() > config_.max_size) {
    std::size_t victim = 0;
    for (std::size_t i = 1; i < cases_.size(); ++i) {
      const auto& c = cases_[i].outcome;
      const auto& v = cases_[victim].outcome;
      if (c.mean_reward < v.mean_reward ||
          (c.mean_reward == v.mean_reward && cases_[i].provenance.step < cases_[victim].provenance.step))
        victim = i;
    }
    cases_.erase(cases_.begin() + static_cast<std::ptrdiff_t>(victim));
  }
  return true;
}

void CaseBase::write(std::ostream& out) const {
  for (const auto& c : cases_) {
    out << to_string(c.problem) << '\t';
    for (std::size_t a = 0; a < c.solution.size(); ++a) {
      if (a) out << ';';
      out << a << ':' << format_real(c.solution[a]);
    }
    out << '\t' << c.outcome.visits << '\t' << format_real(c.outcome.mean_reward) << '\t' << raw(c.provenance.user)
        << '\t' << c.provenance.step << '\n';
  }
}

CaseBase CaseBase::read(std::istream& in, CaseBaseConfig config, const std::string& source) {
  CaseBase base(config);
  for_each_record(in, [&](const std::string& line, std::size_t number) {
    auto f = split(line, '\t');
    if (f.size() != 6) throw ParseError(source, number, "expected 6 tab-separated fields");
    try {
      Case c;
      c.problem = parse_case_problem(f[0]);
      for (auto pair : split(f[1], ';')) {
        auto kv = split(pair, ':');
        if (kv.size() != 2 || parse_uint(kv[0]) != c.solution.size())
          throw std::invalid_argument("solution pairs must be `index:value` in index order");
        c.solution.push_back(parse_real(kv[1]));
      }
      c.outcome.visits = parse_uint(f[2]);
      c.outcome.mean_reward = parse_real(f[3]);
      c.provenance.user = UserId{static_cast<std::uint32_t>(parse_uint(f[4]))};
      c.provenance.step = parse_uint(f[5]);
      if (c.outcome.visits == 0) throw std::invalid_argument("visits must be >= 1");
      if (!(c.outcome.mean_reward >= 0.0 && c.outcome.mean_reward <= 1.0))
        throw std::invalid_argument("mean reward outside [0, 1]");
      for (double v : c.solution)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite solution value");
      // Loaded cases bypass the visit threshold but still obey the size cap.
      base.cases_.push_back(std::move(c));
      if (base.cases_.size() > base.config_.max_size) throw std::invalid_argument("case base exceeds max_size");
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, number, e.what());
    }
  });
  return base;
}

bool adapt(const RetrievalResult& result, const SituationKey& target, rl::QTable& table) {
  if (table.row_visited(target)) return false;
  if (result.matched.solution.size() != table.n_actions()) throw CatalogError("case solution width mismatch");
  std::vector<double> row(result.matched.solution.size());
  for (std::size_t a = 0; a < row.size(); ++a) row[a] = result.similarity * result.matched.solution[a];
  table.set_row(target, row);
  return true;
}

}  // namespace hyql::cbr
