#include "hyql/agent.hpp"

#include <array>
#include <iostream>
#include <ostream>

namespace hyql::agent {

namespace {
constexpr std::array<std::string_view, 5> kVariantNames{"GreedyQ", "EpsilonGreedyQ", "CFOnly", "CBRQ", "HyQL"};
constexpr std::array<std::string_view, 4> kBranchNames{"Exploit", "Advise", "RandomFallback", "CaseBootstrapped"};
}  // namespace

std::string to_string(Variant v) { return std::string(kVariantNames.at(static_cast<std::size_t>(v))); }
std::string to_string(Branch b) { return std::string(kBranchNames.at(static_cast<std::size_t>(b))); }

Variant parse_variant(std::string_view text) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i)
    if (kVariantNames[i] == text) return static_cast<Variant>(i);
  throw std::invalid_argument("unknown agent variant '" + std::string(text) + "'");
}

Branch parse_branch(std::string_view text) {
  for (std::size_t i = 0; i < kBranchNames.size(); ++i)
    if (kBranchNames[i] == text) return static_cast<Branch>(i);
  throw std::invalid_argument("unknown branch '" + std::string(text) + "'");
}

void AgentConfig::validate() const {
  params.validate();
  if (episode_length < 1) throw ParameterError("episode_length must be at least 1");
  casebase.weights.validate();
}

StepError::StepError(std::uint64_t step, const std::string& what)
    : Error("step " + std::to_string(step) + ": " + what), step_(step) {}

// ---------------------------------------------------------------------------
// Trace files

void write_trace(std::ostream& out, std::span<const StepRecord> trace) {
  out << "# step,situation_key,action,branch,reward,next_situation_key\n";
  for (const auto& r : trace)
    out << r.step << ',' << context::to_string(r.s) << ',' << raw(r.a) << ',' << to_string(r.branch) << ','
        << format_real(r.reward) << ',' << context::to_string(r.s_next) << '\n';
}

std::vector<StepRecord> read_trace(std::istream& in, const std::string& source) {
  std::vector<StepRecord> trace;
  for_each_record(in, [&](const std::string& line, std::size_t number) {
    auto f = split(line, ',');
    if (f.size() != 6) throw ParseError(source, number, "expected 6 comma-separated fields");
    try {
      StepRecord r;
      r.step = parse_uint(f[0]);
      r.s = context::parse_situation_key(f[1]);
      r.a = ActionId{static_cast<std::uint32_t>(parse_uint(f[2]))};
      r.branch = parse_branch(f[3]);
      r.reward = parse_real(f[4]);
      r.s_next = context::parse_situation_key(f[5]);
      trace.push_back(std::move(r));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, number, e.what());
    }
  });
  return trace;
}

// ---------------------------------------------------------------------------

std::pair<ActionId, Branch> hybrid_policy(const rl::QTable& table, std::span<const SituationKey> situations,
                                          UserId user, const rl::ActionCatalog& catalog, double p,
                                          const cf::TransactionStore& store, UniformSource& rng,
                                          const cf::AdviceSettings& advice) {
  if (situations.empty()) throw ParameterError("hybrid policy needs a situation");
  const double q = rng.next();
  if (q <= p) return {rl::greedy_action(table, situations.front(), catalog), Branch::Exploit};
  if (auto advised = cf::advise_action(store, user, situations, catalog, advice)) return {*advised, Branch::Advise};
  return {catalog.at(rng.below(catalog.size())), Branch::RandomFallback};
}

Agent::Agent(AgentConfig config, UserId user, context::UserContextProfile profile,
             std::shared_ptr<const context::ContextModel> model, rl::ActionCatalog catalog,
             std::shared_ptr<cf::TransactionStore> store)
    : config_(std::move(config)),
      user_(user),
      profile_(profile),
      model_(std::move(model)),
      catalog_(std::move(catalog)),
      store_(store ? std::move(store) : std::make_shared<cf::TransactionStore>(catalog_.size())),
      table_(catalog_.size()),
      case_base_(config_.casebase),
      rng_(config_.seed) {
  config_.validate();
  if (!model_) throw ParameterError("agent needs a context model");
  if (store_->n_items() != catalog_.size()) throw CatalogError("transaction store and catalog disagree on size");
}

std::pair<ActionId, Branch> Agent::select(std::span<const SituationKey> situations) {
  const auto& s = situations.front();
  switch (config_.variant) {
    case Variant::GreedyQ:
      return {rl::greedy_action(table_, s, catalog_), Branch::Exploit};
    case Variant::EpsilonGreedyQ:
    case Variant::CBRQ: {
      auto [a, branch] = rl::epsilon_greedy_action(table_, s, catalog_, config_.params.p, rng_);
      return {a, branch == rl::SelectionBranch::Exploit ? Branch::Exploit : Branch::RandomFallback};
    }
    case Variant::CFOnly:
      if (auto advised = cf::advise_action(*store_, user_, situations, catalog_, config_.advice))
        return {*advised, Branch::Advise};
      return {catalog_.at(rng_.below(catalog_.size())), Branch::RandomFallback};
    case Variant::HyQL:
      return hybrid_policy(table_, situations, user_, catalog_, config_.params.p, *store_, rng_, config_.advice);
  }
  throw ParameterError("unknown variant");
}

std::optional<StepRecord> Agent::step(Environment& env, std::uint64_t step) {
  const auto event = env.observe(user_, step);
  const auto situations = model_->enumerate_granularities(event, profile_);
  const SituationKey& s = situations.front();

  const Rng rng_before = rng_;
  std::optional<std::vector<double>> row_before;
  bool bootstrapped = false;
  double bootstrap_cost = 0.0;
  if (uses_cases(config_.variant) && !case_base_.empty() && !table_.row_visited(s)) {
    if (auto hit = case_base_.retrieve(cbr::CaseProblem::from(s, *model_))) {
      if (table_.has_row(s)) row_before = table_.row(s);
      bootstrapped = cbr::adapt(*hit, s, table_);
      bootstrap_cost = hit->cost;
    }
  }

  const auto [action, branch] = select(situations);

  StepOutcome outcome;
  try {
    outcome = env.execute(user_, step, action);
  } catch (const EnvironmentRefusal& refusal) {
    rng_ = rng_before;
    if (bootstrapped) {
      if (row_before)
        table_.set_row(s, *row_before);
      else
        table_.erase_row(s);
    }
    ++stats_.aborted;
    std::clog << "hyql: user " << raw(user_) << " step " << step << " aborted: " << refusal.what() << '\n';
    return std::nullopt;
  }

  const SituationKey s_next = model_->aggregate(outcome.next_event, profile_, 0);
  if (uses_q(config_.variant)) rl::q_update(table_, s, action, outcome.reward, s_next, config_.params);
  store_->record_implicit(user_, action, cf::implicit_positive(outcome.reward), situations, step);

  auto& st = situation_stats_[s];
  ++st.visits;
  st.reward_sum += outcome.reward;
  ++stats_.steps;
  if (bootstrapped) {
    ++stats_.bootstraps;
    stats_.last_bootstrap_cost = bootstrap_cost;
  }

  return StepRecord{step, s, action, bootstrapped ? Branch::CaseBootstrapped : branch, outcome.reward, s_next};
}

std::vector<StepRecord> Agent::run_episode(Environment& env, std::uint64_t first_step, std::size_t length) {
  std::vector<StepRecord> trace;
  trace.reserve(length);
  for (std::size_t i = 0; i < length; ++i) {
    const std::uint64_t t = first_step + i;
    try {
      if (auto record = step(env, t)) trace.push_back(std::move(*record));
    } catch (const StepError&) {
      throw;
    } catch (const Error& e) {
      throw StepError(t, e.what());
    }
  }
  end_episode(first_step + length - 1);
  return trace;
}

std::size_t Agent::end_episode(std::uint64_t step) {
  if (!uses_cases(config_.variant)) return 0;
  std::size_t stored = 0;
  for (const auto& s : table_.situations()) {
    const std::uint64_t visits = table_.row_visits(s);
    if (visits < config_.casebase.retain_min_visits) continue;
    auto it = situation_stats_.find(s);
    if (it == situation_stats_.end() || it->second.visits == 0) continue;
    cbr::Case c{cbr::CaseProblem::from(s, *model_), table_.row(s),
                cbr::Outcome{visits, it->second.reward_sum / static_cast<double>(it->second.visits)},
                cbr::Provenance{user_, step}};
    if (case_base_.retain(std::move(c))) ++stored;
  }
  stats_.retained += stored;
  return stored;
}

void Agent::set_cf_store(std::shared_ptr<cf::TransactionStore> store) {
  if (!store || store->n_items() != catalog_.size()) throw CatalogError("transaction store and catalog disagree on size");
  store_ = std::move(store);
}

void Agent::reset(Keep keep) {
  if (!keep.qtable) {
    table_ = rl::QTable(catalog_.size());
    situation_stats_.clear();
  }
  if (!keep.casebase) case_base_.clear();
  if (!keep.cf) store_ = std::make_shared<cf::TransactionStore>(catalog_.size(), store_->scope());
  rng_.reseed(config_.seed);
  stats_ = AgentStats{};
}

}  // namespace hyql::agent
