#include "hyql/simenv.hpp"

#include <algorithm>
#include <cmath>

namespace hyql::sim {

using context::CalendarState;
using context::CognitiveClass;
using context::DayClass;
using context::PartOfDay;
using context::TimeBucket;

namespace {

// Monday 2024-01-01 00:00 on the simulated clock.
constexpr std::int64_t kEpochMonday = 1704067200;
constexpr std::int64_t kDay = 86400;
constexpr std::int64_t kMeetingHalfSpan = 1800;

enum : std::uint64_t { kTagPrototype = 1, kTagPersonal = 2, kTagDrift = 3, kTagEvents = 4, kTagRewards = 5 };

struct HourSpan {
  int begin;
  int end;
};

HourSpan hours_of(PartOfDay part) {
  switch (part) {
    case PartOfDay::Morning: return {6, 12};
    case PartOfDay::Afternoon: return {12, 18};
    case PartOfDay::Evening: return {18, 23};
    case PartOfDay::Night: return {0, 6};
  }
  return {0, 6};
}

bool same_situation(const SituationKey& a, const SituationKey& b) {
  return a.time == b.time && a.place == b.place && a.cognitive == b.cognitive;
}

}  // namespace

std::string to_string(DriftKind kind) { return kind == DriftKind::SwapTopItems ? "SwapTopItems" : "ResampleRow"; }

DriftKind parse_drift_kind(std::string_view text) {
  if (text == "SwapTopItems") return DriftKind::SwapTopItems;
  if (text == "ResampleRow") return DriftKind::ResampleRow;
  throw std::invalid_argument("unknown drift op '" + std::string(text) + "'");
}

std::vector<RoutineEntry> WorldConfig::canonical_routine() {
  const auto tb = [](PartOfDay p, DayClass d, CalendarState c) { return TimeBucket{p, d, c}; };
  return {
      {tb(PartOfDay::Morning, DayClass::Weekday, CalendarState::Free), "Office", CognitiveClass::Navigate, 0.25},
      {tb(PartOfDay::Morning, DayClass::Weekday, CalendarState::InMeeting), "ClientSite", CognitiveClass::Call, 0.15},
      {tb(PartOfDay::Afternoon, DayClass::Weekday, CalendarState::Free), "Office", CognitiveClass::SendEmail, 0.20},
      {tb(PartOfDay::Afternoon, DayClass::Weekday, CalendarState::InMeeting), "ClientSite", CognitiveClass::Navigate,
       0.15},
      {tb(PartOfDay::Evening, DayClass::Weekday, CalendarState::Free), "Home", CognitiveClass::OpenFolder, 0.10},
      {tb(PartOfDay::Morning, DayClass::Weekend, CalendarState::Free), "Home", CognitiveClass::Navigate, 0.15},
  };
}

void WorldConfig::validate() const {
  if (n_users < 1) throw ParameterError("n_users must be at least 1");
  if (n_groups < 1) throw ParameterError("n_groups must be at least 1");
  if (n_items < 1) throw ParameterError("n_items must be at least 1");
  if (!(affinity >= 0.0 && affinity <= 1.0)) throw ParameterError("affinity must lie in [0, 1]");
  if (!(relevance_shape > 0.0 && std::isfinite(relevance_shape))) throw ParameterError("relevance_shape must be > 0");
  if (day_length < 1) throw ParameterError("day_length must be at least 1");
  if (routine.empty()) throw ConfigError("routine is empty");
  double total = 0.0;
  for (const auto& e : routine) {
    if (!(e.weight >= 0.0)) throw ConfigError("routine weights must be non-negative");
    total += e.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("routine weights must sum to 1");
  for (std::size_t i = 0; i < routine.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (routine[i].time == routine[j].time && routine[i].place == routine[j].place &&
          routine[i].cognitive == routine[j].cognitive)
        throw ConfigError("routine lists the same situation twice");
  for (const auto& op : drift) {
    if (op.target == DriftOp::Target::Group && op.target_id >= n_groups)
      throw ConfigError("drift targets unknown group " + std::to_string(op.target_id));
    if (op.target == DriftOp::Target::User && op.target_id >= n_users)
      throw ConfigError("drift targets unknown user " + std::to_string(op.target_id));
  }
}

// ---------------------------------------------------------------------------

WorldModel::WorldModel(const WorldConfig& config, std::shared_ptr<const context::ContextModel> model)
    : config_(config),
      model_(std::move(model)),
      catalog_(rl::ActionCatalog::numbered(std::max<std::size_t>(config.n_items, 1))),
      drift_applied_(config.drift.size(), false),
      drift_rng_(derive_seed(config.seed, {kTagDrift})) {
  config_.validate();
  if (!model_) throw ParameterError("world needs a context model");
  const auto& gaz = model_->gazetteer();
  for (const auto& e : config_.routine) {
    auto idx = gaz.find(e.place);
    if (!idx) throw ConfigError("routine place '" + e.place + "' is not in the gazetteer");
    const auto& node = gaz.node(*idx);
    if (!node.leaf) throw ConfigError("routine place '" + e.place + "' must be a leaf of the gazetteer");
    if (!node.region && !node.centroid) throw ConfigError("routine place '" + e.place + "' has no coordinates");
  }

  const std::size_t n_sit = config_.routine.size();
  Rng proto_rng(derive_seed(config_.seed, {kTagPrototype}));
  prototypes_.assign(config_.n_groups, {});
  for (auto& group : prototypes_)
    for (std::size_t s = 0; s < n_sit; ++s) group.push_back(draw_row(proto_rng));

  Rng personal_rng(derive_seed(config_.seed, {kTagPersonal}));
  for (std::size_t u = 0; u < config_.n_users; ++u) {
    UserProfile profile{UserId{static_cast<std::uint32_t>(u)}, GroupId{static_cast<std::uint32_t>(u % config_.n_groups)},
                        config_.affinity, config_.routine};
    std::vector<std::vector<double>> rows;
    for (std::size_t s = 0; s < n_sit; ++s)
      rows.push_back(mix(config_.affinity, prototypes_[raw(profile.group)][s], draw_row(personal_rng)));
    users_.push_back(std::move(profile));
    relevance_.push_back(std::move(rows));
  }
}

std::vector<double> WorldModel::draw_row(UniformSource& rng) const {
  std::vector<double> row(config_.n_items);
  for (auto& v : row) v = std::pow(rng.next(), config_.relevance_shape);
  return row;
}

std::vector<double> WorldModel::mix(double affinity, const std::vector<double>& proto,
                                    const std::vector<double>& personal) const {
  std::vector<double> row(proto.size());
  for (std::size_t i = 0; i < row.size(); ++i)
    row[i] = std::clamp(affinity * proto[i] + (1.0 - affinity) * personal[i], 0.0, 1.0);
  return row;
}

const UserProfile& WorldModel::user(UserId id) const {
  if (raw(id) >= users_.size()) throw ParameterError("unknown user " + std::to_string(raw(id)));
  return users_[raw(id)];
}

SituationKey WorldModel::situation_key(UserId id, std::size_t index) const {
  const auto& e = config_.routine.at(index);
  return SituationKey{e.time, e.place, user(id).group, e.cognitive, 0};
}

std::optional<std::size_t> WorldModel::situation_index(UserId id, const SituationKey& key) const {
  if (key.level != 0 || key.group != user(id).group) return std::nullopt;
  for (std::size_t i = 0; i < config_.routine.size(); ++i)
    if (same_situation(situation_key(id, i), key)) return i;
  return std::nullopt;
}

const std::vector<double>& WorldModel::relevance(UserId id, const SituationKey& key) const {
  auto index = situation_index(id, key);
  if (!index)
    throw CoverageError("no relevance for user " + std::to_string(raw(id)) + " in " + context::to_string(key));
  return relevance_[raw(id)][*index];
}

const std::vector<double>& WorldModel::relevance_at(UserId id, std::size_t index) const {
  user(id);
  return relevance_[raw(id)].at(index);
}

const std::vector<double>& WorldModel::prototype(GroupId group, std::size_t index) const {
  return prototypes_.at(raw(group)).at(index);
}

void WorldModel::set_relevance(UserId id, std::size_t index, std::vector<double> row) {
  user(id);
  if (row.size() != config_.n_items) throw CatalogError("relevance row width mismatch");
  for (double v : row)
    if (!(v >= 0.0 && v <= 1.0)) throw RangeError("relevance outside [0, 1]");
  relevance_[raw(id)].at(index) = std::move(row);
}

double WorldModel::optimal_expected_reward(UserId id) const {
  const auto& profile = user(id);
  double total = 0.0;
  for (std::size_t s = 0; s < profile.routine.size(); ++s) {
    const auto& row = relevance_[raw(id)][s];
    total += profile.routine[s].weight * *std::max_element(row.begin(), row.end());
  }
  return total;
}

bool WorldModel::in_scope(const DriftOp& op, std::size_t index) const {
  if (!op.scope) return true;
  const auto& e = config_.routine[index];
  return e.time == op.scope->time && e.place == op.scope->place && e.cognitive == op.scope->cognitive;
}

std::size_t WorldModel::apply_drift(std::uint64_t step) {
  std::size_t applied = 0;
  for (std::size_t k = 0; k < config_.drift.size(); ++k) {
    const auto& op = config_.drift[k];
    if (drift_applied_[k] || op.step > step) continue;
    drift_applied_[k] = true;
    ++applied;

    std::vector<std::size_t> targets;
    for (std::size_t u = 0; u < users_.size(); ++u) {
      if (op.target == DriftOp::Target::User ? u == op.target_id : raw(users_[u].group) == op.target_id)
        targets.push_back(u);
    }
    for (std::size_t s = 0; s < config_.routine.size(); ++s) {
      if (!in_scope(op, s)) continue;
      if (op.kind == DriftKind::SwapTopItems) {
        for (auto u : targets) {
          auto& row = relevance_[u][s];
          auto best = std::max_element(row.begin(), row.end());
          auto worst = std::min_element(row.begin(), row.end());
          std::iter_swap(best, worst);
        }
      } else {
        if (op.target == DriftOp::Target::Group) prototypes_[op.target_id][s] = draw_row(drift_rng_);
        for (auto u : targets) {
          const auto proto = op.target == DriftOp::Target::Group ? prototypes_[op.target_id][s] : draw_row(drift_rng_);
          relevance_[u][s] = mix(users_[u].group_affinity, proto, draw_row(drift_rng_));
        }
      }
    }
  }
  return applied;
}

WorldModel build_population(const WorldConfig& config) {
  return WorldModel(config, std::make_shared<const context::ContextModel>(context::Gazetteer::canonical()));
}

// ---------------------------------------------------------------------------

GeneratedEvent gen_event(const WorldModel& world, UserId id, std::uint64_t step, UniformSource& rng) {
  const auto& profile = world.user(id);
  const double u = rng.next();
  std::size_t pick = profile.routine.size() - 1;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < profile.routine.size(); ++i) {
    cumulative += profile.routine[i].weight;
    if (u < cumulative) {
      pick = i;
      break;
    }
  }
  const auto& entry = profile.routine[pick];

  const std::uint64_t day = step / world.day_length();
  const std::uint64_t slot = step % world.day_length();
  const std::int64_t weekday = entry.time.day_class == DayClass::Weekday ? static_cast<std::int64_t>(rng.below(5))
                                                                          : 5 + static_cast<std::int64_t>(rng.below(2));
  const std::int64_t midnight = kEpochMonday + static_cast<std::int64_t>(day) * 7 * kDay + weekday * kDay;
  const auto span = hours_of(entry.time.part_of_day);
  const std::int64_t span_seconds = (span.end - span.begin) * 3600;
  const double position = (static_cast<double>(slot) + rng.next()) / static_cast<double>(world.day_length());
  const std::int64_t offset =
      std::min<std::int64_t>(static_cast<std::int64_t>(position * static_cast<double>(span_seconds)), span_seconds - 1);

  context::RawEvent event;
  event.user = id;
  event.timestamp = midnight + span.begin * 3600 + offset;

  const auto& node = world.model()->gazetteer().node(world.model()->gazetteer().index_of(entry.place));
  if (node.region) {
    const auto& r = *node.region;
    event.geo = context::GeoPoint{r.lat_min + (0.1 + 0.8 * rng.next()) * (r.lat_max - r.lat_min),
                                  r.lon_min + (0.1 + 0.8 * rng.next()) * (r.lon_max - r.lon_min)};
  } else {
    event.geo = *node.centroid;
  }
  if (entry.cognitive != CognitiveClass::Unknown) event.cognitive = context::CognitiveAction{entry.cognitive, {}};
  if (entry.time.calendar_state == CalendarState::InMeeting)
    event.calendar =
        context::CalendarEntry{"meeting", event.timestamp - kMeetingHalfSpan, event.timestamp + kMeetingHalfSpan};
  return GeneratedEvent{std::move(event), pick};
}

double reward(const WorldModel& world, UserId user, const SituationKey& s, ActionId a, UniformSource& rng) {
  const auto& row = world.relevance(user, s);
  if (raw(a) >= row.size()) throw CatalogError("item " + std::to_string(raw(a)) + " outside the catalog");
  return rng.next() < row[raw(a)] ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------

Simulator::Simulator(WorldModel world, std::uint64_t stream_seed)
    : world_(std::move(world)), stream_seed_(stream_seed) {}

Simulator::Stream& Simulator::stream(UserId user) {
  auto it = streams_.find(user);
  if (it == streams_.end()) {
    world_.user(user);
    it = streams_
             .emplace(user, Stream{Rng(derive_seed(stream_seed_, {kTagEvents, raw(user)})),
                                   Rng(derive_seed(stream_seed_, {kTagRewards, raw(user)})), std::nullopt, 0})
             .first;
  }
  return it->second;
}

GeneratedEvent& Simulator::pending(UserId user, std::uint64_t step) {
  auto& s = stream(user);
  if (!s.pending || s.pending_step != step) {
    s.pending = gen_event(world_, user, step, s.events);
    s.pending_step = step;
  }
  return *s.pending;
}

context::RawEvent Simulator::observe(UserId user, std::uint64_t step) { return pending(user, step).event; }

std::size_t Simulator::current_situation(UserId user) {
  auto& s = stream(user);
  return pending(user, s.pending ? s.pending_step : 0).situation;
}

agent::StepOutcome Simulator::execute(UserId user, std::uint64_t step, ActionId action) {
  if (!world_.catalog().contains(action))
    throw EnvironmentRefusal("item " + std::to_string(raw(action)) + " is not in the catalog");
  world_.apply_drift(step);
  const auto current = pending(user, step).situation;
  auto& s = stream(user);
  const double r = reward(world_, user, world_.situation_key(user, current), action, s.rewards);
  s.pending = gen_event(world_, user, step + 1, s.events);
  s.pending_step = step + 1;
  return agent::StepOutcome{r, s.pending->event};
}

}  // namespace hyql::sim
