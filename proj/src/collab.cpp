#include "hyql/collab.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace hyql::cf {

void RatingMatrix::set(UserId user, ActionId item, double rating) {
  if (raw(item) >= n_items_) throw CatalogError("item " + std::to_string(raw(item)) + " outside the catalog");
  auto it = rows_.find(user);
  if (it == rows_.end()) it = rows_.emplace(user, std::vector<double>(n_items_, 0.0)).first;
  it->second[raw(item)] = rating;
}

const std::vector<double>* RatingMatrix::row(UserId user) const {
  auto it = rows_.find(user);
  return it == rows_.end() ? nullptr : &it->second;
}

double RatingMatrix::rating(UserId user, ActionId item) const {
  const auto* r = row(user);
  return r ? r->at(raw(item)) : 0.0;
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw SchemaError("rating vectors differ in length");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

std::vector<Neighbor> neighbors(const RatingMatrix& ratings, UserId target, std::size_t k) {
  std::vector<Neighbor> out;
  const auto* mine = ratings.row(target);
  if (k == 0 || mine == nullptr) return out;
  for (const auto& [user, row] : ratings.rows()) {
    if (user == target) continue;
    const double sim = cosine_similarity(*mine, row);
    if (sim > 0.0) out.push_back({user, sim});
  }
  std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return raw(a.user) < raw(b.user);
  });
  if (out.size() > k) out.resize(k);
  return out;
}

namespace {

std::optional<Prediction> weighted_mean(const RatingMatrix& ratings, std::span<const Neighbor> hood, ActionId item) {
  if (hood.empty()) return std::nullopt;
  double num = 0.0, den = 0.0;
  for (const auto& n : hood) {
    num += n.similarity * ratings.rating(n.user, item);
    den += n.similarity;
  }
  return Prediction{item, num / den, hood.size()};
}

void sort_predictions(std::vector<Prediction>& predictions) {
  std::sort(predictions.begin(), predictions.end(), [](const Prediction& a, const Prediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return raw(a.item) < raw(b.item);
  });
}

/// Unweighted mean rating of every other user present in the matrix.
std::optional<ActionId> most_popular(const RatingMatrix& ratings, UserId target) {
  std::vector<double> totals(ratings.n_items(), 0.0);
  std::size_t users = 0;
  for (const auto& [user, row] : ratings.rows()) {
    if (user == target) continue;
    ++users;
    for (std::size_t i = 0; i < row.size(); ++i) totals[i] += row[i];
  }
  if (users == 0) return std::nullopt;
  auto best = std::max_element(totals.begin(), totals.end());  // first maximum = lowest index
  if (*best <= 0.0) return std::nullopt;
  return ActionId{static_cast<std::uint32_t>(best - totals.begin())};
}

}  // namespace

std::optional<Prediction> predict_rating(const RatingMatrix& ratings, UserId target, ActionId item, std::size_t k) {
  if (raw(item) >= ratings.n_items()) throw CatalogError("item outside the catalog");
  const auto hood = neighbors(ratings, target, k);
  return weighted_mean(ratings, hood, item);
}

std::vector<Prediction> top_n(const RatingMatrix& ratings, UserId target, std::size_t n, bool exclude_rated,
                              std::size_t k) {
  std::vector<Prediction> out;
  if (n == 0) return out;
  const auto hood = neighbors(ratings, target, k);
  if (hood.empty()) return out;
  const auto* mine = ratings.row(target);
  for (std::size_t i = 0; i < ratings.n_items(); ++i) {
    if (exclude_rated && mine && (*mine)[i] > 0.0) continue;
    out.push_back(*weighted_mean(ratings, hood, ActionId{static_cast<std::uint32_t>(i)}));
  }
  sort_predictions(out);
  if (out.size() > n) out.resize(n);
  return out;
}

// ---------------------------------------------------------------------------

TransactionStore::TransactionStore(std::size_t n_items, AdviceScope scope)
    : n_items_(n_items), scope_(scope), global_(n_items) {
  if (n_items == 0) throw CatalogError("transaction store needs a non-empty catalog");
}

SituationKey TransactionStore::scope_key(const SituationKey& key) const {
  if (scope_ == AdviceScope::SocialGroup) return key;
  SituationKey pooled = key;
  pooled.group = kAnyGroup;
  return pooled;
}

void TransactionStore::record_implicit(UserId user, ActionId item, bool positive,
                                       std::span<const SituationKey> situations, std::uint64_t step) {
  if (situations.empty()) throw ParameterError("transaction needs a situation");
  record(Transaction{user, situations.front(), item, positive ? 1.0 : 0.0, step}, situations);
}

void TransactionStore::record(const Transaction& tx, std::span<const SituationKey> situations) {
  if (raw(tx.item) >= n_items_) throw CatalogError("item " + std::to_string(raw(tx.item)) + " outside the catalog");
  if (!(tx.rating >= 0.0 && tx.rating <= 1.0)) throw RangeError("rating outside [0, 1]");
  if (situations.empty() || !(situations.front() == tx.situation))
    throw ParameterError("situation chain must start with the transaction's situation");
  log_.push_back(tx);
  global_.set(tx.user, tx.item, tx.rating);
  for (const auto& key : situations) {
    auto scoped = scope_key(key);
    auto it = views_.find(scoped);
    if (it == views_.end()) it = views_.emplace(std::move(scoped), RatingMatrix(n_items_)).first;
    it->second.set(tx.user, tx.item, tx.rating);
  }
}

const RatingMatrix* TransactionStore::view(const SituationKey& situation) const {
  auto it = views_.find(scope_key(situation));
  return it == views_.end() ? nullptr : &it->second;
}

void TransactionStore::write_log(std::ostream& out) const {
  for (const auto& tx : log_)
    out << raw(tx.user) << ',' << context::to_string(tx.situation) << ',' << raw(tx.item) << ','
        << format_real(tx.rating) << ',' << tx.step << '\n';
}

TransactionStore TransactionStore::read_log(
    std::istream& in, std::size_t n_items, AdviceScope scope,
    const std::function<std::vector<SituationKey>(const SituationKey&)>& expand, const std::string& source) {
  TransactionStore store(n_items, scope);
  for_each_record(in, [&](const std::string& line, std::size_t number) {
    auto f = split(line, ',');
    if (f.size() != 5) throw ParseError(source, number, "expected 5 comma-separated fields");
    try {
      Transaction tx;
      tx.user = UserId{static_cast<std::uint32_t>(parse_uint(f[0]))};
      tx.situation = context::parse_situation_key(f[1]);
      tx.item = ActionId{static_cast<std::uint32_t>(parse_uint(f[2]))};
      tx.rating = parse_real(f[3]);
      tx.step = parse_uint(f[4]);
      store.record(tx, expand(tx.situation));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source, number, e.what());
    } catch (const Error& e) {
      throw ParseError(source, number, e.what());
    }
  });
  return store;
}

// ---------------------------------------------------------------------------

std::optional<ActionId> advise_action(const TransactionStore& store, UserId target,
                                      std::span<const SituationKey> situations, const rl::ActionCatalog& catalog,
                                      const AdviceSettings& settings) {
  if (catalog.size() != store.n_items()) throw CatalogError("catalog and transaction store disagree on size");
  for (const auto& key : situations) {
    const auto* view = store.view(key);
    if (!view) continue;
    auto best = top_n(*view, target, 1, false, settings.neighborhood);
    if (!best.empty() && best.front().score > 0.0) return best.front().item;
  }
  if (!settings.popularity_fallback) return std::nullopt;
  for (const auto& key : situations) {
    const auto* view = store.view(key);
    if (!view) continue;
    if (auto item = most_popular(*view, target)) return item;
  }
  return std::nullopt;
}

}  // namespace hyql::cf
