#pragma once

// Memory-based collaborative filtering over implicit 0/1 ratings.
//
// Transactions are tagged with the situation in which they happened, and the
// store keeps one user x item rating matrix per situation scope (the
// situation at every granularity level) plus an unscoped matrix. Advice for
// a state is the top prediction from the most specific scope that yields one.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "hyql/common.hpp"
#include "hyql/context.hpp"
#include "hyql/qlearning.hpp"

namespace hyql::cf {

using context::SituationKey;

struct Transaction {
  UserId user{};
  SituationKey situation;  // level-0 key where the feedback happened
  ActionId item{};
  double rating = 0.0;
  std::uint64_t step = 0;
  friend bool operator==(const Transaction&, const Transaction&) = default;
};

/// Dense users x items ratings; missing items read as 0.
class RatingMatrix {
 public:
  explicit RatingMatrix(std::size_t n_items) : n_items_(n_items) {}

  std::size_t n_items() const { return n_items_; }
  void set(UserId user, ActionId item, double rating);
  /// nullptr when the user has no rating in this matrix.
  const std::vector<double>* row(UserId user) const;
  double rating(UserId user, ActionId item) const;
  const std::map<UserId, std::vector<double>>& rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }

 private:
  std::size_t n_items_;
  std::map<UserId, std::vector<double>> rows_;
};

/// dot(u, v) / (|u| |v|); 0 when either norm is 0.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct Neighbor {
  UserId user{};
  double similarity = 0.0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// The k other users with similarity > 0, most similar first, ties by id.
std::vector<Neighbor> neighbors(const RatingMatrix& ratings, UserId target, std::size_t k);

struct Prediction {
  ActionId item{};
  double score = 0.0;
  std::size_t support = 0;  // contributing neighbours
  friend bool operator==(const Prediction&, const Prediction&) = default;
};

/// Similarity-weighted mean of the neighbours' ratings of `item`.
std::optional<Prediction> predict_rating(const RatingMatrix& ratings, UserId target, ActionId item, std::size_t k);

/// Predictions for every item (minus the target's positive ones when
/// `exclude_rated`), best first, ties by item index, at most n.
std::vector<Prediction> top_n(const RatingMatrix& ratings, UserId target, std::size_t n, bool exclude_rated,
                              std::size_t k);

/// Which users' transactions are visible to advice.
enum class AdviceScope : std::uint8_t { SocialGroup, Population };

/// Append-only transaction log with materialised rating matrices.
class TransactionStore {
 public:
  explicit TransactionStore(std::size_t n_items, AdviceScope scope = AdviceScope::SocialGroup);

  std::size_t n_items() const { return n_items_; }
  AdviceScope scope() const { return scope_; }

  /// Appends a transaction with rating 1 (positive) or 0. `situations` is the
  /// granularity chain of the state, most specific first. Throws
  /// CatalogError for an item outside the catalog.
  void record_implicit(UserId user, ActionId item, bool positive, std::span<const SituationKey> situations,
                       std::uint64_t step);
  void record(const Transaction& tx, std::span<const SituationKey> situations);

  std::span<const Transaction> transactions() const { return log_; }
  const RatingMatrix& global_view() const { return global_; }
  /// Ratings recorded under `situation` (any level), or nullptr.
  const RatingMatrix* view(const SituationKey& situation) const;

  /// Log file: `user_id,situation_key,item,rating,step` per line.
  void write_log(std::ostream& out) const;
  /// `expand` maps a level-0 situation to its granularity chain.
  static TransactionStore read_log(std::istream& in, std::size_t n_items, AdviceScope scope,
                                   const std::function<std::vector<SituationKey>(const SituationKey&)>& expand,
                                   const std::string& source = "<transactions>");

 private:
  SituationKey scope_key(const SituationKey& key) const;

  std::size_t n_items_;
  AdviceScope scope_;
  std::vector<Transaction> log_;
  RatingMatrix global_;
  std::unordered_map<SituationKey, RatingMatrix, context::SituationKeyHash> views_;
};

struct AdviceSettings {
  std::size_t neighborhood = 10;
  /// When no similarity-based prediction exists at any level, fall back to
  /// the unweighted mean rating of the other users in scope.
  bool popularity_fallback = true;
};

/// The advised action for `target` in a state given by its granularity chain
/// (most specific first), or none. Only items with a positive predicted score
/// are advised.
std::optional<ActionId> advise_action(const TransactionStore& store, UserId target,
                                      std::span<const SituationKey> situations, const rl::ActionCatalog& catalog,
                                      const AdviceSettings& settings = {});

/// Implicit feedback mapping for a scalar reward.
inline bool implicit_positive(double reward) { return reward >= 0.5; }

}  // namespace hyql::cf
