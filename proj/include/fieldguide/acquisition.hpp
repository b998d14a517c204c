#pragma once

#include "fieldguide/dataset.hpp"
#include "fieldguide/learner.hpp"

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace fieldguide {

/// Acquisition strategy for choosing the next attribute group.
struct Strategy {
  enum class Kind {
    sibling_variance,
    representation_change,
    image_based,
    random,
    fixed_order,
    global_variance,
  };

  Kind kind = Kind::sibling_variance;
  std::uint64_t seed = 0;          // random only
  std::vector<std::size_t> order;  // fixed_order only

  static Strategy sibling_variance() { return {Kind::sibling_variance, 0, {}}; }
  static Strategy representation_change() { return {Kind::representation_change, 0, {}}; }
  static Strategy image_based() { return {Kind::image_based, 0, {}}; }
  static Strategy global_variance() { return {Kind::global_variance, 0, {}}; }
  static Strategy random(std::uint64_t seed) { return {Kind::random, seed, {}}; }
  static Strategy fixed_order(std::vector<std::size_t> order) { return {Kind::fixed_order, 0, std::move(order)}; }

  /// Accepts the canonical names; "random:SEED" and "fixed_order:3/0/1".
  static Strategy parse(const std::string& text);
  std::string name() const;

  /// fixed_order must list every group id exactly once.
  void validate(std::size_t group_count) const;
  bool needs_exemplar() const { return kind == Kind::image_based; }

  bool operator==(const Strategy&) const = default;
};

using ScoreVector = std::vector<double>;
using GroupSet = std::set<std::size_t>;

/// Population variance of each attribute over the given classes.
Vector attribute_variance(const Dataset& ds, const std::vector<std::string>& class_ids);

/// Group score = max of its members' attribute scores.
ScoreVector group_max(const AttributeSchema& schema, const Vector& attribute_scores);

/// Variance among the taxonomy siblings of `similar_id`. Falls back to
/// global_variance_scores when the similar class has no siblings.
ScoreVector sibling_variance_scores(const Dataset& ds, const std::string& similar_id);

/// Same, looking up the novel class's similar class in ds.similar.
ScoreVector sibling_variance_scores_for(const Dataset& ds, const std::string& novel_id);

/// Variance over all base classes.
ScoreVector global_variance_scores(const Dataset& ds);

/// Per-attribute L2 norms of the attribute-encoder Jacobian columns at a_prime.
Vector representation_change_attribute_scores(const EmbeddingModel& model, const Vector& a_prime);
ScoreVector representation_change_scores(const EmbeddingModel& model, const Vector& a_prime,
                                         const AttributeSchema& schema);

/// Inverse latent distance between the exemplar's encoding and the encoding
/// of a_prime with one group swapped for the exemplar's decoded attributes.
/// Queried groups score -inf; a zero distance scores +inf.
ScoreVector image_based_scores(const EmbeddingModel& model, const Vector& a_prime, const Vector& exemplar,
                               const AttributeSchema& schema, const GroupSet& queried);

/// Highest-scoring unqueried group, ties to the lowest id.
std::size_t argmax_unqueried(const ScoreVector& scores, const GroupSet& queried);

/// Picks the next group under `strategy`. `scores` is ignored by random and
/// fixed_order; `draw_key` makes random draws a pure function of the caller's
/// context (e.g. class and round). Throws Error(budget_exhausted) when every
/// group has been queried.
std::size_t next_query(const Strategy& strategy, const ScoreVector& scores, const GroupSet& queried,
                       std::size_t group_count, std::uint64_t draw_key = 0);

}  // namespace fieldguide
