#include "fieldguide/acquisition.hpp"

#include "fieldguide/error.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace fieldguide {

namespace {

std::uint64_t parse_uint(const std::string& s, const std::string& context) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw Error(ErrorCode::invalid_argument, "invalid strategy '" + context + "'");
  return v;
}

}  // namespace

Strategy Strategy::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string head = text.substr(0, colon);
  const std::string tail = colon == std::string::npos ? "" : text.substr(colon + 1);
  const bool has_arg = colon != std::string::npos;
  if (head == "sibling_variance" && !has_arg) return sibling_variance();
  if (head == "representation_change" && !has_arg) return representation_change();
  if (head == "image_based" && !has_arg) return image_based();
  if (head == "global_variance" && !has_arg) return global_variance();
  if (head == "random") return random(has_arg ? parse_uint(tail, text) : 0);
  if (head == "fixed_order" && has_arg) {
    std::vector<std::size_t> order;
    std::string item;
    for (char c : tail + "/") {
      if (c == '/' || c == ',') {
        order.push_back(static_cast<std::size_t>(parse_uint(item, text)));
        item.clear();
      } else {
        item.push_back(c);
      }
    }
    return fixed_order(std::move(order));
  }
  throw Error(ErrorCode::invalid_argument, "invalid strategy '" + text + "'");
}

std::string Strategy::name() const {
  switch (kind) {
    case Kind::sibling_variance: return "sibling_variance";
    case Kind::representation_change: return "representation_change";
    case Kind::image_based: return "image_based";
    case Kind::global_variance: return "global_variance";
    case Kind::random: return seed == 0 ? "random" : "random:" + std::to_string(seed);
    case Kind::fixed_order: {
      std::string s = "fixed_order:";
      for (std::size_t i = 0; i < order.size(); ++i) s += (i ? "/" : "") + std::to_string(order[i]);
      return s;
    }
  }
  return "unknown";
}

void Strategy::validate(std::size_t group_count) const {
  if (kind != Kind::fixed_order) return;
  std::vector<bool> seen(group_count, false);
  if (order.size() != group_count)
    throw Error(ErrorCode::invalid_argument, "fixed_order must be a permutation of all group ids");
  for (auto g : order) {
    if (g >= group_count || seen[g])
      throw Error(ErrorCode::invalid_argument, "fixed_order must be a permutation of all group ids");
    seen[g] = true;
  }
}

Vector attribute_variance(const Dataset& ds, const std::vector<std::string>& class_ids) {
  const auto d = static_cast<Eigen::Index>(ds.schema.dim());
  if (class_ids.empty()) return Vector::Zero(d);
  Vector mean = Vector::Zero(d);
  for (const auto& id : class_ids) mean += ds.attributes(id);
  mean /= static_cast<double>(class_ids.size());
  Vector var = Vector::Zero(d);
  for (const auto& id : class_ids) var += (ds.attributes(id) - mean).array().square().matrix();
  return var / static_cast<double>(class_ids.size());
}

ScoreVector group_max(const AttributeSchema& schema, const Vector& attribute_scores) {
  if (static_cast<std::size_t>(attribute_scores.size()) != schema.dim())
    throw Error(ErrorCode::invalid_argument, "attribute score vector has wrong length");
  ScoreVector out(schema.group_count(), -std::numeric_limits<double>::infinity());
  for (std::size_t g = 0; g < schema.group_count(); ++g)
    for (auto j : schema.members(g)) out[g] = std::max(out[g], attribute_scores[static_cast<Eigen::Index>(j)]);
  return out;
}

ScoreVector global_variance_scores(const Dataset& ds) {
  return group_max(ds.schema, attribute_variance(ds, ds.base));
}

ScoreVector sibling_variance_scores(const Dataset& ds, const std::string& similar_id) {
  if (!ds.is_base(similar_id)) throw Error(ErrorCode::invalid_argument, "similar class not in base: '" + similar_id + "'");
  const auto sibs = siblings(ds.taxonomy, ds.base, similar_id);
  if (sibs.size() < 2) return global_variance_scores(ds);
  return group_max(ds.schema, attribute_variance(ds, sibs));
}

ScoreVector sibling_variance_scores_for(const Dataset& ds, const std::string& novel_id) {
  auto it = ds.similar.find(novel_id);
  if (it == ds.similar.end()) throw Error(ErrorCode::not_found, "no similar class recorded for '" + novel_id + "'");
  return sibling_variance_scores(ds, it->second);
}

Vector representation_change_attribute_scores(const EmbeddingModel& model, const Vector& a_prime) {
  return model.attribute_jacobian(a_prime).colwise().norm().transpose();
}

ScoreVector representation_change_scores(const EmbeddingModel& model, const Vector& a_prime,
                                         const AttributeSchema& schema) {
  return group_max(schema, representation_change_attribute_scores(model, a_prime));
}

ScoreVector image_based_scores(const EmbeddingModel& model, const Vector& a_prime, const Vector& exemplar,
                               const AttributeSchema& schema, const GroupSet& queried) {
  if (static_cast<std::size_t>(a_prime.size()) != schema.dim())
    throw Error(ErrorCode::invalid_argument, "imputed vector has wrong length");
  const Vector target = model.encode_image(exemplar);
  const Vector recognized = model.decode_attributes(target);
  ScoreVector out(schema.group_count(), -std::numeric_limits<double>::infinity());
  for (std::size_t g = 0; g < schema.group_count(); ++g) {
    if (queried.count(g)) continue;
    Vector hypothetical = a_prime;
    for (auto j : schema.members(g)) hypothetical[static_cast<Eigen::Index>(j)] = recognized[static_cast<Eigen::Index>(j)];
    const double dist = (model.encode_attributes(hypothetical) - target).norm();
    out[g] = dist == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / dist;
  }
  return out;
}

std::size_t argmax_unqueried(const ScoreVector& scores, const GroupSet& queried) {
  std::size_t best = scores.size();
  for (std::size_t g = 0; g < scores.size(); ++g) {
    if (queried.count(g)) continue;
    if (best == scores.size() || scores[g] > scores[best]) best = g;
  }
  if (best == scores.size()) throw Error(ErrorCode::budget_exhausted, "budget exhausted: every group has been queried");
  return best;
}

std::size_t next_query(const Strategy& strategy, const ScoreVector& scores, const GroupSet& queried,
                       std::size_t group_count, std::uint64_t draw_key) {
  if (queried.size() >= group_count) throw Error(ErrorCode::budget_exhausted, "budget exhausted: every group has been queried");
  switch (strategy.kind) {
    case Strategy::Kind::random: {
      std::vector<std::size_t> open;
      for (std::size_t g = 0; g < group_count; ++g)
        if (!queried.count(g)) open.push_back(g);
      std::mt19937_64 rng(mix_seed(strategy.seed, draw_key));
      std::uniform_int_distribution<std::size_t> pick(0, open.size() - 1);
      return open[pick(rng)];
    }
    case Strategy::Kind::fixed_order:
      for (auto g : strategy.order)
        if (!queried.count(g)) return g;
      throw Error(ErrorCode::budget_exhausted, "budget exhausted: fixed order has no unqueried group");
    default:
      if (scores.size() != group_count) throw Error(ErrorCode::invalid_argument, "score vector has wrong length");
      return argmax_unqueried(scores, queried);
  }
}

}  // namespace fieldguide
