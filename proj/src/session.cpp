#include "fieldguide/session.hpp"

#include "fieldguide/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

namespace fieldguide {

using nlohmann::json;

GroupSet SessionState::answered_groups() const {
  GroupSet out;
  for (const auto& [g, v] : answered) out.insert(g);
  return out;
}

bool SessionState::operator==(const SessionState& o) const {
  const bool ex = exemplar.has_value() == o.exemplar.has_value() &&
                  (!exemplar || exactly_equal(*exemplar, *o.exemplar));
  return novel_id == o.novel_id && similar_id == o.similar_id && strategy == o.strategy && budget == o.budget &&
         answered == o.answered && exactly_equal(similar_attributes, o.similar_attributes) &&
         exactly_equal(imputed, o.imputed) && ex && log == o.log;
}

SessionState open_session(const Dataset& ds, const std::string& novel_name, const std::string& similar_id,
                          const Strategy& strategy, std::size_t budget, std::optional<Vector> exemplar) {
  if (novel_name.empty()) throw Error(ErrorCode::invalid_argument, "novel class name is empty");
  if (ds.is_base(novel_name)) throw Error(ErrorCode::invalid_argument, "'" + novel_name + "' is a base class");
  if (!ds.is_base(similar_id)) throw Error(ErrorCode::invalid_argument, "similar class not in base: '" + similar_id + "'");
  const std::size_t groups = ds.schema.group_count();
  if (budget > groups)
    throw Error(ErrorCode::invalid_argument, "budget " + std::to_string(budget) + " exceeds group count " +
                                                 std::to_string(groups));
  strategy.validate(groups);
  if (strategy.needs_exemplar() && !exemplar)
    throw Error(ErrorCode::precondition, "exemplar required for image_based strategy");
  if (exemplar && static_cast<std::size_t>(exemplar->size()) != ds.feature_dim())
    throw Error(ErrorCode::invalid_argument, "exemplar has length " + std::to_string(exemplar->size()) +
                                                 ", expected " + std::to_string(ds.feature_dim()));
  if (exemplar && !exemplar->allFinite()) throw Error(ErrorCode::invalid_argument, "exemplar is not finite");

  SessionState st;
  st.novel_id = novel_name;
  st.similar_id = similar_id;
  st.strategy = strategy;
  st.budget = budget;
  st.similar_attributes = ds.attributes(similar_id);
  st.imputed = st.similar_attributes;
  st.exemplar = std::move(exemplar);
  return st;
}

SessionState start_session(const Dataset& ds, const std::string& novel_id, const std::string& similar_id,
                           const Strategy& strategy, std::size_t budget, std::optional<Vector> exemplar) {
  if (!ds.has_class(novel_id)) throw Error(ErrorCode::not_found, "unknown class id '" + novel_id + "'");
  if (!ds.is_novel(novel_id)) throw Error(ErrorCode::invalid_argument, "'" + novel_id + "' is not a novel class");
  return open_session(ds, novel_id, similar_id, strategy, budget, std::move(exemplar));
}

Vector impute(const std::map<std::size_t, double>& answers, const Vector& similar_attributes) {
  Vector out = similar_attributes;
  for (const auto& [i, v] : answers) {
    if (i >= static_cast<std::size_t>(out.size()))
      throw Error(ErrorCode::invalid_argument, "answered attribute index " + std::to_string(i) + " out of range");
    out[static_cast<Eigen::Index>(i)] = v;
  }
  return out;
}

QueryProposal propose_query(const SessionState& st, const ScoringContext& ctx) {
  if (st.answered.size() >= st.budget)
    throw Error(ErrorCode::budget_exhausted, "budget exhausted for '" + st.novel_id + "'");
  const auto& schema = ctx.ds.schema;
  const GroupSet queried = st.answered_groups();
  const auto need_model = [&]() -> const EmbeddingModel& {
    if (!ctx.model) throw Error(ErrorCode::precondition, st.strategy.name() + " needs a trained model");
    return *ctx.model;
  };

  ScoreVector scores;
  switch (st.strategy.kind) {
    case Strategy::Kind::sibling_variance: scores = sibling_variance_scores(ctx.ds, st.similar_id); break;
    case Strategy::Kind::global_variance: scores = global_variance_scores(ctx.ds); break;
    case Strategy::Kind::representation_change:
      scores = representation_change_scores(need_model(), st.imputed, schema);
      break;
    case Strategy::Kind::image_based:
      if (!st.exemplar) throw Error(ErrorCode::precondition, "exemplar required for image_based strategy");
      scores = image_based_scores(need_model(), st.imputed, *st.exemplar, schema, queried);
      break;
    case Strategy::Kind::random:
    case Strategy::Kind::fixed_order: break;
  }
  const std::uint64_t key = mix_seed(stable_hash(st.novel_id), st.answered.size());
  QueryProposal p;
  p.round = st.answered.size();
  p.group = next_query(st.strategy, scores, queried, schema.group_count(), key);
  p.members = schema.members(p.group);
  for (auto j : p.members) p.member_names.push_back(schema.attribute_name(j));
  return p;
}

SessionState submit_answer(const SessionState& st, const AttributeSchema& schema, std::size_t group,
                           const std::vector<double>& values, std::optional<std::int64_t> timestamp_ms) {
  if (group >= schema.group_count())
    throw Error(ErrorCode::invalid_argument, "unknown group id " + std::to_string(group));
  if (st.answered.count(group))
    throw Error(ErrorCode::conflict, "group " + std::to_string(group) + " already answered");
  if (st.answered.size() >= st.budget)
    throw Error(ErrorCode::budget_exhausted, "budget exhausted for '" + st.novel_id + "'");
  const auto& members = schema.members(group);
  if (values.size() != members.size())
    throw Error(ErrorCode::invalid_argument, "group " + std::to_string(group) + " expects " +
                                                 std::to_string(members.size()) + " values, got " +
                                                 std::to_string(values.size()));
  for (double v : values)
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "answer values must be finite");

  SessionState next = st;
  next.answered[group] = values;
  for (std::size_t k = 0; k < members.size(); ++k) next.imputed[static_cast<Eigen::Index>(members[k])] = values[k];
  const auto now = timestamp_ms ? *timestamp_ms
                                : std::chrono::duration_cast<std::chrono::milliseconds>(
                                      std::chrono::system_clock::now().time_since_epoch())
                                      .count();
  next.log.push_back({st.answered.size(), group, values, now});
  return next;
}

std::vector<double> simulated_oracle_answer(const Dataset& ds, const OracleConfig& oc, const std::string& novel_id,
                                            std::size_t group) {
  const auto& truth = ds.attributes(novel_id);
  const auto& members = ds.schema.members(group);
  std::vector<double> out;
  out.reserve(members.size());
  std::mt19937_64 rng(mix_seed(mix_seed(oc.seed, stable_hash(novel_id)), group));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (auto j : members) {
    double v = truth[static_cast<Eigen::Index>(j)];
    if (oc.noise_std > 0.0) v = std::clamp(v + oc.noise_std * noise(rng), 0.0, 1.0);
    out.push_back(v);
  }
  return out;
}

std::pair<std::string, Vector> finalize(const SessionState& st) { return {st.novel_id, st.imputed}; }

std::vector<Vector> descriptor_history(const SessionState& st, const AttributeSchema& schema) {
  std::vector<Vector> out{st.similar_attributes};
  Vector cur = st.similar_attributes;
  for (const auto& rec : st.log) {
    const auto& members = schema.members(rec.group);
    for (std::size_t k = 0; k < members.size(); ++k) cur[static_cast<Eigen::Index>(members[k])] = rec.values[k];
    out.push_back(cur);
  }
  return out;
}

SessionState run_simulated_session(const Dataset& ds, const ScoringContext& ctx, const OracleConfig& oc,
                                   const std::string& novel_id, const std::string& similar_id,
                                   const Strategy& strategy, std::size_t budget, std::optional<Vector> exemplar) {
  SessionState st = start_session(ds, novel_id, similar_id, strategy, budget, std::move(exemplar));
  while (st.answered.size() < st.budget) {
    const auto p = propose_query(st, ctx);
    st = submit_answer(st, ds.schema, p.group, simulated_oracle_answer(ds, oc, novel_id, p.group), 0);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Transcript JSON

namespace {

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector from_std(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string session_to_json(const SessionState& st) {
  json answers = json::array();
  for (const auto& rec : st.log)
    answers.push_back({{"round", rec.round}, {"group_id", rec.group}, {"values", rec.values},
                       {"timestamp_ms", rec.timestamp_ms}});
  json j{{"novel_id", st.novel_id},
         {"similar_id", st.similar_id},
         {"strategy", st.strategy.name()},
         {"budget", st.budget},
         {"similar_attributes", to_std(st.similar_attributes)},
         {"answers", answers},
         {"descriptor", to_std(st.imputed)}};
  j["exemplar"] = st.exemplar ? json(to_std(*st.exemplar)) : json(nullptr);
  return j.dump(2);
}

SessionState session_from_json(const std::string& text, const AttributeSchema& schema) {
  try {
    const json j = json::parse(text);
    SessionState st;
    st.novel_id = j.at("novel_id").get<std::string>();
    st.similar_id = j.at("similar_id").get<std::string>();
    st.strategy = Strategy::parse(j.at("strategy").get<std::string>());
    st.budget = j.at("budget").get<std::size_t>();
    st.similar_attributes = from_std(j.at("similar_attributes").get<std::vector<double>>());
    st.imputed = st.similar_attributes;
    if (j.contains("exemplar") && !j["exemplar"].is_null()) st.exemplar = from_std(j["exemplar"].get<std::vector<double>>());
    for (const auto& a : j.at("answers")) {
      AnswerRecord rec{a.at("round").get<std::size_t>(), a.at("group_id").get<std::size_t>(),
                       a.at("values").get<std::vector<double>>(), a.value("timestamp_ms", std::int64_t{0})};
      if (rec.round != st.log.size()) throw Error(ErrorCode::parse, "transcript rounds are out of order");
      if (st.answered.count(rec.group)) throw Error(ErrorCode::parse, "transcript answers a group twice");
      st.answered[rec.group] = rec.values;
      st.log.push_back(std::move(rec));
    }
    for (const auto& rec : st.log) {
      const auto& members = schema.members(rec.group);
      if (rec.values.size() != members.size()) throw Error(ErrorCode::parse, "transcript answer arity mismatch");
      for (std::size_t k = 0; k < members.size(); ++k) st.imputed[static_cast<Eigen::Index>(members[k])] = rec.values[k];
    }
    if (static_cast<std::size_t>(st.similar_attributes.size()) != schema.dim())
      throw Error(ErrorCode::parse, "transcript attribute length does not match the schema");
    if (!exactly_equal(from_std(j.at("descriptor").get<std::vector<double>>()), st.imputed))
      throw Error(ErrorCode::parse, "transcript descriptor disagrees with its answers");
    return st;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("transcript: ") + e.what());
  }
}

}  // namespace fieldguide
