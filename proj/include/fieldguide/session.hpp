#pragma once

#include "fieldguide/acquisition.hpp"
#include "fieldguide/dataset.hpp"
#include "fieldguide/learner.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fieldguide {

struct AnswerRecord {
  std::size_t round = 0;
  std::size_t group = 0;
  std::vector<double> values;
  std::int64_t timestamp_ms = 0;

  bool operator==(const AnswerRecord&) const = default;
};

/// One novel class's annotation state. The imputed vector always takes
/// answered values on answered groups and the similar class's values
/// everywhere else.
struct SessionState {
  std::string novel_id;
  std::string similar_id;
  Strategy strategy;
  std::size_t budget = 0;
  std::map<std::size_t, std::vector<double>> answered;
  Vector similar_attributes;
  Vector imputed;
  std::optional<Vector> exemplar;
  std::vector<AnswerRecord> log;

  GroupSet answered_groups() const;
  bool operator==(const SessionState& other) const;
};

struct QueryProposal {
  std::size_t round = 0;
  std::size_t group = 0;
  std::vector<std::size_t> members;
  std::vector<std::string> member_names;

  bool operator==(const QueryProposal&) const = default;
};

struct OracleConfig {
  enum class Kind { simulated, external };
  Kind kind = Kind::simulated;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

/// What propose_query may consult besides the session itself.
struct ScoringContext {
  const Dataset& ds;
  const EmbeddingModel* model = nullptr;
};

/// Starts a session for a dataset novel class.
SessionState start_session(const Dataset& ds, const std::string& novel_id, const std::string& similar_id,
                           const Strategy& strategy, std::size_t budget,
                           std::optional<Vector> exemplar = std::nullopt);

/// Like start_session, but `novel_name` may be a class the dataset has
/// never seen (a human annotator describing something new). It must not
/// name a base class.
SessionState open_session(const Dataset& ds, const std::string& novel_name, const std::string& similar_id,
                          const Strategy& strategy, std::size_t budget,
                          std::optional<Vector> exemplar = std::nullopt);

/// Answered indices take the answered value, all others the similar class's.
Vector impute(const std::map<std::size_t, double>& answers, const Vector& similar_attributes);

/// Next group to ask about. Read-only.
QueryProposal propose_query(const SessionState& st, const ScoringContext& ctx);

/// Records the annotator's values for every member of `group`.
SessionState submit_answer(const SessionState& st, const AttributeSchema& schema, std::size_t group,
                           const std::vector<double>& values, std::optional<std::int64_t> timestamp_ms = std::nullopt);

/// Ground-truth group values plus clamped Gaussian noise. The noise is a
/// pure function of (seed, class, group).
std::vector<double> simulated_oracle_answer(const Dataset& ds, const OracleConfig& oc, const std::string& novel_id,
                                            std::size_t group);

std::pair<std::string, Vector> finalize(const SessionState& st);

/// Descriptor after each round of `st`, starting with the zero-answer vector.
std::vector<Vector> descriptor_history(const SessionState& st, const AttributeSchema& schema);

/// Plays a simulated oracle until the budget is spent.
SessionState run_simulated_session(const Dataset& ds, const ScoringContext& ctx, const OracleConfig& oc,
                                   const std::string& novel_id, const std::string& similar_id,
                                   const Strategy& strategy, std::size_t budget,
                                   std::optional<Vector> exemplar = std::nullopt);

/// Transcript JSON (round-trippable; also the service's persistence format).
/// Reading rebuilds the imputed vector from the answers and rejects a
/// transcript whose recorded descriptor disagrees.
std::string session_to_json(const SessionState& st);
SessionState session_from_json(const std::string& text, const AttributeSchema& schema);

}  // namespace fieldguide
