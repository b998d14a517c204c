#pragma once

#include "fieldguide/acquisition.hpp"
#include "fieldguide/dataset.hpp"
#include "fieldguide/learner.hpp"
#include "fieldguide/session.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fieldguide {

enum class SimilarVariant { expert, random, nearest_sibling };

SimilarVariant parse_similar_variant(const std::string& name);
std::string to_string(SimilarVariant v);

struct SweepConfig {
  std::optional<std::filesystem::path> dataset_path;  // otherwise `synthetic`
  SynthConfig synthetic;
  std::vector<Strategy> strategies{Strategy::sibling_variance(), Strategy::random(0)};
  std::vector<std::size_t> budgets;  // empty: 0..G
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6};
  OracleConfig oracle;
  ModelConfig model;
  ClassifierConfig classifier;
  bool generalized = false;
  SimilarVariant similar_variant = SimilarVariant::expert;

  /// Parses the JSON sweep file format (see README). Unset keys keep defaults.
  static SweepConfig from_json(const std::string& text);
  EvalMode eval_mode() const { return generalized ? EvalMode::generalized : EvalMode::unseen_only; }
};

SynthConfig synth_config_from_json(const std::string& text);
ModelConfig model_config_from_json_text(const std::string& text);

struct CurveRow {
  std::string strategy;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  double acc_unseen = 0.0;
  double acc_seen = 0.0;
  double harmonic = 0.0;

  bool operator==(const CurveRow&) const = default;
};

/// Normalized dataset named by the config (loaded or generated).
Dataset sweep_dataset(const SweepConfig& cfg);

/// Per-run derivations of configured seeds, so every seed gets
/// independent model, classifier, oracle and random-strategy streams.
ModelConfig model_config_for_seed(const ModelConfig& base, std::uint64_t seed);
ClassifierConfig classifier_config_for_seed(const ClassifierConfig& base, std::uint64_t seed);
OracleConfig oracle_for_seed(const OracleConfig& base, std::uint64_t seed);
Strategy strategy_for_seed(const Strategy& base, std::uint64_t seed);

/// Exemplar image used by image_based sessions: the class's first feature row.
Vector exemplar_for(const Dataset& ds, const std::string& novel_id);

/// Descriptor of every novel class after each round 0..max_budget of a
/// simulated session (outer index: budget).
std::vector<std::map<std::string, Vector>> descriptors_by_budget(const Dataset& ds, const EmbeddingModel& model,
                                                                 const Strategy& strategy, std::size_t max_budget,
                                                                 const OracleConfig& oracle);

/// Classifier trained on ground-truth descriptors for every novel class.
Metrics reference_run(const Dataset& ds, const EmbeddingModel& model, const ClassifierConfig& clf, EvalMode mode);

/// Every (strategy, budget) cell for one seed against an already trained model.
/// `ds` must be normalized; its similar map is used as S(y).
std::vector<CurveRow> sweep_seed(const Dataset& ds, const EmbeddingModel& model, std::uint64_t seed,
                                 const SweepConfig& cfg);

/// Full sweep: one embedding model per seed, shared across strategies and
/// budgets. Rows sorted by (strategy, budget, seed).
std::vector<CurveRow> run_budget_sweep(const SweepConfig& cfg);
std::vector<CurveRow> run_budget_sweep(const Dataset& ds, const SweepConfig& cfg);

void sort_rows(std::vector<CurveRow>& rows);
std::string curves_to_csv(const std::vector<CurveRow>& rows);
void write_curves_csv(const std::vector<CurveRow>& rows, const std::filesystem::path& path);

struct CurveSummary {
  std::string strategy;
  std::size_t budget = 0;
  std::size_t runs = 0;
  double mean_unseen = 0.0, std_unseen = 0.0;
  double mean_seen = 0.0, std_seen = 0.0;
  double mean_harmonic = 0.0, std_harmonic = 0.0;
};

/// Mean and population standard deviation over seeds.
std::vector<CurveSummary> aggregate(const std::vector<CurveRow>& rows);
std::string summary_to_csv(const std::vector<CurveSummary>& summary);

/// Group subset used by the reduced-vocabulary baseline for (G, k, seed).
std::vector<std::size_t> reduced_vocabulary_groups(std::size_t group_count, std::size_t k, std::uint64_t seed);

/// Traditional ZSL with a smaller vocabulary: k random groups, every class
/// described with only those groups (novel values from the oracle), new
/// embedding model and classifier. One metrics entry per oracle; they share
/// the retrained model.
std::vector<Metrics> reduced_vocabulary_baseline(const Dataset& ds, std::size_t k, std::uint64_t seed,
                                                 const ModelConfig& model_cfg, const ClassifierConfig& clf_cfg,
                                                 const std::vector<OracleConfig>& oracles, EvalMode mode);
Metrics reduced_vocabulary_baseline(const Dataset& ds, std::size_t k, std::uint64_t seed,
                                    const ModelConfig& model_cfg, const ClassifierConfig& clf_cfg = {},
                                    const OracleConfig& oracle = {}, EvalMode mode = EvalMode::unseen_only);

/// Copy of `ds` whose similar map follows the variant. random draws
/// uniformly over base classes; nearest_sibling takes the expert choice's
/// closest other sibling by attribute L2 (the expert choice itself when it
/// has none).
Dataset apply_similar_variant(const Dataset& ds, SimilarVariant variant, std::uint64_t seed);

/// Budget sweep (the config's strategies) with the variant's similar map,
/// one model per seed.
std::vector<CurveRow> similar_class_variants(const Dataset& ds, SimilarVariant variant, const SweepConfig& cfg);

struct LatentRow {
  std::string tag;
  std::string class_id;
  Vector z;
};

/// Encodings of all evaluation images ("image"), of each descriptor
/// ("descriptor") and of every per-round descriptor of each transcript
/// ("round_<k>").
std::vector<LatentRow> latent_rows(const EmbeddingModel& model, const Dataset& ds,
                                   const std::map<std::string, Vector>& descriptors,
                                   const std::vector<SessionState>& transcripts = {});
void export_latents(const EmbeddingModel& model, const Dataset& ds, const std::map<std::string, Vector>& descriptors,
                    const std::vector<SessionState>& transcripts, const std::filesystem::path& out);

}  // namespace fieldguide
