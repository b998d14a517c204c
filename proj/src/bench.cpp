#include "fieldguide/bench.hpp"

#include "fieldguide/error.hpp"
#include "json_config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace fieldguide {

using nlohmann::json;

SimilarVariant parse_similar_variant(const std::string& name) {
  if (name == "expert") return SimilarVariant::expert;
  if (name == "random") return SimilarVariant::random;
  if (name == "nearest_sibling") return SimilarVariant::nearest_sibling;
  throw Error(ErrorCode::invalid_argument, "unknown similar-class variant '" + name + "'");
}

std::string to_string(SimilarVariant v) {
  switch (v) {
    case SimilarVariant::expert: return "expert";
    case SimilarVariant::random: return "random";
    case SimilarVariant::nearest_sibling: return "nearest_sibling";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

json parse_json(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string(what) + ": " + e.what());
  }
}

SynthConfig synth_from(const json& j) {
  SynthConfig c;
  c.n_super = j.value("n_super", c.n_super);
  c.per_super = j.value("per_super", c.per_super);
  c.n_novel = j.value("n_novel", c.n_novel);
  c.d = j.value("d", c.d);
  c.groups = j.value("G", j.value("groups", c.groups));
  c.m = j.value("m", c.m);
  c.local_groups_per_super = j.value("local_groups_per_super", c.local_groups_per_super);
  c.images_per_class = j.value("images_per_class", c.images_per_class);
  c.feature_noise = j.value("feature_noise", c.feature_noise);
  c.feature_scale = j.value("feature_scale", c.feature_scale);
  c.super_spread = j.value("super_spread", c.super_spread);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

ClassifierConfig classifier_from(const json& j) {
  ClassifierConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.n_aug = j.value("n_aug", c.n_aug);
  c.sigma_aug = j.value("sigma_aug", c.sigma_aug);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace

SynthConfig synth_config_from_json(const std::string& text) {
  try {
    return synth_from(parse_json(text, "synthetic config"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("synthetic config: ") + e.what());
  }
}

ModelConfig model_config_from_json_text(const std::string& text) {
  try {
    return model_config_from_json(parse_json(text, "model config"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("model config: ") + e.what());
  }
}

SweepConfig SweepConfig::from_json(const std::string& text) {
  const json j = parse_json(text, "sweep config");
  SweepConfig c;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      if (d.contains("path"))
        c.dataset_path = d.at("path").get<std::string>();
      else if (d.contains("synthetic"))
        c.synthetic = synth_from(d.at("synthetic"));
      else
        throw Error(ErrorCode::parse, "sweep config: dataset needs 'path' or 'synthetic'");
    }
    if (j.contains("strategies")) {
      c.strategies.clear();
      for (const auto& s : j.at("strategies")) c.strategies.push_back(Strategy::parse(s.get<std::string>()));
    }
    c.budgets = j.value("budgets", c.budgets);
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("oracle")) {
      const auto& o = j.at("oracle");
      c.oracle.noise_std = o.value("noise_std", 0.0);
      c.oracle.seed = o.value("seed", std::uint64_t{0});
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("classifier")) c.classifier = classifier_from(j.at("classifier"));
    c.generalized = j.value("generalized", false);
    c.similar_variant = parse_similar_variant(j.value("similar_variant", std::string("expert")));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse, std::string("sweep config: ") + e.what());
  }
  if (c.seeds.empty()) throw Error(ErrorCode::invalid_argument, "sweep config: seeds must be non-empty");
  if (c.strategies.empty()) throw Error(ErrorCode::invalid_argument, "sweep config: no strategies");
  if (!(c.oracle.noise_std >= 0.0)) throw Error(ErrorCode::invalid_argument, "sweep config: noise_std < 0");
  return c;
}

// ---------------------------------------------------------------------------
// Seeds and shared pieces

ModelConfig model_config_for_seed(const ModelConfig& base, std::uint64_t seed) {
  ModelConfig c = base;
  c.seed = seed;
  return c;
}

ClassifierConfig classifier_config_for_seed(const ClassifierConfig& base, std::uint64_t seed) {
  ClassifierConfig c = base;
  c.seed = mix_seed(base.seed, seed);
  return c;
}

OracleConfig oracle_for_seed(const OracleConfig& base, std::uint64_t seed) {
  OracleConfig o = base;
  o.seed = mix_seed(base.seed, seed);
  return o;
}

Strategy strategy_for_seed(const Strategy& base, std::uint64_t seed) {
  Strategy s = base;
  if (s.kind == Strategy::Kind::random) s.seed = mix_seed(base.seed, seed);
  return s;
}

Dataset sweep_dataset(const SweepConfig& cfg) {
  Dataset raw = cfg.dataset_path ? load_dataset(*cfg.dataset_path) : generate_synthetic(cfg.synthetic);
  return normalize_attributes(raw);
}

Vector exemplar_for(const Dataset& ds, const std::string& novel_id) {
  const auto rows = ds.feature_rows(novel_id);
  if (rows.empty()) throw Error(ErrorCode::precondition, "exemplar required: '" + novel_id + "' has no images");
  return ds.features.values.col(static_cast<Eigen::Index>(rows.front()));
}

std::vector<std::map<std::string, Vector>> descriptors_by_budget(const Dataset& ds, const EmbeddingModel& model,
                                                                 const Strategy& strategy, std::size_t max_budget,
                                                                 const OracleConfig& oracle) {
  std::vector<std::map<std::string, Vector>> out(max_budget + 1);
  const ScoringContext ctx{ds, &model};
  for (const auto& y : ds.novel) {
    auto it = ds.similar.find(y);
    if (it == ds.similar.end()) throw Error(ErrorCode::precondition, "no similar class recorded for '" + y + "'");
    std::optional<Vector> exemplar;
    if (strategy.needs_exemplar()) exemplar = exemplar_for(ds, y);
    const auto st = run_simulated_session(ds, ctx, oracle, y, it->second, strategy, max_budget, exemplar);
    const auto history = descriptor_history(st, ds.schema);
    for (std::size_t b = 0; b <= max_budget; ++b) out[b][y] = history[b];
  }
  return out;
}

Metrics reference_run(const Dataset& ds, const EmbeddingModel& model, const ClassifierConfig& clf, EvalMode mode) {
  std::map<std::string, Vector> truth;
  for (const auto& y : ds.novel) truth[y] = ds.attributes(y);
  return evaluate(train_classifier(model, ds, truth, clf), model, ds, mode);
}

std::vector<CurveRow> sweep_seed(const Dataset& ds, const EmbeddingModel& model, std::uint64_t seed,
                                 const SweepConfig& cfg) {
  const std::size_t groups = ds.schema.group_count();
  std::vector<std::size_t> budgets = cfg.budgets;
  if (budgets.empty())
    for (std::size_t b = 0; b <= groups; ++b) budgets.push_back(b);
  for (auto b : budgets)
    if (b > groups) throw Error(ErrorCode::invalid_argument, "budget " + std::to_string(b) + " exceeds group count");
  const std::size_t max_budget = *std::max_element(budgets.begin(), budgets.end());
  const auto clf_cfg = classifier_config_for_seed(cfg.classifier, seed);
  const auto oracle = oracle_for_seed(cfg.oracle, seed);

  std::vector<CurveRow> rows;
  for (const auto& base_strategy : cfg.strategies) {
    base_strategy.validate(groups);
    const auto strategy = strategy_for_seed(base_strategy, seed);
    std::vector<std::map<std::string, Vector>> by_budget;
    try {
      by_budget = descriptors_by_budget(ds, model, strategy, max_budget, oracle);
    } catch (const Error& e) {
      throw Error(e.code(), "sweep cell (" + base_strategy.name() + ", seed " + std::to_string(seed) + "): " + e.what());
    }
    for (auto b : budgets) {
      const auto clf = train_classifier(model, ds, by_budget[b], clf_cfg);
      const auto m = evaluate(clf, model, ds, cfg.eval_mode());
      rows.push_back({base_strategy.name(), b, seed, m.acc_unseen, m.acc_seen, m.harmonic});
    }
  }
  return rows;
}

std::vector<CurveRow> run_budget_sweep(const Dataset& ds, const SweepConfig& cfg) {
  std::vector<CurveRow> rows;
  for (auto seed : cfg.seeds) {
    const auto model = train_embedding_model(ds, model_config_for_seed(cfg.model, seed));
    auto part = sweep_seed(ds, model, seed, cfg);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  sort_rows(rows);
  return rows;
}

std::vector<CurveRow> run_budget_sweep(const SweepConfig& cfg) {
  const Dataset ds = sweep_dataset(cfg);
  if (cfg.similar_variant != SimilarVariant::expert) return similar_class_variants(ds, cfg.similar_variant, cfg);
  return run_budget_sweep(ds, cfg);
}

void sort_rows(std::vector<CurveRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const CurveRow& a, const CurveRow& b) {
    return std::tie(a.strategy, a.budget, a.seed) < std::tie(b.strategy, b.budget, b.seed);
  });
}

std::string curves_to_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream out;
  out << "strategy,budget,seed,acc_unseen,acc_seen,harmonic\n";
  for (const auto& r : rows)
    out << r.strategy << ',' << r.budget << ',' << r.seed << ',' << format_double(r.acc_unseen) << ','
        << format_double(r.acc_seen) << ',' << format_double(r.harmonic) << '\n';
  return out.str();
}

void write_curves_csv(const std::vector<CurveRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << curves_to_csv(rows);
}

std::vector<CurveSummary> aggregate(const std::vector<CurveRow>& rows) {
  std::map<std::pair<std::string, std::size_t>, std::vector<const CurveRow*>> cells;
  for (const auto& r : rows) cells[{r.strategy, r.budget}].push_back(&r);
  std::vector<CurveSummary> out;
  for (const auto& [key, members] : cells) {
    CurveSummary s;
    s.strategy = key.first;
    s.budget = key.second;
    s.runs = members.size();
    const auto stats = [&](double CurveRow::*field, double& mean, double& sd) {
      double sum = 0.0;
      for (const auto* r : members) sum += r->*field;
      mean = sum / static_cast<double>(members.size());
      double ss = 0.0;
      for (const auto* r : members) ss += (r->*field - mean) * (r->*field - mean);
      sd = std::sqrt(ss / static_cast<double>(members.size()));
    };
    stats(&CurveRow::acc_unseen, s.mean_unseen, s.std_unseen);
    stats(&CurveRow::acc_seen, s.mean_seen, s.std_seen);
    stats(&CurveRow::harmonic, s.mean_harmonic, s.std_harmonic);
    out.push_back(s);
  }
  return out;
}

std::string summary_to_csv(const std::vector<CurveSummary>& summary) {
  std::ostringstream out;
  out << "strategy,budget,runs,mean_unseen,std_unseen,mean_seen,std_seen,mean_harmonic,std_harmonic\n";
  for (const auto& s : summary)
    out << s.strategy << ',' << s.budget << ',' << s.runs << ',' << format_double(s.mean_unseen) << ','
        << format_double(s.std_unseen) << ',' << format_double(s.mean_seen) << ',' << format_double(s.std_seen)
        << ',' << format_double(s.mean_harmonic) << ',' << format_double(s.std_harmonic) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Baselines

std::vector<std::size_t> reduced_vocabulary_groups(std::size_t group_count, std::size_t k, std::uint64_t seed) {
  if (k < 1 || k > group_count)
    throw Error(ErrorCode::invalid_argument, "reduced vocabulary size " + std::to_string(k) + " out of range [1, " +
                                                 std::to_string(group_count) + "]");
  std::vector<std::size_t> ids(group_count);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x766f6361ULL));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<Metrics> reduced_vocabulary_baseline(const Dataset& ds, std::size_t k, std::uint64_t seed,
                                                 const ModelConfig& model_cfg, const ClassifierConfig& clf_cfg,
                                                 const std::vector<OracleConfig>& oracles, EvalMode mode) {
  const auto groups = reduced_vocabulary_groups(ds.schema.group_count(), k, seed);
  const Dataset reduced = restrict_to_groups(ds, groups);
  const auto model = train_embedding_model(reduced, model_config_for_seed(model_cfg, seed));
  const auto clf_seeded = classifier_config_for_seed(clf_cfg, seed);
  std::vector<Metrics> out;
  for (const auto& base_oracle : oracles) {
    const auto oracle = oracle_for_seed(base_oracle, seed);
    std::map<std::string, Vector> descriptors;
    for (const auto& y : reduced.novel) {
      Vector desc(static_cast<Eigen::Index>(reduced.schema.dim()));
      for (std::size_t g = 0; g < reduced.schema.group_count(); ++g) {
        const auto values = simulated_oracle_answer(reduced, oracle, y, g);
        const auto& members = reduced.schema.members(g);
        for (std::size_t q = 0; q < members.size(); ++q) desc[static_cast<Eigen::Index>(members[q])] = values[q];
      }
      descriptors[y] = desc;
    }
    out.push_back(evaluate(train_classifier(model, reduced, descriptors, clf_seeded), model, reduced, mode));
  }
  return out;
}

Metrics reduced_vocabulary_baseline(const Dataset& ds, std::size_t k, std::uint64_t seed, const ModelConfig& model_cfg,
                                    const ClassifierConfig& clf_cfg, const OracleConfig& oracle, EvalMode mode) {
  return reduced_vocabulary_baseline(ds, k, seed, model_cfg, clf_cfg, std::vector<OracleConfig>{oracle}, mode).front();
}

Dataset apply_similar_variant(const Dataset& ds, SimilarVariant variant, std::uint64_t seed) {
  Dataset out = ds;
  if (variant == SimilarVariant::expert) return out;
  for (const auto& y : ds.novel) {
    if (variant == SimilarVariant::random) {
      std::mt19937_64 rng(mix_seed(mix_seed(seed, 0x72616e64ULL), stable_hash(y)));
      std::uniform_int_distribution<std::size_t> pick(0, ds.base.size() - 1);
      out.similar[y] = ds.base[pick(rng)];
      continue;
    }
    auto it = ds.similar.find(y);
    if (it == ds.similar.end()) continue;
    const std::string& expert = it->second;
    std::string best = expert;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& s : siblings(ds.taxonomy, ds.base, expert)) {
      if (s == expert) continue;
      const double dist = (ds.attributes(s) - ds.attributes(expert)).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = s;
      }
    }
    out.similar[y] = best;
  }
  out.validate();
  return out;
}

std::vector<CurveRow> similar_class_variants(const Dataset& ds, SimilarVariant variant, const SweepConfig& cfg) {
  std::vector<CurveRow> rows;
  for (auto seed : cfg.seeds) {
    const auto model = train_embedding_model(ds, model_config_for_seed(cfg.model, seed));
    auto part = sweep_seed(apply_similar_variant(ds, variant, seed), model, seed, cfg);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  sort_rows(rows);
  return rows;
}

// ---------------------------------------------------------------------------
// Latent export

std::vector<LatentRow> latent_rows(const EmbeddingModel& model, const Dataset& ds,
                                   const std::map<std::string, Vector>& descriptors,
                                   const std::vector<SessionState>& transcripts) {
  std::vector<LatentRow> out;
  const auto split = split_features(ds);
  Matrix feats(static_cast<Eigen::Index>(ds.feature_dim()), static_cast<Eigen::Index>(split.test.size()));
  for (std::size_t i = 0; i < split.test.size(); ++i)
    feats.col(static_cast<Eigen::Index>(i)) = ds.features.values.col(static_cast<Eigen::Index>(split.test[i]));
  const Matrix z = split.test.empty() ? Matrix() : model.encode_images(feats);
  for (std::size_t i = 0; i < split.test.size(); ++i)
    out.push_back({"image", ds.features.class_ids[split.test[i]], z.col(static_cast<Eigen::Index>(i))});
  for (const auto& [id, desc] : descriptors) out.push_back({"descriptor", id, model.encode_attributes(desc)});
  for (const auto& st : transcripts) {
    const auto history = descriptor_history(st, ds.schema);
    for (std::size_t r = 0; r < history.size(); ++r)
      out.push_back({"round_" + std::to_string(r), st.novel_id, model.encode_attributes(history[r])});
  }
  return out;
}

void export_latents(const EmbeddingModel& model, const Dataset& ds, const std::map<std::string, Vector>& descriptors,
                    const std::vector<SessionState>& transcripts, const std::filesystem::path& path) {
  const auto rows = latent_rows(model, ds, descriptors, transcripts);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << "tag,class_id";
  for (std::size_t k = 0; k < model.latent_dim(); ++k) out << ",z_" << k;
  out << '\n';
  for (const auto& r : rows) {
    out << r.tag << ',' << r.class_id;
    for (Eigen::Index k = 0; k < r.z.size(); ++k) out << ',' << format_double(r.z[k]);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

}  // namespace fieldguide
