#include "fieldguide/learner.hpp"

#include "fieldguide/error.hpp"

#include <algorithm>
#include <random>
#include <set>

namespace fieldguide {

std::size_t LatentClassifier::predict(const Vector& z, const std::vector<std::size_t>& allowed) const {
  const Vector logits = weight * z + bias;
  if (allowed.empty()) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<std::size_t>(best);
  }
  std::size_t best = allowed.front();
  for (auto k : allowed)
    if (logits[static_cast<Eigen::Index>(k)] > logits[static_cast<Eigen::Index>(best)]) best = k;
  return best;
}

std::optional<std::size_t> LatentClassifier::index_of(const std::string& id) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), id);
  if (it == class_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - class_ids.begin());
}

bool LatentClassifier::operator==(const LatentClassifier& o) const {
  return class_ids == o.class_ids && exactly_equal(weight, o.weight) && exactly_equal(bias, o.bias);
}

LatentClassifier train_classifier(const EmbeddingModel& model, const Dataset& ds,
                                  const std::map<std::string, Vector>& novel_descriptors,
                                  const ClassifierConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw Error(ErrorCode::invalid_argument, "classifier learning_rate must be > 0");
  if (!(cfg.sigma_aug >= 0.0)) throw Error(ErrorCode::invalid_argument, "sigma_aug must be >= 0");
  for (const auto& [id, desc] : novel_descriptors) {
    if (static_cast<std::size_t>(desc.size()) != model.attribute_dim())
      throw Error(ErrorCode::invalid_argument, "descriptor for '" + id + "' has length " +
                                                   std::to_string(desc.size()) + ", expected " +
                                                   std::to_string(model.attribute_dim()));
    if (ds.is_base(id)) throw Error(ErrorCode::invalid_argument, "descriptor given for base class '" + id + "'");
  }

  LatentClassifier clf;
  clf.class_ids = ds.base;
  std::set<std::string> placed;
  for (const auto& n : ds.novel)
    if (novel_descriptors.count(n)) {
      clf.class_ids.push_back(n);
      placed.insert(n);
    }
  for (const auto& [id, desc] : novel_descriptors)
    if (!placed.count(id)) clf.class_ids.push_back(id);

  const auto split = split_features(ds);
  std::vector<std::size_t> labels;
  std::vector<std::size_t> base_rows;
  std::unordered_map<std::string, std::size_t> base_col;
  for (std::size_t k = 0; k < ds.base.size(); ++k) base_col[ds.base[k]] = k;
  for (auto r : split.train) {
    auto it = base_col.find(ds.features.class_ids[r]);
    if (it == base_col.end()) continue;
    base_rows.push_back(r);
    labels.push_back(it->second);
  }

  const auto l = static_cast<Eigen::Index>(model.latent_dim());
  const std::size_t n_novel = clf.class_ids.size() - ds.base.size();
  const auto n = static_cast<Eigen::Index>(base_rows.size() + n_novel * cfg.n_aug);
  Matrix points(l, n);
  {
    Matrix feats(static_cast<Eigen::Index>(ds.feature_dim()), static_cast<Eigen::Index>(base_rows.size()));
    for (std::size_t i = 0; i < base_rows.size(); ++i)
      feats.col(static_cast<Eigen::Index>(i)) = ds.features.values.col(static_cast<Eigen::Index>(base_rows[i]));
    if (!base_rows.empty()) points.leftCols(static_cast<Eigen::Index>(base_rows.size())) = model.encode_images(feats);
  }
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x636c6173ULL));
  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::Index col = static_cast<Eigen::Index>(base_rows.size());
  for (std::size_t k = ds.base.size(); k < clf.class_ids.size(); ++k) {
    const Vector z = model.encode_attributes(novel_descriptors.at(clf.class_ids[k]));
    for (std::size_t a = 0; a < cfg.n_aug; ++a, ++col) {
      for (Eigen::Index r = 0; r < l; ++r) points(r, col) = z[r] + cfg.sigma_aug * noise(rng);
      labels.push_back(k);
    }
  }

  const auto c = static_cast<Eigen::Index>(clf.class_ids.size());
  clf.weight = Matrix::Zero(c, l);
  clf.bias = Vector::Zero(c);
  if (n == 0) return clf;
  Matrix onehot = Matrix::Zero(c, n);
  for (Eigen::Index i = 0; i < n; ++i) onehot(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)]), i) = 1.0;

  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Matrix logits = clf.weight * points;
    logits.colwise() += clf.bias;
    const Eigen::RowVectorXd mx = logits.colwise().maxCoeff();
    logits.rowwise() -= mx;
    Matrix prob = logits.array().exp().matrix();
    const Eigen::RowVectorXd norm = prob.colwise().sum();
    prob.array().rowwise() /= norm.array();
    const Matrix g = (prob - onehot) * inv_n;
    clf.weight.noalias() -= cfg.learning_rate * (g * points.transpose());
    clf.bias -= cfg.learning_rate * g.rowwise().sum();
  }
  if (!clf.weight.allFinite() || !clf.bias.allFinite())
    throw Error(ErrorCode::divergence, "classifier training produced non-finite weights");
  return clf;
}

double harmonic_mean(double acc_seen, double acc_unseen) {
  const double s = acc_seen + acc_unseen;
  return s > 0.0 ? 2.0 * acc_seen * acc_unseen / s : 0.0;
}

double per_class_accuracy(const std::vector<std::pair<std::size_t, std::size_t>>& counts) {
  double sum = 0.0;
  std::size_t classes = 0;
  for (const auto& [correct, total] : counts) {
    if (total == 0) continue;
    sum += static_cast<double>(correct) / static_cast<double>(total);
    ++classes;
  }
  return classes ? sum / static_cast<double>(classes) : 0.0;
}

Metrics evaluate(const LatentClassifier& classifier, const EmbeddingModel& model, const Dataset& ds, EvalMode mode) {
  Metrics out;
  std::vector<std::size_t> base_cols, novel_cols;
  for (std::size_t k = 0; k < classifier.class_ids.size(); ++k)
    (ds.is_base(classifier.class_ids[k]) ? base_cols : novel_cols).push_back(k);

  const auto split = split_features(ds);
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
  std::vector<std::size_t> rows;
  for (auto r : split.test) {
    const auto& cid = ds.features.class_ids[r];
    if (!classifier.index_of(cid)) continue;
    rows.push_back(r);
  }
  Matrix feats(static_cast<Eigen::Index>(ds.feature_dim()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    feats.col(static_cast<Eigen::Index>(i)) = ds.features.values.col(static_cast<Eigen::Index>(rows[i]));
  const Matrix z = rows.empty() ? Matrix() : model.encode_images(feats);

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& cid = ds.features.class_ids[rows[i]];
    const std::size_t truth = *classifier.index_of(cid);
    const bool base = ds.is_base(cid);
    const auto& allowed = mode == EvalMode::generalized ? std::vector<std::size_t>{} : (base ? base_cols : novel_cols);
    const std::size_t pred = classifier.predict(z.col(static_cast<Eigen::Index>(i)), allowed);
    auto& cnt = counts[cid];
    cnt.second += 1;
    if (pred == truth) cnt.first += 1;
  }

  std::vector<std::pair<std::size_t, std::size_t>> seen, unseen;
  for (const auto& c : ds.classes) {
    auto it = counts.find(c.id);
    if (it == counts.end()) {
      out.excluded.push_back(c.id);
      continue;
    }
    (ds.is_base(c.id) ? seen : unseen).push_back(it->second);
  }
  for (const auto& id : classifier.class_ids)
    if (!ds.has_class(id)) out.excluded.push_back(id);
  out.acc_seen = per_class_accuracy(seen);
  out.acc_unseen = per_class_accuracy(unseen);
  out.harmonic = harmonic_mean(out.acc_seen, out.acc_unseen);
  return out;
}

}  // namespace fieldguide
