#include "fieldguide/dataset.hpp"

#include "fieldguide/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

namespace fieldguide {

void SynthConfig::validate() const {
  if (n_super == 0 || per_super == 0 || n_novel == 0 || d == 0 || groups == 0 || m == 0 ||
      local_groups_per_super == 0 || images_per_class == 0)
    throw Error(ErrorCode::invalid_argument, "synthetic config: all counts must be >= 1");
  if (groups > d) throw Error(ErrorCode::invalid_argument, "synthetic config: more groups than attributes");
  if (local_groups_per_super > groups)
    throw Error(ErrorCode::invalid_argument, "synthetic config: local_groups_per_super exceeds group count");
  if (!(feature_noise >= 0.0)) throw Error(ErrorCode::invalid_argument, "synthetic config: feature_noise < 0");
  if (!(feature_scale > 0.0)) throw Error(ErrorCode::invalid_argument, "synthetic config: feature_scale <= 0");
  if (!(super_spread >= 0.0 && super_spread <= 1.0))
    throw Error(ErrorCode::invalid_argument, "synthetic config: super_spread outside [0, 1]");
}

namespace {

std::string padded(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02zu", prefix, i);
  return buf;
}

std::string super_name(std::size_t s) { return padded("sup", s); }

// Groups are contiguous blocks of near-equal size.
std::vector<std::vector<std::size_t>> contiguous_groups(std::size_t d, std::size_t g) {
  std::vector<std::vector<std::size_t>> out(g);
  for (std::size_t k = 0; k < g; ++k) {
    const std::size_t lo = k * d / g, hi = (k + 1) * d / g;
    for (std::size_t j = lo; j < hi; ++j) out[k].push_back(j);
  }
  return out;
}

struct Draws {
  std::vector<std::vector<std::size_t>> local;  // per supercategory
  Dataset ds;
};

Draws draw(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const auto m = static_cast<Eigen::Index>(cfg.m);

  Draws out;
  Dataset& ds = out.ds;
  ds.schema = AttributeSchema(cfg.d, contiguous_groups(cfg.d, cfg.groups));

  Vector root(d);
  for (Eigen::Index j = 0; j < d; ++j) root[j] = unif(rng);
  std::vector<Vector> prototypes;
  for (std::size_t s = 0; s < cfg.n_super; ++s) {
    Vector p(d);
    for (Eigen::Index j = 0; j < d; ++j) p[j] = (1.0 - cfg.super_spread) * root[j] + cfg.super_spread * unif(rng);
    prototypes.push_back(std::move(p));
    std::vector<std::size_t> ids(cfg.groups);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(cfg.local_groups_per_super);
    std::sort(ids.begin(), ids.end());
    out.local.push_back(std::move(ids));
  }

  const auto make_class = [&](std::size_t s) {
    Vector a = prototypes[s];
    for (std::size_t g : out.local[s])
      for (std::size_t j : ds.schema.members(g)) a[static_cast<Eigen::Index>(j)] = unif(rng);
    return a;
  };

  for (std::size_t s = 0; s < cfg.n_super; ++s) {
    for (std::size_t k = 0; k < cfg.per_super; ++k) {
      const std::string id = super_name(s) + padded("_b", k);
      ds.classes.push_back({id, id, super_name(s), make_class(s)});
      ds.base.push_back(id);
      ds.taxonomy.parent[id] = super_name(s);
    }
  }
  std::vector<std::size_t> per_super_novel(cfg.n_super, 0);
  for (std::size_t i = 0; i < cfg.n_novel; ++i) {
    const std::size_t s = i % cfg.n_super;
    const std::string id = super_name(s) + padded("_n", per_super_novel[s]++);
    ds.classes.push_back({id, id, super_name(s), make_class(s)});
    ds.novel.push_back(id);
    ds.taxonomy.parent[id] = super_name(s);
  }

  // Fixed random two-layer map from attributes to image features.
  const Eigen::Index hidden = m;
  Matrix w1(hidden, d), w2(m, hidden);
  Vector b1(hidden);
  const double g1 = std::sqrt(12.0 / static_cast<double>(d));
  const double g2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = g1 * normal(rng);
  for (Eigen::Index i = 0; i < b1.size(); ++i) b1[i] = 0.5 * normal(rng);
  for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = 2.0 * cfg.feature_scale * g2 * normal(rng);

  const std::size_t n_rows = ds.classes.size() * cfg.images_per_class;
  ds.features.values.resize(m, static_cast<Eigen::Index>(n_rows));
  std::size_t row = 0;
  for (const auto& c : ds.classes) {
    const Vector centered = c.attributes.array() - 0.5;
    const Vector clean = w2 * (w1 * centered + b1).array().tanh().matrix();
    for (std::size_t k = 0; k < cfg.images_per_class; ++k, ++row) {
      ds.features.image_ids.push_back(c.id + padded("_img", k));
      ds.features.class_ids.push_back(c.id);
      auto col = ds.features.values.col(static_cast<Eigen::Index>(row));
      for (Eigen::Index f = 0; f < m; ++f) col[f] = clean[f] + cfg.feature_noise * normal(rng);
    }
  }

  for (const auto& n : ds.novel) {
    const auto& rec = ds.classes[static_cast<std::size_t>(
        std::find_if(ds.classes.begin(), ds.classes.end(), [&](const ClassRecord& c) { return c.id == n; }) -
        ds.classes.begin())];
    std::string best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (const auto& b : ds.base) {
      if (ds.taxonomy.parent.at(b) != rec.parent) continue;
      const auto it = std::find_if(ds.classes.begin(), ds.classes.end(), [&](const ClassRecord& c) { return c.id == b; });
      const double dist = (it->attributes - rec.attributes).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = b;
      }
    }
    ds.similar[n] = best;
  }

  ds.validate();
  return out;
}

}  // namespace

Dataset generate_synthetic(const SynthConfig& cfg) { return draw(cfg).ds; }

std::map<std::string, std::vector<std::size_t>> synthetic_local_groups(const SynthConfig& cfg) {
  auto d = draw(cfg);
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < d.local.size(); ++s) out[super_name(s)] = d.local[s];
  return out;
}

}  // namespace fieldguide
