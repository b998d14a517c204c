#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_util.hpp"

#include "fieldguide/acquisition.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace fieldguide;
using testutil::check_error;
using testutil::tiny_dataset;
using testutil::vec;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

Mlp identity_net(std::size_t n) {
  return Mlp({DenseLayer{Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
                         Vector::Zero(static_cast<Eigen::Index>(n))}},
             Activation::tanh);
}

EmbeddingModel identity_model(std::size_t n) {
  EmbeddingModel m;
  m.attribute_encoder = m.attribute_decoder = m.image_encoder = m.image_decoder = identity_net(n);
  return m;
}

EmbeddingModel random_model(std::size_t d, std::size_t m, std::size_t l, std::mt19937_64& rng) {
  EmbeddingModel model;
  model.attribute_encoder = Mlp::random({d, 7, l}, Activation::tanh, rng);
  model.image_encoder = Mlp::random({m, 7, l}, Activation::tanh, rng);
  model.attribute_decoder = Mlp::random({l, 7, d}, Activation::tanh, rng);
  model.image_decoder = Mlp::random({l, 7, m}, Activation::tanh, rng);
  return model;
}

// Dataset with two classes per supercategory whose attribute values are given row-wise.
Dataset columns_dataset(const std::vector<std::vector<double>>& rows, std::size_t groups_of_one = 0) {
  Dataset ds;
  const std::size_t d = rows.front().size();
  std::vector<std::vector<std::size_t>> groups;
  if (groups_of_one) {
    for (std::size_t j = 0; j < d; ++j) groups.push_back({j});
  } else {
    groups.push_back({});
    for (std::size_t j = 0; j < d; ++j) groups.back().push_back(j);
  }
  ds.schema = AttributeSchema(d, groups);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string id = "c" + std::to_string(i);
    ds.classes.push_back({id, id, "P", Eigen::Map<const Vector>(rows[i].data(), static_cast<Eigen::Index>(d))});
    ds.base.push_back(id);
    ds.taxonomy.parent[id] = "P";
  }
  ds.features.values = Matrix::Zero(1, static_cast<Eigen::Index>(rows.size()));
  for (const auto& c : ds.classes) {
    ds.features.image_ids.push_back(c.id + "_img");
    ds.features.class_ids.push_back(c.id);
  }
  ds.validate();
  return ds;
}

}  // namespace

TEST_CASE("strategy names parse and print") {
  for (const char* s : {"sibling_variance", "representation_change", "image_based", "global_variance", "random",
                        "random:17", "fixed_order:2/0/1"})
    CHECK(Strategy::parse(s).name() == s);
  CHECK(Strategy::parse("fixed_order:2,0,1") == Strategy::fixed_order({2, 0, 1}));
  CHECK(Strategy::parse("random:5").seed == 5);
  check_error([] { Strategy::parse("bogus"); }, ErrorCode::invalid_argument, "invalid strategy");
  check_error([] { Strategy::parse("random:x"); }, ErrorCode::invalid_argument, "invalid strategy");
  check_error([] { Strategy::fixed_order({0, 0, 1}).validate(3); }, ErrorCode::invalid_argument, "permutation");
  check_error([] { Strategy::fixed_order({0, 1}).validate(3); }, ErrorCode::invalid_argument, "permutation");
  CHECK_NOTHROW(Strategy::fixed_order({1, 2, 0}).validate(3));
}

TEST_CASE("variance values") {
  const auto ds = columns_dataset({{0, 0, 0.3}, {0, 1, 0.3}}, 1);
  const Vector v = attribute_variance(ds, ds.base);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 0.25);
  CHECK(v[2] == 0.0);
  const auto three = columns_dataset({{0}, {0}, {0}});
  CHECK(sibling_variance_scores(three, "c0") == ScoreVector{0.0});
  const auto single = columns_dataset({{0.5, 0.9}}, 1);
  CHECK(global_variance_scores(single) == ScoreVector{0.0, 0.0});
}

TEST_CASE("group score is the maximum member variance") {
  // Nape colour varies among siblings, wing shape does not.
  Dataset ds;
  ds.schema = AttributeSchema(4, {{0, 1}, {2, 3}}, {"wing_pointed", "wing_rounded", "nape_yellow", "nape_black"},
                              {"wing_shape", "nape_color"});
  ds.classes = {{"oriole_a", "a", "Oriole", vec({0.8, 0.2, 0.1, 0.9})},
                {"oriole_b", "b", "Oriole", vec({0.8, 0.2, 0.9, 0.2})},
                {"oriole_c", "c", "Oriole", vec({0.8, 0.2, 0.5, 0.5})},
                {"gull", "g", "Gull", vec({0.1, 0.9, 0.5, 0.5})},
                {"oriole_new", "n", "Oriole", vec({0.8, 0.2, 0.3, 0.6})}};
  ds.base = {"oriole_a", "oriole_b", "oriole_c", "gull"};
  ds.novel = {"oriole_new"};
  ds.similar = {{"oriole_new", "oriole_b"}};
  for (const auto& c : ds.classes) ds.taxonomy.parent[c.id] = c.parent;
  ds.features.values = Matrix::Zero(1, 4);
  for (const auto& b : ds.base) {
    ds.features.image_ids.push_back(b + "_0");
    ds.features.class_ids.push_back(b);
  }
  ds.validate();

  const auto sv = sibling_variance_scores_for(ds, "oriole_new");
  CHECK(sv[0] < 1e-20);
  // nape_yellow over {0.1, 0.9, 0.5}: mean 0.5, variance (0.16 + 0.16 + 0) / 3.
  CHECK(std::abs(sv[1] - 0.32 / 3.0) < 1e-15);
  CHECK(next_query(Strategy::sibling_variance(), sv, {}, 2) == 1);
  // Globally the gull makes wing shape the most variable group.
  const auto gv = global_variance_scores(ds);
  CHECK(gv[0] > gv[1]);
  check_error([&] { sibling_variance_scores(ds, "oriole_new"); }, ErrorCode::invalid_argument,
              "similar class not in base");
  // Singleton sibling set falls back to the global scores.
  CHECK(sibling_variance_scores(ds, "gull") == gv);
}

TEST_CASE("scaling attributes scales sibling variance quadratically and keeps the order") {
  auto ds = tiny_dataset();
  const auto before = sibling_variance_scores(ds, "a");
  for (auto& c : ds.classes) c.attributes *= 3.0;
  ds.validate();
  const auto after = sibling_variance_scores(ds, "a");
  for (std::size_t g = 0; g < before.size(); ++g) CHECK(after[g] == doctest::Approx(9.0 * before[g]).epsilon(1e-12));
  CHECK(argmax_unqueried(before, {}) == argmax_unqueried(after, {}));
}

TEST_CASE("next_query tie-break, exclusion and exhaustion") {
  const ScoreVector s{0.2, 0.9, 0.9};
  CHECK(next_query(Strategy::sibling_variance(), s, {}, 3) == 1);
  CHECK(next_query(Strategy::sibling_variance(), s, {1}, 3) == 2);
  check_error([&] { next_query(Strategy::sibling_variance(), s, {0, 1, 2}, 3); }, ErrorCode::budget_exhausted,
              "budget exhausted");
  CHECK(next_query(Strategy::fixed_order({2, 0, 1}), {}, {2}, 3) == 0);
  check_error([&] { next_query(Strategy::random(1), {}, {0, 1, 2}, 3); }, ErrorCode::budget_exhausted,
              "budget exhausted");
}

TEST_CASE("random strategy is a pure function of seed and key") {
  const auto r = Strategy::random(9);
  for (std::uint64_t key = 0; key < 50; ++key) {
    const auto g = next_query(r, {}, {1, 3}, 6, key);
    CHECK(g == next_query(r, {}, {1, 3}, 6, key));
    CHECK(g != 1);
    CHECK(g != 3);
  }
  std::set<std::size_t> seen;
  for (std::uint64_t key = 0; key < 200; ++key) seen.insert(next_query(r, {}, {}, 6, key));
  CHECK(seen.size() == 6);
}

TEST_CASE("exclusion soundness over every queried subset for G <= 6") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t G = 1; G <= 6; ++G) {
    ScoreVector scores(G);
    for (auto& s : scores) s = std::round(u(rng) * 4.0) / 4.0;  // coarse values force ties
    std::vector<std::size_t> perm(G);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::vector<Strategy> strategies{Strategy::sibling_variance(), Strategy::global_variance(),
                                           Strategy::representation_change(), Strategy::image_based(),
                                           Strategy::random(4), Strategy::fixed_order(perm)};
    for (std::size_t mask = 0; mask + 1 < (1u << G); ++mask) {
      GroupSet queried;
      for (std::size_t g = 0; g < G; ++g)
        if (mask & (1u << g)) queried.insert(g);
      // Brute-force oracle: first unqueried group with the maximal score.
      std::size_t want = G;
      for (std::size_t g = 0; g < G; ++g)
        if (!queried.count(g) && (want == G || scores[g] > scores[want])) want = g;
      for (const auto& st : strategies) {
        const auto got = next_query(st, scores, queried, G, mask);
        CHECK(queried.count(got) == 0);
        CHECK(got < G);
        if (st.kind != Strategy::Kind::random && st.kind != Strategy::Kind::fixed_order) CHECK(got == want);
        if (st.kind == Strategy::Kind::fixed_order) {
          std::size_t first = G;
          for (auto g : perm)
            if (!queried.count(g)) {
              first = g;
              break;
            }
          CHECK(got == first);
        }
      }
    }
  }
}

TEST_CASE("representation change on linear and identity encoders") {
  std::mt19937_64 rng(2);
  EmbeddingModel model = identity_model(4);
  const AttributeSchema schema(4, {{0, 1}, {2}, {3}});
  const auto id_scores = representation_change_scores(model, vec({0.1, 0.2, 0.3, 0.4}), schema);
  CHECK(id_scores == ScoreVector{1.0, 1.0, 1.0});
  CHECK(next_query(Strategy::representation_change(), id_scores, {}, 3) == 0);

  model.attribute_encoder = Mlp::random({4, 3}, Activation::tanh, rng);
  const Vector attr = representation_change_attribute_scores(model, Vector::Random(4));
  for (Eigen::Index i = 0; i < 4; ++i)
    CHECK(attr[i] == model.attribute_encoder.layers()[0].weight.col(i).norm());
}

TEST_CASE("representation change matches finite-difference column norms") {
  std::mt19937_64 rng(8);
  const auto model = random_model(6, 5, 3, rng);
  const Vector a = Vector::Random(6).cwiseAbs();
  const Vector analytic = representation_change_attribute_scores(model, a);
  for (Eigen::Index i = 0; i < 6; ++i) {
    Vector up = a, down = a;
    up[i] += 1e-4;
    down[i] -= 1e-4;
    const double fd = ((model.encode_attributes(up) - model.encode_attributes(down)) / 2e-4).norm();
    CHECK(std::abs(analytic[i] - fd) / std::max(std::abs(fd), 1e-8) < 1e-4);
  }
}

TEST_CASE("representation change adapts to the imputed vector") {
  // E(x) = tanh(4 x0 + 4 x1 - 4): slope in x0 versus x1 depends on where we stand.
  Matrix w1(2, 2);
  w1 << 4.0, 0.0, 0.0, 4.0;
  Matrix w2(1, 2);
  w2 << 1.0, 1.0;
  EmbeddingModel model = identity_model(2);
  model.attribute_encoder = Mlp({DenseLayer{w1, vec({-2.0, -2.0})}, DenseLayer{w2, vec({0.0})}}, Activation::tanh);
  const AttributeSchema schema(2, {{0}, {1}});
  const auto s1 = representation_change_scores(model, vec({0.5, 0.0}), schema);
  const auto s2 = representation_change_scores(model, vec({0.0, 0.5}), schema);
  CHECK(argmax_unqueried(s1, {}) == 0);
  CHECK(argmax_unqueried(s2, {}) == 1);
}

TEST_CASE("image-based scores on the identity toy model") {
  const auto model = identity_model(2);
  const AttributeSchema schema(2, {{0}, {1}});
  const auto s = image_based_scores(model, vec({1.0, 0.0}), vec({0.0, 0.0}), schema, {});
  CHECK(s[0] == inf);
  CHECK(s[1] == 1.0);
  CHECK(next_query(Strategy::image_based(), s, {}, 2) == 0);
  const auto q = image_based_scores(model, vec({1.0, 0.0}), vec({0.0, 0.0}), schema, {0});
  CHECK(q[0] == -inf);
  CHECK(next_query(Strategy::image_based(), q, {0}, 2) == 1);

  // A' already equals the recognized attributes: every hypothetical is the same.
  const auto same = image_based_scores(model, vec({0.3, 0.6}), vec({0.3, 0.6}), schema, {});
  CHECK(same[0] == same[1]);
  CHECK(argmax_unqueried(same, {}) == 0);
}

TEST_CASE("image-based inverse-distance argmax equals distance argmin") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 6, m = 5;
    const AttributeSchema schema(d, {{0, 1}, {2}, {3, 4}, {5}});
    const auto model = random_model(d, m, 3, rng);
    Vector a(static_cast<Eigen::Index>(d)), x(static_cast<Eigen::Index>(m));
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = u(rng);
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = u(rng);
    GroupSet queried;
    for (std::size_t g = 0; g < 4; ++g)
      if (u(rng) < 0.3) queried.insert(g);
    if (queried.size() == 4) queried.erase(queried.begin());
    // Oracle: direct distances, smallest wins, ties low.
    const Vector target = model.encode_image(x);
    const Vector rec = model.decode_attributes(target);
    std::size_t best = 4;
    double best_dist = inf;
    for (std::size_t g = 0; g < 4; ++g) {
      if (queried.count(g)) continue;
      Vector h = a;
      for (auto j : schema.members(g)) h[static_cast<Eigen::Index>(j)] = rec[static_cast<Eigen::Index>(j)];
      const double dist = (model.encode_attributes(h) - target).norm();
      if (dist < best_dist) {
        best_dist = dist;
        best = g;
      }
    }
    const auto scores = image_based_scores(model, a, x, schema, queried);
    CHECK(next_query(Strategy::image_based(), scores, queried, 4) == best);
  }
}

TEST_CASE("global and sibling rankings differ on the synthetic default") {
  const auto ds = normalize_attributes(generate_synthetic(SynthConfig{}));
  const auto gv = global_variance_scores(ds);
  std::size_t differing = 0;
  for (const auto& n : ds.novel)
    if (argmax_unqueried(sibling_variance_scores_for(ds, n), {}) != argmax_unqueried(gv, {})) ++differing;
  CHECK(differing >= 1);
}
