#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_util.hpp"

#include "fieldguide/session.hpp"

#include <json.hpp>

#include <numeric>
#include <random>

using namespace fieldguide;
using testutil::check_error;
using testutil::tiny_dataset;
using testutil::vec;

namespace {

EmbeddingModel small_model(const Dataset& ds) {
  ModelConfig cfg;
  cfg.latent_dim = 3;
  cfg.hidden_dims = {6};
  cfg.epochs = 50;
  cfg.learning_rate = 1e-2;
  return train_embedding_model(ds, cfg);
}

}  // namespace

TEST_CASE("impute follows the piecewise definition") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 20);
    Vector truth(d), similar(d);
    std::map<std::size_t, double> answers;
    for (Eigen::Index i = 0; i < d; ++i) {
      truth[i] = u(rng);
      similar[i] = u(rng);
      if (u(rng) < 0.5) answers[static_cast<std::size_t>(i)] = truth[i];
    }
    const Vector out = impute(answers, similar);
    for (Eigen::Index i = 0; i < d; ++i) {
      const bool answered = answers.count(static_cast<std::size_t>(i)) != 0;
      CHECK(out[i] == (answered ? truth[i] : similar[i]));
    }
  }
  check_error([] { impute({{5, 1.0}}, vec({0, 0})); }, ErrorCode::invalid_argument, "out of range");
}

TEST_CASE("session lifecycle") {
  const auto ds = normalize_attributes(tiny_dataset());
  auto st = start_session(ds, "n", "b", Strategy::sibling_variance(), 2);
  CHECK(exactly_equal(st.imputed, ds.attributes("b")));
  CHECK(finalize(st).second == ds.attributes("b"));

  const ScoringContext ctx{ds, nullptr};
  const auto p = propose_query(st, ctx);
  CHECK(p.round == 0);
  CHECK(p == propose_query(st, ctx));  // read-only
  CHECK(p.members == ds.schema.members(p.group));

  const auto truth = ds.attributes("n");
  const std::vector<double> vals{truth[static_cast<Eigen::Index>(p.members[0])],
                                 truth[static_cast<Eigen::Index>(p.members[1])]};
  const auto st1 = submit_answer(st, ds.schema, p.group, vals, 42);
  CHECK(st1.log.size() == 1);
  CHECK(st1.log[0].timestamp_ms == 42);
  CHECK(st1.log[0].round == 0);
  CHECK(st.answered.empty());  // input untouched
  for (auto j : p.members) CHECK(st1.imputed[static_cast<Eigen::Index>(j)] == truth[static_cast<Eigen::Index>(j)]);

  check_error([&] { submit_answer(st1, ds.schema, p.group, vals); }, ErrorCode::conflict, "already answered");
  check_error([&] { submit_answer(st1, ds.schema, 1 - p.group, {0.5}); }, ErrorCode::invalid_argument, "expects 2");
  check_error([&] { submit_answer(st1, ds.schema, 7, {0.5}); }, ErrorCode::invalid_argument, "unknown group");

  const auto st2 = submit_answer(st1, ds.schema, 1 - p.group, {0.1, 0.2}, 43);
  check_error([&] { propose_query(st2, ctx); }, ErrorCode::budget_exhausted, "budget exhausted");
  check_error([&] { submit_answer(st2, ds.schema, 0, {0.1, 0.2}); }, ErrorCode::conflict, "already answered");
}

TEST_CASE("budget stops answers before every group is covered") {
  const auto ds = normalize_attributes(tiny_dataset());
  auto st = start_session(ds, "n", "b", Strategy::fixed_order({1, 0}), 1);
  CHECK(propose_query(st, {ds, nullptr}).group == 1);
  st = submit_answer(st, ds.schema, 1, {0.3, 0.3});
  check_error([&] { submit_answer(st, ds.schema, 0, {0.3, 0.3}); }, ErrorCode::budget_exhausted, "budget exhausted");
}

TEST_CASE("session preconditions") {
  const auto ds = normalize_attributes(tiny_dataset());
  check_error([&] { start_session(ds, "n", "r", Strategy::sibling_variance(), 1); }, ErrorCode::invalid_argument,
              "similar class not in base");
  check_error([&] { start_session(ds, "a", "b", Strategy::sibling_variance(), 1); }, ErrorCode::invalid_argument,
              "not a novel class");
  check_error([&] { start_session(ds, "zzz", "b", Strategy::sibling_variance(), 1); }, ErrorCode::not_found, "zzz");
  check_error([&] { start_session(ds, "n", "b", Strategy::sibling_variance(), 3); }, ErrorCode::invalid_argument,
              "exceeds group count");
  check_error([&] { start_session(ds, "n", "b", Strategy::image_based(), 1); }, ErrorCode::precondition,
              "exemplar required");
  check_error([&] { start_session(ds, "n", "b", Strategy::image_based(), 1, vec({1, 2})); },
              ErrorCode::invalid_argument, "exemplar has length");
  check_error([&] { start_session(ds, "n", "b", Strategy::fixed_order({0, 0}), 1); }, ErrorCode::invalid_argument,
              "permutation");
  // Open sessions accept names the dataset has never seen, but not base classes.
  CHECK_NOTHROW(open_session(ds, "Brand new bird", "b", Strategy::sibling_variance(), 1));
  check_error([&] { open_session(ds, "a", "b", Strategy::sibling_variance(), 1); }, ErrorCode::invalid_argument,
              "base class");
}

TEST_CASE("simulated oracle") {
  const auto ds = normalize_attributes(tiny_dataset());
  OracleConfig clean;
  const auto v = simulated_oracle_answer(ds, clean, "n", 1);
  CHECK(v == std::vector<double>{ds.attributes("n")[2], ds.attributes("n")[3]});

  OracleConfig noisy;
  noisy.noise_std = 0.5;
  noisy.seed = 3;
  const auto a = simulated_oracle_answer(ds, noisy, "n", 1);
  CHECK(a == simulated_oracle_answer(ds, noisy, "n", 1));
  CHECK(a != v);
  for (double x : a) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
  noisy.seed = 4;
  CHECK(simulated_oracle_answer(ds, noisy, "n", 1) != a);
}

TEST_CASE("full-budget noiseless session recovers the ground truth for every strategy") {
  const auto ds = normalize_attributes(tiny_dataset());
  const auto model = small_model(ds);
  const ScoringContext ctx{ds, &model};
  const Vector exemplar = ds.features.values.col(static_cast<Eigen::Index>(ds.feature_rows("n").front()));
  for (const auto& s : {Strategy::sibling_variance(), Strategy::global_variance(), Strategy::representation_change(),
                        Strategy::image_based(), Strategy::random(3), Strategy::fixed_order({1, 0})}) {
    const auto st = run_simulated_session(ds, ctx, {}, "n", "b", s, 2, exemplar);
    CHECK_MESSAGE(exactly_equal(st.imputed, ds.attributes("n")), s.name());
    CHECK(st.log.size() == 2);
  }
}

TEST_CASE("sibling variance asks groups in descending score order") {
  const auto ds = normalize_attributes(generate_synthetic(SynthConfig{}));
  const std::string y = ds.novel.front();
  const auto scores = sibling_variance_scores_for(ds, y);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  const auto st = run_simulated_session(ds, {ds, nullptr}, {}, y, ds.similar.at(y), Strategy::sibling_variance(),
                                        ds.schema.group_count());
  for (std::size_t r = 0; r < order.size(); ++r) CHECK(st.log[r].group == order[r]);
}

TEST_CASE("descriptor history walks from the similar class to the final descriptor") {
  const auto ds = normalize_attributes(tiny_dataset());
  const auto st = run_simulated_session(ds, {ds, nullptr}, {}, "n", "b", Strategy::sibling_variance(), 2);
  const auto h = descriptor_history(st, ds.schema);
  REQUIRE(h.size() == 3);
  CHECK(exactly_equal(h.front(), ds.attributes("b")));
  CHECK(exactly_equal(h.back(), st.imputed));
}

TEST_CASE("transcript JSON round-trip") {
  const auto ds = normalize_attributes(tiny_dataset());
  const Vector exemplar = vec({0.1, 0.2, 0.3});
  auto st = start_session(ds, "n", "b", Strategy::image_based(), 2, exemplar);
  st = submit_answer(st, ds.schema, 1, {0.25, 0.125}, 1000);
  const auto text = session_to_json(st);
  const auto back = session_from_json(text, ds.schema);
  CHECK(back == st);
  CHECK(session_to_json(back) == text);

  SUBCASE("tampered descriptor is rejected") {
    auto j = nlohmann::json::parse(text);
    j["descriptor"][0] = 0.999;
    check_error([&] { session_from_json(j.dump(), ds.schema); }, ErrorCode::parse, "disagrees");
  }
  SUBCASE("malformed") {
    check_error([&] { session_from_json("{", ds.schema); }, ErrorCode::parse, "transcript");
  }
}
