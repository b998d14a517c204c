#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_util.hpp"

#include "fieldguide/acquisition.hpp"

#include <algorithm>
#include <set>

using namespace fieldguide;
using testutil::check_error;
using testutil::slurp;
using testutil::spit;
using testutil::TempDir;
using testutil::tiny_dataset;
using testutil::vec;

TEST_CASE("schema accepts a partition and names its parts") {
  AttributeSchema s(5, {{0, 2}, {1}, {3, 4}});
  CHECK(s.dim() == 5);
  CHECK(s.group_count() == 3);
  CHECK(s.group_of(2) == 0);
  CHECK(s.group_of(4) == 2);
  CHECK(s.attribute_name(3) == "a_3");
  CHECK(s.group_name(1) == "group_1");
}

TEST_CASE("schema rejects anything that is not a partition") {
  check_error([] { AttributeSchema(3, {{0, 1}, {1, 2}}); }, ErrorCode::parse, "group partition violation");
  check_error([] { AttributeSchema(3, {{0, 1}}); }, ErrorCode::parse, "group partition violation");
  check_error([] { AttributeSchema(2, {{0, 1}, {}}); }, ErrorCode::parse, "group partition violation");
  check_error([] { AttributeSchema(2, {{0, 5}}); }, ErrorCode::parse, "group partition violation");
  check_error([] { AttributeSchema(2, {{0}, {1}, {}}); }, ErrorCode::parse, "group partition violation");
}

TEST_CASE("dataset invariants") {
  auto ds = tiny_dataset();
  CHECK(ds.is_base("a"));
  CHECK(ds.is_novel("n"));
  CHECK_FALSE(ds.is_base("n"));

  SUBCASE("overlapping splits") {
    ds.novel.push_back("a");
    check_error([&] { ds.validate(); }, ErrorCode::parse, "split overlap");
  }
  SUBCASE("similar class must be base") {
    ds.similar["n"] = "r";
    check_error([&] { ds.validate(); }, ErrorCode::parse, "similar class not in base");
  }
  SUBCASE("wrong attribute length") {
    ds.classes[0].attributes = vec({1, 2, 3});
    check_error([&] { ds.validate(); }, ErrorCode::parse, "has 3");
  }
  SUBCASE("supercategory without base class") {
    ds.taxonomy.parent["r"] = "Z";
    ds.classes[5].parent = "Z";
    check_error([&] { ds.validate(); }, ErrorCode::parse, "has no base class");
  }
  SUBCASE("base class without feature rows") {
    for (auto& c : ds.features.class_ids)
      if (c == "a") c = "b";
    check_error([&] { ds.validate(); }, ErrorCode::parse, "no feature rows");
  }
}

TEST_CASE("save then load reproduces the dataset and its files") {
  TempDir dir("ds_roundtrip");
  const auto ds = tiny_dataset();
  save_dataset(ds, dir.path() / "one");
  const auto loaded = load_dataset(dir.path() / "one");
  CHECK(loaded == ds);
  save_dataset(loaded, dir.path() / "two");
  for (const char* f : {"attributes.csv", "groups.json", "taxonomy.json", "splits.json", "similar.json", "features.csv"})
    CHECK_MESSAGE(slurp(dir.path() / "one" / f) == slurp(dir.path() / "two" / f), f);
}

TEST_CASE("synthetic dataset round-trips byte-identically") {
  TempDir dir("synth_roundtrip");
  SynthConfig cfg;
  cfg.n_super = 2;
  cfg.per_super = 3;
  cfg.n_novel = 2;
  cfg.images_per_class = 4;
  save_dataset(generate_synthetic(cfg), dir.path() / "one");
  save_dataset(load_dataset(dir.path() / "one"), dir.path() / "two");
  CHECK(slurp(dir.path() / "one" / "features.csv") == slurp(dir.path() / "two" / "features.csv"));
  CHECK(slurp(dir.path() / "one" / "attributes.csv") == slurp(dir.path() / "two" / "attributes.csv"));
}

TEST_CASE("loader errors name the file and line") {
  TempDir dir("ds_errors");
  const auto root = dir.path();
  save_dataset(tiny_dataset(), root);

  SUBCASE("missing file") {
    std::filesystem::remove(root / "similar.json");
    check_error([&] { load_dataset(root); }, ErrorCode::io, "similar.json");
  }
  SUBCASE("ragged feature row") {
    auto text = slurp(root / "features.csv");
    text += "extra_img,a,1,2\n";
    spit(root / "features.csv", text);
    const auto lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
    check_error([&] { load_dataset(root); }, ErrorCode::parse, "features.csv:" + std::to_string(lines));
  }
  SUBCASE("bad number in attributes") {
    auto text = slurp(root / "attributes.csv");
    text.replace(text.find("0.2"), 3, "x.2");
    spit(root / "attributes.csv", text);
    check_error([&] { load_dataset(root); }, ErrorCode::parse, "attributes.csv:2");
  }
  SUBCASE("group partition") {
    spit(root / "groups.json", R"([{"name": "g0", "members": [0, 1]}, {"name": "g1", "members": [1, 2, 3]}])");
    check_error([&] { load_dataset(root); }, ErrorCode::parse, "group partition violation");
  }
  SUBCASE("split overlap") {
    spit(root / "splits.json", R"({"base": ["a", "b", "c", "q"], "novel": ["n", "r", "a"]})");
    check_error([&] { load_dataset(root); }, ErrorCode::parse, "split overlap");
  }
  SUBCASE("similar maps to a novel class") {
    spit(root / "similar.json", R"({"n": "r"})");
    check_error([&] { load_dataset(root); }, ErrorCode::parse, "similar class not in base");
  }
}

TEST_CASE("normalization uses base statistics only") {
  auto ds = tiny_dataset();
  // Attribute 0 over base {0, 0, 0, 1}; novel r has 0.9.
  // Attribute 2 over base {0.5, 0.5, 0.5, 0} -> range 0.5.
  ds.classes[4].attributes = vec({1.5, 0.9, 0.75, 0.2});
  ds.validate();
  const auto nd = normalize_attributes(ds);
  CHECK(nd.attributes("q")[0] == 1.0);
  CHECK(nd.attributes("a")[0] == 0.0);
  CHECK(nd.attributes("n")[0] == 1.5);  // not clamped
  CHECK(nd.attributes("n")[2] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(nd.attributes("a")[2] == 1.0);
  REQUIRE(nd.norm_stats);
  CHECK(nd.norm_stats->min[2] == 0.0);
  CHECK(nd.norm_stats->max[2] == 0.5);

  SUBCASE("endpoints and constant columns") {
    Dataset d2 = tiny_dataset();
    for (auto& c : d2.classes) c.attributes[3] = 7.0;
    d2.classes[0].attributes[1] = 2.0;
    d2.classes[1].attributes[1] = 4.0;
    d2.classes[2].attributes[1] = 3.0;
    d2.classes[3].attributes[1] = 2.5;
    d2.classes[4].attributes[1] = 5.0;
    d2.validate();
    const auto n2 = normalize_attributes(d2);
    CHECK(n2.attributes("a")[1] == 0.0);
    CHECK(n2.attributes("b")[1] == 1.0);
    CHECK(n2.attributes("n")[1] == 1.5);
    for (const auto& c : n2.classes) CHECK(c.attributes[3] == 0.0);
  }
  SUBCASE("idempotent on base classes") {
    const auto twice = normalize_attributes(nd);
    for (const auto& id : nd.base) CHECK(exactly_equal(twice.attributes(id), nd.attributes(id)));
    CHECK(*twice.norm_stats == *nd.norm_stats);
  }
}

TEST_CASE("siblings") {
  const auto ds = tiny_dataset();
  CHECK(siblings(ds.taxonomy, ds.base, "a") == std::vector<std::string>{"a", "b", "c"});
  CHECK(siblings(ds.taxonomy, ds.base, "q") == std::vector<std::string>{"q"});
  check_error([&] { siblings(ds.taxonomy, ds.base, "n"); }, ErrorCode::not_found, "n");

  // Reflexive and symmetric on every pair of base classes; never contains novel ones.
  for (const auto& x : ds.base) {
    const auto sx = siblings(ds.taxonomy, ds.base, x);
    CHECK(std::count(sx.begin(), sx.end(), x) == 1);
    for (const auto& y : ds.base) {
      const auto sy = siblings(ds.taxonomy, ds.base, y);
      const bool y_in_x = std::count(sx.begin(), sx.end(), y) == 1;
      const bool x_in_y = std::count(sy.begin(), sy.end(), x) == 1;
      CHECK(y_in_x == x_in_y);
    }
    for (const auto& n : ds.novel) CHECK(std::count(sx.begin(), sx.end(), n) == 0);
  }
}

TEST_CASE("restrict_to_groups keeps the chosen groups' members") {
  const auto ds = tiny_dataset();
  const auto r = restrict_to_groups(ds, {1});
  CHECK(r.schema.dim() == 2);
  CHECK(r.schema.group_count() == 1);
  CHECK(exactly_equal(r.attributes("b"), vec({0.5, 0.1})));
  CHECK(r.schema.attribute_name(0) == "a_2");
  CHECK(exactly_equal(restrict_to_groups(ds, {0, 1}).attributes("c"), ds.attributes("c")));
}

TEST_CASE("feature split holds out every fifth base image") {
  const auto ds = tiny_dataset();
  const auto split = split_features(ds);
  // 4 base classes x 10 images: 2 held out each; 2 novel classes x 10 all test.
  CHECK(split.train.size() == 32);
  CHECK(split.test.size() == 8 + 20);
  for (auto r : split.train) CHECK(ds.is_base(ds.features.class_ids[r]));
}

TEST_CASE("synthetic default sizes") {
  const SynthConfig cfg;
  const auto ds = generate_synthetic(cfg);
  CHECK(ds.base.size() == 40);
  CHECK(ds.novel.size() == 10);
  CHECK(ds.schema.dim() == 48);
  CHECK(ds.schema.group_count() == 24);
  CHECK(ds.feature_dim() == 64);
  CHECK(ds.features.rows() == 1500);
  std::size_t base_rows = 0;
  for (const auto& c : ds.features.class_ids) base_rows += ds.is_base(c) ? 1 : 0;
  CHECK(base_rows == 1200);
  CHECK(ds.similar.size() == 10);
}

TEST_CASE("synthetic generation is deterministic in the seed") {
  SynthConfig cfg;
  cfg.images_per_class = 3;
  CHECK(generate_synthetic(cfg) == generate_synthetic(cfg));
  auto other = cfg;
  other.seed = 2;
  CHECK_FALSE(generate_synthetic(cfg) == generate_synthetic(other));
}

TEST_CASE("synthetic similar map is the nearest base sibling") {
  const auto ds = generate_synthetic(SynthConfig{});
  for (const auto& [n, s] : ds.similar) {
    CHECK(ds.is_base(s));
    CHECK(ds.taxonomy.parent_of(s) == ds.taxonomy.parent_of(n));
    const double chosen = (ds.attributes(n) - ds.attributes(s)).norm();
    for (const auto& b : siblings(ds.taxonomy, ds.base, s)) CHECK(chosen <= (ds.attributes(n) - ds.attributes(b)).norm());
  }
}

TEST_CASE("sibling variance concentrates in each supercategory's local groups") {
  const SynthConfig cfg;
  const auto ds = normalize_attributes(generate_synthetic(cfg));
  const auto local = synthetic_local_groups(cfg);
  const std::size_t k = cfg.local_groups_per_super;
  for (const auto& [n, s] : ds.similar) {
    // Independent computation: two-pass population variance per attribute, max per group.
    const auto sibs = siblings(ds.taxonomy, ds.base, s);
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t g = 0; g < ds.schema.group_count(); ++g) {
      double best = 0.0;
      for (auto j : ds.schema.members(g)) {
        double mean = 0.0;
        for (const auto& b : sibs) mean += ds.attributes(b)[static_cast<Eigen::Index>(j)];
        mean /= static_cast<double>(sibs.size());
        double var = 0.0;
        for (const auto& b : sibs) {
          const double dv = ds.attributes(b)[static_cast<Eigen::Index>(j)] - mean;
          var += dv * dv;
        }
        best = std::max(best, var / static_cast<double>(sibs.size()));
      }
      scored.push_back({-best, g});
    }
    std::sort(scored.begin(), scored.end());
    std::set<std::size_t> top;
    for (std::size_t i = 0; i < k; ++i) top.insert(scored[i].second);
    const auto& want = local.at(ds.taxonomy.parent_of(n));
    CHECK(top == std::set<std::size_t>(want.begin(), want.end()));
  }
}

TEST_CASE("synthetic config validation") {
  SynthConfig cfg;
  cfg.local_groups_per_super = 30;
  check_error([&] { generate_synthetic(cfg); }, ErrorCode::invalid_argument, "local_groups_per_super");
  cfg = SynthConfig{};
  cfg.n_super = 0;
  check_error([&] { generate_synthetic(cfg); }, ErrorCode::invalid_argument, ">= 1");
  cfg = SynthConfig{};
  cfg.feature_noise = -1;
  check_error([&] { generate_synthetic(cfg); }, ErrorCode::invalid_argument, "feature_noise");
}
