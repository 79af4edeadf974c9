#include <gtest/gtest.h>

#include <cmath>

#include "tcam/eval.hpp"

using namespace tcam;

namespace {

std::vector<std::vector<double>> identity_sims(std::size_t n) {
  std::vector<std::vector<double>> s(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) s[i][i] = 1.0;
  return s;
}

clip::TextBank tagged_bank() {
  return clip::build_text_bank({{"bear moving right", "linear"},
                                {"panda circling around", "circular"},
                                {"dog falling down", "falling"},
                                {"raft staying still", "stationary"},
                                {"bear moving left", "linear"}});
}

DiscoveredEntry entry(const clip::TextBank& bank, const std::string& e) { return {bank.index_of(e), e, 0.5}; }

}  // namespace

TEST(Retrieval, IdentitySimilaritiesGivePerfectRecall) {
  std::vector<std::vector<std::size_t>> pos;
  for (std::size_t i = 0; i < 12; ++i) pos.push_back({i});
  const auto m = retrieval_metrics(identity_sims(12), pos);
  for (double r : {m.v2t.r1, m.v2t.r5, m.v2t.r10, m.t2v.r1, m.t2v.r5, m.t2v.r10}) EXPECT_EQ(r, 1.0);
}

TEST(Retrieval, PositiveRankedLastOfTwentyGivesZeroRecall) {
  std::vector<std::vector<double>> sims;
  std::vector<std::vector<std::size_t>> pos;
  for (std::size_t s = 0; s < 5; ++s) {
    std::vector<double> row(20);
    for (std::size_t k = 0; k < 20; ++k) row[k] = 1.0 - 0.01 * static_cast<double>(k);
    sims.push_back(row);
    pos.push_back({19});
  }
  const auto m = retrieval_metrics(sims, pos);
  EXPECT_EQ(m.v2t.r1, 0.0);
  EXPECT_EQ(m.v2t.r5, 0.0);
  EXPECT_EQ(m.v2t.r10, 0.0);
}

TEST(Retrieval, RandomSimilaritiesSitAtChance) {
  Rng rng(21);
  const int trials = 200;
  double r1 = 0, r5 = 0, r10 = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::vector<double>> sims(100, std::vector<double>(50));
    std::vector<std::vector<std::size_t>> pos;
    for (auto& row : sims) {
      for (auto& v : row) v = rng.uniform(-1, 1);
      pos.push_back({rng.below(50)});
    }
    const auto m = retrieval_metrics(sims, pos);
    r1 += m.v2t.r1;
    r5 += m.v2t.r5;
    r10 += m.v2t.r10;
  }
  // 20000 Bernoulli draws per rate; allow four binomial standard errors.
  auto bound = [](double p) { return 4.0 * std::sqrt(p * (1 - p) / 20000.0); };
  EXPECT_NEAR(r1 / trials, 0.02, bound(0.02));
  EXPECT_NEAR(r5 / trials, 0.10, bound(0.10));
  EXPECT_NEAR(r10 / trials, 0.20, bound(0.20));
}

TEST(Retrieval, TiesBreakByAscendingIndex) {
  const std::vector<std::vector<double>> sims{{0.5, 0.5, 0.5}};
  EXPECT_EQ(retrieval_metrics(sims, {{0}}).v2t.r1, 1.0);
  EXPECT_EQ(retrieval_metrics(sims, {{2}}).v2t.r1, 0.0);
}

TEST(Retrieval, TextToVideoCountsOnlyExpressionsWithPositives) {
  // Scene 0 owns entry 0, scene 1 owns entry 1; entry 2 is a distractor.
  const std::vector<std::vector<double>> sims{{0.9, 0.1, 0.95}, {0.8, 0.2, 0.0}};
  const auto m = retrieval_metrics(sims, {{0}, {1}});
  EXPECT_EQ(m.v2t.r1, 0.0);
  EXPECT_EQ(m.v2t.r5, 1.0);
  // Entry 0 ranks scene 0 first; entry 1 ranks scene 1 first.
  EXPECT_EQ(m.t2v.r1, 1.0);
}

TEST(Retrieval, Errors) {
  EXPECT_THROW(retrieval_metrics({{0.1, 0.2}}, {{}}), DataError);
  EXPECT_THROW(retrieval_metrics({{0.1, 0.2}}, {}), DataError);
  EXPECT_THROW(retrieval_metrics({{0.1, 0.2}, {0.3}}, {{0}, {0}}), DataError);
}

TEST(Retrieval, InvariantUnderSceneOrder) {
  Rng rng(5);
  std::vector<std::vector<double>> sims(30, std::vector<double>(10));
  std::vector<std::vector<std::size_t>> pos;
  for (auto& row : sims) {
    for (auto& v : row) v = rng.uniform();
    pos.push_back({rng.below(10), rng.below(10)});
  }
  const auto a = retrieval_metrics(sims, pos);
  std::reverse(sims.begin(), sims.end());
  std::reverse(pos.begin(), pos.end());
  const auto b = retrieval_metrics(sims, pos);
  EXPECT_DOUBLE_EQ(a.v2t.r1, b.v2t.r1);
  EXPECT_DOUBLE_EQ(a.v2t.r10, b.v2t.r10);
  EXPECT_DOUBLE_EQ(a.t2v.r1, b.t2v.r1);
  EXPECT_DOUBLE_EQ(a.t2v.r5, b.t2v.r5);
}

TEST(Grounding, Examples) {
  auto g = grounding_metrics({1, 2, 3, 4}, {1, 2, 3, 4}, 6);
  EXPECT_EQ(g.j, 1.0);
  EXPECT_EQ(g.f, 1.0);
  g = grounding_metrics({0, 5}, {1, 2, 3, 4}, 6);
  EXPECT_EQ(g.j, 0.0);
  EXPECT_EQ(g.f, 0.0);
  g = grounding_metrics({1, 2}, {1, 2, 3, 4}, 6);
  EXPECT_DOUBLE_EQ(g.j, 0.5);
  EXPECT_DOUBLE_EQ(g.precision, 1.0);
  EXPECT_DOUBLE_EQ(g.recall, 0.5);
  EXPECT_DOUBLE_EQ(g.f, 2.0 / 3.0);
}

TEST(Grounding, EmptySetConventions) {
  auto g = grounding_metrics({}, {}, 4);
  EXPECT_EQ(g.j, 1.0);
  EXPECT_EQ(g.f, 1.0);
  g = grounding_metrics({}, {0, 1}, 4);
  EXPECT_EQ(g.j, 0.0);
  EXPECT_EQ(g.f, 0.0);
  EXPECT_THROW(grounding_metrics({4}, {0}, 4), DataError);
  EXPECT_THROW(grounding_metrics({-1}, {0}, 4), DataError);
}

TEST(Grounding, JaccardNeverExceedsPrecisionOrRecall) {
  Rng rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<int> pred, gt;
    for (int j = 0; j < 12; ++j) {
      if (rng.uniform() < 0.4) pred.push_back(j);
      if (rng.uniform() < 0.4) gt.push_back(j);
    }
    if (pred.empty() || gt.empty()) continue;
    const auto g = grounding_metrics(pred, gt, 12);
    EXPECT_LE(g.j, g.precision + 1e-15);
    EXPECT_LE(g.j, g.recall + 1e-15);
    EXPECT_GE(g.j, 0.0);
    EXPECT_LE(g.f, 1.0);
  }
}

TEST(Discovery, ExactMatchGivesFullCoverageAndPrecision) {
  const auto bank = tagged_bank();
  const std::vector<std::string> gt{"bear moving right", "dog falling down"};
  const auto d = discovery_scene_metrics({entry(bank, gt[0]), entry(bank, gt[1])}, gt, bank);
  EXPECT_EQ(d.coverage, 1.0);
  EXPECT_EQ(d.precision, 1.0);
  EXPECT_TRUE(d.precision_defined);
  EXPECT_EQ(d.count, 2.0);
}

TEST(Discovery, MatchingNormalizesStrings) {
  const auto bank = tagged_bank();
  const auto d = discovery_scene_metrics({entry(bank, "bear moving right")}, {"  Bear   moving RIGHT "}, bank);
  EXPECT_EQ(d.coverage, 1.0);
}

TEST(Discovery, EmptySetReportsZeroWithFlag) {
  const auto bank = tagged_bank();
  const auto d = discovery_scene_metrics({}, {"bear moving right"}, bank);
  EXPECT_EQ(d.coverage, 0.0);
  EXPECT_EQ(d.count, 0.0);
  EXPECT_EQ(d.precision, 0.0);
  EXPECT_FALSE(d.precision_defined);
  const auto agg = aggregate_discovery({d, discovery_scene_metrics({entry(bank, "bear moving right")}, {"bear moving right"}, bank)});
  EXPECT_EQ(agg.undefined_precision, 1u);
  EXPECT_DOUBLE_EQ(agg.precision, 0.5);
  EXPECT_DOUBLE_EQ(agg.avg_expressions, 0.5);
}

TEST(Discovery, DiversityCountsDistinctClasses) {
  const auto bank = tagged_bank();
  const std::vector<DiscoveredEntry> found{entry(bank, "bear moving right"), entry(bank, "bear moving left"),
                                           entry(bank, "panda circling around"), entry(bank, "dog falling down")};
  const auto d = discovery_scene_metrics(found, {"bear moving right"}, bank);
  ASSERT_TRUE(d.diversity.has_value());
  EXPECT_EQ(*d.diversity, 3.0);
  EXPECT_DOUBLE_EQ(d.precision, 0.25);
}

TEST(Discovery, MissingTagsMakeDiversityAbsent) {
  const auto bank = clip::build_text_bank({{"bear moving right", "linear"}, {"cat napping", ""}});
  const auto d = discovery_scene_metrics({entry(bank, "bear moving right")}, {"bear moving right"}, bank);
  EXPECT_FALSE(d.diversity.has_value());
  EXPECT_FALSE(aggregate_discovery({d}).diversity.has_value());
}

TEST(Discovery, AggregateIsInvariantUnderSceneOrder) {
  const auto bank = tagged_bank();
  std::vector<DiscoveryScore> scenes{
      discovery_scene_metrics({entry(bank, "bear moving right")}, {"bear moving right", "dog falling down"}, bank),
      discovery_scene_metrics({entry(bank, "raft staying still"), entry(bank, "dog falling down")}, {"dog falling down"}, bank),
      discovery_scene_metrics({}, {"panda circling around"}, bank)};
  const auto a = aggregate_discovery(scenes);
  std::reverse(scenes.begin(), scenes.end());
  const auto b = aggregate_discovery(scenes);
  EXPECT_DOUBLE_EQ(a.coverage, b.coverage);
  EXPECT_DOUBLE_EQ(a.precision, b.precision);
  EXPECT_DOUBLE_EQ(*a.diversity, *b.diversity);
  EXPECT_DOUBLE_EQ(a.coverage, 0.5);
}

TEST(Calibration, PicksTheThresholdThatMaximizesMeanJ) {
  std::vector<GroundingCase> cases{{{0.9, 0.7, 0.21, -0.3}, {0, 1}}, {{0.6, 0.1, 0.65, 0.0}, {0, 2}}};
  const double theta = calibrate_threshold(cases);
  // Any cut in (0.21, 0.6] separates both cases; the lowest on the grid is 0.215.
  EXPECT_NEAR(theta, 0.215, 1e-12);
  for (const auto& c : cases) {
    EXPECT_EQ(grounding_metrics(select_tracks(c.scores, SelectMode::Threshold, theta), c.positives, 4).j, 1.0);
  }
  EXPECT_EQ(calibrate_threshold({}), 0.0);
}

TEST(Report, JsonCarriesEveryMetricFamily) {
  MetricsReport r;
  r.mean_j = 0.4;
  r.mean_f = 0.6;
  r.jf = 0.5;
  r.bank_size = 120;
  r.discovery.diversity = 2.5;
  const auto j = to_json(r);
  for (const char* k : {"v2t", "t2v", "mean_j", "mean_f", "jf", "discovery", "threshold", "j_by_class"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_DOUBLE_EQ(j["chance_r1"].get<double>(), 1.0 / 120);
  EXPECT_DOUBLE_EQ(j["discovery"]["diversity"].get<double>(), 2.5);
  r.discovery.diversity.reset();
  EXPECT_TRUE(to_json(r)["discovery"]["diversity"].is_null());
  SceneRecord s;
  s.id = "scene_0001";
  s.expressions = 2;
  s.j = 0.5;
  r.per_scene.push_back(s);
  const std::string csv = per_scene_csv(r);
  EXPECT_EQ(csv.rfind("scene,expressions,v2t_hit,j,f,coverage,precision,discovered\n", 0), 0u);
  EXPECT_NE(csv.find("scene_0001,2,0,0.5,"), std::string::npos);
}
