#include <gtest/gtest.h>

#include <limits>

#include "tcam/grounding.hpp"

using namespace tcam;
using nn::Matrix;

namespace {

Matrix<double> unit_rows(Rng& rng, nn::Index rows, nn::Index cols = 512) {
  Matrix<double> m(rows, cols);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  m.rowwise().normalize();
  return m;
}

struct Model {
  nn::ParamStore<double> store;
  Grounding<double> g;
  explicit Model(GroundingConfig cfg, std::uint64_t seed = 1) {
    Rng rng(seed);
    g = Grounding<double>::make(store, cfg, rng);
  }
  Matrix<double> score(const Matrix<double>& text, const Matrix<double>& desc) {
    nn::Tape<double> t(false);
    return g(t, t.constant(text), t.constant(desc)).value();
  }
};

// Brute force: between-class variance of every split of the sorted scores.
std::vector<int> otsu_oracle(const std::vector<double>& r) {
  std::vector<double> s = r;
  std::sort(s.begin(), s.end());
  double best = -1, cut = s.back();
  for (std::size_t k = 1; k < s.size(); ++k) {
    if (s[k] == s[k - 1]) continue;
    double m0 = 0, m1 = 0;
    for (std::size_t i = 0; i < k; ++i) m0 += s[i];
    for (std::size_t i = k; i < s.size(); ++i) m1 += s[i];
    m0 /= static_cast<double>(k);
    m1 /= static_cast<double>(s.size() - k);
    const double w0 = static_cast<double>(k) / static_cast<double>(s.size());
    const double var = w0 * (1 - w0) * (m0 - m1) * (m0 - m1);
    if (var > best) {
      best = var;
      cut = s[k];
    }
  }
  std::vector<int> out;
  for (std::size_t j = 0; j < r.size(); ++j)
    if (r[j] >= cut) out.push_back(static_cast<int>(j));
  return out;
}

}  // namespace

TEST(Relevance, IdentityProjectionsGiveSelfSimilarityOne) {
  GroundingConfig cfg;
  cfg.heads = 1;
  cfg.init_noise = 0.0;
  Model m(cfg);
  EXPECT_EQ(m.g.query->value, Matrix<double>::Identity(512, 512));
  Rng rng(2);
  const Matrix<double> desc = unit_rows(rng, 9);
  const Matrix<double> r = m.score(desc.row(5), desc);
  EXPECT_NEAR(r(0, 5), 1.0, 1e-12);
  nn::Index arg;
  r.row(0).maxCoeff(&arg);
  EXPECT_EQ(arg, 5);
}

TEST(Relevance, ScoresAreBoundedForAnyInput) {
  GroundingConfig cfg;
  cfg.init_noise = 0.5;
  Model m(cfg, 4);
  Rng rng(5);
  Matrix<double> desc = unit_rows(rng, 30);
  desc.row(3) = desc.row(4) * -1.0;
  const Matrix<double> r = m.score(unit_rows(rng, 6), desc);
  EXPECT_LE(r.maxCoeff(), 1.0);
  EXPECT_GE(r.minCoeff(), -1.0);
}

TEST(Relevance, PermutingDescriptorsPermutesScores) {
  Model m(GroundingConfig{}, 6);
  Rng rng(7);
  const Matrix<double> desc = unit_rows(rng, 5), text = unit_rows(rng, 2);
  const std::vector<int> perm{2, 0, 4, 3, 1};
  Matrix<double> p(5, 512);
  for (int j = 0; j < 5; ++j) p.row(j) = desc.row(perm[static_cast<std::size_t>(j)]);
  const Matrix<double> a = m.score(text, desc), b = m.score(text, p);
  for (int j = 0; j < 5; ++j) EXPECT_EQ(b.col(j), a.col(perm[static_cast<std::size_t>(j)]));
}

TEST(Relevance, ScaleInvariantInDescriptorMagnitude) {
  Model m(GroundingConfig{}, 8);
  Rng rng(9);
  const Matrix<double> desc = unit_rows(rng, 6), text = unit_rows(rng, 1);
  const Matrix<double> a = m.score(text, desc), b = m.score(text, desc * 7.5);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Relevance, CombinedScoreIsMeanOfHeadScores) {
  GroundingConfig cfg;
  cfg.heads = 4;
  cfg.init_noise = 0.2;
  Model m(cfg, 10);
  Rng rng(11);
  const Matrix<double> desc = unit_rows(rng, 7), text = unit_rows(rng, 1);
  const Matrix<double> heads = m.g.head_scores(text, desc);
  ASSERT_EQ(heads.rows(), 4);
  const Matrix<double> r = m.score(text, desc);
  EXPECT_LT((Matrix<double>(heads.colwise().mean()) - r).cwiseAbs().maxCoeff(), 1e-14);
  // Head 0 by hand.
  const Matrix<double> q = text * m.g.query->value.leftCols(128);
  const Matrix<double> k = desc.row(2) * m.g.key->value.leftCols(128);
  EXPECT_NEAR(heads(0, 2), q.row(0).dot(k.row(0)) / (q.norm() * k.norm()), 1e-14);
}

TEST(Relevance, InitStartsNearBlockIdentity) {
  Model m(GroundingConfig{}, 12);
  const Matrix<double>& q = m.g.query->value;
  ASSERT_EQ(q.rows(), 512);
  ASSERT_EQ(q.cols(), 512);
  const double noise = (q - Matrix<double>::Identity(512, 512)).cwiseAbs().maxCoeff();
  EXPECT_GT(noise, 0.0);
  EXPECT_LT(noise, 0.07);
  EXPECT_DOUBLE_EQ(m.g.temperature_value(), 1.0);
}

TEST(Relevance, ZeroNormProjectionIsAnExplicitError) {
  GroundingConfig cfg;
  cfg.heads = 2;
  Model m(cfg);
  m.g.query->value.setZero();
  Rng rng(1);
  const Matrix<double> desc = unit_rows(rng, 3), text = unit_rows(rng, 1);
  EXPECT_THROW(m.score(text, desc), NumericError);
  EXPECT_THROW(m.g.head_scores(text, desc), NumericError);
  EXPECT_THROW(m.score(text, Matrix<double>(0, 512)), DataError);
}

TEST(Relevance, HeadCountMustDivideEmbedding) {
  GroundingConfig cfg;
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.heads = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SelectTracks, ThresholdExamples) {
  EXPECT_EQ(select_tracks({0.9, 0.9, -0.8}, SelectMode::Threshold, 0.0), (std::vector<int>{0, 1}));
  EXPECT_EQ(select_tracks({0.3, 0.3, 0.3}, SelectMode::Threshold, 0.3), (std::vector<int>{0, 1, 2}));
  EXPECT_THROW(select_tracks({}, SelectMode::Threshold), DataError);
  EXPECT_THROW(select_tracks({}, SelectMode::Otsu), DataError);
}

TEST(SelectTracks, OtsuRecoversBimodalClusters) {
  Rng rng(13);
  std::vector<double> r;
  std::vector<int> upper;
  for (int j = 0; j < 40; ++j) {
    const bool hi = rng.uniform() < 0.3;
    r.push_back(hi ? 0.8 + rng.normal(0, 0.03) : -0.5 + rng.normal(0, 0.03));
    if (hi) upper.push_back(j);
  }
  EXPECT_EQ(select_tracks(r, SelectMode::Otsu), upper);
  EXPECT_EQ(select_tracks(r, SelectMode::Otsu), otsu_oracle(r));
}

TEST(SelectTracks, OtsuMatchesBruteForceOnRandomScores) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r;
    const int n = 2 + static_cast<int>(rng.below(30));
    for (int j = 0; j < n; ++j) r.push_back(std::round(rng.uniform(-1, 1) * 20) / 20);
    EXPECT_EQ(select_tracks(r, SelectMode::Otsu), otsu_oracle(r)) << trial;
  }
}

TEST(SelectTracks, OtsuOnConstantScoresSelectsAll) {
  EXPECT_EQ(select_tracks({0.2, 0.2}, SelectMode::Otsu), (std::vector<int>{0, 1}));
}

TEST(RelevanceProbability, Examples) {
  for (double tau : {0.01, 0.5, 1.0, 7.0}) EXPECT_DOUBLE_EQ(relevance_probability(0.0, tau), 0.5);
  EXPECT_GT(relevance_probability(1.0, 1e-3), 1.0 - 1e-12);
  double prev = 0;
  for (double r = -1; r <= 1; r += 0.1) {
    const double p = relevance_probability(r, 0.3);
    EXPECT_GT(p, prev);
    EXPECT_GT(p, 0);
    EXPECT_LT(p, 1);
    prev = p;
  }
  EXPECT_THROW(relevance_probability(0.1, 0.0), ConfigError);
}
