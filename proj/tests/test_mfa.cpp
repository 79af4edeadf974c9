#include <gtest/gtest.h>

#include "tcam/audit.hpp"
#include "tcam/mfa.hpp"
#include "tcam/pseudoclip.hpp"

using namespace tcam;
using nn::Matrix;

namespace {

MfaConfig small_config() {
  MfaConfig c;
  c.d_model = 16;
  c.heads = 4;
  c.temporal_layers = 1;
  c.spatial_layers = 2;
  return c;
}

synth::Scene small_scene() {
  synth::SceneSpec spec;
  spec.frames = 6;
  spec.grid_rows = 3;
  spec.grid_cols = 3;
  spec.seed = 4;
  synth::AgentSpec a{synth::MotionClass::Linear, {0, 0, 40, 40}, {}, "bear"};
  a.params.velocity = {3, 1};
  spec.agents = {a};
  spec.occluders = {{60, 60, 90, 90}};
  synth::Scene s;
  s.spec = spec;
  auto sim = synth::simulate(spec);
  s.tracks = sim.tracks;
  s.expressions = sim.expressions;
  return s;
}

Matrix<double> frames_of(const synth::Scene& s) {
  clip::TextEncoder enc;
  return clip::frame_features(s, clip::FrameConfig{}, enc).cast<double>();
}

struct Encoder {
  nn::ParamStore<double> store;
  MotionFieldAttention<double> mfa;
  explicit Encoder(const MfaConfig& cfg, std::uint64_t seed = 1) {
    Rng rng(seed);
    mfa = MotionFieldAttention<double>::make(store, cfg, rng);
  }
  Matrix<double> operator()(const synth::TrackSet& ts, const Matrix<double>& frames) {
    nn::Tape<double> t(false);
    return mfa(t, track_inputs<double>(ts, 100, 100), frames).value();
  }
};

synth::TrackSet permuted(const synth::TrackSet& ts, const std::vector<int>& perm) {
  synth::TrackSet out = ts;
  for (int j = 0; j < ts.tracks; ++j) {
    const int src = perm[static_cast<std::size_t>(j)];
    for (int t = 0; t < ts.frames; ++t) {
      const auto d = static_cast<std::size_t>(j * ts.frames + t), s = static_cast<std::size_t>(src * ts.frames + t);
      out.positions[2 * d] = ts.positions[2 * s];
      out.positions[2 * d + 1] = ts.positions[2 * s + 1];
      out.visibility[d] = ts.visibility[s];
    }
  }
  return out;
}

}  // namespace

TEST(TrackInputs, NormalizedPositionsAndBackwardVelocity) {
  synth::TrackSet ts;
  ts.tracks = 1;
  ts.frames = 3;
  ts.positions = {10, 20, 14, 20, 20, 30};
  ts.visibility = {1, 0, 1};
  const auto in = track_inputs<double>(ts, 100, 50);
  EXPECT_DOUBLE_EQ(in.position(1, 0), 0.14);
  EXPECT_DOUBLE_EQ(in.position(2, 1), 0.6);
  EXPECT_EQ(in.velocity.row(0).norm(), 0.0);
  // Scaled by (T-1)/extent.
  EXPECT_DOUBLE_EQ(in.velocity(1, 0), 4.0 * 2 / 100);
  EXPECT_DOUBLE_EQ(in.velocity(2, 1), 10.0 * 2 / 50);
  EXPECT_EQ(in.visibility, (std::vector<nn::Index>{1, 0, 1}));
  EXPECT_EQ(in.frame, (std::vector<nn::Index>{0, 1, 2}));
}

TEST(Mfa, OutputIsUnitRowsOfWidth512) {
  const auto s = small_scene();
  Encoder enc(small_config());
  const Matrix<double> m = enc(s.tracks, frames_of(s));
  ASSERT_EQ(m.rows(), 9);
  ASSERT_EQ(m.cols(), 512);
  for (nn::Index j = 0; j < m.rows(); ++j) EXPECT_NEAR(m.row(j).norm(), 1.0, 1e-6);
}

TEST(Mfa, IdenticalTracksGiveIdenticalDescriptors) {
  auto s = small_scene();
  synth::TrackSet ts = s.tracks;
  // Copy track 0 over track 5.
  for (int t = 0; t < ts.frames; ++t) {
    const auto d = static_cast<std::size_t>(5 * ts.frames + t), src = static_cast<std::size_t>(t);
    ts.positions[2 * d] = ts.positions[2 * src];
    ts.positions[2 * d + 1] = ts.positions[2 * src + 1];
    ts.visibility[d] = ts.visibility[src];
  }
  Encoder enc(small_config());
  const Matrix<double> m = enc(ts, frames_of(s));
  // Blocked matrix kernels may round rows in different panels differently.
  EXPECT_LT((m.row(0) - m.row(5)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NE(m.row(0), m.row(1));
}

TEST(Mfa, PermutingTracksPermutesDescriptorsBitForBit) {
  const auto s = small_scene();
  const std::vector<int> perm{4, 2, 7, 0, 8, 1, 3, 6, 5};
  Encoder enc(small_config());
  const Matrix<double> frames = frames_of(s);
  const Matrix<double> a = enc(s.tracks, frames);
  const Matrix<double> b = enc(permuted(s.tracks, perm), frames);
  for (int j = 0; j < 9; ++j) EXPECT_EQ(b.row(j), a.row(perm[static_cast<std::size_t>(j)])) << j;
}

TEST(Mfa, CanonicalOrderIsLexicographicOverTrackInputs) {
  synth::TrackSet ts;
  ts.tracks = 3;
  ts.frames = 2;
  ts.positions = {50, 0, 50, 0, 10, 5, 10, 9, 10, 5, 10, 7};
  ts.visibility = {1, 1, 1, 1, 1, 1};
  const auto in = track_inputs<double>(ts, 100, 100);
  EXPECT_EQ(MotionFieldAttention<double>::canonical_track_order(in), (std::vector<nn::Index>{2, 1, 0}));
  const auto r = MotionFieldAttention<double>::reorder_tracks(in, {2, 1, 0});
  EXPECT_EQ(r.position.topRows(2), in.position.bottomRows(2));
}

TEST(Mfa, ForwardIsDeterministic) {
  const auto s = small_scene();
  Encoder a(small_config(), 3), b(small_config(), 3);
  EXPECT_EQ(a(s.tracks, frames_of(s)), b(s.tracks, frames_of(s)));
}

TEST(Mfa, VelocityAblationIgnoresVelocityInputs) {
  const auto s = small_scene();
  MfaConfig cfg = small_config();
  cfg.use_velocity = false;
  Encoder enc(cfg);
  auto in = track_inputs<double>(s.tracks, 100, 100);
  const Matrix<double> frames = frames_of(s);
  nn::Tape<double> t1(false), t2(false);
  const Matrix<double> a = enc.mfa(t1, in, frames).value();
  in.velocity.setConstant(3.0);
  const Matrix<double> b = enc.mfa(t2, in, frames).value();
  EXPECT_EQ(a, b);

  Encoder with(small_config());
  nn::Tape<double> t3(false), t4(false);
  auto in2 = track_inputs<double>(s.tracks, 100, 100);
  const Matrix<double> c = with.mfa(t3, in2, frames).value();
  in2.velocity.setConstant(3.0);
  EXPECT_NE(c, with.mfa(t4, in2, frames).value());
}

TEST(Mfa, RejectsMismatchedInputs) {
  const auto s = small_scene();
  Encoder enc(small_config());
  Matrix<double> frames = frames_of(s);
  EXPECT_THROW(enc(s.tracks, frames.topRows(5)), DataError);
  synth::TrackSet empty;
  EXPECT_THROW(track_inputs<double>(empty, 100, 100), DataError);
  MfaConfig bad = small_config();
  bad.heads = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = small_config();
  bad.out_dim = 256;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Mfa, AllParametersPassGradientCheckOnAFourTrackSixFrameScene) {
  const synth::Scene scene = audit_scene();
  ASSERT_EQ(scene.tracks.tracks, 4);
  ASSERT_EQ(scene.tracks.frames, 6);
  MfaConfig cfg;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.ffn_width = 8;
  nn::ParamStore<double> store;
  Rng rng(8);
  auto mfa = MotionFieldAttention<double>::make(store, cfg, rng);
  const auto in = track_inputs<double>(scene.tracks, 100, 100);
  const Matrix<double> frames = frames_of(scene);
  Rng wr(2);
  Matrix<double> w(4, 512);
  for (nn::Index i = 0; i < w.size(); ++i) w.data()[i] = wr.normal();
  const auto rep = nn::finite_diff_check(store, [&](nn::Tape<double>& t) {
    return sum(mul(mfa(t, in, frames), t.constant(w)));
  });
  for (const auto& e : rep.entries) EXPECT_TRUE(e.passed) << e.name << " " << e.max_rel_error << " abs " << e.max_abs_error;
  EXPECT_EQ(rep.entries.size(), store.size());
}

TEST(PooledSummary, SingleTrackIsItsOwnDescriptor) {
  nn::Tape<double> t;
  Matrix<double> d = Matrix<double>::Zero(1, 4);
  d << 0.6, 0.8, 0, 0;
  EXPECT_EQ(pooled_motion_summary(t.constant(d)).value(), d);
}

TEST(PooledSummary, AntipodalPairIsDegenerate) {
  nn::Tape<double> t;
  Matrix<double> d(2, 3);
  d << 1, 0, 0, -1, 0, 0;
  try {
    (void)pooled_motion_summary(t.constant(d));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate zero-norm pool"), std::string::npos);
  }
}

TEST(PooledSummary, InvariantUnderTrackPermutation) {
  Rng rng(3);
  Matrix<double> d(5, 8);
  for (nn::Index i = 0; i < d.size(); ++i) d.data()[i] = rng.normal();
  Matrix<double> p = d;
  p.row(0) = d.row(4);
  p.row(4) = d.row(0);
  nn::Tape<double> t;
  const Matrix<double> a = pooled_motion_summary(t.constant(d)).value();
  const Matrix<double> b = pooled_motion_summary(t.constant(p)).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_NEAR(a.norm(), 1.0, 1e-12);
}
