#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tcam/synth.hpp"

using namespace tcam;
using namespace tcam::synth;

namespace {

SceneSpec one_agent(MotionClass c, Box region, MotionParams p, int frames = 10) {
  SceneSpec s;
  s.frames = frames;
  s.grid_rows = 10;
  s.grid_cols = 10;
  s.jitter = 0.0;
  s.seed = 1;
  s.agents = {{c, region, p, "bear"}};
  return s;
}

}  // namespace

TEST(InitGrid, TwentyFourSquareGridHas576Tracks) { EXPECT_EQ(init_grid(24, 24, 100, 100).size(), 576u); }

TEST(InitGrid, SingleCellIsTheCanvasCenter) {
  const auto pts = init_grid(1, 1, 100, 100);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_DOUBLE_EQ(pts[0].x, 50.0);
  EXPECT_DOUBLE_EQ(pts[0].y, 50.0);
}

TEST(InitGrid, TwoByTwoCellCenters) {
  const auto pts = init_grid(2, 2, 100, 100);
  const std::vector<Point> expected{{25, 25}, {75, 25}, {25, 75}, {75, 75}};
  ASSERT_EQ(pts.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(pts[i].x, expected[i].x);
    EXPECT_DOUBLE_EQ(pts[i].y, expected[i].y);
  }
}

TEST(InitGrid, RejectsDegenerateInput) {
  EXPECT_THROW(init_grid(0, 3, 100, 100), ConfigError);
  EXPECT_THROW(init_grid(2, 2, 0, 100), ConfigError);
  EXPECT_THROW(init_grid(2, 2, 100, -1), ConfigError);
}

TEST(Simulate, StationaryAgentWithoutJitterNeverMoves) {
  const auto sim = simulate(one_agent(MotionClass::Stationary, {20, 20, 60, 60}, {}));
  const auto& tr = sim.tracks;
  for (int j = 0; j < tr.tracks; ++j) {
    for (int t = 0; t < tr.frames; ++t) {
      EXPECT_EQ(tr.at(j, t).x, tr.at(j, 0).x);
      EXPECT_EQ(tr.at(j, t).y, tr.at(j, 0).y);
    }
  }
}

TEST(Simulate, LinearDisplacementIsTMinusOneTimesVelocity) {
  MotionParams p;
  p.velocity = {2, 0};
  const auto sim = simulate(one_agent(MotionClass::Linear, {10, 10, 40, 40}, p, 10));
  ASSERT_FALSE(sim.expressions.empty());
  for (int j : sim.expressions[0].positives) {
    EXPECT_NEAR(sim.tracks.at(j, 9).x - sim.tracks.at(j, 0).x, 18.0, 1e-12);
    EXPECT_NEAR(sim.tracks.at(j, 9).y - sim.tracks.at(j, 0).y, 0.0, 1e-12);
  }
}

TEST(Simulate, FullCircularRevolutionReturnsHome) {
  const int frames = 13;
  MotionParams p;
  p.center = {50, 50};
  p.angular_rate = 2.0 * std::numbers::pi / (frames - 1);
  const auto sim = simulate(one_agent(MotionClass::Circular, {40, 55, 60, 75}, p, frames));
  ASSERT_FALSE(sim.expressions[0].positives.empty());
  for (int j : sim.expressions[0].positives) {
    EXPECT_NEAR(sim.tracks.at(j, frames - 1).x, sim.tracks.at(j, 0).x, 1e-9);
    EXPECT_NEAR(sim.tracks.at(j, frames - 1).y, sim.tracks.at(j, 0).y, 1e-9);
    // Halfway round it is elsewhere.
    EXPECT_GT(std::abs(sim.tracks.at(j, (frames - 1) / 2).y - sim.tracks.at(j, 0).y), 1.0);
  }
}

TEST(Simulate, OwnersFollowRegionsAndBackgroundStays) {
  MotionParams p;
  p.velocity = {1, 1};
  const auto sim = simulate(one_agent(MotionClass::Linear, {0, 0, 30, 30}, p));
  const auto seeds = init_grid(10, 10, 100, 100);
  const auto& pos = sim.expressions[0].positives;
  for (int j = 0; j < 100; ++j) {
    const bool inside = Box{0, 0, 30, 30}.contains(seeds[static_cast<std::size_t>(j)]);
    EXPECT_EQ(std::binary_search(pos.begin(), pos.end(), j), inside) << j;
    EXPECT_EQ(sim.owner[static_cast<std::size_t>(j)], inside ? 0 : -1);
    if (!inside) {
      EXPECT_EQ(sim.tracks.at(j, 9).x, sim.tracks.at(j, 0).x);
    }
  }
}

TEST(Simulate, PositivesAndNegativesPartitionTracks) {
  SceneSpec s = one_agent(MotionClass::Stationary, {5, 5, 30, 30}, {});
  MotionParams f;
  f.gravity = 0.3;
  s.agents.push_back({MotionClass::Falling, {50, 5, 80, 30}, f, "panda"});
  s.jitter = 0.5;
  const auto sim = simulate(s);
  ASSERT_EQ(sim.expressions.size(), 2u);
  for (const auto& e : sim.expressions) {
    std::vector<int> all = e.positives;
    all.insert(all.end(), e.negatives.begin(), e.negatives.end());
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), 100u);
    for (int j = 0; j < 100; ++j) EXPECT_EQ(all[static_cast<std::size_t>(j)], j);
    EXPECT_FALSE(e.positives.empty());
  }
}

TEST(Simulate, OcclusionHidesButKeepsPositions) {
  SceneSpec s = one_agent(MotionClass::Stationary, {20, 20, 60, 60}, {});
  s.occluders = {{30, 30, 50, 50}};
  const auto sim = simulate(s);
  SceneSpec clear = s;
  clear.occluders.clear();
  const auto ref = simulate(clear);
  EXPECT_EQ(sim.tracks.positions, ref.tracks.positions);
  int hidden = 0;
  for (int j = 0; j < sim.tracks.tracks; ++j) {
    const Point p = sim.tracks.at(j, 0);
    const bool inside = Box{30, 30, 50, 50}.contains(p);
    EXPECT_EQ(sim.tracks.visible(j, 0), !inside);
    hidden += inside;
  }
  EXPECT_GT(hidden, 0);
}

TEST(Simulate, VisiblePositionsLieOnTheCanvas) {
  MotionParams p;
  p.velocity = {8, 0};
  const auto sim = simulate(one_agent(MotionClass::Linear, {50, 10, 90, 40}, p));
  bool any_hidden = false;
  for (int j = 0; j < sim.tracks.tracks; ++j) {
    for (int t = 0; t < sim.tracks.frames; ++t) {
      const Point q = sim.tracks.at(j, t);
      ASSERT_TRUE(std::isfinite(q.x) && std::isfinite(q.y));
      if (sim.tracks.visible(j, t)) {
        EXPECT_TRUE(q.x >= 0 && q.x <= 100 && q.y >= 0 && q.y <= 100);
      } else {
        any_hidden = true;
      }
    }
  }
  EXPECT_TRUE(any_hidden);
}

TEST(Simulate, SameSpecIsBitIdentical) {
  SceneSpec s = one_agent(MotionClass::Stationary, {20, 20, 60, 60}, {});
  s.jitter = 0.7;
  s.seed = 99;
  const auto a = simulate(s), b = simulate(s);
  EXPECT_EQ(a.tracks, b.tracks);
  s.seed = 100;
  EXPECT_NE(simulate(s).tracks.positions, a.tracks.positions);
}

TEST(Simulate, JitterHasConfiguredSpread) {
  SceneSpec s = one_agent(MotionClass::Stationary, {20, 20, 60, 60}, {}, 200);
  s.jitter = 0.5;
  const auto sim = simulate(s);
  const auto seeds = init_grid(10, 10, 100, 100);
  double ss = 0;
  std::size_t n = 0;
  for (int j = 0; j < sim.tracks.tracks; ++j) {
    for (int t = 0; t < sim.tracks.frames; ++t) {
      const Point d = sim.tracks.at(j, t) - seeds[static_cast<std::size_t>(j)];
      ss += d.x * d.x + d.y * d.y;
      n += 2;
    }
  }
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(n)), 0.5, 0.01);
}

TEST(Simulate, OverlappingRegionsAreRejected) {
  SceneSpec s = one_agent(MotionClass::Stationary, {10, 10, 50, 50}, {});
  s.agents.push_back({MotionClass::Stationary, {40, 40, 70, 70}, {}, "dog"});
  EXPECT_THROW(simulate(s), DataError);
}

TEST(Simulate, InvalidSpecsAreRejected) {
  SceneSpec s = one_agent(MotionClass::Stationary, {10, 10, 50, 50}, {});
  s.frames = 1;
  EXPECT_THROW(simulate(s), ConfigError);
  s = one_agent(MotionClass::Stationary, {80, 80, 120, 90}, {});
  EXPECT_THROW(simulate(s), ConfigError);
  s = one_agent(MotionClass::Chase, {10, 10, 40, 40}, {});
  EXPECT_THROW(simulate(s), ConfigError);  // target -1
}

TEST(Simulate, ChaseClosesTheGap) {
  SceneSpec s = one_agent(MotionClass::Stationary, {60, 60, 90, 90}, {});
  MotionParams c;
  c.target = 0;
  c.closing = 0.8;
  s.agents.push_back({MotionClass::Chase, {5, 5, 35, 35}, c, "bear"});
  const Point start = agent_offset(s, 1, 0.0);
  const Point end = agent_offset(s, 1, s.frames - 1);
  EXPECT_DOUBLE_EQ(start.x, 0.0);
  const Point gap = s.agents[0].region.center() - s.agents[1].region.center();
  EXPECT_NEAR(end.x, 0.8 * gap.x, 1e-12);
  EXPECT_NEAR(end.y, 0.8 * gap.y, 1e-12);
}

TEST(ExpressionFor, Templates) {
  MotionParams left;
  left.velocity = {-3, 0};
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Linear, {}, left, "bear"}), "bear moving to the left");
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Falling, {}, {}, "panda"}), "panda falling down");
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Chase, {}, {}, "bear"}, "bear"), "bear chasing another bear");
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Stationary, {}, {}, "raft"}), "raft staying still");
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Circular, {}, {}, "dog"}), "dog moving around in a circle");
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Oscillating, {}, {}, "dog"}), "dog moving back and forth");
}

TEST(ExpressionFor, DominantVelocityComponentPicksDirection) {
  MotionParams p;
  p.velocity = {1, -4};
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Linear, {}, p, "bear"}), "bear moving to the up");
  p.velocity = {5, 4};
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Linear, {}, p, "bear"}), "bear moving to the right");
  p.velocity = {0.5, 2};
  EXPECT_EQ(expression_for(AgentSpec{MotionClass::Linear, {}, p, "bear"}), "bear moving to the down");
}

TEST(ExpressionFor, ChaseNamesTheTargetNoun) {
  SceneSpec s;
  s.agents = {{MotionClass::Linear, {0, 0, 10, 10}, {}, "panda"}, {MotionClass::Chase, {50, 50, 60, 60}, {}, "bear"}};
  s.agents[0].params.velocity = {1, 0};
  s.agents[1].params.target = 0;
  EXPECT_EQ(expression_for(s, 1), "bear chasing another panda");
}

TEST(Simulate, AgentsSharingAnExpressionMergePositives) {
  SceneSpec s = one_agent(MotionClass::Stationary, {5, 5, 30, 30}, {});
  s.agents.push_back({MotionClass::Stationary, {60, 60, 90, 90}, {}, "bear"});
  const auto sim = simulate(s);
  ASSERT_EQ(sim.expressions.size(), 1u);
  for (int j : sim.expressions[0].positives) EXPECT_GE(sim.owner[static_cast<std::size_t>(j)], 0);
  EXPECT_EQ(std::count_if(sim.owner.begin(), sim.owner.end(), [](int o) { return o >= 0; }),
            static_cast<long>(sim.expressions[0].positives.size()));
}

TEST(MotionClass, NamesRoundTrip) {
  for (MotionClass c : kAllMotionClasses) EXPECT_EQ(parse_motion_class(to_string(c)), c);
  EXPECT_THROW(parse_motion_class("teleporting"), std::exception);
}
