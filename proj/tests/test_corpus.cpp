#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "tcam/corpus.hpp"

using namespace tcam;
using namespace tcam::synth;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "tcam_test_corpus" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const Corpus& default_corpus() {
  static const Corpus c = make_corpus(CorpusConfig{});
  return c;
}

}  // namespace

TEST(Corpus, SameSeedWritesByteIdenticalFiles) {
  CorpusConfig cfg;
  cfg.count = 10;
  cfg.seed = 7;
  const fs::path a = scratch("a"), b = scratch("b");
  write_corpus(a, make_corpus(cfg));
  write_corpus(b, make_corpus(cfg));
  EXPECT_EQ(nn::read_file_bytes(corpus_scenes_path(a)), nn::read_file_bytes(corpus_scenes_path(b)));
  EXPECT_EQ(nn::read_file_bytes(corpus_manifest_path(a)), nn::read_file_bytes(corpus_manifest_path(b)));
  cfg.seed = 8;
  const fs::path c = scratch("c");
  write_corpus(c, make_corpus(cfg));
  EXPECT_NE(corpus_hash(a), corpus_hash(c));
}

TEST(Corpus, RoundTripPreservesScenes) {
  CorpusConfig cfg;
  cfg.count = 12;
  const Corpus c = make_corpus(cfg);
  const fs::path dir = scratch("rt");
  write_corpus(dir, c);
  const Corpus r = read_corpus(dir);
  ASSERT_EQ(r.scenes.size(), c.scenes.size());
  for (std::size_t i = 0; i < c.scenes.size(); ++i) {
    EXPECT_EQ(r.scenes[i].id, c.scenes[i].id);
    EXPECT_EQ(r.scenes[i].split, c.scenes[i].split);
    EXPECT_EQ(r.scenes[i].tracks, c.scenes[i].tracks);
    EXPECT_EQ(r.scenes[i].expressions, c.scenes[i].expressions);
    EXPECT_EQ(r.scenes[i].spec.agents.size(), c.scenes[i].spec.agents.size());
  }
  EXPECT_EQ(r.config.seed, cfg.seed);
}

TEST(Corpus, TamperedScenesFailTheHashCheck) {
  CorpusConfig cfg;
  cfg.count = 3;
  const fs::path dir = scratch("tamper");
  write_corpus(dir, make_corpus(cfg));
  std::string lines = nn::read_file_bytes(corpus_scenes_path(dir));
  lines[lines.size() / 2] = lines[lines.size() / 2] == '1' ? '2' : '1';
  nn::write_file_bytes(corpus_scenes_path(dir), lines);
  EXPECT_THROW(read_corpus(dir), DataError);
}

TEST(Corpus, MissingOrCorruptManifestIsADataError) {
  EXPECT_THROW(read_corpus(scratch("missing")), DataError);
  const fs::path dir = scratch("corrupt");
  nn::write_file_bytes(corpus_manifest_path(dir), "{not json");
  nn::write_file_bytes(corpus_scenes_path(dir), "");
  EXPECT_THROW(read_corpus(dir), DataError);
}

TEST(Corpus, SplitsAreEightyTenTenByIndex) {
  const Corpus& c = default_corpus();
  ASSERT_EQ(c.scenes.size(), 200u);
  EXPECT_EQ(c.split(Split::Train).size(), 160u);
  EXPECT_EQ(c.split(Split::Val).size(), 20u);
  EXPECT_EQ(c.split(Split::Test).size(), 20u);
  for (const auto& s : c.scenes) {
    const Split want = s.index < 160 ? Split::Train : s.index < 180 ? Split::Val : Split::Test;
    EXPECT_EQ(s.split, want);
  }
  std::set<std::string> ids;
  for (const auto& s : c.scenes) ids.insert(s.id);
  EXPECT_EQ(ids.size(), 200u);
}

TEST(Corpus, EveryClassAppearsInAtLeastTenScenes) {
  std::map<MotionClass, std::size_t> scenes_with;
  for (const auto& s : default_corpus().scenes) {
    std::set<MotionClass> present;
    for (const auto& a : s.spec.agents) present.insert(a.motion);
    for (MotionClass m : present) ++scenes_with[m];
  }
  for (MotionClass m : kAllMotionClasses) EXPECT_GE(scenes_with[m], 10u) << to_string(m);
}

TEST(Corpus, ExcludedClassNeverAppears) {
  CorpusConfig cfg;
  cfg.count = 40;
  cfg.classes = {MotionClass::Stationary, MotionClass::Linear, MotionClass::Falling};
  for (const auto& s : make_corpus(cfg).scenes) {
    for (const auto& e : s.expressions) {
      EXPECT_NE(e.motion, MotionClass::Chase);
      EXPECT_EQ(e.text.find("chasing"), std::string::npos);
    }
  }
}

TEST(Corpus, ScenesSatisfyTypeInvariants) {
  for (const auto& s : default_corpus().scenes) {
    EXPECT_EQ(s.tracks.tracks, s.spec.grid_rows * s.spec.grid_cols);
    ASSERT_FALSE(s.expressions.empty());
    for (const auto& e : s.expressions) {
      EXPECT_FALSE(e.positives.empty());
      EXPECT_EQ(e.positives.size() + e.negatives.size(), static_cast<std::size_t>(s.tracks.tracks));
    }
    for (const auto& a : s.spec.agents) {
      if (a.motion == MotionClass::Chase) {
        EXPECT_GE(a.params.target, 0);
        EXPECT_LT(a.params.target, static_cast<int>(s.spec.agents.size()));
      }
    }
  }
}

TEST(Corpus, SceneGenerationDependsOnlyOnIndex) {
  CorpusConfig small;
  small.count = 5;
  CorpusConfig large = small;
  large.count = 50;
  // Splits differ, geometry does not.
  EXPECT_EQ(generate_scene(small, 3).tracks, generate_scene(large, 3).tracks);
  EXPECT_EQ(generate_scene(large, 3).tracks, make_corpus(large).scenes[3].tracks);
}

TEST(Corpus, RejectsEmptyCorpus) {
  CorpusConfig cfg;
  cfg.count = 0;
  EXPECT_THROW(make_corpus(cfg), ConfigError);
}

TEST(Separability, NearestCentroidOnKinematicsIsAtLeast95Percent) {
  const auto rep = motion_separability(default_corpus());
  EXPECT_GT(rep.evaluated, 200u);
  EXPECT_GE(rep.accuracy, 0.95);
}
