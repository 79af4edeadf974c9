#include <gtest/gtest.h>

#include <filesystem>

#include "tcam/config.hpp"

using namespace tcam;
using nlohmann::json;

TEST(RunConfig, DefaultsRoundTripThroughJson) {
  const RunConfig c;
  const json j = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
  EXPECT_EQ(j["train"]["epochs"], 50);
  EXPECT_EQ(j["train"]["batch_size"], 8);
  EXPECT_DOUBLE_EQ(j["train"]["peak_lr"].get<double>(), 1e-4);
  EXPECT_DOUBLE_EQ(j["train"]["warmup_fraction"].get<double>(), 0.3);
  EXPECT_DOUBLE_EQ(j["train"]["final_div"].get<double>(), 25.0);
  EXPECT_EQ(j["corpus"]["count"], 200);
}

TEST(RunConfig, OverridesApplyAndSurviveRoundTrip) {
  const json in = {{"model", {{"d_model", 64}, {"use_velocity", false}}},
                   {"loss", {{"alignment", "bce"}, {"lambda", 0.25}}},
                   {"selection", {{"strategy", "top_k"}, {"k", 2}}},
                   {"corpus", {{"classes", {"linear", "circular"}}}}};
  const RunConfig c = run_config_from_json(in);
  EXPECT_EQ(c.model.d_model, 64);
  EXPECT_FALSE(c.model.use_velocity);
  EXPECT_EQ(c.loss.alignment, Alignment::Bce);
  EXPECT_DOUBLE_EQ(c.loss.lambda, 0.25);
  EXPECT_EQ(c.selection.k, 2u);
  ASSERT_EQ(c.corpus.classes.size(), 2u);
  EXPECT_EQ(to_json(run_config_from_json(to_json(c))), to_json(c));
}

TEST(RunConfig, UnknownKeysAreRejected) {
  EXPECT_THROW(run_config_from_json({{"trainer", json::object()}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"epoch", 3}}}}), ConfigError);
  try {
    run_config_from_json({{"loss", {{"lamda", 0.1}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("loss.lamda"), std::string::npos);
  }
}

TEST(RunConfig, BadValuesAreConfigErrors) {
  EXPECT_THROW(run_config_from_json({{"train", {{"epochs", 0}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"train", {{"epochs", "many"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"loss", {{"alignment", "hinge"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"model", {{"heads", 5}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json({{"model", 3}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json::array()), ConfigError);
}

TEST(RunConfig, LoadFromFile) {
  const auto dir = std::filesystem::temp_directory_path() / "tcam_config_test";
  std::filesystem::create_directories(dir);
  nn::write_file_bytes(dir / "ok.json", R"({"train": {"epochs": 3}})");
  EXPECT_EQ(load_run_config(dir / "ok.json").train.epochs, 3);
  nn::write_file_bytes(dir / "bad.json", "{not json");
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_run_config(dir / "missing.json"), ConfigError);
}
