#pragma once

#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"
#include "tcam/corpus.hpp"
#include "tcam/discovery.hpp"
#include "tcam/losses.hpp"
#include "tcam/model.hpp"
#include "tcam/pseudoclip.hpp"

namespace tcam {

struct TrainConfig {
  int epochs = 50;
  std::size_t batch_size = 8;
  double peak_lr = 1e-4;
  double weight_decay = 0.01;
  double warmup_fraction = 0.3;
  double final_div = 25.0;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  int threads = 1;
  bool validate_each_epoch = true;
  long max_steps = -1;  // stop early after this global step count; -1 = full schedule

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(peak_lr > 0)) throw ConfigError("train: peak_lr must be positive");
    if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ConfigError("train: warmup fraction outside [0, 1]");
    if (!(final_div >= 1)) throw ConfigError("train: final_div must be >= 1");
    if (threads < 1) throw ConfigError("train: threads must be >= 1");
  }
};

struct RunConfig {
  synth::CorpusConfig corpus;
  clip::BankConfig bank;
  clip::FrameConfig features;
  MfaConfig model;
  GroundingConfig grounding;
  DiscoveryConfig discovery;
  LossConfig loss;
  TrainConfig train;
  SelectionConfig selection;

  ModelConfig model_config() const {
    ModelConfig m;
    m.mfa = model;
    m.grounding = grounding;
    m.discovery = discovery;
    m.seed = train.seed;
    return m;
  }
  void validate() const {
    model.validate();
    grounding.validate();
    loss.validate();
    train.validate();
  }
};

namespace detail {

/// Reads fields from one JSON object and rejects any key that was not read.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }
  template <class V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + section_ + "." + key + ": " + e.what());
    }
  }
  template <class F>
  void read_with(const char* key, F&& parse) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      parse(j_.at(key));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config " + section_ + "." + key + ": " + e.what());
    }
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError("unknown config key: " + section_ + "." + it.key());
    }
  }

 private:
  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  std::vector<std::string> classes;
  for (auto k : c.corpus.classes) classes.emplace_back(synth::to_string(k));
  return {
      {"corpus", synth::config_to_json(c.corpus)},
      {"bank", {{"distractor_ratio", c.bank.distractor_ratio}, {"extra_nouns", c.bank.extra_nouns}, {"seed", c.bank.seed}}},
      {"features", {{"noise", c.features.noise}}},
      {"model",
       {{"d_model", c.model.d_model},
        {"heads", c.model.heads},
        {"temporal_layers", c.model.temporal_layers},
        {"spatial_layers", c.model.spatial_layers},
        {"ffn_width", c.model.ffn()},
        {"out_dim", c.model.out_dim},
        {"use_velocity", c.model.use_velocity},
        {"use_temporal", c.model.use_temporal}}},
      {"grounding",
       {{"heads", c.grounding.heads},
        {"head_dim", c.grounding.dh()},
        {"init_noise", c.grounding.init_noise},
        {"init_temperature", c.grounding.init_temperature}}},
      {"discovery",
       {{"alpha", c.discovery.alpha}, {"identity_init", c.discovery.identity_init}, {"init_scale", c.discovery.init_scale}}},
      {"loss",
       {{"tau", c.loss.tau},
        {"lambda", c.loss.lambda},
        {"margin", c.loss.margin},
        {"diversity_floor", c.loss.diversity_floor},
        {"sparsity", c.loss.sparsity},
        {"alignment", to_string(c.loss.alignment)},
        {"focal_alpha", c.loss.focal_alpha},
        {"focal_exponent", c.loss.focal_exponent},
        {"in_batch", c.loss.in_batch}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"peak_lr", c.train.peak_lr},
        {"weight_decay", c.train.weight_decay},
        {"warmup_fraction", c.train.warmup_fraction},
        {"final_div", c.train.final_div},
        {"clip_norm", c.train.clip_norm},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps},
        {"seed", c.train.seed},
        {"validate_each_epoch", c.train.validate_each_epoch},
        {"max_steps", c.train.max_steps}}},
      {"selection",
       {{"strategy", to_string(c.selection.strategy)},
        {"k", c.selection.k},
        {"percentile", c.selection.percentile},
        {"threshold", c.selection.threshold},
        {"adaptive_max", c.selection.adaptive_max}}},
  };
}

/// Overlays `j` onto the defaults. Unknown sections or keys are errors.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  detail::SectionReader root(j, "<root>");
  root.read_with("corpus", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "corpus");
    r.read("count", c.corpus.count);
    r.read_with("classes", [&](const nlohmann::json& v) {
      c.corpus.classes.clear();
      for (const auto& x : v) c.corpus.classes.push_back(synth::parse_motion_class(x.get<std::string>()));
    });
    r.read("nouns", c.corpus.nouns);
    r.read("min_agents", c.corpus.min_agents);
    r.read("max_agents", c.corpus.max_agents);
    r.read("frames", c.corpus.frames);
    r.read("width", c.corpus.width);
    r.read("height", c.corpus.height);
    r.read("grid_rows", c.corpus.grid_rows);
    r.read("grid_cols", c.corpus.grid_cols);
    r.read("jitter", c.corpus.jitter);
    r.read("occluder_probability", c.corpus.occluder_probability);
    r.read("min_box", c.corpus.min_box);
    r.read("max_box", c.corpus.max_box);
    r.read("seed", c.corpus.seed);
    r.finish();
  });
  root.read_with("bank", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "bank");
    r.read("distractor_ratio", c.bank.distractor_ratio);
    r.read("extra_nouns", c.bank.extra_nouns);
    r.read("seed", c.bank.seed);
    r.finish();
  });
  root.read_with("features", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "features");
    r.read("noise", c.features.noise);
    r.finish();
  });
  root.read_with("model", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "model");
    r.read("d_model", c.model.d_model);
    r.read("heads", c.model.heads);
    r.read("temporal_layers", c.model.temporal_layers);
    r.read("spatial_layers", c.model.spatial_layers);
    r.read("ffn_width", c.model.ffn_width);
    r.read("out_dim", c.model.out_dim);
    r.read("use_velocity", c.model.use_velocity);
    r.read("use_temporal", c.model.use_temporal);
    r.finish();
  });
  root.read_with("grounding", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "grounding");
    r.read("heads", c.grounding.heads);
    r.read("head_dim", c.grounding.head_dim);
    r.read("init_noise", c.grounding.init_noise);
    r.read("init_temperature", c.grounding.init_temperature);
    r.finish();
  });
  root.read_with("discovery", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "discovery");
    r.read("alpha", c.discovery.alpha);
    r.read("identity_init", c.discovery.identity_init);
    r.read("init_scale", c.discovery.init_scale);
    r.finish();
  });
  root.read_with("loss", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "loss");
    r.read("tau", c.loss.tau);
    r.read("lambda", c.loss.lambda);
    r.read("margin", c.loss.margin);
    r.read("diversity_floor", c.loss.diversity_floor);
    r.read("sparsity", c.loss.sparsity);
    r.read_with("alignment", [&](const nlohmann::json& v) { c.loss.alignment = parse_alignment(v.get<std::string>()); });
    r.read("focal_alpha", c.loss.focal_alpha);
    r.read("focal_exponent", c.loss.focal_exponent);
    r.read("in_batch", c.loss.in_batch);
    r.finish();
  });
  root.read_with("train", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "train");
    r.read("epochs", c.train.epochs);
    r.read("batch_size", c.train.batch_size);
    r.read("peak_lr", c.train.peak_lr);
    r.read("weight_decay", c.train.weight_decay);
    r.read("warmup_fraction", c.train.warmup_fraction);
    r.read("final_div", c.train.final_div);
    r.read("clip_norm", c.train.clip_norm);
    r.read("beta1", c.train.beta1);
    r.read("beta2", c.train.beta2);
    r.read("adam_eps", c.train.adam_eps);
    r.read("seed", c.train.seed);
    r.read("validate_each_epoch", c.train.validate_each_epoch);
    r.read("max_steps", c.train.max_steps);
    r.finish();
  });
  root.read_with("selection", [&](const nlohmann::json& s) {
    detail::SectionReader r(s, "selection");
    r.read_with("strategy", [&](const nlohmann::json& v) { c.selection.strategy = parse_strategy(v.get<std::string>()); });
    r.read("k", c.selection.k);
    r.read("percentile", c.selection.percentile);
    r.read("threshold", c.selection.threshold);
    r.read("adaptive_max", c.selection.adaptive_max);
    r.finish();
  });
  root.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(nn::read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j);
}

}  // namespace tcam
