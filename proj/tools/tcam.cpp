// tcam: corpus generation, bank building, training, evaluation, discovery,
// grounding and gradient auditing. Structured JSON goes to stdout (or --out),
// progress and summaries to stderr.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tcam/tcam.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool deterministic = false;
  int threads = 1;
};

tcam::RunConfig resolve_config(const Common& c) {
  tcam::RunConfig cfg = c.config.empty() ? tcam::RunConfig{} : tcam::load_run_config(c.config);
  cfg.train.threads = c.deterministic ? 1 : c.threads;
  return cfg;
}

void emit(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    if (auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
    tcam::nn::write_file_bytes(out, text);
  }
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Loaded {
  tcam::LoadedCheckpoint ckpt;
  std::unique_ptr<tcam::TcamModel<float>> model;
};

/// Checkpoint plus a model rebuilt from its embedded config.
Loaded load_model(const std::string& path) {
  Loaded l;
  l.ckpt = tcam::read_checkpoint(path);
  l.model = std::make_unique<tcam::TcamModel<float>>(l.ckpt.config.model_config());
  tcam::restore_checkpoint(l.ckpt, l.model->params(), nullptr);
  return l;
}

void check_hashes(const tcam::CheckpointInfo& info, const std::string& corpus_dir, const std::string& bank_path) {
  if (info.corpus_hash != 0 && info.corpus_hash != tcam::synth::corpus_hash(corpus_dir)) {
    throw tcam::DataError("corpus " + corpus_dir + " does not match the checkpoint's corpus hash");
  }
  if (info.bank_hash != 0 && info.bank_hash != tcam::clip::bank_hash(bank_path)) {
    throw tcam::DataError("bank " + bank_path + " does not match the checkpoint's bank hash");
  }
}

std::vector<tcam::clip::BankEntry> read_extras(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw tcam::DataError("cannot open extras file " + path);
  std::vector<tcam::clip::BankEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) out.push_back({line, ""});
    else out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

json grounding_record(const tcam::TcamModel<float>& model, const tcam::nn::Matrix<double>& descriptors,
                      const std::string& expression, const tcam::nn::Matrix<double>& text_row, double threshold,
                      bool otsu, tcam::nn::Matrix<double>* heads_out = nullptr) {
  const tcam::nn::Matrix<float> text = text_row.cast<float>();
  const tcam::nn::Matrix<double> r = tcam::relevance_scores(model, text, descriptors);
  const std::vector<double> scores(r.data(), r.data() + r.cols());
  const auto mode = otsu ? tcam::SelectMode::Otsu : tcam::SelectMode::Threshold;
  const double cut = otsu ? tcam::otsu_threshold(scores) : threshold;
  const auto selected = tcam::select_tracks(scores, mode, threshold);
  const tcam::nn::Matrix<double> heads =
      model.grounding().head_scores(text, descriptors.cast<float>()).cast<double>();
  json h = json::array();
  for (tcam::nn::Index i = 0; i < heads.rows(); ++i) {
    h.push_back(std::vector<double>(heads.row(i).begin(), heads.row(i).end()));
  }
  if (heads_out) *heads_out = heads;
  return {{"expression", expression},
          {"scores", scores},
          {"threshold", cut},
          {"threshold_mode", otsu ? "otsu" : "calibrated"},
          {"selected", selected},
          {"head_attribution", h}};
}

std::string head_csv(const tcam::nn::Matrix<double>& heads) {
  std::string s = "head";
  for (tcam::nn::Index j = 0; j < heads.cols(); ++j) s += ",track_" + std::to_string(j);
  s += "\n";
  char buf[32];
  for (tcam::nn::Index h = 0; h < heads.rows(); ++h) {
    s += std::to_string(h);
    for (tcam::nn::Index j = 0; j < heads.cols(); ++j) {
      std::snprintf(buf, sizeof buf, ",%.10g", heads(h, j));
      s += buf;
    }
    s += "\n";
  }
  return s;
}

struct SceneContext {
  tcam::synth::Corpus corpus;
  tcam::clip::TextBank bank;
  Loaded loaded;
};

SceneContext open_context(const std::string& ckpt, const std::string& corpus_dir, const std::string& bank_path) {
  SceneContext c{tcam::synth::read_corpus(corpus_dir), tcam::clip::load_bank(bank_path), load_model(ckpt)};
  check_hashes(c.loaded.ckpt.info, corpus_dir, bank_path);
  return c;
}

tcam::SceneOutputs scene_outputs(const SceneContext& c, const tcam::synth::Scene& scene,
                                 tcam::PreparedScene<float>& prep) {
  tcam::clip::TextEncoder enc;
  prep.inputs = tcam::track_inputs<float>(scene.tracks, scene.spec.width, scene.spec.height);
  prep.frames = tcam::clip::frame_features(scene, c.loaded.ckpt.config.features, enc);
  prep.scene = &scene;
  return tcam::infer_scene(*c.loaded.model, prep, tcam::nn::Matrix<float>(c.bank.embeddings.cast<float>()));
}

int run(int argc, char** argv) {
  CLI::App app{"Trajectory-conditioned motion grounding and discovery"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run config (unknown keys are rejected)");
    sub->add_option("--seed", common.seed, "Override the seed");
    sub->add_option("--out", common.out, "Output path");
    sub->add_flag("--deterministic", common.deterministic, "Force single-threaded, reproducible execution");
    sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::PositiveNumber);
  };

  std::string corpus_dir, bank_path, ckpt_path, extras, scene_id, expression, split = "test", csv_path, resume;
  std::string strategy;
  std::optional<std::size_t> top_k;
  bool otsu = false;

  auto* gen = app.add_subcommand("gen", "Generate the synthetic corpus into --out");
  add_common(gen);
  auto* bank = app.add_subcommand("bank", "Build the text bank for a corpus");
  add_common(bank);
  bank->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  bank->add_option("--extras", extras, "Extra expressions, one per line (optionally <expr>\\t<tag>)");
  auto* init = app.add_subcommand("init", "Write an untrained checkpoint");
  add_common(init);
  init->add_option("--corpus", corpus_dir, "Corpus directory to bind by hash");
  init->add_option("--bank", bank_path, "Bank base path to bind by hash");
  auto* train = app.add_subcommand("train", "Train a model into the --out directory");
  add_common(train);
  train->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  train->add_option("--bank", bank_path, "Bank base path")->required();
  train->add_option("--resume", resume, "Continue from a 'last' checkpoint");
  auto* eval = app.add_subcommand("eval", "Full metrics report on a split");
  add_common(eval);
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint base path")->required();
  eval->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  eval->add_option("--bank", bank_path, "Bank base path")->required();
  eval->add_option("--split", split, "train, val, test or all");
  eval->add_option("--csv", csv_path, "Per-scene CSV path (default: next to --out)");
  auto* discover = app.add_subcommand("discover", "Query-free expression discovery for one scene");
  add_common(discover);
  discover->add_option("--checkpoint", ckpt_path, "Checkpoint base path")->required();
  discover->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  discover->add_option("--bank", bank_path, "Bank base path")->required();
  discover->add_option("--scene", scene_id, "Scene id")->required();
  discover->add_option("--strategy", strategy, "top_k, percentile, threshold or adaptive");
  discover->add_option("--k", top_k, "K for top_k");
  discover->add_flag("--otsu", otsu, "Select tracks with an Otsu threshold");
  auto* ground = app.add_subcommand("ground", "Ground one expression in one scene");
  add_common(ground);
  ground->add_option("--checkpoint", ckpt_path, "Checkpoint base path")->required();
  ground->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  ground->add_option("--bank", bank_path, "Bank base path (for hash checks)")->required();
  ground->add_option("--scene", scene_id, "Scene id")->required();
  ground->add_option("--expression", expression, "Referring expression")->required();
  ground->add_option("--csv", csv_path, "Head x track attribution CSV path");
  ground->add_flag("--otsu", otsu, "Select tracks with an Otsu threshold");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference audit of every module");
  add_common(grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (gen->parsed()) {
    if (common.out.empty()) throw tcam::ConfigError("gen: --out directory is required");
    tcam::RunConfig cfg = resolve_config(common);
    if (common.seed) cfg.corpus.seed = *common.seed;
    const auto corpus = tcam::synth::make_corpus(cfg.corpus);
    tcam::synth::write_corpus(common.out, corpus);
    std::size_t expressions = 0;
    for (const auto& s : corpus.scenes) expressions += s.expressions.size();
    json j = {{"scenes", corpus.scenes.size()},
              {"train", corpus.split(tcam::synth::Split::Train).size()},
              {"val", corpus.split(tcam::synth::Split::Val).size()},
              {"test", corpus.split(tcam::synth::Split::Test).size()},
              {"expressions", expressions},
              {"corpus_hash", hex64(tcam::synth::corpus_hash(common.out))},
              {"config", tcam::to_json(cfg)}};
    std::cout << j.dump(2) << "\n";
    std::cerr << "wrote " << corpus.scenes.size() << " scenes to " << common.out << "\n";
    return 0;
  }

  if (bank->parsed()) {
    if (common.out.empty()) throw tcam::ConfigError("bank: --out base path is required");
    tcam::RunConfig cfg = resolve_config(common);
    if (common.seed) cfg.bank.seed = *common.seed;
    const auto corpus = tcam::synth::read_corpus(corpus_dir);
    auto entries = tcam::clip::corpus_bank_entries(corpus, cfg.bank);
    if (!extras.empty()) {
      auto more = read_extras(extras);
      entries.insert(entries.end(), more.begin(), more.end());
    }
    const auto b = tcam::clip::build_text_bank(entries);
    tcam::clip::save_bank(common.out, b);
    json j = {{"bank_size", b.size()}, {"bank_hash", hex64(tcam::clip::bank_hash(common.out))}, {"path", common.out}};
    std::cout << j.dump(2) << "\n";
    std::cerr << "bank with " << b.size() << " expressions written to " << common.out << "\n";
    return 0;
  }

  if (init->parsed()) {
    if (common.out.empty()) throw tcam::ConfigError("init: --out checkpoint path is required");
    tcam::RunConfig cfg = resolve_config(common);
    if (common.seed) cfg.train.seed = *common.seed;
    tcam::TcamModel<float> model(cfg.model_config());
    tcam::CheckpointInfo info;
    info.config = tcam::to_json(cfg);
    if (!corpus_dir.empty()) info.corpus_hash = tcam::synth::corpus_hash(corpus_dir);
    if (!bank_path.empty()) info.bank_hash = tcam::clip::bank_hash(bank_path);
    if (auto parent = fs::path(common.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    tcam::save_checkpoint(common.out, model.params(), nullptr, info);
    json j = {{"checkpoint", common.out}, {"parameters", model.params().scalar_count()}};
    std::cout << j.dump(2) << "\n";
    std::cerr << "untrained checkpoint with " << model.params().scalar_count() << " parameters\n";
    return 0;
  }

  if (train->parsed()) {
    if (common.out.empty()) throw tcam::ConfigError("train: --out directory is required");
    tcam::RunConfig cfg = resolve_config(common);
    if (common.seed) cfg.train.seed = *common.seed;
    const auto corpus = tcam::synth::read_corpus(corpus_dir);
    const auto b = tcam::clip::load_bank(bank_path);
    tcam::Trainer trainer(cfg, corpus, b, tcam::synth::corpus_hash(corpus_dir), tcam::clip::bank_hash(bank_path));
    if (!resume.empty()) {
      auto ckpt = tcam::read_checkpoint(resume);
      tcam::RunConfig stored = ckpt.config;
      stored.train.max_steps = cfg.train.max_steps;
      if (tcam::to_json(stored) != tcam::to_json(cfg)) {
        throw tcam::ConfigError("resume: checkpoint config differs from the resolved config");
      }
      trainer.resume(ckpt);
      std::cerr << "resuming at step " << trainer.step() << "\n";
    }
    std::cerr << "training " << trainer.total_steps() << " steps (" << trainer.steps_per_epoch()
              << " per epoch)\n";
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = trainer.run(common.out, [](const std::string& s) { std::cerr << s << "\n"; });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json j = {{"steps", result.steps},
              {"best_val_j", result.best_val_j},
              {"best_epoch", result.best_epoch},
              {"grounding_threshold", trainer.threshold()},
              {"seconds", secs},
              {"content_version", trainer.content_version()},
              {"out", common.out},
              {"config", tcam::to_json(cfg)}};
    std::cout << j.dump(2) << "\n";
    std::cerr << "done in " << secs << " s, best val J " << result.best_val_j << "\n";
    return 0;
  }

  if (eval->parsed()) {
    SceneContext c = open_context(ckpt_path, corpus_dir, bank_path);
    std::vector<const tcam::synth::Scene*> scenes;
    if (split == "all") {
      for (const auto& s : c.corpus.scenes) scenes.push_back(&s);
    } else {
      scenes = c.corpus.split(tcam::synth::parse_split(split));
    }
    if (scenes.empty()) throw tcam::DataError("split '" + split + "' has no scenes");
    auto prepared = tcam::prepare_scenes<float>(scenes, c.bank, c.loaded.ckpt.config.features);
    const auto outputs = tcam::run_model(*c.loaded.model, prepared, c.bank);
    const auto report = tcam::build_report(outputs, prepared, c.bank, c.loaded.ckpt.info.grounding_threshold,
                                           c.loaded.ckpt.config.selection);
    json j = tcam::to_json(report);
    j["split"] = split;
    j["checkpoint"] = ckpt_path;
    j["config"] = tcam::to_json(c.loaded.ckpt.config);
    emit(j, common.out);
    std::string csv = csv_path;
    if (csv.empty() && !common.out.empty()) csv = fs::path(common.out).replace_extension(".csv").string();
    if (!csv.empty()) tcam::nn::write_file_bytes(csv, tcam::per_scene_csv(report));
    std::fprintf(stderr, "%s: V2T R@1 %.3f  T2V R@1 %.3f  J %.3f  F %.3f  coverage %.3f  precision %.3f\n",
                 split.c_str(), report.retrieval.v2t.r1, report.retrieval.t2v.r1, report.mean_j, report.mean_f,
                 report.discovery.coverage, report.discovery.precision);
    return 0;
  }

  if (discover->parsed()) {
    SceneContext c = open_context(ckpt_path, corpus_dir, bank_path);
    const auto& scene = c.corpus.by_id(scene_id);
    tcam::SelectionConfig sel = c.loaded.ckpt.config.selection;
    if (!strategy.empty()) sel.strategy = tcam::parse_strategy(strategy);
    if (top_k) sel.k = *top_k;
    tcam::PreparedScene<float> prep;
    const auto so = scene_outputs(c, scene, prep);
    const auto found = tcam::select_expressions(so.sims, c.bank, sel);
    json entries = json::array();
    for (const auto& e : found) {
      json g = grounding_record(*c.loaded.model, so.descriptors, e.expression,
                                c.bank.embeddings.row(static_cast<tcam::nn::Index>(e.index)),
                                c.loaded.ckpt.info.grounding_threshold, otsu);
      g["similarity"] = e.similarity;
      g["bank_index"] = e.index;
      entries.push_back(std::move(g));
    }
    json j = {{"scene", scene_id}, {"strategy", tcam::to_string(sel.strategy)}, {"discovered", entries}};
    emit(j, common.out);
    std::cerr << scene_id << ": " << found.size() << " expression(s)\n";
    for (const auto& e : found) std::fprintf(stderr, "  %.4f  %s\n", e.similarity, e.expression.c_str());
    return 0;
  }

  if (ground->parsed()) {
    SceneContext c = open_context(ckpt_path, corpus_dir, bank_path);
    const auto& scene = c.corpus.by_id(scene_id);
    tcam::PreparedScene<float> prep;
    const auto so = scene_outputs(c, scene, prep);
    const tcam::nn::Matrix<double> text = tcam::clip::embed_text(expression).transpose();
    tcam::nn::Matrix<double> heads;
    json j = grounding_record(*c.loaded.model, so.descriptors, tcam::clip::normalize_expression(expression), text,
                              c.loaded.ckpt.info.grounding_threshold, otsu, &heads);
    j["scene"] = scene_id;
    emit(j, common.out);
    if (!csv_path.empty()) tcam::nn::write_file_bytes(csv_path, head_csv(heads));
    std::cerr << scene_id << ": " << j["selected"].size() << " of " << heads.cols() << " tracks selected\n";
    return 0;
  }

  if (grad->parsed()) {
    if (!common.config.empty()) (void)resolve_config(common);
    const auto report = tcam::run_gradient_audit();
    emit(tcam::to_json(report), common.out);
    for (const auto& g : report.groups) {
      std::fprintf(stderr, "%-40s max rel %.3e  %s\n", g.name.c_str(), g.report.max_rel_error,
                   g.report.passed ? "ok" : "FAIL");
    }
    std::fprintf(stderr, "%zu scalars, max relative error %.3e (tolerance %.0e), %.1f s\n", report.scalars,
                 report.max_rel_error, report.tolerance, report.seconds);
    return report.passed ? 0 : 3;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const tcam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const tcam::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const tcam::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
