#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "tcam/config.hpp"
#include "tcam/eval.hpp"
#include "tcam/model.hpp"
#include "tcam/nn/tensor_file.hpp"

namespace tcam {

/// One-cycle schedule: linear warmup from peak/final_div to peak over the
/// first floor(warmup * total) steps, then cosine decay back to peak/final_div
/// at step total-1.
inline double lr_at(long step, long total, const TrainConfig& cfg) {
  if (total < 1) throw ConfigError("lr_at: schedule has no steps");
  if (step < 0 || step >= total) {
    throw ConfigError("lr_at: step " + std::to_string(step) + " outside schedule of " + std::to_string(total));
  }
  const double peak = cfg.peak_lr;
  const double low = peak / cfg.final_div;
  if (total == 1) return peak;
  const long warm = static_cast<long>(std::floor(cfg.warmup_fraction * static_cast<double>(total)));
  if (step <= warm) {
    return warm == 0 ? peak : low + (peak - low) * static_cast<double>(step) / static_cast<double>(warm);
  }
  const double span = static_cast<double>(total - 1 - warm);
  const double progress = static_cast<double>(step - warm) / span;
  return low + (peak - low) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Decoupled-weight-decay Adam over a float parameter store.
struct AdamW {
  std::vector<nn::Matrix<float>> m, v;
  long step = 0;

  void init(const nn::ParamStore<float>& params) {
    m.clear();
    v.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.push_back(nn::Matrix<float>::Zero(params[i].value.rows(), params[i].value.cols()));
      v.push_back(nn::Matrix<float>::Zero(params[i].value.rows(), params[i].value.cols()));
    }
    step = 0;
  }

  void update(nn::ParamStore<float>& params, double lr, const TrainConfig& cfg) {
    ++step;
    const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
    const float c1 = static_cast<float>(1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
    const float c2 = static_cast<float>(1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
    const float lr_f = static_cast<float>(lr);
    const float eps = static_cast<float>(cfg.adam_eps);
    const float decay = static_cast<float>(1.0 - lr * cfg.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.decay) p.value *= decay;
      m[i] = b1 * m[i] + (1.0f - b1) * p.grad;
      v[i] = b2 * v[i] + (1.0f - b2) * p.grad.cwiseAbs2();
      p.value.array() -= lr_f * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
inline double clip_grad_norm(nn::ParamStore<float>& params, double max_norm) {
  double sq = 0;
  for (std::size_t i = 0; i < params.size(); ++i) sq += params[i].grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / (norm + 1e-6));
    for (std::size_t i = 0; i < params.size(); ++i) params[i].grad *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointInfo {
  long step = 0;
  int epoch = 0;
  double grounding_threshold = 0.0;
  double best_val_j = -1.0;
  std::uint64_t corpus_hash = 0;
  std::uint64_t bank_hash = 0;
  nlohmann::json config;
};

inline void save_checkpoint(const std::filesystem::path& base, const nn::ParamStore<float>& params, const AdamW* adam,
                            const CheckpointInfo& info) {
  nn::TensorFile f;
  for (std::size_t i = 0; i < params.size(); ++i) f.tensors.push_back({"param:" + params[i].name, params[i].value});
  if (adam) {
    for (std::size_t i = 0; i < params.size(); ++i) f.tensors.push_back({"adam.m:" + params[i].name, adam->m[i]});
    for (std::size_t i = 0; i < params.size(); ++i) f.tensors.push_back({"adam.v:" + params[i].name, adam->v[i]});
  }
  f.meta = {{"kind", "checkpoint"},
            {"step", info.step},
            {"epoch", info.epoch},
            {"adam_step", adam ? adam->step : 0},
            {"grounding_threshold", info.grounding_threshold},
            {"best_val_j", info.best_val_j},
            {"corpus_hash", info.corpus_hash},
            {"bank_hash", info.bank_hash},
            {"config", info.config}};
  nn::write_tensor_file(base, f);
}

struct LoadedCheckpoint {
  nn::TensorFile file;
  CheckpointInfo info;
  RunConfig config;
};

inline LoadedCheckpoint read_checkpoint(const std::filesystem::path& base) {
  LoadedCheckpoint c;
  c.file = nn::read_tensor_file(base);
  const auto& m = c.file.meta;
  if (m.value("kind", "") != "checkpoint") throw DataError(base.string() + " is not a checkpoint");
  try {
    c.info.step = m.at("step").get<long>();
    c.info.epoch = m.at("epoch").get<int>();
    c.info.grounding_threshold = m.at("grounding_threshold").get<double>();
    c.info.best_val_j = m.at("best_val_j").get<double>();
    c.info.corpus_hash = m.at("corpus_hash").get<std::uint64_t>();
    c.info.bank_hash = m.at("bank_hash").get<std::uint64_t>();
    c.info.config = m.at("config");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint metadata: " + std::string(e.what()));
  }
  c.config = run_config_from_json(c.info.config);
  return c;
}

/// Copies stored parameter values (and Adam moments when `adam`) into place.
inline void restore_checkpoint(const LoadedCheckpoint& c, nn::ParamStore<float>& params, AdamW* adam) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto* t = c.file.find("param:" + p.name);
    if (!t) throw DataError("checkpoint lacks parameter " + p.name);
    if (t->data.rows() != p.value.rows() || t->data.cols() != p.value.cols()) {
      throw DataError("checkpoint parameter " + p.name + " has shape " + nn::shape_string(t->data) + ", model expects " +
                      nn::shape_string(p.value));
    }
    p.value = t->data;
  }
  if (adam) {
    adam->init(params);
    adam->step = c.file.meta.value("adam_step", 0L);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto* tm = c.file.find("adam.m:" + params[i].name);
      const auto* tv = c.file.find("adam.v:" + params[i].name);
      if (!tm || !tv) throw DataError("checkpoint lacks optimizer state for " + params[i].name);
      adam->m[i] = tm->data;
      adam->v[i] = tv->data;
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;
  long step = 0;
  double v2t_r1 = 0, mean_j = 0, threshold = 0;
};

struct TrainResult {
  long steps = 0;
  double best_val_j = -1;
  int best_epoch = -1;
  std::vector<EpochRecord> epochs;
  std::vector<LossBreakdown> log;
};

inline std::string log_header() { return "step,lr,total,global,diversity,sparsity,alignment\n"; }

inline std::string log_row(long step, double lr, const LossBreakdown& b) {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", step, lr, b.total, b.global, b.diversity,
                b.sparsity, b.alignment);
  return buf;
}

class Trainer {
 public:
  Trainer(RunConfig cfg, const synth::Corpus& corpus, const clip::TextBank& bank, std::uint64_t corpus_hash,
          std::uint64_t bank_hash)
      : cfg_(std::move(cfg)), corpus_(corpus), bank_(bank), corpus_hash_(corpus_hash), bank_hash_(bank_hash),
        model_(cfg_.model_config()) {
    cfg_.validate();
    auto train = corpus.split(synth::Split::Train);
    auto val = corpus.split(synth::Split::Val);
    if (train.empty()) throw DataError("corpus has no training scenes");
    train_ = prepare_scenes<float>(train, bank, cfg_.features);
    val_ = prepare_scenes<float>(val, bank, cfg_.features);
    bank_f_ = bank.embeddings.cast<float>();
    adam_.init(model_.params());
    steps_per_epoch_ = static_cast<long>((train_.size() + cfg_.train.batch_size - 1) / cfg_.train.batch_size);
    total_steps_ = steps_per_epoch_ * cfg_.train.epochs;
  }

  TcamModel<float>& model() { return model_; }
  const AdamW& optimizer() const { return adam_; }
  long total_steps() const { return total_steps_; }
  long steps_per_epoch() const { return steps_per_epoch_; }
  long step() const { return step_; }
  double threshold() const { return threshold_; }

  void resume(const LoadedCheckpoint& ckpt) {
    if (ckpt.info.corpus_hash != corpus_hash_ || ckpt.info.bank_hash != bank_hash_) {
      throw DataError("checkpoint was trained on a different corpus or bank");
    }
    restore_checkpoint(ckpt, model_.params(), &adam_);
    step_ = ckpt.info.step;
    threshold_ = ckpt.info.grounding_threshold;
    best_val_j_ = ckpt.info.best_val_j;
  }

  CheckpointInfo info(int epoch) const {
    CheckpointInfo i;
    i.step = step_;
    i.epoch = epoch;
    i.grounding_threshold = threshold_;
    i.best_val_j = best_val_j_;
    i.corpus_hash = corpus_hash_;
    i.bank_hash = bank_hash_;
    i.config = to_json(cfg_);
    return i;
  }

  /// Scene order of `epoch`: a seeded Fisher-Yates shuffle of the train split.
  std::vector<std::size_t> epoch_order(int epoch) const {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(combine_seed(cfg_.train.seed, 0x65706f6368000000ULL + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
  }

  /// One optimizer step over the given train-scene indices.
  LossBreakdown train_step(const std::vector<std::size_t>& batch) {
    auto& params = model_.params();
    params.zero_grad();
    std::size_t pairs = 0;
    for (auto i : batch) pairs += train_[i].positives.size();
    pairs = std::max<std::size_t>(pairs, 1);
    std::vector<nn::Index> columns;
    if (cfg_.loss.in_batch) {
      std::set<nn::Index> cols;
      for (auto i : batch) cols.insert(train_[i].positives.begin(), train_[i].positives.end());
      columns.assign(cols.begin(), cols.end());
    }
    const auto* cols_ptr = cfg_.loss.in_batch ? &columns : nullptr;

    std::vector<SceneLoss<float>> losses(batch.size());
    const int threads = std::min<int>(cfg_.train.threads, static_cast<int>(batch.size()));
    if (threads <= 1) {
      for (std::size_t b = 0; b < batch.size(); ++b) {
        nn::Tape<float> tape;
        losses[b] = scene_loss(tape, model_, train_[batch[b]], bank_f_, cfg_.loss, batch.size(), pairs, cols_ptr);
        tape.backward(losses[b].weighted);
        tape.accumulate_parameter_grads();
        losses[b].weighted = {};
      }
    } else {
      // Per-item gradient sinks, reduced in item order: results do not depend
      // on the thread count.
      std::vector<std::vector<nn::Matrix<float>>> sinks(batch.size(), std::vector<nn::Matrix<float>>(params.size()));
      std::vector<std::exception_ptr> errors(batch.size());
      std::size_t next = 0;
      while (next < batch.size()) {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads && next < batch.size(); ++w, ++next) {
          pool.emplace_back([&, b = next] {
            try {
              nn::Tape<float> tape;
              losses[b] = scene_loss(tape, model_, train_[batch[b]], bank_f_, cfg_.loss, batch.size(), pairs, cols_ptr);
              tape.backward(losses[b].weighted);
              tape.accumulate_parameter_grads(sinks[b]);
              losses[b].weighted = {};
            } catch (...) {
              errors[b] = std::current_exception();
            }
          });
        }
        for (auto& t : pool) t.join();
      }
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
      for (std::size_t b = 0; b < batch.size(); ++b)
        for (std::size_t p = 0; p < params.size(); ++p)
          if (sinks[b][p].size() != 0) params[p].grad += sinks[b][p];
    }

    double global = 0, div = 0, sp = 0, al = 0;
    std::size_t skipped = 0;
    for (const auto& l : losses) {
      global += l.global;
      div += l.diversity;
      sp += l.sparsity;
      al += l.alignment;
      skipped += l.skipped_alignment;
    }
    const double nb = static_cast<double>(batch.size()), np = static_cast<double>(pairs);
    LossBreakdown b = total_loss(global / nb, div / np, sp / np, al / np, cfg_.loss.lambda);
    b.skipped_alignment = skipped;
    if (!std::isfinite(b.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(step_) + ": global=" + std::to_string(b.global) +
                         " spatial=" + std::to_string(b.spatial));
    }
    const double lr = lr_at(step_, total_steps_, cfg_.train);
    clip_grad_norm(params, cfg_.train.clip_norm);
    adam_.update(params, lr, cfg_.train);
    ++step_;
    return b;
  }

  /// Validation metrics with a threshold calibrated on the validation split.
  MetricsReport validate() {
    const EvalOutputs out = run_model(model_, val_, bank_);
    const double theta = calibrate_threshold(flatten_cases(out));
    return build_report(out, val_, bank_, theta, cfg_.selection);
  }

  using Progress = std::function<void(const std::string&)>;

  /// Runs (or continues) the schedule, writing train_log.csv, val_log.csv,
  /// best/last checkpoints and run_manifest.json under `out`.
  TrainResult run(const std::filesystem::path& out, const Progress& progress = {}) {
    std::filesystem::create_directories(out);
    const auto log_path = out / "train_log.csv";
    const auto val_path = out / "val_log.csv";
    std::string log = step_ == 0 ? log_header() : read_or(log_path, log_header());
    std::string val_log = step_ == 0 ? std::string("epoch,step,v2t_r1,mean_j,threshold\n")
                                     : read_or(val_path, "epoch,step,v2t_r1,mean_j,threshold\n");
    if (step_ > 0) log = truncate_log(log, step_);
    TrainResult result;
    result.best_val_j = best_val_j_;
    const long stop = cfg_.train.max_steps >= 0 ? std::min(total_steps_, cfg_.train.max_steps) : total_steps_;
    int epoch = static_cast<int>(step_ / steps_per_epoch_);
    while (step_ < stop) {
      epoch = static_cast<int>(step_ / steps_per_epoch_);
      const auto order = epoch_order(epoch);
      const long in_epoch = step_ - static_cast<long>(epoch) * steps_per_epoch_;
      const std::size_t begin = static_cast<std::size_t>(in_epoch) * cfg_.train.batch_size;
      const std::size_t end = std::min(order.size(), begin + cfg_.train.batch_size);
      std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
      const double lr = lr_at(step_, total_steps_, cfg_.train);
      const long s = step_;
      const LossBreakdown b = train_step(batch);
      result.log.push_back(b);
      log += log_row(s, lr, b);
      if (b.skipped_alignment && progress) {
        progress("step " + std::to_string(s) + ": alignment skipped for " + std::to_string(b.skipped_alignment) +
                 " expression(s) with empty T+ or T-");
      }
      const bool epoch_done = step_ % steps_per_epoch_ == 0;
      if (epoch_done && cfg_.train.validate_each_epoch && !val_.empty()) {
        const MetricsReport r = validate();
        EpochRecord rec{epoch, step_, r.retrieval.v2t.r1, r.mean_j, r.threshold};
        result.epochs.push_back(rec);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%d,%ld,%.10g,%.10g,%.10g\n", epoch, step_, rec.v2t_r1, rec.mean_j, rec.threshold);
        val_log += buf;
        if (r.mean_j > best_val_j_) {
          best_val_j_ = r.mean_j;
          threshold_ = r.threshold;
          result.best_epoch = epoch;
          save_checkpoint(out / "best", model_.params(), nullptr, info(epoch + 1));
        }
        if (progress) {
          std::snprintf(buf, sizeof buf, "epoch %d step %ld loss %.4f val R@1 %.3f J %.3f (theta %.3f)", epoch, step_,
                        b.total, rec.v2t_r1, rec.mean_j, rec.threshold);
          progress(buf);
        }
      }
    }
    if (best_val_j_ < 0) {
      // No validation split or validation disabled: calibrate on what exists.
      if (!val_.empty()) threshold_ = validate().threshold;
      save_checkpoint(out / "best", model_.params(), nullptr, info(epoch + 1));
    }
    save_checkpoint(out / "last", model_.params(), &adam_, info(static_cast<int>(step_ / steps_per_epoch_)));
    nn::write_file_bytes(log_path, log);
    nn::write_file_bytes(val_path, val_log);
    nlohmann::json manifest = {{"config", to_json(cfg_)},
                               {"corpus_hash", corpus_hash_},
                               {"bank_hash", bank_hash_},
                               {"content_version", content_version()},
                               {"total_steps", total_steps_},
                               {"steps_run", step_},
                               {"best_val_j", best_val_j_},
                               {"grounding_threshold", threshold_}};
    nn::write_file_bytes(out / "run_manifest.json", manifest.dump(1) + "\n");
    result.steps = step_;
    result.best_val_j = best_val_j_;
    return result;
  }

  /// Hash of the resolved config plus data hashes; identifies a run's inputs.
  std::string content_version() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(to_json(cfg_).dump()) ^ mix64(corpus_hash_) ^
                                                  mix64(bank_hash_ + 1)));
    return buf;
  }

 private:
  static std::string read_or(const std::filesystem::path& p, const std::string& fallback) {
    return std::filesystem::exists(p) ? nn::read_file_bytes(p) : fallback;
  }
  /// Keeps the header and rows for steps < `steps`.
  static std::string truncate_log(const std::string& log, long steps) {
    std::string out;
    std::size_t pos = 0;
    long line_no = 0;
    while (pos < log.size()) {
      const auto nl = log.find('\n', pos);
      const auto end = nl == std::string::npos ? log.size() : nl + 1;
      if (line_no == 0 || line_no <= steps) out.append(log, pos, end - pos);
      pos = end;
      ++line_no;
    }
    return out;
  }

  RunConfig cfg_;
  const synth::Corpus& corpus_;
  const clip::TextBank& bank_;
  std::uint64_t corpus_hash_, bank_hash_;
  TcamModel<float> model_;
  std::vector<PreparedScene<float>> train_, val_;
  nn::Matrix<float> bank_f_;
  AdamW adam_;
  long steps_per_epoch_ = 0, total_steps_ = 0, step_ = 0;
  double threshold_ = 0.0, best_val_j_ = -1.0;
};

}  // namespace tcam
