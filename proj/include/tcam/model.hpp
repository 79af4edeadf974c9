#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tcam/discovery.hpp"
#include "tcam/grounding.hpp"
#include "tcam/losses.hpp"
#include "tcam/mfa.hpp"
#include "tcam/pseudoclip.hpp"

namespace tcam {

struct ModelConfig {
  MfaConfig mfa;
  GroundingConfig grounding;
  DiscoveryConfig discovery;
  std::uint64_t seed = 1;
};

/// All learnable components in one parameter store.
template <class T>
class TcamModel {
 public:
  explicit TcamModel(const ModelConfig& cfg) : config_(cfg) {
    Rng rng(combine_seed(cfg.seed, 0x6d6f64656cULL));
    mfa_ = MotionFieldAttention<T>::make(params_, cfg.mfa, rng);
    grounding_ = Grounding<T>::make(params_, cfg.grounding, rng);
    head_ = VideoHead<T>::make(params_, cfg.discovery, cfg.mfa.out_dim, rng);
  }
  TcamModel(const TcamModel&) = delete;
  TcamModel& operator=(const TcamModel&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  const MotionFieldAttention<T>& mfa() const { return mfa_; }
  const Grounding<T>& grounding() const { return grounding_; }
  const VideoHead<T>& head() const { return head_; }

 private:
  ModelConfig config_;
  nn::ParamStore<T> params_;
  MotionFieldAttention<T> mfa_;
  Grounding<T> grounding_;
  VideoHead<T> head_;
};

/// Precomputed model inputs and supervision for one scene.
template <class T>
struct PreparedScene {
  const synth::Scene* scene = nullptr;
  TrackInputs<T> inputs;
  nn::Matrix<T> frames;                                  // T x 512
  std::vector<nn::Index> positives;                      // bank indices of gt expressions
  std::vector<std::vector<nn::Index>> track_pos, track_neg;  // per gt expression
};

template <class T>
PreparedScene<T> prepare_scene(const synth::Scene& scene, const clip::TextBank& bank,
                               const clip::FrameConfig& frame_cfg, clip::TextEncoder& enc) {
  PreparedScene<T> p;
  p.scene = &scene;
  p.inputs = track_inputs<T>(scene.tracks, scene.spec.width, scene.spec.height);
  p.frames = clip::frame_features(scene, frame_cfg, enc).template cast<T>();
  for (const auto& e : scene.expressions) {
    p.positives.push_back(static_cast<nn::Index>(bank.index_of(e.text)));
    p.track_pos.emplace_back(e.positives.begin(), e.positives.end());
    p.track_neg.emplace_back(e.negatives.begin(), e.negatives.end());
  }
  return p;
}

template <class T>
std::vector<PreparedScene<T>> prepare_scenes(const std::vector<const synth::Scene*>& scenes,
                                             const clip::TextBank& bank, const clip::FrameConfig& cfg) {
  clip::TextEncoder enc;
  std::vector<PreparedScene<T>> out;
  out.reserve(scenes.size());
  for (const auto* s : scenes) out.push_back(prepare_scene<T>(*s, bank, cfg, enc));
  return out;
}

template <class T>
struct SceneForward {
  nn::Var<T> descriptors;  // N_t x 512
  nn::Var<T> video;        // 1 x 512
  nn::Var<T> sims;         // 1 x N_b
  nn::Var<T> relevance;    // E x N_t for the queried expressions
};

/// Runs MFA, the video head, bank scoring, and grounding for `queries`
/// (rows of the bank).
template <class T>
SceneForward<T> forward_scene(nn::Tape<T>& tape, const TcamModel<T>& model, const PreparedScene<T>& scene,
                              const nn::Matrix<T>& bank, const std::vector<nn::Index>& queries) {
  SceneForward<T> f;
  f.descriptors = model.mfa()(tape, scene.inputs, scene.frames);
  f.video = model.head()(tape, scene.frames, &f.descriptors);
  nn::Var<T> bank_var = tape.constant(bank);
  f.sims = matmul_nt(f.video, bank_var);
  if (!queries.empty()) f.relevance = model.grounding()(tape, gather_rows(bank_var, queries), f.descriptors);
  return f;
}

/// Loss contributions of one scene inside a batch: the returned scalar is
/// (1 - lambda) / B * global + lambda / P * sum of that scene's spatial terms,
/// so summing over the batch yields the blended total.
template <class T>
struct SceneLoss {
  nn::Var<T> weighted;
  double global = 0;
  double diversity = 0, sparsity = 0, alignment = 0;  // summed over the scene's expressions
  std::size_t expressions = 0;
  std::size_t skipped_alignment = 0;
};

template <class T>
SceneLoss<T> scene_loss(nn::Tape<T>& tape, const TcamModel<T>& model, const PreparedScene<T>& scene,
                        const nn::Matrix<T>& bank, const LossConfig& cfg, std::size_t batch_size,
                        std::size_t batch_pairs, const std::vector<nn::Index>* in_batch_columns = nullptr) {
  SceneLoss<T> out;
  SceneForward<T> f = forward_scene(tape, model, scene, bank, scene.positives);
  nn::Var<T> global = infonce_row(f.sims, scene.positives, static_cast<T>(cfg.tau), in_batch_columns);
  out.global = static_cast<double>(global.scalar());
  nn::Var<T> total = scale(global, static_cast<T>((1.0 - cfg.lambda) / static_cast<double>(batch_size)));

  std::optional<nn::Var<T>> log_tau;
  if (cfg.alignment != Alignment::Ranking) log_tau = model.grounding().log_temperature(tape);
  const T spatial_weight = static_cast<T>(cfg.lambda / static_cast<double>(batch_pairs));
  for (std::size_t i = 0; i < scene.positives.size(); ++i) {
    nn::Var<T> r = slice_rows(f.relevance, static_cast<nn::Index>(i), 1);
    auto terms = spatial_terms(r, scene.track_pos[i], scene.track_neg[i], cfg, log_tau ? &*log_tau : nullptr);
    nn::Var<T> spatial = add(terms.diversity, terms.sparsity);
    out.diversity += static_cast<double>(terms.diversity.scalar());
    out.sparsity += static_cast<double>(terms.sparsity.scalar());
    if (terms.has_alignment) {
      spatial = add(spatial, terms.alignment);
      out.alignment += static_cast<double>(terms.alignment.scalar());
    } else {
      ++out.skipped_alignment;
    }
    total = add(total, scale(spatial, spatial_weight));
    ++out.expressions;
  }
  out.weighted = total;
  return out;
}

/// Inference outputs for one scene in double precision.
struct SceneOutputs {
  nn::Matrix<double> descriptors;
  Eigen::VectorXd video;
  std::vector<double> sims;
};

template <class T>
SceneOutputs infer_scene(const TcamModel<T>& model, const PreparedScene<T>& scene, const nn::Matrix<T>& bank) {
  nn::Tape<T> tape(false);
  SceneForward<T> f = forward_scene(tape, model, scene, bank, {});
  SceneOutputs out;
  out.descriptors = f.descriptors.value().template cast<double>();
  out.video = f.video.value().row(0).transpose().template cast<double>();
  const auto& s = f.sims.value();
  out.sims.resize(static_cast<std::size_t>(s.cols()));
  for (nn::Index k = 0; k < s.cols(); ++k) out.sims[static_cast<std::size_t>(k)] = std::clamp<double>(s(0, k), -1.0, 1.0);
  return out;
}

/// Relevance of each text row (E x 512) against descriptors: E x N_t.
template <class T>
nn::Matrix<double> relevance_scores(const TcamModel<T>& model, const nn::Matrix<T>& text,
                                    const nn::Matrix<double>& descriptors) {
  nn::Tape<T> tape(false);
  nn::Var<T> r = model.grounding()(tape, tape.constant(text), tape.constant(descriptors.template cast<T>()));
  return r.value().template cast<double>().cwiseMax(-1.0).cwiseMin(1.0);
}

}  // namespace tcam
