#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <set>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcam/losses.hpp"
#include "tcam/model.hpp"
#include "tcam/nn/gradcheck.hpp"

namespace tcam {

/// Four-track, six-frame, three-expression scene: a linear mover partly
/// behind an occluder, a circling agent, a falling agent and one background
/// track.
inline synth::Scene audit_scene() {
  synth::SceneSpec spec;
  spec.frames = 6;
  spec.grid_rows = 2;
  spec.grid_cols = 2;
  spec.jitter = 0.5;
  spec.seed = 2024;
  synth::AgentSpec lin{synth::MotionClass::Linear, {10, 10, 40, 40}, {}, "bear"};
  lin.params.velocity = {4.0, 0.3};
  synth::AgentSpec circ{synth::MotionClass::Circular, {60, 10, 90, 40}, {}, "panda"};
  circ.params.center = {70, 25};
  circ.params.angular_rate = 2.0 * std::numbers::pi / 5.0;
  synth::AgentSpec fall{synth::MotionClass::Falling, {10, 55, 40, 80}, {}, "dog"};
  fall.params.gravity = 1.2;
  spec.agents = {lin, circ, fall};
  spec.occluders = {{40, 20, 50, 30}};
  auto sim = synth::simulate(spec);
  synth::Scene s;
  s.id = "audit";
  s.spec = spec;
  s.tracks = std::move(sim.tracks);
  s.expressions = std::move(sim.expressions);
  return s;
}

inline clip::TextBank audit_bank(const synth::Scene& scene) {
  std::vector<clip::BankEntry> entries;
  for (const auto& e : scene.expressions) entries.push_back({e.text, std::string(synth::to_string(e.motion))});
  entries.push_back({"cat jumping up", "jumping"});
  entries.push_back({"horse staying still", "stationary"});
  entries.push_back({"dog moving back and forth", "oscillating"});
  return clip::build_text_bank(entries);
}

inline ModelConfig audit_model_config() {
  ModelConfig m;
  m.mfa.d_model = 8;
  m.mfa.heads = 2;
  m.mfa.temporal_layers = 2;
  m.mfa.spatial_layers = 2;
  m.mfa.ffn_width = 8;
  m.grounding.heads = 2;
  m.grounding.head_dim = 4;
  m.grounding.init_noise = 0.3;
  m.discovery.alpha = 1.0;
  m.seed = 5;
  return m;
}

struct AuditGroup {
  std::string name;
  nn::GradCheckReport report;
  double seconds = 0;
};

struct AuditReport {
  std::vector<AuditGroup> groups;
  double max_rel_error = 0;
  double tolerance = 1e-4;
  double seconds = 0;
  bool passed = true;
  std::size_t scalars = 0;
};

/// Finite-difference audit of every learnable component and loss variant.
inline AuditReport run_gradient_audit(const nn::GradCheckOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  AuditReport rep;
  rep.tolerance = opts.tolerance;
  auto lap = std::chrono::steady_clock::now();
  auto record = [&](std::string name, nn::GradCheckReport r) {
    const auto now = std::chrono::steady_clock::now();
    const double secs = std::chrono::duration<double>(now - lap).count();
    lap = now;
    rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
    rep.passed = rep.passed && r.passed;
    for (const auto& e : r.entries) rep.scalars += e.scalars;
    rep.groups.push_back({std::move(name), std::move(r), secs});
  };

  const synth::Scene scene = audit_scene();
  const clip::TextBank bank = audit_bank(scene);
  clip::TextEncoder enc;
  const clip::FrameConfig frames{0.1};
  const PreparedScene<double> prep = prepare_scene<double>(scene, bank, frames, enc);
  const nn::Matrix<double>& bank_m = bank.embeddings;
  TcamModel<double> model(audit_model_config());
  auto& params = model.params();

  std::set<std::string> mfa_and_grounding;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != "discovery.head" && params[i].name != "grounding.log_tau") mfa_and_grounding.insert(params[i].name);
  }

  // MFA and grounding through the full blended objective.
  LossConfig ranking;
  ranking.lambda = 0.5;
  {
    auto o = opts;
    o.only = mfa_and_grounding;
    record("mfa+grounding (full loss, ranking)", nn::finite_diff_check(params, [&](nn::Tape<double>& t) {
          return scene_loss(t, model, prep, bank_m, ranking, 1, prep.positives.size()).weighted;
        }, o));
  }

  // Fixed descriptors and text: grounding under every alignment variant.
  nn::Matrix<double> descriptors;
  {
    nn::Tape<double> t(false);
    descriptors = model.mfa()(t, prep.inputs, prep.frames).value();
  }
  nn::Matrix<double> text(static_cast<nn::Index>(prep.positives.size()), bank_m.cols());
  for (std::size_t i = 0; i < prep.positives.size(); ++i) text.row(static_cast<nn::Index>(i)) = bank_m.row(prep.positives[i]);
  for (Alignment a : {Alignment::Ranking, Alignment::Bce, Alignment::WeightedBce, Alignment::Focal}) {
    LossConfig cfg;
    cfg.alignment = a;
    auto o = opts;
    o.only = {"grounding.query", "grounding.key", "grounding.log_tau"};
    record("grounding (" + std::string(to_string(a)) + ")", nn::finite_diff_check(params, [&](nn::Tape<double>& t) {
          nn::Var<double> r = model.grounding()(t, t.constant(text), t.constant(descriptors));
          std::optional<nn::Var<double>> log_tau;
          if (a != Alignment::Ranking) log_tau = model.grounding().log_temperature(t);
          nn::Var<double> total = t.constant(nn::scalar_matrix(0.0));
          for (std::size_t i = 0; i < prep.positives.size(); ++i) {
            auto terms = spatial_terms(slice_rows(r, static_cast<nn::Index>(i), 1), prep.track_pos[i], prep.track_neg[i],
                                       cfg, log_tau ? &*log_tau : nullptr);
            total = add(total, add(add(terms.diversity, terms.sparsity), terms.alignment));
          }
          return total;
        }, o));
  }

  // Video head with fixed pooled input.
  {
    nn::Matrix<double> pooled;
    {
      nn::Tape<double> t(false);
      nn::Var<double> m = t.constant(descriptors);
      pooled = add(t.constant(nn::Matrix<double>(prep.frames.colwise().mean())), scale(pooled_motion_summary(m), 1.0)).value();
    }
    auto o = opts;
    o.only = {"discovery.head"};
    record("discovery head (global InfoNCE)", nn::finite_diff_check(params, [&](nn::Tape<double>& t) {
          nn::Var<double> e = normalize_rows(matmul(t.constant(pooled), t.parameter(*model.head().weight)));
          return infonce_row(matmul_nt(e, t.constant(bank_m)), prep.positives, 0.1);
        }, o));
  }

  // Loss functions with the scores themselves as parameters.
  {
    nn::ParamStore<double> lp;
    Rng rng(99);
    auto& r = lp.add("scores", nn::init::normal<double>(rng, 0.4)(3, 4));
    auto& sims = lp.add("similarities", nn::init::normal<double>(rng, 0.3)(2, 6));
    auto& lt = lp.add("log_tau", nn::scalar_matrix(std::log(0.7)));
    const std::vector<std::vector<nn::Index>> pos{{0}, {1, 2}, {3}};
    const std::vector<std::vector<nn::Index>> neg{{1, 2, 3}, {0, 3}, {0, 1, 2}};
    const std::vector<std::vector<nn::Index>> sim_pos{{0, 4}, {2}};
    for (Alignment a : {Alignment::Ranking, Alignment::Bce, Alignment::WeightedBce, Alignment::Focal}) {
      LossConfig cfg;
      cfg.alignment = a;
      cfg.lambda = 0.3;
      record("losses (" + std::string(to_string(a)) + ")", nn::finite_diff_check(lp, [&](nn::Tape<double>& t) {
            nn::Var<double> rv = t.parameter(r);
            nn::Var<double> lv = t.parameter(lt);
            nn::Var<double> spatial = t.constant(nn::scalar_matrix(0.0));
            for (std::size_t i = 0; i < pos.size(); ++i) {
              auto terms = spatial_terms(slice_rows(rv, static_cast<nn::Index>(i), 1), pos[i], neg[i], cfg, &lv);
              spatial = add(spatial, add(add(terms.diversity, terms.sparsity), terms.alignment));
            }
            nn::Var<double> global = global_infonce(t.parameter(sims), sim_pos, cfg.tau);
            return add(scale(global, 1.0 - cfg.lambda), scale(spatial, cfg.lambda / 3.0));
          }, opts));
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline nlohmann::json to_json(const AuditReport& r) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.groups) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& e : g.report.entries) {
      params.push_back({{"name", e.name},
                        {"scalars", e.scalars},
                        {"max_rel_error", e.max_rel_error},
                        {"max_abs_error", e.max_abs_error},
                        {"passed", e.passed}});
    }
    groups.push_back({{"group", g.name}, {"max_rel_error", g.report.max_rel_error}, {"passed", g.report.passed}, {"seconds", g.seconds}, {"parameters", params}});
  }
  return {{"passed", r.passed},
          {"max_rel_error", r.max_rel_error},
          {"tolerance", r.tolerance},
          {"scalars_checked", r.scalars},
          {"seconds", r.seconds},
          {"groups", groups}};
}

}  // namespace tcam
