#pragma once

#include <string>
#include <vector>

#include "tcam/nn/layers.hpp"
#include "tcam/synth.hpp"

namespace tcam {

struct MfaConfig {
  nn::Index d_model = 256;
  nn::Index heads = 16;
  nn::Index temporal_layers = 2;
  nn::Index spatial_layers = 2;
  nn::Index ffn_width = 0;  // 0 means d_model
  nn::Index out_dim = 512;
  nn::Index frame_dim = 512;
  bool use_velocity = true;
  bool use_temporal = true;

  void validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0) {
      throw ConfigError("mfa: d_model " + std::to_string(d_model) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
    if (out_dim != 512) throw ConfigError("mfa: out_dim must be 512");
    if (temporal_layers < 0 || spatial_layers < 0) throw ConfigError("mfa: negative layer count");
  }
  nn::Index ffn() const { return ffn_width > 0 ? ffn_width : d_model; }
};

/// Per-token inputs of a track set, rows ordered track-major (j * T + t).
template <class T>
struct TrackInputs {
  nn::Matrix<T> position;  // normalized by canvas extent
  nn::Matrix<T> velocity;  // backward difference scaled by (T-1)/extent
  std::vector<nn::Index> visibility;  // 0/1 per token
  std::vector<nn::Index> frame;       // t per token
  nn::Index tracks = 0;
  nn::Index frames = 0;
};

template <class T>
TrackInputs<T> track_inputs(const synth::TrackSet& ts, double width, double height) {
  if (ts.tracks <= 0) throw DataError("encode_tracks: no tracks");
  if (ts.frames <= 0) throw DataError("encode_tracks: no frames");
  TrackInputs<T> in;
  in.tracks = ts.tracks;
  in.frames = ts.frames;
  const nn::Index n = static_cast<nn::Index>(ts.tracks) * ts.frames;
  in.position.resize(n, 2);
  in.velocity.resize(n, 2);
  in.visibility.resize(static_cast<std::size_t>(n));
  in.frame.resize(static_cast<std::size_t>(n));
  const double vscale = ts.frames > 1 ? static_cast<double>(ts.frames - 1) : 1.0;
  for (int j = 0; j < ts.tracks; ++j) {
    for (int t = 0; t < ts.frames; ++t) {
      const nn::Index row = static_cast<nn::Index>(j) * ts.frames + t;
      const synth::Point p = ts.at(j, t);
      in.position(row, 0) = static_cast<T>(p.x / width);
      in.position(row, 1) = static_cast<T>(p.y / height);
      const synth::Point v = t == 0 ? synth::Point{} : p - ts.at(j, t - 1);
      in.velocity(row, 0) = static_cast<T>(v.x * vscale / width);
      in.velocity(row, 1) = static_cast<T>(v.y * vscale / height);
      in.visibility[static_cast<std::size_t>(row)] = ts.visible(j, t) ? 1 : 0;
      in.frame[static_cast<std::size_t>(row)] = t;
    }
  }
  return in;
}

/// Motion Field Attention encoder: track tokens -> temporal transformer per
/// track -> mean over time -> spatial transformer across tracks -> 512-d unit
/// descriptors.
template <class T>
struct MotionFieldAttention {
  MfaConfig config;
  nn::Mlp<T> pos_mlp, vel_mlp, vis_mlp;
  nn::Linear<T> frame_proj;
  nn::TransformerStack<T> temporal, spatial;
  nn::LayerNorm<T> final_norm;
  nn::Linear<T> out_proj;

  static MotionFieldAttention make(nn::ParamStore<T>& store, const MfaConfig& cfg, Rng& rng) {
    cfg.validate();
    MotionFieldAttention m;
    m.config = cfg;
    const auto d = cfg.d_model;
    m.pos_mlp = nn::Mlp<T>::make(store, "mfa.pos", 2, d, d, rng);
    m.vel_mlp = nn::Mlp<T>::make(store, "mfa.vel", 2, d, d, rng);
    m.vis_mlp = nn::Mlp<T>::make(store, "mfa.vis", 1, d, d, rng);
    m.frame_proj = nn::Linear<T>::make(store, "mfa.frame", cfg.frame_dim, d, rng);
    m.temporal = nn::TransformerStack<T>::make(store, "mfa.temporal", cfg.temporal_layers, d,
                                               cfg.heads, cfg.ffn(), rng);
    m.spatial = nn::TransformerStack<T>::make(store, "mfa.spatial", cfg.spatial_layers, d,
                                              cfg.heads, cfg.ffn(), rng);
    m.final_norm = nn::LayerNorm<T>::make(store, "mfa.norm", d);
    m.out_proj = nn::Linear<T>::make(store, "mfa.out", d, cfg.out_dim, rng);
    return m;
  }

  /// `frames` is T x frame_dim. Returns N_t x 512 unit rows.
  nn::Var<T> operator()(nn::Tape<T>& tape, const TrackInputs<T>& in, const nn::Matrix<T>& frames) const {
    if (frames.rows() != in.frames) {
      throw DataError("encode_tracks: frame features have " + std::to_string(frames.rows()) +
                      " rows but tracks have " + std::to_string(in.frames) + " frames");
    }
    if (frames.cols() != config.frame_dim) throw DataError("encode_tracks: frame feature width mismatch");
    if (in.tracks <= 0) throw DataError("encode_tracks: no tracks");
    // Encoding in a content-defined track order makes every reduction over
    // tracks run in the same order, so permuting the input permutes the
    // output bit for bit.
    const auto order = canonical_track_order(in);
    return gather_rows(encode(tape, reorder_tracks(in, order), frames), nn::inverse_permutation(order));
  }

  /// Lexicographic order of tracks over their position, velocity and
  /// visibility sequences.
  static std::vector<nn::Index> canonical_track_order(const TrackInputs<T>& in) {
    nn::Matrix<T> keys(in.tracks, 5 * in.frames);
    for (nn::Index j = 0; j < in.tracks; ++j) {
      for (nn::Index t = 0; t < in.frames; ++t) {
        const nn::Index row = j * in.frames + t;
        keys(j, t) = in.position(row, 0);
        keys(j, in.frames + t) = in.position(row, 1);
        keys(j, 2 * in.frames + t) = in.velocity(row, 0);
        keys(j, 3 * in.frames + t) = in.velocity(row, 1);
        keys(j, 4 * in.frames + t) = static_cast<T>(in.visibility[static_cast<std::size_t>(row)]);
      }
    }
    return nn::canonical_row_order(keys);
  }

  static TrackInputs<T> reorder_tracks(const TrackInputs<T>& in, const std::vector<nn::Index>& order) {
    TrackInputs<T> out = in;
    for (nn::Index j = 0; j < in.tracks; ++j) {
      const nn::Index src = order[static_cast<std::size_t>(j)];
      out.position.middleRows(j * in.frames, in.frames) = in.position.middleRows(src * in.frames, in.frames);
      out.velocity.middleRows(j * in.frames, in.frames) = in.velocity.middleRows(src * in.frames, in.frames);
      std::copy_n(in.visibility.begin() + src * in.frames, in.frames, out.visibility.begin() + j * in.frames);
    }
    return out;
  }

 private:
  nn::Var<T> encode(nn::Tape<T>& tape, const TrackInputs<T>& in, const nn::Matrix<T>& frames) const {
    nn::Var<T> tokens = pos_mlp(tape, tape.constant(in.position));
    if (config.use_velocity) tokens = add(tokens, vel_mlp(tape, tape.constant(in.velocity)));
    nn::Matrix<T> bits(2, 1);
    bits << T(0), T(1);
    tokens = add(tokens, gather_rows(vis_mlp(tape, tape.constant(bits)), in.visibility));
    nn::Var<T> per_frame = add(frame_proj(tape, tape.constant(frames)),
                               tape.constant(nn::sinusoidal_encoding<T>(in.frames, config.d_model)));
    tokens = add(tokens, gather_rows(per_frame, in.frame));

    if (config.use_temporal) tokens = temporal(tape, tokens, in.frames);
    nn::Var<T> track_tokens = group_mean_rows(tokens, in.frames);
    track_tokens = spatial(tape, track_tokens, in.tracks);
    nn::Var<T> out = out_proj(tape, final_norm(tape, track_tokens));
    return normalize_rows(out, 0, "motion descriptor");
  }
};

/// Mean of descriptor rows, re-normalized.
template <class T>
nn::Var<T> pooled_motion_summary(const nn::Var<T>& descriptors) {
  if (descriptors.rows() < 1) throw DataError("pooled_motion_summary: no descriptors");
  return normalize_rows(mean_rows(descriptors), 0, "degenerate zero-norm pool");
}

}  // namespace tcam
