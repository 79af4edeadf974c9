#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tcam/nn/ops.hpp"

namespace tcam::nn {

/// y = x W + b with W stored (in x out).
template <class T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  static Linear make(ParamStore<T>& store, const std::string& name, Index in, Index out, Rng& rng,
                     bool with_bias = true) {
    Linear l;
    l.weight = &store.get_or_create(name + ".w", in, out, init::xavier_uniform<T>(rng));
    if (with_bias) l.bias = &store.get_or_create(name + ".b", 1, out, init::zeros<T>(), false);
    return l;
  }

  Index in_features() const { return weight->value.rows(); }
  Index out_features() const { return weight->value.cols(); }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const {
    if (!bias) return matmul(x, tape.parameter(*weight));
    return affine(x, tape.parameter(*weight), tape.parameter(*bias));
  }
};

/// Two-layer perceptron with GELU between the layers.
template <class T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  static Mlp make(ParamStore<T>& store, const std::string& name, Index in, Index hidden, Index out,
                  Rng& rng) {
    return {Linear<T>::make(store, name + ".fc1", in, hidden, rng),
            Linear<T>::make(store, name + ".fc2", hidden, out, rng)};
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const { return fc2(tape, gelu(fc1(tape, x))); }
};

template <class T>
struct LayerNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  T eps = T(1e-5);

  static LayerNorm make(ParamStore<T>& store, const std::string& name, Index width,
                        T eps = T(1e-5)) {
    LayerNorm ln;
    ln.gamma = &store.get_or_create(name + ".gamma", 1, width, init::ones<T>(), false);
    ln.beta = &store.get_or_create(name + ".beta", 1, width, init::zeros<T>(), false);
    ln.eps = eps;
    return ln;
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const {
    return layer_norm(x, tape.parameter(*gamma), tape.parameter(*beta), eps);
  }
};

/// Projected multi-head attention: softmax(Q K^T / sqrt(d_head)) V per head,
/// heads concatenated, then output-projected.
template <class T>
struct MultiHeadAttention {
  Linear<T> query, key, value, output;
  Index heads = 1;

  static MultiHeadAttention make(ParamStore<T>& store, const std::string& name, Index width,
                                 Index heads, Rng& rng) {
    if (heads <= 0 || width % heads != 0) {
      throw ConfigError(name + ": " + std::to_string(heads) + " heads do not divide width " +
                        std::to_string(width));
    }
    MultiHeadAttention m;
    m.query = Linear<T>::make(store, name + ".q", width, width, rng);
    // A key bias only shifts each query's logits uniformly; softmax cancels it.
    m.key = Linear<T>::make(store, name + ".k", width, width, rng, false);
    m.value = Linear<T>::make(store, name + ".v", width, width, rng);
    m.output = Linear<T>::make(store, name + ".o", width, width, rng);
    m.heads = heads;
    return m;
  }

  /// Row groups restrict attention: query rows [g*q_group, ...) see only key
  /// rows [g*k_group, ...). Pass the full row counts for plain attention.
  Var<T> operator()(Tape<T>& tape, const Var<T>& queries, const Var<T>& keys, const Var<T>& values,
                    Index q_group, Index k_group) const {
    Var<T> q = query(tape, queries);
    Var<T> k = key(tape, keys);
    Var<T> v = value(tape, values);
    return output(tape, attention(q, k, v, heads, q_group, k_group));
  }

  Var<T> operator()(Tape<T>& tape, const Var<T>& queries, const Var<T>& keys,
                    const Var<T>& values) const {
    return (*this)(tape, queries, keys, values, queries.rows(), keys.rows());
  }
};

/// Pre-normalization transformer encoder block with residual connections.
template <class T>
struct TransformerBlock {
  LayerNorm<T> norm1;
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm2;
  Mlp<T> ffn;

  static TransformerBlock make(ParamStore<T>& store, const std::string& name, Index width,
                               Index heads, Index ffn_width, Rng& rng) {
    TransformerBlock b;
    b.norm1 = LayerNorm<T>::make(store, name + ".ln1", width);
    b.attn = MultiHeadAttention<T>::make(store, name + ".attn", width, heads, rng);
    b.norm2 = LayerNorm<T>::make(store, name + ".ln2", width);
    b.ffn = Mlp<T>::make(store, name + ".ffn", width, ffn_width, width, rng);
    return b;
  }

  /// Self-attention within consecutive row groups of size `group`.
  Var<T> operator()(Tape<T>& tape, const Var<T>& x, Index group) const {
    Var<T> h = norm1(tape, x);
    Var<T> y = add(x, attn(tape, h, h, h, group, group));
    return add(y, ffn(tape, norm2(tape, y)));
  }
};

template <class T>
struct TransformerStack {
  std::vector<TransformerBlock<T>> blocks;

  static TransformerStack make(ParamStore<T>& store, const std::string& name, Index layers,
                               Index width, Index heads, Index ffn_width, Rng& rng) {
    TransformerStack s;
    for (Index i = 0; i < layers; ++i) {
      s.blocks.push_back(TransformerBlock<T>::make(store, name + "." + std::to_string(i), width,
                                                   heads, ffn_width, rng));
    }
    return s;
  }

  Var<T> operator()(Tape<T>& tape, Var<T> x, Index group) const {
    for (const auto& b : blocks) x = b(tape, x, group);
    return x;
  }
};

/// Fixed sinusoidal encoding, (length x width).
template <class T>
Matrix<T> sinusoidal_encoding(Index length, Index width) {
  Matrix<T> enc(length, width);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) /
                                                static_cast<double>(width));
      const double angle = static_cast<double>(pos) * rate;
      enc(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return enc;
}

}  // namespace tcam::nn
