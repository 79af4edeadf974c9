#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tcam/nn/matrix.hpp"
#include "tcam/rng.hpp"

namespace tcam::nn {

template <class T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  std::size_t index = 0;
  bool decay = true;  // participates in decoupled weight decay
};

/// Named parameters in registration order. Addresses are stable.
template <class T>
class ParamStore {
 public:
  using Initializer = std::function<Matrix<T>(Index rows, Index cols)>;

  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Matrix<T> value, bool decay = true) {
    if (index_.contains(name)) {
      throw ConfigError("duplicate parameter name: " + name);
    }
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->grad = Matrix<T>::Zero(value.rows(), value.cols());
    p->value = std::move(value);
    p->index = params_.size();
    p->decay = decay;
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  /// Returns the existing parameter (shape-checked) or creates it with `init`.
  Parameter<T>& get_or_create(const std::string& name, Index rows, Index cols,
                              const Initializer& init, bool decay = true) {
    if (auto* p = find(name)) {
      if (p->value.rows() != rows || p->value.cols() != cols) {
        throw ConfigError("parameter " + name + " has shape " + shape_string(p->value) +
                          ", expected " + shape_string(rows, cols));
      }
      return *p;
    }
    return add(name, init(rows, cols), decay);
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  Parameter<T>& at(const std::string& name) {
    auto* p = find(name);
    if (!p) throw ConfigError("unknown parameter: " + name);
    return *p;
  }

  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) {
      out.add(p->name, p->value.template cast<U>(), p->decay);
    }
    return out;
  }

  template <class U>
  void copy_values_from(const ParamStore<U>& other) {
    for (std::size_t i = 0; i < other.size(); ++i) {
      at(other[i].name).value = other[i].value.template cast<T>();
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

template <class T>
typename ParamStore<T>::Initializer zeros() {
  return [](Index r, Index c) { return Matrix<T>::Zero(r, c).eval(); };
}

template <class T>
typename ParamStore<T>::Initializer ones() {
  return [](Index r, Index c) { return Matrix<T>::Ones(r, c).eval(); };
}

/// Xavier/Glorot uniform for an (in x out) weight.
template <class T>
typename ParamStore<T>::Initializer xavier_uniform(Rng& rng) {
  return [&rng](Index r, Index c) {
    const double limit = std::sqrt(6.0 / static_cast<double>(r + c));
    Matrix<T> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-limit, limit));
    return m;
  };
}

template <class T>
typename ParamStore<T>::Initializer normal(Rng& rng, double stddev) {
  return [&rng, stddev](Index r, Index c) {
    Matrix<T> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal(0.0, stddev));
    return m;
  };
}

/// Rectangular identity (ones on the main diagonal) plus Gaussian noise.
template <class T>
typename ParamStore<T>::Initializer identity_plus_noise(Rng& rng, double stddev) {
  return [&rng, stddev](Index r, Index c) {
    Matrix<T> m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j)
        m(i, j) = static_cast<T>((i == j ? 1.0 : 0.0) + rng.normal(0.0, stddev));
    return m;
  };
}

}  // namespace init

}  // namespace tcam::nn
