#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gateformer/error.hpp"
#include "gateformer/tensor.hpp"

namespace gateformer {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for a fixed, ordered list of parameters.
template <typename T>
class AdamState {
 public:
  AdamState() = default;
  AdamState(std::span<Parameter<T>* const> params, AdamOptions opts) : opts_(opts) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Parameter<T>* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  const AdamOptions& options() const noexcept { return opts_; }
  std::uint64_t step_count() const noexcept { return t_; }
  const Tensor<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor<T>& second_moment(std::size_t i) const { return v_.at(i); }

  /// Bias-corrected Adam update applied in place to every parameter from its
  /// grad buffer. Increments the step counter by exactly one.
  void step(std::span<Parameter<T>* const> params) {
    if (params.size() != m_.size()) throw ShapeError("adam: parameter list changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->value.shape() != m_[i].shape() || params[i]->grad.shape() != m_[i].shape()) {
        throw ShapeError("adam: shape mismatch for '" + params[i]->name + "'");
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& value = params[i]->value;
      const auto& grad = params[i]->grad;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < value.size(); ++j) {
        const T g = grad[j];
        m[j] = b1 * m[j] + (T{1} - b1) * g;
        v[j] = b2 * v[j] + (T{1} - b2) * g * g;
        const double m_hat = static_cast<double>(m[j]) / bc1;
        const double v_hat = static_cast<double>(v[j]) / bc2;
        value[j] -= static_cast<T>(opts_.lr * m_hat / (std::sqrt(v_hat) + opts_.eps));
      }
    }
  }

 private:
  AdamOptions opts_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::uint64_t t_ = 0;
};

}  // namespace gateformer
