// SPDX-License-Identifier: Apache-2.0
//
// Fixed-topology feed-forward network (affine + ReLU hidden layers) with two
// head variants:
//   Policy     -> softmax over num_agents logits, logistic alpha
//   MetaWeight -> logistic lambda
//
// Parameters live in one flat vector. Layer l stores its weight matrix
// (out x in, column-major) followed by its bias. Batched routines work on
// column-per-sample matrices and are templated on the scalar so the same
// code runs on double and on Dual.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "sbd/dual.hpp"
#include "sbd/error.hpp"

namespace sbd {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

enum class HeadKind { Policy, MetaWeight };

struct NetShape {
  HeadKind head = HeadKind::Policy;
  std::size_t input_dim = 0;
  std::size_t width = 32;
  std::size_t depth = 4;        // number of affine layers
  std::size_t num_agents = 2;   // Policy head only

  std::size_t output_dim() const { return head == HeadKind::Policy ? num_agents + 1 : 1; }
  std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim : width; }
  std::size_t layer_out(std::size_t l) const { return l + 1 == depth ? output_dim() : width; }
  std::size_t layer_size(std::size_t l) const { return layer_out(l) * (layer_in(l) + 1); }
  std::size_t layer_offset(std::size_t l) const;
  std::size_t parameter_count() const;
  void validate() const;

  friend bool operator==(const NetShape&, const NetShape&) = default;
};

struct DenseNetParams {
  NetShape shape;
  std::vector<double> values;

  void validate() const;
};

struct NetGradient {
  NetShape shape;
  std::vector<double> values;
};

// Scaled-uniform initialization: every weight and bias of layer l is drawn
// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
DenseNetParams init_deterministic(const NetShape& shape, std::uint64_t seed);
DenseNetParams zero_params(const NetShape& shape);

struct NetOutput {
  std::vector<double> agent_probs;  // Policy head
  double alpha = 0.0;               // Policy head
  double lambda = 0.0;              // MetaWeight head
};

// Cotangent of a scalar loss with respect to the head outputs.
struct HeadCotangent {
  std::vector<double> d_agent_probs;
  double d_alpha = 0.0;
  double d_lambda = 0.0;
};

struct BackwardResult {
  NetGradient gradient;
  std::vector<double> input_cotangent;
};

NetOutput forward(const DenseNetParams& params, std::span<const double> input);
BackwardResult backward(const DenseNetParams& params, std::span<const double> input,
                        const HeadCotangent& upstream);

// Versioned text format; values use shortest round-trip decimal form.
std::string serialize(const DenseNetParams& params);
DenseNetParams deserialize(std::string_view text);
void save_params(const DenseNetParams& params, const std::string& path);
DenseNetParams load_params(const std::string& path);

// ---------------------------------------------------------------------------
// Batched, scalar-generic routines.

template <class T>
struct ForwardCache {
  std::vector<Matrix<T>> inputs;  // input of layer l
  std::vector<Matrix<T>> pre;     // pre-activation of layer l
};

namespace detail {

template <class T>
void check_finite(const Matrix<T>& m, std::size_t layer, const char* stage) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    using std::isfinite;
    if (!isfinite(m.data()[i]))
      throw NumericError(std::string("non-finite ") + stage + " at layer " + std::to_string(layer));
  }
}

template <class T>
T relu(const T& x) {
  return x > T(0.0) ? x : T(0.0);
}

template <class T>
T logistic(const T& x) {
  using std::exp;
  if (value_of(x) >= 0.0) return T(1.0) / (T(1.0) + exp(-x));
  const T e = exp(x);
  return e / (T(1.0) + e);
}

template <class T>
Eigen::Map<const Matrix<T>> weight(const NetShape& s, const T* p, std::size_t l) {
  return {p + s.layer_offset(l), static_cast<Eigen::Index>(s.layer_out(l)),
          static_cast<Eigen::Index>(s.layer_in(l))};
}

template <class T>
Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(const NetShape& s, const T* p,
                                                            std::size_t l) {
  return {p + s.layer_offset(l) + s.layer_out(l) * s.layer_in(l),
          static_cast<Eigen::Index>(s.layer_out(l))};
}

}  // namespace detail

// Raw output layer (output_dim x batch). `x` is input_dim x batch.
template <class T>
Matrix<T> forward_raw(const NetShape& s, const T* params, const Matrix<T>& x,
                      ForwardCache<T>* cache) {
  if (static_cast<std::size_t>(x.rows()) != s.input_dim)
    throw ShapeError("input dimension " + std::to_string(x.rows()) + " does not match network input " +
                     std::to_string(s.input_dim));
  if (cache) {
    cache->inputs.assign(s.depth, Matrix<T>());
    cache->pre.assign(s.depth, Matrix<T>());
  }
  Matrix<T> h = x;
  for (std::size_t l = 0; l < s.depth; ++l) {
    Matrix<T> z = detail::weight(s, params, l) * h;
    z.colwise() += detail::bias(s, params, l);
    if constexpr (std::is_same_v<T, double>) detail::check_finite(z, l, "activation");
    if (cache) cache->inputs[l] = std::move(h);
    if (l + 1 == s.depth) {
      if (cache) cache->pre[l] = z;
      return z;
    }
    h = z.unaryExpr([](const T& v) { return detail::relu(v); });
    if (cache) cache->pre[l] = std::move(z);
  }
  return {};
}

// Accumulates d(loss)/d(params) into `grad` (length parameter_count) given
// d(loss)/d(raw output). Optionally returns the input cotangent.
template <class T>
void backward_raw(const NetShape& s, const T* params, const ForwardCache<T>& cache,
                  Matrix<T> d_out, T* grad, Matrix<T>* d_input) {
  for (std::size_t l = s.depth; l-- > 0;) {
    if (l + 1 < s.depth) {
      const Matrix<T>& z = cache.pre[l];
      for (Eigen::Index i = 0; i < d_out.size(); ++i)
        if (!(value_of(z.data()[i]) > 0.0)) d_out.data()[i] = T(0.0);
    }
    if constexpr (std::is_same_v<T, double>) detail::check_finite(d_out, l, "gradient");
    const std::size_t out = s.layer_out(l), in = s.layer_in(l);
    Eigen::Map<Matrix<T>> gw(grad + s.layer_offset(l), static_cast<Eigen::Index>(out),
                             static_cast<Eigen::Index>(in));
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grad + s.layer_offset(l) + out * in,
                                                       static_cast<Eigen::Index>(out));
    gw.noalias() += d_out * cache.inputs[l].transpose();
    gb += d_out.rowwise().sum();
    if (l > 0 || d_input) {
      Matrix<T> d_prev = detail::weight(s, params, l).transpose() * d_out;
      if (l == 0) {
        *d_input = std::move(d_prev);
        return;
      }
      d_out = std::move(d_prev);
    }
  }
}

// Policy head: rows [0, n) are agent logits, row n the alpha pre-activation.
template <class T>
struct PolicyHead {
  Matrix<T> probs;                      // n x batch
  Eigen::Matrix<T, 1, Eigen::Dynamic> alpha;  // 1 x batch
};

template <class T>
PolicyHead<T> policy_head(const Matrix<T>& raw, std::size_t num_agents) {
  using std::exp;
  const Eigen::Index n = static_cast<Eigen::Index>(num_agents);
  PolicyHead<T> out;
  out.probs.resize(n, raw.cols());
  out.alpha.resize(raw.cols());
  for (Eigen::Index b = 0; b < raw.cols(); ++b) {
    T m = raw(0, b);
    for (Eigen::Index a = 1; a < n; ++a)
      if (raw(a, b) > m) m = raw(a, b);
    T total(0.0);
    for (Eigen::Index a = 0; a < n; ++a) {
      out.probs(a, b) = exp(raw(a, b) - m);
      total += out.probs(a, b);
    }
    for (Eigen::Index a = 0; a < n; ++a) out.probs(a, b) /= total;
    out.alpha(b) = detail::logistic(raw(n, b));
  }
  return out;
}

// d(raw) from cotangents on the policy head outputs.
template <class T>
Matrix<T> policy_head_backward(const PolicyHead<T>& head, const Matrix<T>& d_probs,
                               const Eigen::Matrix<T, 1, Eigen::Dynamic>& d_alpha) {
  const Eigen::Index n = head.probs.rows();
  Matrix<T> d_raw(n + 1, head.probs.cols());
  for (Eigen::Index b = 0; b < head.probs.cols(); ++b) {
    T dot(0.0);
    for (Eigen::Index a = 0; a < n; ++a) dot += head.probs(a, b) * d_probs(a, b);
    for (Eigen::Index a = 0; a < n; ++a) d_raw(a, b) = head.probs(a, b) * (d_probs(a, b) - dot);
    const T al = head.alpha(b);
    d_raw(n, b) = d_alpha(b) * al * (T(1.0) - al);
  }
  return d_raw;
}

template <class T>
Eigen::Matrix<T, 1, Eigen::Dynamic> meta_head(const Matrix<T>& raw) {
  Eigen::Matrix<T, 1, Eigen::Dynamic> lambda(raw.cols());
  for (Eigen::Index b = 0; b < raw.cols(); ++b) lambda(b) = detail::logistic(raw(0, b));
  return lambda;
}

template <class T>
Matrix<T> meta_head_backward(const Eigen::Matrix<T, 1, Eigen::Dynamic>& lambda,
                             const Eigen::Matrix<T, 1, Eigen::Dynamic>& d_lambda) {
  Matrix<T> d_raw(1, lambda.cols());
  for (Eigen::Index b = 0; b < lambda.cols(); ++b)
    d_raw(0, b) = d_lambda(b) * lambda(b) * (T(1.0) - lambda(b));
  return d_raw;
}

}  // namespace sbd
