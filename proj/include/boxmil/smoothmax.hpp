#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "boxmil/autodiff.hpp"

namespace boxmil::smax {

/// Bag-prediction reducer: hard max or one of its smooth surrogates.
struct SmoothMaxKind {
  enum class Variant { kHard, kAlphaSoftmax, kAlphaQuasimax };
  Variant variant = Variant::kHard;
  double alpha = 0.0;

  static SmoothMaxKind hard() { return {Variant::kHard, 0.0}; }
  static SmoothMaxKind softmax(double alpha) {
    require(alpha > 0.0, "alpha-softmax: alpha must be > 0");
    return {Variant::kAlphaSoftmax, alpha};
  }
  static SmoothMaxKind quasimax(double alpha) {
    require(alpha > 0.0, "alpha-quasimax: alpha must be > 0");
    return {Variant::kAlphaQuasimax, alpha};
  }
};

inline double bag_max(std::span<const double> values) {
  require(!values.empty(), "bag_max: empty bag");
  double m = values[0];
  for (double v : values) m = std::max(m, v);
  return m;
}

/// sum(p * e^{alpha p}) / sum(e^{alpha p}), max-subtracted for stability.
inline double alpha_softmax(std::span<const double> values, double alpha) {
  require(!values.empty(), "alpha_softmax: empty bag");
  require(alpha > 0.0, "alpha_softmax: alpha must be > 0");
  const double m = bag_max(values);
  double num = 0.0, den = 0.0;
  for (double v : values) {
    const double e = std::exp(alpha * (v - m));
    num += v * e;
    den += e;
  }
  return num / den;
}

/// (1/alpha) log sum(e^{alpha p}) - log(n)/alpha; a lower bound of the max.
inline double alpha_quasimax(std::span<const double> values, double alpha) {
  require(!values.empty(), "alpha_quasimax: empty bag");
  require(alpha > 0.0, "alpha_quasimax: alpha must be > 0");
  const double m = bag_max(values);
  double den = 0.0;
  for (double v : values) den += std::exp(alpha * (v - m));
  return m + (std::log(den) - std::log(static_cast<double>(values.size()))) / alpha;
}

inline double reduce(std::span<const double> values, const SmoothMaxKind& kind) {
  switch (kind.variant) {
    case SmoothMaxKind::Variant::kHard:
      return bag_max(values);
    case SmoothMaxKind::Variant::kAlphaSoftmax:
      return alpha_softmax(values, kind.alpha);
    case SmoothMaxKind::Variant::kAlphaQuasimax:
      return alpha_quasimax(values, kind.alpha);
  }
  return 0.0;
}

/// Weighted variants: the exponential mass of each element is scaled by its
/// weight, so w == 1 reduces exactly to the unweighted forms.
inline double weighted_smoothmax(std::span<const double> values, std::span<const double> weights,
                                 const SmoothMaxKind& kind) {
  require(kind.variant != SmoothMaxKind::Variant::kHard,
          "weighted_smoothmax: hard max has no weighted form");
  require(values.size() == weights.size(), "weighted_smoothmax: length mismatch");
  require(!values.empty(), "weighted_smoothmax: empty bag");
  const double m = bag_max(values);
  const double a = kind.alpha;
  if (kind.variant == SmoothMaxKind::Variant::kAlphaSoftmax) {
    double num = 0.0, den = 0.0;
    for (size_t k = 0; k < values.size(); ++k) {
      const double e = weights[k] * std::exp(a * (values[k] - m));
      num += values[k] * e;
      den += e;
    }
    return num / den;
  }
  double den = 0.0, wsum = 0.0;
  for (size_t k = 0; k < values.size(); ++k) {
    den += weights[k] * std::exp(a * (values[k] - m));
    wsum += weights[k];
  }
  return m + (std::log(den) - std::log(wsum)) / a;
}

/// Gaussian radial weights w_k = e^{-k^2 / (2 sigma^2)} with sigma chosen so
/// that w_0 = 1 and w_{n_r-1} = w_min.
struct PolarWeights {
  std::vector<double> w;
  double w_min = 0.0;
};

inline PolarWeights polar_weights(int n_r, double w_min) {
  require(n_r >= 2, "polar_weights: n_r must be >= 2");
  require(w_min > 0.0 && w_min < 1.0, "polar_weights: w_min must be in (0,1)");
  const double sigma = (n_r - 1) / std::sqrt(-2.0 * std::log(w_min));
  PolarWeights pw;
  pw.w_min = w_min;
  pw.w.resize(static_cast<size_t>(n_r));
  for (int k = 0; k < n_r; ++k)
    pw.w[static_cast<size_t>(k)] = std::exp(-(static_cast<double>(k) * k) / (2.0 * sigma * sigma));
  return pw;
}

// ---- tape variants -------------------------------------------------------

/// Bag prediction of a 1-D var under `kind`. Max subtraction uses the
/// materialized forward values; the shift cancels exactly, so treating it as
/// a constant leaves both value and gradient unchanged.
inline ad::Var bag_prediction(ad::Tape& t, ad::Var values, const SmoothMaxKind& kind) {
  const Array& v = t.value(values);
  require(v.numel() > 0, "bag_prediction: empty bag");
  if (kind.variant == SmoothMaxKind::Variant::kHard) return t.max_select(values);
  const double m = v.max();
  const double a = kind.alpha;
  ad::Var e = t.exp(t.mul_scalar(t.add_scalar(values, -m), a));
  if (kind.variant == SmoothMaxKind::Variant::kAlphaSoftmax) {
    ad::Var num = t.sum(t.mul(values, e));
    ad::Var den = t.sum(e);
    return t.div(num, den);
  }
  const double n = static_cast<double>(v.numel());
  return t.add_scalar(t.mul_scalar(t.log(t.sum(e)), 1.0 / a), m - std::log(n) / a);
}

inline ad::Var weighted_bag_prediction(ad::Tape& t, ad::Var values,
                                       std::span<const double> weights,
                                       const SmoothMaxKind& kind) {
  const Array& v = t.value(values);
  require(kind.variant != SmoothMaxKind::Variant::kHard,
          "weighted_bag_prediction: hard max has no weighted form");
  require(v.numel() == static_cast<int64_t>(weights.size()),
          "weighted_bag_prediction: length mismatch");
  require(v.numel() > 0, "weighted_bag_prediction: empty bag");
  const double m = v.max();
  const double a = kind.alpha;
  Array warr({static_cast<int>(weights.size())});
  double wsum = 0.0;
  for (size_t k = 0; k < weights.size(); ++k) {
    warr[static_cast<int64_t>(k)] = weights[k];
    wsum += weights[k];
  }
  ad::Var e = t.exp(t.mul_scalar(t.add_scalar(values, -m), a));
  ad::Var we = t.mul(e, t.constant(std::move(warr)));
  if (kind.variant == SmoothMaxKind::Variant::kAlphaSoftmax) {
    ad::Var num = t.sum(t.mul(values, we));
    ad::Var den = t.sum(we);
    return t.div(num, den);
  }
  return t.add_scalar(t.mul_scalar(t.log(t.sum(we)), 1.0 / a), m - std::log(wsum) / a);
}

}  // namespace boxmil::smax
