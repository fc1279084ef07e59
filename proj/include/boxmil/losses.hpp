#pragma once

#include <vector>

#include "boxmil/autodiff.hpp"
#include "boxmil/bags.hpp"
#include "boxmil/geometry.hpp"
#include "boxmil/smoothmax.hpp"

namespace boxmil::loss {

inline constexpr double kClampEps = 1e-6;

/// All free hyperparameters of the training objectives. The smooth-max
/// variant is shared; alpha is separate for the parallel and polar terms
/// because their useful ranges differ by an order of magnitude.
struct LossConfig {
  double lambda = 10.0;
  double beta = 0.25;
  double gamma = 2.0;
  smax::SmoothMaxKind::Variant smooth = smax::SmoothMaxKind::Variant::kAlphaQuasimax;
  double alpha_pa = 4.0;
  double alpha_po = 1.0;
  mil::AngleSet angles;
  geom::PolarGrid grid;
  double w_min = 0.5;
  int margin = 2;
  bool use_weights = true;

  smax::SmoothMaxKind kind_pa() const { return make_kind(alpha_pa); }
  smax::SmoothMaxKind kind_po() const { return make_kind(alpha_po); }

  void validate() const {
    require(lambda >= 0.0, "loss config: lambda must be >= 0");
    require(beta >= 0.0 && beta <= 1.0, "loss config: beta must be in [0,1]");
    require(gamma >= 0.0, "loss config: gamma must be >= 0");
    require(w_min > 0.0 && w_min < 1.0, "loss config: w_min must be in (0,1)");
    require(margin >= 0, "loss config: margin must be >= 0");
    if (smooth != smax::SmoothMaxKind::Variant::kHard)
      require(alpha_pa > 0.0 && alpha_po > 0.0, "loss config: alpha must be > 0");
  }

 private:
  smax::SmoothMaxKind make_kind(double alpha) const {
    smax::SmoothMaxKind k;
    k.variant = smooth;
    k.alpha = alpha;
    return k;
  }
};

namespace detail {

inline ad::Var clamped(ad::Tape& t, ad::Var p) { return t.clamp(p, kClampEps, 1.0 - kClampEps); }

inline ad::Var one_minus(ad::Tape& t, ad::Var p) { return t.add_scalar(t.mul_scalar(p, -1.0), 1.0); }

inline ad::Var bag_prediction(ad::Tape& t, const mil::Bag& bag, const smax::SmoothMaxKind& kind,
                              bool use_weights) {
  if (use_weights && !bag.weights.empty() &&
      kind.variant != smax::SmoothMaxKind::Variant::kHard)
    return smax::weighted_bag_prediction(t, bag.values, bag.weights, kind);
  return smax::bag_prediction(t, bag.values, kind);
}

/// sum over positive bags of beta (1-P)^gamma log P (a non-positive scalar).
inline ad::Var focal_positive_sum(ad::Tape& t, const std::vector<mil::Bag>& pos, double beta,
                                  double gamma, const smax::SmoothMaxKind& kind,
                                  bool use_weights) {
  std::vector<ad::Var> terms;
  for (const mil::Bag& b : pos) {
    ad::Var p = clamped(t, bag_prediction(t, b, kind, use_weights));
    ad::Var term = t.mul(t.pow_scalar(one_minus(t, p), gamma), t.log(p));
    terms.push_back(t.mul_scalar(term, beta));
  }
  if (terms.empty()) return t.constant(0.0);
  return t.add_n(terms);
}

/// sum over a 1-D var of negative-bag values of (1-beta) P^gamma log(1-P).
inline ad::Var focal_negative_sum(ad::Tape& t, ad::Var values, double beta, double gamma) {
  if (!values.valid()) return t.constant(0.0);
  ad::Var p = clamped(t, values);
  ad::Var term = t.mul(t.pow_scalar(p, gamma), t.log(one_minus(t, p)));
  return t.mul_scalar(t.sum(term), 1.0 - beta);
}

}  // namespace detail

/// Binary cross entropy over bag predictions, averaged over all bags.
inline ad::Var unary_baseline(ad::Tape& t, const std::vector<mil::Bag>& pos,
                              const std::vector<mil::Bag>& neg,
                              const smax::SmoothMaxKind& kind) {
  require(!pos.empty() || !neg.empty(), "unary_baseline: no bags");
  std::vector<ad::Var> terms;
  for (const mil::Bag& b : pos)
    terms.push_back(t.log(detail::clamped(t, detail::bag_prediction(t, b, kind, false))));
  for (const mil::Bag& b : neg)
    terms.push_back(t.log(detail::one_minus(
        t, detail::clamped(t, detail::bag_prediction(t, b, kind, false)))));
  const double n = static_cast<double>(pos.size() + neg.size());
  return t.mul_scalar(t.add_n(terms), -1.0 / n);
}

/// Mean squared difference over the 4-neighborhood edge set of one category
/// channel; each undirected edge counted once.
inline ad::Var pairwise_loss(ad::Tape& t, ad::Var pred, int category) {
  const Array& p = t.value(pred);
  require(p.rank() == 3, "pairwise_loss: pred must be H x W x C");
  const int H = p.dim(0), W = p.dim(1);
  require(category >= 1 && category <= p.dim(2), "pairwise_loss: bad category");
  const int64_t edges = static_cast<int64_t>(H) * (W - 1) + static_cast<int64_t>(W) * (H - 1);
  if (edges == 0) return t.constant(0.0);
  ad::Var plane = t.slice_c(pred, category - 1);
  std::vector<ad::Var> sums;
  if (W > 1) {
    std::vector<int64_t> left, right;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x + 1 < W; ++x) {
        left.push_back(static_cast<int64_t>(y) * W + x);
        right.push_back(static_cast<int64_t>(y) * W + x + 1);
      }
    ad::Var d = t.sub(t.gather(plane, std::move(left)), t.gather(plane, std::move(right)));
    sums.push_back(t.sum(t.mul(d, d)));
  }
  if (H > 1) {
    std::vector<int64_t> top, bottom;
    for (int y = 0; y + 1 < H; ++y)
      for (int x = 0; x < W; ++x) {
        top.push_back(static_cast<int64_t>(y) * W + x);
        bottom.push_back(static_cast<int64_t>(y + 1) * W + x);
      }
    ad::Var d = t.sub(t.gather(plane, std::move(top)), t.gather(plane, std::move(bottom)));
    sums.push_back(t.sum(t.mul(d, d)));
  }
  return t.mul_scalar(t.add_n(sums), 1.0 / static_cast<double>(edges));
}

/// Focal loss over bag predictions normalized by N+ = max(1, |pos|). Polar
/// bags use the weighted reducer when `use_weights` is set.
inline ad::Var unary_focal(ad::Tape& t, const std::vector<mil::Bag>& pos,
                           const std::vector<mil::Bag>& neg, double beta, double gamma,
                           const smax::SmoothMaxKind& kind, bool use_weights) {
  std::vector<ad::Var> terms;
  terms.push_back(detail::focal_positive_sum(t, pos, beta, gamma, kind, use_weights));
  for (const mil::Bag& b : neg) {
    ad::Var p = detail::clamped(t, detail::bag_prediction(t, b, kind, use_weights));
    ad::Var term = t.mul(t.pow_scalar(p, gamma), t.log(detail::one_minus(t, p)));
    terms.push_back(t.mul_scalar(term, 1.0 - beta));
  }
  const double n_pos = std::max<double>(1.0, static_cast<double>(pos.size()));
  return t.mul_scalar(t.add_n(terms), -1.0 / n_pos);
}

struct TotalLossTerms {
  bool parallel = true;
  bool polar = true;
};

struct OriginRecord {
  geom::BBox box;
  mil::PixelCoord origin;
};

/// Total objective: per category, focal unary terms from parallel and polar
/// positive bags (negative pixel bags computed once and shared) plus the
/// weighted pairwise term. Polar origins are re-selected from the current
/// forward values.
inline ad::Var total_loss(ad::Tape& t, ad::Var pred, const std::vector<geom::BBox>& boxes,
                          const LossConfig& config, int categories,
                          TotalLossTerms terms = {},
                          std::vector<OriginRecord>* origins = nullptr) {
  config.validate();
  const Array& p = t.value(pred);
  require(p.rank() == 3 && p.dim(2) == categories, "total_loss: pred must be H x W x C");
  for (const geom::BBox& b : boxes)
    require(b.category >= 1 && b.category <= categories, "total_loss: category out of range");
  require(terms.parallel || terms.polar, "total_loss: at least one unary term required");
  std::vector<ad::Var> per_category;
  for (int c = 1; c <= categories; ++c) {
    ad::Var neg_sum = detail::focal_negative_sum(
        t, mil::outside_pixel_values(t, pred, boxes, c), config.beta, config.gamma);
    if (terms.parallel) {
      std::vector<mil::Bag> pos;
      for (const geom::BBox& b : boxes) {
        if (b.category != c) continue;
        auto bags = mil::parallel_positive_bags(t, pred, b, config.angles, config.margin);
        pos.insert(pos.end(), bags.begin(), bags.end());
      }
      ad::Var unary = t.add(
          detail::focal_positive_sum(t, pos, config.beta, config.gamma, config.kind_pa(), false),
          neg_sum);
      per_category.push_back(
          t.mul_scalar(unary, -1.0 / std::max<double>(1.0, static_cast<double>(pos.size()))));
    }
    if (terms.polar) {
      std::vector<mil::Bag> pos;
      for (const geom::BBox& b : boxes) {
        if (b.category != c) continue;
        mil::PixelCoord origin = mil::select_polar_origin(p, b, c);
        if (origins != nullptr) origins->push_back({b, origin});
        auto bags =
            mil::polar_positive_bags(t, pred, b, origin, config.grid, config.margin, config.w_min);
        pos.insert(pos.end(), bags.begin(), bags.end());
      }
      ad::Var unary = t.add(detail::focal_positive_sum(t, pos, config.beta, config.gamma,
                                                       config.kind_po(), config.use_weights),
                            neg_sum);
      per_category.push_back(
          t.mul_scalar(unary, -1.0 / std::max<double>(1.0, static_cast<double>(pos.size()))));
    }
    if (config.lambda > 0.0)
      per_category.push_back(t.mul_scalar(pairwise_loss(t, pred, c), config.lambda));
  }
  return t.add_n(per_category);
}

/// Crossing-line MIL baseline: per category, bag cross entropy plus the
/// weighted pairwise term.
inline ad::Var mil_baseline_loss(ad::Tape& t, ad::Var pred, const std::vector<geom::BBox>& boxes,
                                 double lambda, const smax::SmoothMaxKind& kind, int categories) {
  require(lambda >= 0.0, "mil_baseline_loss: lambda must be >= 0");
  const Array& p = t.value(pred);
  require(p.rank() == 3 && p.dim(2) == categories, "mil_baseline_loss: pred must be H x W x C");
  for (const geom::BBox& b : boxes)
    require(b.category >= 1 && b.category <= categories,
            "mil_baseline_loss: category out of range");
  std::vector<ad::Var> per_category;
  for (int c = 1; c <= categories; ++c) {
    std::vector<mil::Bag> pos;
    for (const geom::BBox& b : boxes) {
      if (b.category != c) continue;
      auto bags = mil::baseline_positive_bags(t, pred, b);
      pos.insert(pos.end(), bags.begin(), bags.end());
    }
    std::vector<mil::Bag> neg = mil::baseline_negative_bags(t, pred, boxes, c);
    if (!pos.empty() || !neg.empty()) per_category.push_back(unary_baseline(t, pos, neg, kind));
    if (lambda > 0.0) per_category.push_back(t.mul_scalar(pairwise_loss(t, pred, c), lambda));
  }
  if (per_category.empty()) return t.constant(0.0);
  return t.add_n(per_category);
}

/// Per-pixel binary cross entropy against a full mask (the fully supervised
/// reference objective).
inline ad::Var supervised_bce_loss(ad::Tape& t, ad::Var pred, const Array& target) {
  const Array& p = t.value(pred);
  require(p.same_shape(target), "supervised_bce_loss: shape mismatch");
  Array pos_mask(target.shape()), neg_mask(target.shape());
  for (int64_t i = 0; i < target.numel(); ++i) {
    pos_mask[i] = target[i];
    neg_mask[i] = 1.0 - target[i];
  }
  ad::Var pc = detail::clamped(t, pred);
  ad::Var term = t.add(t.mul(t.constant(std::move(pos_mask)), t.log(pc)),
                       t.mul(t.constant(std::move(neg_mask)), t.log(detail::one_minus(t, pc))));
  return t.mul_scalar(t.sum(term), -1.0 / static_cast<double>(target.numel()));
}

}  // namespace boxmil::loss
