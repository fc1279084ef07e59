#pragma once

#include <cstdio>
#include <vector>

#include "boxmil/autodiff.hpp"
#include "boxmil/geometry.hpp"
#include "boxmil/smoothmax.hpp"

namespace boxmil::mil {

enum class Polarity { kPositive, kNegative };

/// A bag of sampled prediction values living on a tape. Polar bags carry the
/// radial weights truncated to the bag length (weights[0] == 1).
struct Bag {
  ad::Var values;
  std::vector<double> weights;
  Polarity polarity = Polarity::kPositive;
  int category = 1;
};

/// Evenly spaced angles a, a+s, ..., b (inclusive endpoints; a == b selects
/// the single angle a).
struct AngleSet {
  double a = -40.0, b = 40.0, s = 20.0;

  std::vector<double> angles() const {
    require(-90.0 < a && a <= b && b < 90.0, "angle set: need -90 < a <= b < 90");
    require(s > 0.0, "angle set: step must be > 0");
    std::vector<double> out;
    for (double t = a; t <= b + 1e-9; t += s) out.push_back(t);
    return out;
  }
};

struct PixelCoord {
  int y = 0, x = 0;
};

/// Bags defined over one resampled view of a cropped region: the sampling
/// plan plus, per bag, the flat indices into the plan's output.
struct LineBagPlan {
  geom::CropRegion region;
  ResamplePlan plan;
  Array mask;  // binarized transformed box mask, out_h x out_w
  std::vector<std::vector<int64_t>> bags;
};

/// Rotated-view bags for one angle: every output row and column restricted to
/// mask-1 pixels (>= 1 pixel) is one parallel crossing line.
inline LineBagPlan parallel_plan(const geom::BBox& box, int H, int W, double angle_deg,
                                 int margin) {
  LineBagPlan lp;
  lp.region = geom::crop_with_margin(box, H, W, margin);
  geom::BBox local{box.x1 - lp.region.x0, box.y1 - lp.region.y0, box.x2 - lp.region.x0,
                   box.y2 - lp.region.y0, box.category};
  Array mask_local = geom::box_mask(local, lp.region.h, lp.region.w);
  lp.plan = geom::rotation_plan(lp.region.h, lp.region.w, angle_deg);
  lp.mask = geom::binarize(
      apply_resample(mask_local, lp.plan, 0, 0, lp.region.h, lp.region.w), 0.5);
  const int oh = lp.plan.out_h, ow = lp.plan.out_w;
  for (int y = 0; y < oh; ++y) {
    std::vector<int64_t> idx;
    for (int x = 0; x < ow; ++x)
      if (lp.mask.at(y, x) == 1.0) idx.push_back(static_cast<int64_t>(y) * ow + x);
    if (!idx.empty()) lp.bags.push_back(std::move(idx));
  }
  for (int x = 0; x < ow; ++x) {
    std::vector<int64_t> idx;
    for (int y = 0; y < oh; ++y)
      if (lp.mask.at(y, x) == 1.0) idx.push_back(static_cast<int64_t>(y) * ow + x);
    if (!idx.empty()) lp.bags.push_back(std::move(idx));
  }
  return lp;
}

/// Polar-view bags: one bag per angular column, the contiguous prefix of
/// mask-1 entries starting at the origin (row 0).
inline LineBagPlan polar_plan_for_box(const geom::BBox& box, int H, int W, PixelCoord origin,
                                      const geom::PolarGrid& grid, int margin) {
  require(box.contains(origin.y, origin.x), "polar bags: origin outside box");
  LineBagPlan lp;
  lp.region = geom::crop_with_margin(box, H, W, margin);
  geom::BBox local{box.x1 - lp.region.x0, box.y1 - lp.region.y0, box.x2 - lp.region.x0,
                   box.y2 - lp.region.y0, box.category};
  Array mask_local = geom::box_mask(local, lp.region.h, lp.region.w);
  geom::PolarSpec spec;
  spec.origin_y = origin.y - lp.region.y0;
  spec.origin_x = origin.x - lp.region.x0;
  spec.radius = box.half_diagonal();
  spec.grid = grid;
  lp.plan = geom::polar_plan(spec);
  lp.mask = geom::binarize(
      apply_resample(mask_local, lp.plan, 0, 0, lp.region.h, lp.region.w), 0.5);
  for (int j = 0; j < grid.n_theta; ++j) {
    std::vector<int64_t> idx;
    for (int i = 0; i < grid.n_r; ++i) {
      if (lp.mask.at(i, j) != 1.0) break;
      idx.push_back(static_cast<int64_t>(i) * grid.n_theta + j);
    }
    lp.bags.push_back(std::move(idx));  // row 0 is the origin pixel, never empty
  }
  return lp;
}

namespace detail {

inline std::vector<bool> category_coverage(int H, int W, const std::vector<geom::BBox>& boxes,
                                           int category) {
  std::vector<bool> covered(static_cast<size_t>(H) * W, false);
  for (const geom::BBox& b : boxes) {
    if (b.category != category) continue;
    check_box(b, H, W);
    for (int y = b.y1; y <= b.y2; ++y)
      for (int x = b.x1; x <= b.x2; ++x) covered[static_cast<size_t>(y) * W + x] = true;
  }
  return covered;
}

inline int64_t map_index(int y, int x, int c, int W, int C) {
  return (static_cast<int64_t>(y) * W + x) * C + c;
}

}  // namespace detail

/// One bag per row and per column of the (tight) box: the crossing lines of
/// the MIL baseline. H_box + W_box bags.
inline std::vector<Bag> baseline_positive_bags(ad::Tape& t, ad::Var pred,
                                               const geom::BBox& box) {
  const Array& p = t.value(pred);
  require(p.rank() == 3, "baseline_positive_bags: pred must be H x W x C");
  const int H = p.dim(0), W = p.dim(1), C = p.dim(2);
  check_box(box, H, W);
  require(box.category >= 1 && box.category <= C, "baseline_positive_bags: bad category");
  const int c = box.category - 1;
  std::vector<Bag> bags;
  for (int y = box.y1; y <= box.y2; ++y) {
    std::vector<int64_t> idx;
    for (int x = box.x1; x <= box.x2; ++x) idx.push_back(detail::map_index(y, x, c, W, C));
    bags.push_back({t.gather(pred, std::move(idx)), {}, Polarity::kPositive, box.category});
  }
  for (int x = box.x1; x <= box.x2; ++x) {
    std::vector<int64_t> idx;
    for (int y = box.y1; y <= box.y2; ++y) idx.push_back(detail::map_index(y, x, c, W, C));
    bags.push_back({t.gather(pred, std::move(idx)), {}, Polarity::kPositive, box.category});
  }
  return bags;
}

/// One bag per full image row/column that intersects no box of the category.
inline std::vector<Bag> baseline_negative_bags(ad::Tape& t, ad::Var pred,
                                               const std::vector<geom::BBox>& boxes,
                                               int category) {
  const Array& p = t.value(pred);
  require(p.rank() == 3, "baseline_negative_bags: pred must be H x W x C");
  const int H = p.dim(0), W = p.dim(1), C = p.dim(2);
  const int c = category - 1;
  std::vector<bool> row_free(static_cast<size_t>(H), true), col_free(static_cast<size_t>(W), true);
  for (const geom::BBox& b : boxes) {
    if (b.category != category) continue;
    for (int y = b.y1; y <= b.y2; ++y) row_free[static_cast<size_t>(y)] = false;
    for (int x = b.x1; x <= b.x2; ++x) col_free[static_cast<size_t>(x)] = false;
  }
  std::vector<Bag> bags;
  for (int y = 0; y < H; ++y) {
    if (!row_free[static_cast<size_t>(y)]) continue;
    std::vector<int64_t> idx;
    for (int x = 0; x < W; ++x) idx.push_back(detail::map_index(y, x, c, W, C));
    bags.push_back({t.gather(pred, std::move(idx)), {}, Polarity::kNegative, category});
  }
  for (int x = 0; x < W; ++x) {
    if (!col_free[static_cast<size_t>(x)]) continue;
    std::vector<int64_t> idx;
    for (int y = 0; y < H; ++y) idx.push_back(detail::map_index(y, x, c, W, C));
    bags.push_back({t.gather(pred, std::move(idx)), {}, Polarity::kNegative, category});
  }
  return bags;
}

/// One singleton bag per pixel outside every box of the category.
inline std::vector<Bag> pixel_negative_bags(ad::Tape& t, ad::Var pred,
                                            const std::vector<geom::BBox>& boxes, int category) {
  const Array& p = t.value(pred);
  require(p.rank() == 3, "pixel_negative_bags: pred must be H x W x C");
  const int H = p.dim(0), W = p.dim(1), C = p.dim(2);
  auto covered = detail::category_coverage(H, W, boxes, category);
  std::vector<Bag> bags;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (covered[static_cast<size_t>(y) * W + x]) continue;
      std::vector<int64_t> idx{detail::map_index(y, x, category - 1, W, C)};
      bags.push_back({t.gather(pred, std::move(idx)), {}, Polarity::kNegative, category});
    }
  return bags;
}

/// All outside pixels of a category as one 1-D var, row-major order. Same
/// pixel set as pixel_negative_bags; used for the vectorized focal term.
inline ad::Var outside_pixel_values(ad::Tape& t, ad::Var pred,
                                    const std::vector<geom::BBox>& boxes, int category,
                                    int64_t* count = nullptr) {
  const Array& p = t.value(pred);
  require(p.rank() == 3, "outside_pixel_values: pred must be H x W x C");
  const int H = p.dim(0), W = p.dim(1), C = p.dim(2);
  auto covered = detail::category_coverage(H, W, boxes, category);
  std::vector<int64_t> idx;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (!covered[static_cast<size_t>(y) * W + x])
        idx.push_back(detail::map_index(y, x, category - 1, W, C));
  if (count != nullptr) *count = static_cast<int64_t>(idx.size());
  if (idx.empty()) return ad::Var{};  // fully covered image: no negative bags
  return t.gather(pred, std::move(idx));
}

/// Positive bags from rotated views, one set per angle in the set. Angles
/// whose rotated mask comes out empty are skipped with a warning.
inline std::vector<Bag> parallel_positive_bags(ad::Tape& t, ad::Var pred, const geom::BBox& box,
                                               const AngleSet& angles, int margin) {
  const Array& p = t.value(pred);
  require(p.rank() == 3, "parallel_positive_bags: pred must be H x W x C");
  const int H = p.dim(0), W = p.dim(1);
  ad::Var slice = t.slice_c(pred, box.category - 1);
  std::vector<Bag> bags;
  for (double angle : angles.angles()) {
    LineBagPlan lp = parallel_plan(box, H, W, angle, margin);
    if (lp.bags.empty()) {
      std::fprintf(stderr, "warning: empty box mask after rotation by %.1f deg, angle skipped\n",
                   angle);
      continue;
    }
    ad::Var view = t.bilinear(slice, lp.plan, lp.region.y0, lp.region.x0, lp.region.h,
                              lp.region.w);
    for (auto& idx : lp.bags)
      bags.push_back({t.gather(view, std::move(idx)), {}, Polarity::kPositive, box.category});
  }
  return bags;
}

/// Argmax of the category channel over the box; ties break to the smallest
/// row-major index.
inline PixelCoord select_polar_origin(const Array& pred, const geom::BBox& box, int category) {
  require(pred.rank() == 3, "select_polar_origin: pred must be H x W x C");
  check_box(box, pred.dim(0), pred.dim(1));
  const int c = category - 1;
  require(c >= 0 && c < pred.dim(2), "select_polar_origin: bad category");
  PixelCoord best{box.y1, box.x1};
  double best_v = pred.at(box.y1, box.x1, c);
  for (int y = box.y1; y <= box.y2; ++y)
    for (int x = box.x1; x <= box.x2; ++x) {
      const double v = pred.at(y, x, c);
      if (v > best_v) {
        best_v = v;
        best = {y, x};
      }
    }
  return best;
}

/// Positive bags from the polar view about `origin`: exactly n_theta bags,
/// each the in-box prefix of one angular column, carrying radial weights.
inline std::vector<Bag> polar_positive_bags(ad::Tape& t, ad::Var pred, const geom::BBox& box,
                                            PixelCoord origin, const geom::PolarGrid& grid,
                                            int margin, double w_min) {
  const Array& p = t.value(pred);
  require(p.rank() == 3, "polar_positive_bags: pred must be H x W x C");
  LineBagPlan lp = polar_plan_for_box(box, p.dim(0), p.dim(1), origin, grid, margin);
  const std::vector<double> w = smax::polar_weights(grid.n_r, w_min).w;
  ad::Var slice = t.slice_c(pred, box.category - 1);
  ad::Var view =
      t.bilinear(slice, lp.plan, lp.region.y0, lp.region.x0, lp.region.h, lp.region.w);
  std::vector<Bag> bags;
  for (auto& idx : lp.bags) {
    std::vector<double> bw(w.begin(), w.begin() + static_cast<long>(idx.size()));
    bags.push_back(
        {t.gather(view, std::move(idx)), std::move(bw), Polarity::kPositive, box.category});
  }
  return bags;
}

}  // namespace boxmil::mil
