#pragma once

#include <cmath>
#include <stdexcept>

#include "boxmil/array.hpp"

namespace boxmil::geom {

/// Axis-aligned box, inclusive corners: pixels [y1..y2] x [x1..x2].
struct BBox {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int category = 1;

  int width() const { return x2 - x1 + 1; }
  int height() const { return y2 - y1 + 1; }
  bool contains(int y, int x) const { return y >= y1 && y <= y2 && x >= x1 && x <= x2; }
  bool intersects(const BBox& o) const {
    return x1 <= o.x2 && o.x1 <= x2 && y1 <= o.y2 && o.y1 <= y2;
  }
  /// Radius of the minimum circle enclosing the box (half the diagonal,
  /// using pixel-count extents so a 1x1 box is non-degenerate).
  double half_diagonal() const { return 0.5 * std::hypot(width(), height()); }
};

inline void check_box(const BBox& b, int H, int W) {
  if (!(0 <= b.x1 && b.x1 <= b.x2 && b.x2 < W && 0 <= b.y1 && b.y1 <= b.y2 && b.y2 < H))
    throw std::out_of_range("box outside image bounds");
}

struct PolarGrid {
  int n_r = 20;
  int n_theta = 60;
};

inline void check_grid(const PolarGrid& g) {
  require(g.n_r >= 2, "polar grid: n_r must be >= 2");
  require(g.n_theta >= 4, "polar grid: n_theta must be >= 4");
}

/// Polar sampling frame: origin and radius are in the local coordinates of
/// the region being transformed.
struct PolarSpec {
  double origin_y = 0.0, origin_x = 0.0;
  double radius = 0.0;
  PolarGrid grid;
};

/// Binary indicator of the box: 1 exactly on pixels inside it.
inline Array box_mask(const BBox& box, int H, int W) {
  check_box(box, H, W);
  Array m({H, W});
  for (int y = box.y1; y <= box.y2; ++y)
    for (int x = box.x1; x <= box.x2; ++x) m.at(y, x) = 1.0;
  return m;
}

struct CropRegion {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

/// Box expanded by `margin` on all four sides, clamped to the image.
inline CropRegion crop_with_margin(const BBox& box, int H, int W, int margin) {
  check_box(box, H, W);
  require(margin >= 0, "crop_with_margin: margin must be >= 0");
  CropRegion r;
  r.y0 = std::max(0, box.y1 - margin);
  r.x0 = std::max(0, box.x1 - margin);
  int y1 = std::min(H - 1, box.y2 + margin);
  int x1 = std::min(W - 1, box.x2 + margin);
  r.h = y1 - r.y0 + 1;
  r.w = x1 - r.x0 + 1;
  return r;
}

inline Array crop_plane(const Array& plane, const CropRegion& r) {
  Array out({r.h, r.w});
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) out.at(y, x) = plane.at(r.y0 + y, r.x0 + x);
  return out;
}

/// Inverse-mapped sampling coordinates for rotating an h x w region about its
/// center by theta degrees (x rightward, y downward, angles counterclockwise
/// from +x). The output is sized to contain the whole rotated region.
inline ResamplePlan rotation_plan(int h, int w, double theta_deg) {
  require(theta_deg > -90.0 && theta_deg < 90.0, "rotation: angle must be in (-90, 90)");
  require(h >= 1 && w >= 1, "rotation: empty region");
  const double th = theta_deg * kPi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double ac = std::abs(c), as = std::abs(s);
  ResamplePlan plan;
  plan.out_w = static_cast<int>(std::ceil(w * ac + h * as - 1e-9));
  plan.out_h = static_cast<int>(std::ceil(w * as + h * ac - 1e-9));
  // grow to matching parity so the rotation center stays on the same
  // sub-pixel phase (a source-center pixel maps to an output pixel exactly)
  if ((plan.out_w - w) % 2 != 0) ++plan.out_w;
  if ((plan.out_h - h) % 2 != 0) ++plan.out_h;
  const double cx_in = 0.5 * (w - 1), cy_in = 0.5 * (h - 1);
  const double cx_out = 0.5 * (plan.out_w - 1), cy_out = 0.5 * (plan.out_h - 1);
  plan.src_y.resize(static_cast<size_t>(plan.out_h) * plan.out_w);
  plan.src_x.resize(plan.src_y.size());
  size_t k = 0;
  for (int y = 0; y < plan.out_h; ++y) {
    const double v = y - cy_out;
    for (int x = 0; x < plan.out_w; ++x, ++k) {
      const double u = x - cx_out;
      plan.src_x[k] = cx_in + c * u + s * v;  // R(-theta)
      plan.src_y[k] = cy_in - s * u + c * v;
    }
  }
  return plan;
}

/// Sampling coordinates for the polar image: row i is radius
/// r_i = i * R / (n_r - 1), column j is the polar line at
/// theta_j = j * 2*pi / n_theta.
inline ResamplePlan polar_plan(const PolarSpec& spec) {
  check_grid(spec.grid);
  require(spec.radius > 0.0, "polar: degenerate radius");
  const int nr = spec.grid.n_r, nt = spec.grid.n_theta;
  ResamplePlan plan;
  plan.out_h = nr;
  plan.out_w = nt;
  plan.src_y.resize(static_cast<size_t>(nr) * nt);
  plan.src_x.resize(plan.src_y.size());
  size_t k = 0;
  for (int i = 0; i < nr; ++i) {
    const double r = spec.radius * i / (nr - 1);
    for (int j = 0; j < nt; ++j, ++k) {
      const double t = 2.0 * kPi * j / nt;
      plan.src_x[k] = spec.origin_x + r * std::cos(t);
      plan.src_y[k] = spec.origin_y + r * std::sin(t);
    }
  }
  return plan;
}

inline Array rotate_region(const Array& region, double theta_deg) {
  require(region.rank() == 2, "rotate_region: rank-2 array expected");
  ResamplePlan plan = rotation_plan(region.dim(0), region.dim(1), theta_deg);
  return apply_resample(region, plan, 0, 0, region.dim(0), region.dim(1));
}

inline Array polar_transform(const Array& region, const PolarSpec& spec) {
  require(region.rank() == 2, "polar_transform: rank-2 array expected");
  require(spec.origin_y >= 0 && spec.origin_y <= region.dim(0) - 1 && spec.origin_x >= 0 &&
              spec.origin_x <= region.dim(1) - 1,
          "polar_transform: origin outside region");
  ResamplePlan plan = polar_plan(spec);
  return apply_resample(region, plan, 0, 0, region.dim(0), region.dim(1));
}

inline Array binarize(const Array& a, double thr = 0.5) {
  Array out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] >= thr ? 1.0 : 0.0;
  return out;
}

}  // namespace boxmil::geom
