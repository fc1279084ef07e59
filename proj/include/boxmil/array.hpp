#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace boxmil {

inline constexpr double kPi = 3.14159265358979323846;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Dense row-major array of doubles. Rank 1..3 in practice: vectors,
/// planes (H x W) and maps (H x W x C, channel-minor).
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
    int64_t n = 1;
    for (int d : shape_) {
      require(d > 0, "Array: dimensions must be positive");
      n *= d;
    }
    data_.assign(static_cast<size_t>(n), fill);
  }

  static Array scalar(double v) {
    Array a({1});
    a.data_[0] = v;
    return a;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Array& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // rank-2 access
  double& at(int y, int x) {
    assert(rank() == 2);
    return data_[static_cast<size_t>(y) * shape_[1] + x];
  }
  double at(int y, int x) const {
    assert(rank() == 2);
    return data_[static_cast<size_t>(y) * shape_[1] + x];
  }

  // rank-3 access (channel-minor)
  double& at(int y, int x, int c) {
    assert(rank() == 3);
    return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }
  double at(int y, int x, int c) const {
    assert(rank() == 3);
    return data_[(static_cast<size_t>(y) * shape_[1] + x) * shape_[2] + c];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  double min() const { return *std::min_element(data_.begin(), data_.end()); }
  double max() const { return *std::max_element(data_.begin(), data_.end()); }
  double sum() const {
    double s = 0;
    for (double v : data_) s += v;
    return s;
  }
  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Array& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// Deterministic RNG. mt19937_64 is fully specified by the standard; the
/// distributions below are explicit because std::uniform_real_distribution
/// et al. are implementation-defined and would break cross-toolchain
/// reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next() { return gen_(); }

  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }  // [0,1)
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive; modulo bias negligible here
    require(lo <= hi, "uniform_int: lo must be <= hi");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// splitmix64-style mix for deriving independent streams (seed, index).
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 0x632be59bd9b4e019ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// One resampling pass: a source point per output pixel, in the local frame
/// of whatever window the plan is applied to. Points outside the window
/// support read as 0.
struct ResamplePlan {
  int out_h = 0, out_w = 0;
  std::vector<double> src_y, src_x;  // size out_h * out_w
};

/// Bilinear read at local (y, x) of the h x w window of `plane` anchored at
/// (y0, x0). Values outside [0, h-1] x [0, w-1] are 0 (hard support cutoff).
inline double bilinear_at(const Array& plane, int y0, int x0, int h, int w, double y, double x) {
  if (!(y >= 0.0 && y <= h - 1 && x >= 0.0 && x <= w - 1)) return 0.0;
  int iy = static_cast<int>(std::floor(y));
  int ix = static_cast<int>(std::floor(x));
  double fy = y - iy, fx = x - ix;
  double acc = 0.0;
  const int cy[2] = {iy, iy + 1};
  const int cx[2] = {ix, ix + 1};
  const double wy[2] = {1.0 - fy, fy};
  const double wx[2] = {1.0 - fx, fx};
  for (int a = 0; a < 2; ++a) {
    if (cy[a] >= h) continue;  // weight is then exactly 0
    for (int b = 0; b < 2; ++b) {
      if (cx[b] >= w) continue;
      acc += wy[a] * wx[b] * plane.at(y0 + cy[a], x0 + cx[b]);
    }
  }
  return acc;
}

inline Array apply_resample(const Array& plane, const ResamplePlan& plan, int y0, int x0, int h,
                            int w) {
  Array out({plan.out_h, plan.out_w});
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = bilinear_at(plane, y0, x0, h, w, plan.src_y[static_cast<size_t>(i)],
                         plan.src_x[static_cast<size_t>(i)]);
  return out;
}

}  // namespace boxmil
