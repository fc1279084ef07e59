#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "boxmil/array.hpp"

namespace boxmil::ad {

/// Handle into a Tape. The shape is owned by the tape and immutable.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class Op : uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kAddN,
  kAddScalar,
  kMulScalar,
  kPowScalar,
  kClamp,
  kExp,
  kLog,
  kSigmoid,
  kRelu,
  kSum,
  kMaxSelect,
  kConv2d,
  kUpsample2x,
  kConcatC,
  kSliceC,
  kBilinear,
  kGather,
};

struct SampleSpec {  // fixed sampling coordinates; gradients flow to pixels only
  int y0 = 0, x0 = 0, h = 0, w = 0;
  ResamplePlan plan;
};

/// Gradients of a scalar root with respect to the tape's leaves.
class Gradients {
 public:
  const Array& wrt(Var v) const {
    auto it = by_id_.find(v.id);
    require(it != by_id_.end(), "Gradients: var is not a leaf of this tape");
    return it->second;
  }

 private:
  friend class Tape;
  std::unordered_map<int, Array> by_id_;
};

/// Append-only tape of primitive operations over dense arrays. Values are
/// materialized eagerly, so building the graph is the forward pass. All
/// arithmetic is 64-bit.
class Tape {
 public:
  Var leaf(Array v) { return push(Op::kLeaf, {}, std::move(v)); }
  Var constant(Array v) { return push(Op::kConst, {}, std::move(v)); }
  Var constant(double v) { return constant(Array::scalar(v)); }

  const Array& value(Var v) const { return nodes_[check(v)].val; }
  const std::vector<int>& shape(Var v) const { return value(v).shape(); }
  size_t size() const { return nodes_.size(); }

  Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }
  Var div(Var a, Var b) { return binary(Op::kDiv, a, b); }

  Var add_scalar(Var a, double c) {
    Array out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    Node n(Op::kAddScalar, {a.id}, std::move(out));
    n.c0 = c;
    return push(std::move(n));
  }

  Var mul_scalar(Var a, double c) {
    Array out = value(a);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
    Node n(Op::kMulScalar, {a.id}, std::move(out));
    n.c0 = c;
    return push(std::move(n));
  }

  Var pow_scalar(Var a, double e) {
    require(e >= 0.0, "pow_scalar: exponent must be >= 0");
    const Array& x = value(a);
    Array out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::pow(x[i], e);
    Node n(Op::kPowScalar, {a.id}, std::move(out));
    n.c0 = e;
    return push(std::move(n));
  }

  Var clamp(Var a, double lo, double hi) {
    require(lo < hi, "clamp: lo must be < hi");
    const Array& x = value(a);
    Array out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = std::min(std::max(x[i], lo), hi);
    Node n(Op::kClamp, {a.id}, std::move(out));
    n.c0 = lo;
    n.c1 = hi;
    return push(std::move(n));
  }

  Var exp(Var a) { return unary(Op::kExp, a, [](double x) { return std::exp(x); }); }
  Var log(Var a) { return unary(Op::kLog, a, [](double x) { return std::log(x); }); }
  Var relu(Var a) { return unary(Op::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }

  Var sigmoid(Var a) {
    return unary(Op::kSigmoid, a, [](double x) {
      if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
      double e = std::exp(x);
      return e / (1.0 + e);
    });
  }

  Var sum(Var a) {
    Node n(Op::kSum, {a.id}, Array::scalar(value(a).sum()));
    return push(std::move(n));
  }

  /// Hard maximum over all elements; the gradient is routed to the first
  /// argmax element.
  Var max_select(Var a) {
    const Array& x = value(a);
    require(x.numel() > 0, "max_select: empty input");
    int64_t arg = 0;
    for (int64_t i = 1; i < x.numel(); ++i)
      if (x[i] > x[arg]) arg = i;
    Node n(Op::kMaxSelect, {a.id}, Array::scalar(x[arg]));
    n.index = arg;
    return push(std::move(n));
  }

  Var add_n(const std::vector<Var>& terms) {
    require(!terms.empty(), "add_n: empty term list");
    Array out = value(terms[0]);
    std::vector<int> in{terms[0].id};
    for (size_t k = 1; k < terms.size(); ++k) {
      const Array& t = value(terms[k]);
      require(t.same_shape(out), "add_n: shape mismatch");
      for (int64_t i = 0; i < out.numel(); ++i) out[i] += t[i];
      in.push_back(terms[k].id);
    }
    return push(Node(Op::kAddN, std::move(in), std::move(out)));
  }

  /// 3x3-style convolution, input H x W x Cin, weights K x K x Cin x Cout,
  /// bias Cout; zero padding.
  Var conv2d(Var x, Var w, Var b, int stride = 1, int pad = 1) {
    const Array& xv = value(x);
    const Array& wv = value(w);
    const Array& bv = value(b);
    require(xv.rank() == 3 && wv.rank() == 4 && bv.rank() == 1, "conv2d: bad ranks");
    require(wv.dim(0) == wv.dim(1), "conv2d: square kernels only");
    require(wv.dim(2) == xv.dim(2), "conv2d: channel mismatch");
    require(wv.dim(3) == bv.dim(0), "conv2d: bias mismatch");
    require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    Array out = conv_forward(xv, wv, bv, stride, pad);
    Node n(Op::kConv2d, {x.id, w.id, b.id}, std::move(out));
    n.i0 = stride;
    n.i1 = pad;
    return push(std::move(n));
  }

  Var upsample2x(Var a) {
    const Array& x = value(a);
    require(x.rank() == 3, "upsample2x: rank-3 input expected");
    int H = x.dim(0), W = x.dim(1), C = x.dim(2);
    Array out({2 * H, 2 * W, C});
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx)
        for (int c = 0; c < C; ++c) out.at(y, xx, c) = x.at(y / 2, xx / 2, c);
    return push(Node(Op::kUpsample2x, {a.id}, std::move(out)));
  }

  Var concat_c(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(1) == bv.dim(1),
            "concat_c: spatial dims must match");
    int H = av.dim(0), W = av.dim(1), Ca = av.dim(2), Cb = bv.dim(2);
    Array out({H, W, Ca + Cb});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < Ca; ++c) out.at(y, x, c) = av.at(y, x, c);
        for (int c = 0; c < Cb; ++c) out.at(y, x, Ca + c) = bv.at(y, x, c);
      }
    Node n(Op::kConcatC, {a.id, b.id}, std::move(out));
    n.i0 = Ca;
    return push(std::move(n));
  }

  Var slice_c(Var a, int c) {
    const Array& x = value(a);
    require(x.rank() == 3 && c >= 0 && c < x.dim(2), "slice_c: bad channel");
    int H = x.dim(0), W = x.dim(1);
    Array out({H, W});
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out.at(y, xx) = x.at(y, xx, c);
    Node n(Op::kSliceC, {a.id}, std::move(out));
    n.i0 = c;
    return push(std::move(n));
  }

  /// Bilinear sampling with fixed coordinates from a window of a rank-2 var.
  /// Gradients flow to the sampled pixels; the coordinates are constants.
  Var bilinear(Var plane, ResamplePlan plan, int y0, int x0, int h, int w) {
    const Array& p = value(plane);
    require(p.rank() == 2, "bilinear: rank-2 source expected");
    require(y0 >= 0 && x0 >= 0 && h >= 1 && w >= 1 && y0 + h <= p.dim(0) && x0 + w <= p.dim(1),
            "bilinear: window out of bounds");
    auto spec = std::make_shared<SampleSpec>();
    spec->y0 = y0;
    spec->x0 = x0;
    spec->h = h;
    spec->w = w;
    spec->plan = std::move(plan);
    Array out = apply_resample(p, spec->plan, y0, x0, h, w);
    Node n(Op::kBilinear, {plane.id}, std::move(out));
    n.sample = std::move(spec);
    return push(std::move(n));
  }

  /// Element pick by flat indices; output is 1-D.
  Var gather(Var a, std::vector<int64_t> idx) {
    const Array& x = value(a);
    require(!idx.empty(), "gather: empty index list");
    Array out({static_cast<int>(idx.size())});
    for (size_t i = 0; i < idx.size(); ++i) {
      require(idx[i] >= 0 && idx[i] < x.numel(), "gather: index out of range");
      out[static_cast<int64_t>(i)] = x[idx[i]];
    }
    Node n(Op::kGather, {a.id}, std::move(out));
    n.gather = std::make_shared<std::vector<int64_t>>(std::move(idx));
    return push(std::move(n));
  }

  /// Reverse pass from a scalar root. Returns a gradient for every leaf;
  /// leaves unreachable from the root get zeros.
  Gradients backward(Var root) const {
    int rid = check(root);
    require(nodes_[rid].val.numel() == 1, "backward: root must be scalar");
    std::vector<Array> adj(static_cast<size_t>(rid) + 1);
    adj[rid] = Array::scalar(1.0);
    for (int i = rid; i >= 0; --i) {
      if (adj[i].numel() == 0) continue;
      pull(i, adj);
    }
    Gradients g;
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op != Op::kLeaf) continue;
      if (i <= static_cast<size_t>(rid) && adj[i].numel() != 0)
        g.by_id_.emplace(static_cast<int>(i), std::move(adj[i]));
      else
        g.by_id_.emplace(static_cast<int>(i), Array(nodes_[i].val.shape()));
    }
    return g;
  }

 private:
  struct Node {
    Node(Op o, std::vector<int> inputs, Array v) : op(o), in(std::move(inputs)), val(std::move(v)) {}
    Op op;
    std::vector<int> in;
    Array val;
    double c0 = 0.0, c1 = 0.0;  // scalar payloads (constant, clamp bounds, exponent)
    int i0 = 0, i1 = 0;         // stride/pad, channel offsets
    int64_t index = -1;         // argmax
    std::shared_ptr<const SampleSpec> sample;
    std::shared_ptr<const std::vector<int64_t>> gather;
  };

  int check(Var v) const {
    require(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "Tape: invalid var");
    return v.id;
  }

  Var push(Op op, std::vector<int> in, Array v) { return push(Node(op, std::move(in), std::move(v))); }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var binary(Op op, Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    require(av.same_shape(bv), "binary op: shape mismatch");
    Array out(av.shape());
    switch (op) {
      case Op::kAdd:
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
        break;
      case Op::kSub:
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
        break;
      case Op::kMul:
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
        break;
      case Op::kDiv:
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] / bv[i];
        break;
      default:
        require(false, "not a binary op");
    }
    return push(Node(op, {a.id, b.id}, std::move(out)));
  }

  template <class F>
  Var unary(Op op, Var a, F&& f) {
    const Array& x = value(a);
    Array out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
    return push(Node(op, {a.id}, std::move(out)));
  }

  static Array conv_forward(const Array& x, const Array& w, const Array& b, int stride, int pad) {
    const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
    const int K = w.dim(0), Co = w.dim(3);
    const int Ho = (H + 2 * pad - K) / stride + 1;
    const int Wo = (W + 2 * pad - K) / stride + 1;
    require(Ho >= 1 && Wo >= 1, "conv2d: output would be empty");
    Array out({Ho, Wo, Co});
    const double* xd = x.data();
    const double* wd = w.data();
    const double* bd = b.data();
    double* od = out.data();
    for (int y = 0; y < Ho; ++y) {
      for (int xx = 0; xx < Wo; ++xx) {
        double* opx = od + (static_cast<int64_t>(y) * Wo + xx) * Co;
        for (int co = 0; co < Co; ++co) opx[co] = bd[co];
        for (int ky = 0; ky < K; ++ky) {
          const int sy = y * stride + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (int kx = 0; kx < K; ++kx) {
            const int sx = xx * stride + kx - pad;
            if (sx < 0 || sx >= W) continue;
            const double* ipx = xd + (static_cast<int64_t>(sy) * W + sx) * Ci;
            const double* wk = wd + (static_cast<int64_t>(ky) * K + kx) * Ci * Co;
            for (int ci = 0; ci < Ci; ++ci) {
              const double a = ipx[ci];
              const double* wrow = wk + static_cast<int64_t>(ci) * Co;
              for (int co = 0; co < Co; ++co) opx[co] += a * wrow[co];
            }
          }
        }
      }
    }
    return out;
  }

  void ensure(std::vector<Array>& adj, int id) const {
    if (adj[id].numel() == 0) adj[id] = Array(nodes_[id].val.shape());
  }

  void pull(int i, std::vector<Array>& adj) const {
    const Node& n = nodes_[i];
    const Array& g = adj[i];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
        break;
      case Op::kAdd: {
        ensure(adj, n.in[0]);
        ensure(adj, n.in[1]);
        for (int64_t k = 0; k < g.numel(); ++k) {
          adj[n.in[0]][k] += g[k];
          adj[n.in[1]][k] += g[k];
        }
        break;
      }
      case Op::kSub: {
        ensure(adj, n.in[0]);
        ensure(adj, n.in[1]);
        for (int64_t k = 0; k < g.numel(); ++k) {
          adj[n.in[0]][k] += g[k];
          adj[n.in[1]][k] -= g[k];
        }
        break;
      }
      case Op::kMul: {
        ensure(adj, n.in[0]);
        ensure(adj, n.in[1]);
        const Array& a = nodes_[n.in[0]].val;
        const Array& b = nodes_[n.in[1]].val;
        for (int64_t k = 0; k < g.numel(); ++k) {
          adj[n.in[0]][k] += g[k] * b[k];
          adj[n.in[1]][k] += g[k] * a[k];
        }
        break;
      }
      case Op::kDiv: {
        ensure(adj, n.in[0]);
        ensure(adj, n.in[1]);
        const Array& a = nodes_[n.in[0]].val;
        const Array& b = nodes_[n.in[1]].val;
        for (int64_t k = 0; k < g.numel(); ++k) {
          adj[n.in[0]][k] += g[k] / b[k];
          adj[n.in[1]][k] -= g[k] * a[k] / (b[k] * b[k]);
        }
        break;
      }
      case Op::kAddN: {
        for (int id : n.in) {
          ensure(adj, id);
          for (int64_t k = 0; k < g.numel(); ++k) adj[id][k] += g[k];
        }
        break;
      }
      case Op::kAddScalar: {
        ensure(adj, n.in[0]);
        for (int64_t k = 0; k < g.numel(); ++k) adj[n.in[0]][k] += g[k];
        break;
      }
      case Op::kMulScalar: {
        ensure(adj, n.in[0]);
        for (int64_t k = 0; k < g.numel(); ++k) adj[n.in[0]][k] += g[k] * n.c0;
        break;
      }
      case Op::kPowScalar: {
        ensure(adj, n.in[0]);
        const Array& x = nodes_[n.in[0]].val;
        if (n.c0 != 0.0)
          for (int64_t k = 0; k < g.numel(); ++k)
            adj[n.in[0]][k] += g[k] * n.c0 * std::pow(x[k], n.c0 - 1.0);
        break;
      }
      case Op::kClamp: {
        ensure(adj, n.in[0]);
        const Array& x = nodes_[n.in[0]].val;
        for (int64_t k = 0; k < g.numel(); ++k)
          if (x[k] >= n.c0 && x[k] <= n.c1) adj[n.in[0]][k] += g[k];
        break;
      }
      case Op::kExp: {
        ensure(adj, n.in[0]);
        for (int64_t k = 0; k < g.numel(); ++k) adj[n.in[0]][k] += g[k] * n.val[k];
        break;
      }
      case Op::kLog: {
        ensure(adj, n.in[0]);
        const Array& x = nodes_[n.in[0]].val;
        for (int64_t k = 0; k < g.numel(); ++k) adj[n.in[0]][k] += g[k] / x[k];
        break;
      }
      case Op::kSigmoid: {
        ensure(adj, n.in[0]);
        for (int64_t k = 0; k < g.numel(); ++k)
          adj[n.in[0]][k] += g[k] * n.val[k] * (1.0 - n.val[k]);
        break;
      }
      case Op::kRelu: {
        ensure(adj, n.in[0]);
        const Array& x = nodes_[n.in[0]].val;
        for (int64_t k = 0; k < g.numel(); ++k)
          if (x[k] > 0.0) adj[n.in[0]][k] += g[k];
        break;
      }
      case Op::kSum: {
        ensure(adj, n.in[0]);
        Array& ga = adj[n.in[0]];
        for (int64_t k = 0; k < ga.numel(); ++k) ga[k] += g[0];
        break;
      }
      case Op::kMaxSelect: {
        ensure(adj, n.in[0]);
        adj[n.in[0]][n.index] += g[0];
        break;
      }
      case Op::kConv2d:
        conv_backward(n, g, adj);
        break;
      case Op::kUpsample2x: {
        ensure(adj, n.in[0]);
        Array& ga = adj[n.in[0]];
        const int H2 = n.val.dim(0), W2 = n.val.dim(1), C = n.val.dim(2);
        for (int y = 0; y < H2; ++y)
          for (int x = 0; x < W2; ++x)
            for (int c = 0; c < C; ++c) ga.at(y / 2, x / 2, c) += g.at(y, x, c);
        break;
      }
      case Op::kConcatC: {
        ensure(adj, n.in[0]);
        ensure(adj, n.in[1]);
        Array& ga = adj[n.in[0]];
        Array& gb = adj[n.in[1]];
        const int H = n.val.dim(0), W = n.val.dim(1), Ca = n.i0, Cb = n.val.dim(2) - n.i0;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            for (int c = 0; c < Ca; ++c) ga.at(y, x, c) += g.at(y, x, c);
            for (int c = 0; c < Cb; ++c) gb.at(y, x, c) += g.at(y, x, Ca + c);
          }
        break;
      }
      case Op::kSliceC: {
        ensure(adj, n.in[0]);
        Array& ga = adj[n.in[0]];
        const int H = n.val.dim(0), W = n.val.dim(1);
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) ga.at(y, x, n.i0) += g.at(y, x);
        break;
      }
      case Op::kBilinear: {
        ensure(adj, n.in[0]);
        Array& ga = adj[n.in[0]];
        const SampleSpec& s = *n.sample;
        for (int64_t k = 0; k < g.numel(); ++k) {
          const double gy = g[k];
          if (gy == 0.0) continue;
          const double y = s.plan.src_y[static_cast<size_t>(k)];
          const double x = s.plan.src_x[static_cast<size_t>(k)];
          if (!(y >= 0.0 && y <= s.h - 1 && x >= 0.0 && x <= s.w - 1)) continue;
          const int iy = static_cast<int>(std::floor(y));
          const int ix = static_cast<int>(std::floor(x));
          const double fy = y - iy, fx = x - ix;
          const int cy[2] = {iy, iy + 1};
          const int cx[2] = {ix, ix + 1};
          const double wy[2] = {1.0 - fy, fy};
          const double wx[2] = {1.0 - fx, fx};
          for (int a = 0; a < 2; ++a) {
            if (cy[a] >= s.h) continue;
            for (int b = 0; b < 2; ++b) {
              if (cx[b] >= s.w) continue;
              ga.at(s.y0 + cy[a], s.x0 + cx[b]) += gy * wy[a] * wx[b];
            }
          }
        }
        break;
      }
      case Op::kGather: {
        ensure(adj, n.in[0]);
        const auto& idx = *n.gather;
        for (size_t k = 0; k < idx.size(); ++k)
          adj[n.in[0]][idx[k]] += g[static_cast<int64_t>(k)];
        break;
      }
    }
  }

  void conv_backward(const Node& n, const Array& g, std::vector<Array>& adj) const {
    ensure(adj, n.in[0]);
    ensure(adj, n.in[1]);
    ensure(adj, n.in[2]);
    const Array& x = nodes_[n.in[0]].val;
    const Array& w = nodes_[n.in[1]].val;
    Array& gx = adj[n.in[0]];
    Array& gw = adj[n.in[1]];
    Array& gb = adj[n.in[2]];
    const int H = x.dim(0), W = x.dim(1), Ci = x.dim(2);
    const int K = w.dim(0), Co = w.dim(3);
    const int Ho = n.val.dim(0), Wo = n.val.dim(1);
    const int stride = n.i0, pad = n.i1;
    const double* xd = x.data();
    const double* wd = w.data();
    const double* gd = g.data();
    double* gxd = gx.data();
    double* gwd = gw.data();
    double* gbd = gb.data();
    for (int y = 0; y < Ho; ++y) {
      for (int xx = 0; xx < Wo; ++xx) {
        const double* gpx = gd + (static_cast<int64_t>(y) * Wo + xx) * Co;
        for (int co = 0; co < Co; ++co) gbd[co] += gpx[co];
        for (int ky = 0; ky < K; ++ky) {
          const int sy = y * stride + ky - pad;
          if (sy < 0 || sy >= H) continue;
          for (int kx = 0; kx < K; ++kx) {
            const int sx = xx * stride + kx - pad;
            if (sx < 0 || sx >= W) continue;
            const double* ipx = xd + (static_cast<int64_t>(sy) * W + sx) * Ci;
            double* gipx = gxd + (static_cast<int64_t>(sy) * W + sx) * Ci;
            const double* wk = wd + (static_cast<int64_t>(ky) * K + kx) * Ci * Co;
            double* gwk = gwd + (static_cast<int64_t>(ky) * K + kx) * Ci * Co;
            for (int ci = 0; ci < Ci; ++ci) {
              const double a = ipx[ci];
              const double* wrow = wk + static_cast<int64_t>(ci) * Co;
              double* gwrow = gwk + static_cast<int64_t>(ci) * Co;
              double acc = 0.0;
              for (int co = 0; co < Co; ++co) {
                const double gv = gpx[co];
                acc += gv * wrow[co];
                gwrow[co] += gv * a;
              }
              gipx[ci] += acc;
            }
          }
        }
      }
    }
  }

  std::deque<Node> nodes_;  // deque keeps value references stable across appends
};

/// Builds a scalar computation from leaf vars created for `xs`.
using BuildFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double eval_scalar(const BuildFn& f, const std::vector<Array>& xs) {
  Tape t;
  std::vector<Var> leaves;
  leaves.reserve(xs.size());
  for (const Array& x : xs) leaves.push_back(t.leaf(x));
  Var root = f(t, leaves);
  require(t.value(root).numel() == 1, "gradcheck: function must be scalar-valued");
  double v = t.value(root)[0];
  if (!std::isfinite(v)) throw std::runtime_error("gradcheck: non-finite function value");
  return v;
}

/// Max over all coordinates of |analytic - central difference| / max(1, |analytic|).
inline double gradcheck(const BuildFn& f, const std::vector<Array>& xs, double eps = 1e-5) {
  require(eps > 0.0, "gradcheck: eps must be > 0");
  Tape t;
  std::vector<Var> leaves;
  leaves.reserve(xs.size());
  for (const Array& x : xs) leaves.push_back(t.leaf(x));
  Var root = f(t, leaves);
  require(t.value(root).numel() == 1, "gradcheck: function must be scalar-valued");
  if (!std::isfinite(t.value(root)[0]))
    throw std::runtime_error("gradcheck: non-finite function value");
  Gradients grads = t.backward(root);
  double worst = 0.0;
  std::vector<Array> probe = xs;
  for (size_t li = 0; li < xs.size(); ++li) {
    const Array& ana = grads.wrt(leaves[li]);
    for (int64_t i = 0; i < xs[li].numel(); ++i) {
      const double orig = probe[li][i];
      probe[li][i] = orig + eps;
      const double fp = eval_scalar(f, probe);
      probe[li][i] = orig - eps;
      const double fm = eval_scalar(f, probe);
      probe[li][i] = orig;
      const double num = (fp - fm) / (2.0 * eps);
      const double err = std::abs(ana[i] - num) / std::max(1.0, std::abs(ana[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace boxmil::ad
