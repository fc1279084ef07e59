#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "boxmil/autodiff.hpp"

namespace boxmil::net {

/// 2-down / 2-up encoder-decoder with skip concatenation: 3x3 convolutions,
/// stride-2 downsampling, nearest-neighbor upsampling, ReLU, sigmoid head.
/// Stage widths are (base, 2*base, 4*base).
struct NetConfig {
  int in_channels = 1;
  int base = 8;
  int categories = 1;
};

struct NetParams {
  NetConfig cfg;
  std::vector<std::string> names;
  std::vector<Array> tensors;

  int64_t count() const {
    int64_t n = 0;
    for (const Array& t : tensors) n += t.numel();
    return n;
  }
};

namespace detail {

inline std::vector<std::pair<std::string, std::vector<int>>> tensor_shapes(const NetConfig& c) {
  const int c1 = c.base, c2 = 2 * c.base, c3 = 4 * c.base;
  return {
      {"enc1_w", {3, 3, c.in_channels, c1}}, {"enc1_b", {c1}},
      {"enc2_w", {3, 3, c1, c2}},            {"enc2_b", {c2}},
      {"bott_w", {3, 3, c2, c3}},            {"bott_b", {c3}},
      {"dec2_w", {3, 3, c3 + c2, c2}},       {"dec2_b", {c2}},
      {"dec1_w", {3, 3, c2 + c1, c1}},       {"dec1_b", {c1}},
      {"head_w", {3, 3, c1, c.categories}},  {"head_b", {c.categories}},
  };
}

}  // namespace detail

/// Fan-in-scaled uniform init for kernels (variance 2/fan_in), zero biases.
inline NetParams init_params(uint64_t seed, const NetConfig& cfg) {
  require(cfg.base >= 1 && cfg.categories >= 1 && cfg.in_channels >= 1, "bad net config");
  NetParams p;
  p.cfg = cfg;
  Rng rng(mix_seed(seed, 0x6e657470ull));  // independent of data/order streams
  for (const auto& [name, shape] : detail::tensor_shapes(cfg)) {
    Array t(shape);
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[0]) * shape[1] * shape[2];
      const double bound = std::sqrt(6.0 / fan_in);
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    }
    p.names.push_back(name);
    p.tensors.push_back(std::move(t));
  }
  return p;
}

struct Forward {
  ad::Var pred;                 // H x W x C, sigmoid outputs
  std::vector<ad::Var> leaves;  // parameter leaves, in tensor order
};

/// Network graph from already-created parameter vars (tensor order of
/// init_params). Lets callers decide what the differentiation leaves are.
inline ad::Var forward_from_vars(ad::Tape& t, const NetConfig& cfg,
                                 const std::vector<ad::Var>& p, const Array& image) {
  require(image.rank() == 2, "forward: image must be H x W");
  const int H = image.dim(0), W = image.dim(1);
  require(H % 4 == 0 && W % 4 == 0, "forward: image dims must be divisible by 4");
  require(p.size() == 12, "forward: malformed params");
  require(cfg.in_channels == 1, "forward: single-channel images expected");

  Array img3({H, W, cfg.in_channels});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) img3.at(y, x, 0) = image.at(y, x);
  ad::Var x = t.constant(std::move(img3));

  ad::Var enc1 = t.relu(t.conv2d(x, p[0], p[1], 1, 1));
  ad::Var enc2 = t.relu(t.conv2d(enc1, p[2], p[3], 2, 1));
  ad::Var bott = t.relu(t.conv2d(enc2, p[4], p[5], 2, 1));
  ad::Var dec2 = t.relu(t.conv2d(t.concat_c(t.upsample2x(bott), enc2), p[6], p[7], 1, 1));
  ad::Var dec1 = t.relu(t.conv2d(t.concat_c(t.upsample2x(dec2), enc1), p[8], p[9], 1, 1));
  return t.sigmoid(t.conv2d(dec1, p[10], p[11], 1, 1));
}

/// Forward pass on a tape; the image enters as a constant, parameters as
/// leaves so the same tape yields parameter gradients.
inline Forward forward(ad::Tape& t, const NetParams& params, const Array& image) {
  Forward f;
  f.leaves.reserve(params.tensors.size());
  for (const Array& p : params.tensors) f.leaves.push_back(t.leaf(p));
  f.pred = forward_from_vars(t, params.cfg, f.leaves, image);
  return f;
}

/// Inference-only forward (no gradients kept by the caller).
inline Array forward_plain(const NetParams& params, const Array& image) {
  ad::Tape t;
  Forward f = forward(t, params, image);
  return t.value(f.pred);
}

// ---- checkpoint I/O: magic, version, config, shape table, f32 payload ----

namespace detail {

inline constexpr char kMagic[8] = {'B', 'M', 'I', 'L', 'C', 'K', 'P', 'T'};

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

inline float get_f32(std::istream& is) {
  uint32_t u = get_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const NetParams& p) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  os.write(detail::kMagic, 8);
  detail::put_u32(os, 1);  // version
  detail::put_u32(os, static_cast<uint32_t>(p.cfg.in_channels));
  detail::put_u32(os, static_cast<uint32_t>(p.cfg.base));
  detail::put_u32(os, static_cast<uint32_t>(p.cfg.categories));
  detail::put_u32(os, static_cast<uint32_t>(p.tensors.size()));
  for (size_t i = 0; i < p.tensors.size(); ++i) {
    detail::put_u32(os, static_cast<uint32_t>(p.names[i].size()));
    os.write(p.names[i].data(), static_cast<std::streamsize>(p.names[i].size()));
    detail::put_u32(os, static_cast<uint32_t>(p.tensors[i].rank()));
    for (int d = 0; d < p.tensors[i].rank(); ++d)
      detail::put_u32(os, static_cast<uint32_t>(p.tensors[i].dim(d)));
  }
  for (const Array& t : p.tensors)
    for (int64_t i = 0; i < t.numel(); ++i) detail::put_f32(os, static_cast<float>(t[i]));
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline NetParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint32_t version = detail::get_u32(is);
  if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");
  NetParams p;
  p.cfg.in_channels = static_cast<int>(detail::get_u32(is));
  p.cfg.base = static_cast<int>(detail::get_u32(is));
  p.cfg.categories = static_cast<int>(detail::get_u32(is));
  uint32_t n_tensors = detail::get_u32(is);
  for (uint32_t k = 0; k < n_tensors; ++k) {
    uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t ndim = detail::get_u32(is);
    std::vector<int> shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(detail::get_u32(is)));
    p.names.push_back(std::move(name));
    p.tensors.emplace_back(shape);
  }
  for (Array& t : p.tensors)
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(detail::get_f32(is));
  if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return p;
}

}  // namespace boxmil::net
