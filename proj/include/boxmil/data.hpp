#pragma once

#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "boxmil/geometry.hpp"

namespace boxmil::data {

namespace fs = std::filesystem;

/// Synthetic corpus recipe. Objects are connected shapes placed without
/// overlap, at least `border` pixels from the image edge so that box
/// perturbations stay meaningful.
struct SyntheticSpec {
  int count = 200;
  int height = 64, width = 64;
  int categories = 1;
  int shapes_min = 1, shapes_max = 2;
  std::vector<std::string> kinds{"ellipse", "blob"};
  int size_min = 8, size_max = 24;
  double noise = 0.03;
  uint64_t seed = 7;
  int border = 6;
  int slices_per_volume = 8;

  void validate() const {
    require(count >= 1, "synthetic spec: count must be >= 1");
    require(height % 4 == 0 && width % 4 == 0, "synthetic spec: dims must be divisible by 4");
    require(categories >= 1, "synthetic spec: categories must be >= 1");
    require(1 <= shapes_min && shapes_min <= shapes_max, "synthetic spec: bad shape count range");
    require(3 <= size_min && size_min <= size_max, "synthetic spec: bad size range");
    require(noise >= 0.0, "synthetic spec: noise must be >= 0");
    require(!kinds.empty(), "synthetic spec: no shape kinds");
    require(border >= 1, "synthetic spec: border must be >= 1");
    require(slices_per_volume >= 1, "synthetic spec: slices_per_volume must be >= 1");
  }
};

/// Box loosening protocol: a fixed margin per side, or an independent
/// uniform-integer draw per side.
struct PerturbSpec {
  enum class Mode { kFixed, kUniform };
  Mode mode = Mode::kFixed;
  int fixed = 0;
  int lo = 0, hi = 0;
  bool per_side = true;

  static PerturbSpec none() { return {}; }
  static PerturbSpec fixed_margin(int m) {
    require(m >= 0, "perturb: fixed margin must be >= 0");
    PerturbSpec s;
    s.fixed = m;
    return s;
  }
  static PerturbSpec uniform(int lo, int hi, bool per_side = true) {
    require(0 <= lo && lo <= hi, "perturb: need 0 <= lo <= hi");
    PerturbSpec s;
    s.mode = Mode::kUniform;
    s.lo = lo;
    s.hi = hi;
    s.per_side = per_side;
    return s;
  }
};

/// A loosened box plus the effective (clamp-aware) margins actually applied.
struct PerturbedBox {
  geom::BBox box;
  int mx1 = 0, mx2 = 0, my1 = 0, my2 = 0;
};

struct Sample {
  Array image;  // H x W in [0,1], quantized to 8-bit levels
  Array mask;   // H x W x C binary
  std::vector<geom::BBox> boxes;  // tight boxes, one per connected component
  int volume_id = 0;
};

struct Dataset {
  int height = 0, width = 0, categories = 0;
  int slices_per_volume = 1;
  std::vector<Sample> samples;
};

// ---- tight boxes ----------------------------------------------------------

/// One box per 8-connected component of a binary plane.
inline std::vector<geom::BBox> tight_boxes_from_mask(const Array& mask, int category = 1) {
  require(mask.rank() == 2, "tight_boxes_from_mask: plane expected");
  const int H = mask.dim(0), W = mask.dim(1);
  std::vector<char> seen(static_cast<size_t>(H) * W, 0);
  std::vector<geom::BBox> boxes;
  for (int sy = 0; sy < H; ++sy)
    for (int sx = 0; sx < W; ++sx) {
      if (mask.at(sy, sx) == 0.0 || seen[static_cast<size_t>(sy) * W + sx]) continue;
      geom::BBox box{sx, sy, sx, sy, category};
      std::deque<std::pair<int, int>> frontier{{sy, sx}};
      seen[static_cast<size_t>(sy) * W + sx] = 1;
      while (!frontier.empty()) {
        auto [y, x] = frontier.front();
        frontier.pop_front();
        box.x1 = std::min(box.x1, x);
        box.x2 = std::max(box.x2, x);
        box.y1 = std::min(box.y1, y);
        box.y2 = std::max(box.y2, y);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = y + dy, nx = x + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            if (mask.at(ny, nx) == 0.0 || seen[static_cast<size_t>(ny) * W + nx]) continue;
            seen[static_cast<size_t>(ny) * W + nx] = 1;
            frontier.emplace_back(ny, nx);
          }
      }
      boxes.push_back(box);
    }
  return boxes;
}

// ---- perturbation and MARD --------------------------------------------------

inline PerturbedBox perturb_box(const geom::BBox& box, const PerturbSpec& spec, Rng& rng, int H,
                                int W) {
  geom::check_box(box, H, W);
  int m[4];
  if (spec.mode == PerturbSpec::Mode::kFixed) {
    m[0] = m[1] = m[2] = m[3] = spec.fixed;
  } else if (spec.per_side) {
    for (int& v : m) v = rng.uniform_int(spec.lo, spec.hi);
  } else {
    m[0] = m[1] = m[2] = m[3] = rng.uniform_int(spec.lo, spec.hi);
  }
  PerturbedBox out;
  out.box = box;
  out.box.x1 = std::max(0, box.x1 - m[0]);
  out.box.x2 = std::min(W - 1, box.x2 + m[1]);
  out.box.y1 = std::max(0, box.y1 - m[2]);
  out.box.y2 = std::min(H - 1, box.y2 + m[3]);
  out.mx1 = box.x1 - out.box.x1;  // effective margins after clamping
  out.mx2 = out.box.x2 - box.x2;
  out.my1 = box.y1 - out.box.y1;
  out.my2 = out.box.y2 - box.y2;
  return out;
}

/// Mean absolute relative difference of a loosened box versus its object.
inline double mard(int object_w, int object_h, int mx1, int mx2, int my1, int my2) {
  require(object_w >= 1 && object_h >= 1, "mard: object dims must be >= 1");
  return 0.5 * (static_cast<double>(mx1 + mx2) / object_w +
                static_cast<double>(my1 + my2) / object_h);
}

struct MardStats {
  double mean = 0.0, stddev = 0.0;
  int64_t count = 0;
};

struct PerturbResult {
  std::vector<std::vector<PerturbedBox>> per_image;
  MardStats stats;
};

/// Loosen every box of the dataset (deterministic per-image streams) and
/// report MARD statistics of the effective margins.
inline PerturbResult perturb_dataset(const Dataset& ds, const PerturbSpec& spec, uint64_t seed) {
  PerturbResult out;
  out.per_image.resize(ds.samples.size());
  double sum = 0.0, sum2 = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    Rng rng(mix_seed(seed, 0x70657274ull + i));
    for (const geom::BBox& b : ds.samples[i].boxes) {
      PerturbedBox pb = perturb_box(b, spec, rng, ds.height, ds.width);
      const double v = mard(b.width(), b.height(), pb.mx1, pb.mx2, pb.my1, pb.my2);
      sum += v;
      sum2 += v * v;
      ++n;
      out.per_image[i].push_back(pb);
    }
  }
  if (n > 0) {
    out.stats.mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum2 / static_cast<double>(n) - out.stats.mean * out.stats.mean);
    out.stats.stddev = std::sqrt(var);
  }
  out.stats.count = n;
  return out;
}

inline MardStats dataset_mard_stats(const Dataset& ds, const PerturbSpec& spec, uint64_t seed) {
  return perturb_dataset(ds, spec, seed).stats;
}

// ---- synthetic generation ---------------------------------------------------

namespace detail {

struct Shape {
  Array mask;  // H x W binary
  geom::BBox box;
  double intensity = 0.0;
};

inline bool rasterize_shape(const std::string& kind, int H, int W, int border, Rng& rng,
                            Shape* out) {
  const int size_w = out->box.width();  // caller stores the drawn sizes here
  const int size_h = out->box.height();
  const int cy_lo = border + size_h / 2, cy_hi = H - 1 - border - (size_h - size_h / 2);
  const int cx_lo = border + size_w / 2, cx_hi = W - 1 - border - (size_w - size_w / 2);
  if (cy_lo > cy_hi || cx_lo > cx_hi) return false;
  const int cy = rng.uniform_int(cy_lo, cy_hi);
  const int cx = rng.uniform_int(cx_lo, cx_hi);
  Array m({H, W});
  if (kind == "rectangle") {
    const int y1 = cy - size_h / 2, x1 = cx - size_w / 2;
    for (int y = y1; y < y1 + size_h; ++y)
      for (int x = x1; x < x1 + size_w; ++x) m.at(y, x) = 1.0;
  } else if (kind == "ellipse") {
    const double a = size_w / 2.0, b = size_h / 2.0;
    const double phi = rng.uniform(0.0, kPi);
    const double cphi = std::cos(phi), sphi = std::sin(phi);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double u = (dx * cphi + dy * sphi) / a;
        const double v = (-dx * sphi + dy * cphi) / b;
        if (u * u + v * v <= 1.0) m.at(y, x) = 1.0;
      }
  } else if (kind == "blob") {
    // star-convex radial profile, guaranteed connected
    const double r0 = 0.85 * std::min(size_w, size_h) / 2.0;
    double amp[3], phase[3];
    for (int k = 0; k < 3; ++k) {
      amp[k] = rng.uniform(-0.30, 0.30) / (k + 2);
      phase[k] = rng.uniform(0.0, 2.0 * kPi);
    }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dy = y - cy, dx = x - cx;
        const double d = std::hypot(dx, dy);
        const double th = std::atan2(dy, dx);
        double r = r0;
        for (int k = 0; k < 3; ++k) r += r0 * amp[k] * std::cos((k + 2) * th + phase[k]);
        if (d <= r) m.at(y, x) = 1.0;
      }
    m.at(cy, cx) = 1.0;
  } else {
    require(false, "unknown shape kind: " + kind);
  }
  auto boxes = tight_boxes_from_mask(m);
  if (boxes.size() != 1) return false;  // degenerate raster, retry
  out->mask = std::move(m);
  out->box = boxes[0];
  return true;
}

}  // namespace detail

/// Deterministic synthetic dataset: connected objects, multi-label masks,
/// per-component tight boxes, Gaussian pixel noise, 8-bit quantized images.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.height = spec.height;
  ds.width = spec.width;
  ds.categories = spec.categories;
  ds.slices_per_volume = spec.slices_per_volume;
  const int H = spec.height, W = spec.width;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(i)));
    Sample s;
    s.volume_id = i / spec.slices_per_volume;
    s.mask = Array({H, W, spec.categories});
    const double background = rng.uniform(0.05, 0.20);
    s.image = Array({H, W}, background);
    const int n_shapes = rng.uniform_int(spec.shapes_min, spec.shapes_max);
    std::vector<geom::BBox> placed;
    for (int k = 0; k < n_shapes; ++k) {
      bool ok = false;
      for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
        detail::Shape sh;
        const int sw = rng.uniform_int(spec.size_min, spec.size_max);
        const int sh_h = rng.uniform_int(spec.size_min, spec.size_max);
        sh.box = geom::BBox{0, 0, sw - 1, sh_h - 1, 1};
        const std::string& kind =
            spec.kinds[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(spec.kinds.size()) - 1))];
        if (!detail::rasterize_shape(kind, H, W, spec.border, rng, &sh)) continue;
        bool clash = false;
        geom::BBox dilated{std::max(0, sh.box.x1 - 1), std::max(0, sh.box.y1 - 1),
                           std::min(W - 1, sh.box.x2 + 1), std::min(H - 1, sh.box.y2 + 1), 1};
        for (const geom::BBox& other : placed)
          if (dilated.intersects(other)) clash = true;
        if (clash) continue;
        const int category = rng.uniform_int(1, spec.categories);
        sh.intensity = rng.uniform(0.55, 0.95);
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            if (sh.mask.at(y, x) == 1.0) {
              s.image.at(y, x) = sh.intensity;
              s.mask.at(y, x, category - 1) = 1.0;
            }
        placed.push_back(sh.box);
        ok = true;
      }
      if (!ok)
        throw std::runtime_error("generate_synthetic: no feasible placement for image " +
                                 std::to_string(i));
    }
    if (spec.noise > 0.0)
      for (int64_t px = 0; px < s.image.numel(); ++px)
        s.image[px] = std::min(1.0, std::max(0.0, s.image[px] + spec.noise * rng.normal()));
    // quantize to the 8-bit levels the files carry, making I/O lossless
    for (int64_t px = 0; px < s.image.numel(); ++px)
      s.image[px] = std::round(s.image[px] * 255.0) / 255.0;
    // tight boxes per connected component, per category
    for (int c = 1; c <= spec.categories; ++c) {
      Array plane({H, W});
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) plane.at(y, x) = s.mask.at(y, x, c - 1);
      for (geom::BBox b : tight_boxes_from_mask(plane, c)) s.boxes.push_back(b);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---- PGM I/O ---------------------------------------------------------------

inline void write_pgm(const std::string& path, const Array& plane) {
  require(plane.rank() == 2, "write_pgm: plane expected");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
  os << "P5\n" << plane.dim(1) << " " << plane.dim(0) << "\n255\n";
  for (int64_t i = 0; i < plane.numel(); ++i) {
    const double v = std::min(1.0, std::max(0.0, plane[i]));
    const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!os) throw std::runtime_error("write_pgm: write failed for " + path);
}

inline Array read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 file: " + path);
  auto next_int = [&is, &path]() {
    int v;
    while (true) {
      is >> std::ws;
      if (is.peek() == '#') {
        std::string line;
        std::getline(is, line);
        continue;
      }
      if (!(is >> v)) throw std::runtime_error("read_pgm: bad header in " + path);
      return v;
    }
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_pgm: only maxval 255 supported: " + path);
  is.get();  // single whitespace after header
  Array plane({h, w});
  for (int64_t i = 0; i < plane.numel(); ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("read_pgm: truncated file " + path);
    plane[i] = static_cast<double>(c) / 255.0;
  }
  return plane;
}

// ---- prediction dumps: magic BMIL, version, H, W, C, f32 payload -----------

inline void write_bmil(const std::string& path, const Array& map) {
  require(map.rank() == 3, "write_bmil: H x W x C map expected");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_bmil: cannot open " + path);
  os.write("BMIL", 4);
  auto put_u32 = [&os](uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(1);
  put_u32(static_cast<uint32_t>(map.dim(0)));
  put_u32(static_cast<uint32_t>(map.dim(1)));
  put_u32(static_cast<uint32_t>(map.dim(2)));
  for (int64_t i = 0; i < map.numel(); ++i) {
    const float f = static_cast<float>(map[i]);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(u);
  }
  if (!os) throw std::runtime_error("write_bmil: write failed for " + path);
}

inline Array read_bmil(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_bmil: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BMIL", 4) != 0)
    throw std::runtime_error("read_bmil: bad magic in " + path);
  auto get_u32 = [&is]() {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  };
  const uint32_t version = get_u32();
  if (version != 1) throw std::runtime_error("read_bmil: unsupported version in " + path);
  const int H = static_cast<int>(get_u32());
  const int W = static_cast<int>(get_u32());
  const int C = static_cast<int>(get_u32());
  Array map({H, W, C});
  for (int64_t i = 0; i < map.numel(); ++i) {
    const uint32_t u = get_u32();
    float f;
    std::memcpy(&f, &u, 4);
    map[i] = static_cast<double>(f);
  }
  if (!is) throw std::runtime_error("read_bmil: truncated file " + path);
  return map;
}

// ---- dataset directory I/O --------------------------------------------------

namespace detail {

inline std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d.pgm", i);
  return buf;
}

inline std::string mask_name(int i, int c) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d_c%d.pgm", i, c);
  return buf;
}

}  // namespace detail

/// Layout: images/*.pgm, masks/*.pgm (one file per category), annotations.csv
/// with `image_id,category,x1,y1,x2,y2,mx1,mx2,my1,my2`, volumes.csv, meta.txt.
inline void save_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  std::ofstream meta(fs::path(dir) / "meta.txt");
  meta << "count = " << ds.samples.size() << "\n";
  meta << "height = " << ds.height << "\n";
  meta << "width = " << ds.width << "\n";
  meta << "categories = " << ds.categories << "\n";
  meta << "slices_per_volume = " << ds.slices_per_volume << "\n";
  std::ofstream ann(fs::path(dir) / "annotations.csv");
  ann << "image_id,category,x1,y1,x2,y2,mx1,mx2,my1,my2\n";
  std::ofstream vol(fs::path(dir) / "volumes.csv");
  vol << "image_id,volume_id\n";
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    write_pgm((fs::path(dir) / "images" / detail::image_name(static_cast<int>(i))).string(),
              s.image);
    for (int c = 1; c <= ds.categories; ++c) {
      Array plane({ds.height, ds.width});
      for (int y = 0; y < ds.height; ++y)
        for (int x = 0; x < ds.width; ++x) plane.at(y, x) = s.mask.at(y, x, c - 1);
      write_pgm((fs::path(dir) / "masks" / detail::mask_name(static_cast<int>(i), c)).string(),
                plane);
    }
    for (const geom::BBox& b : s.boxes)
      ann << i << "," << b.category << "," << b.x1 << "," << b.y1 << "," << b.x2 << "," << b.y2
          << ",0,0,0,0\n";
    vol << i << "," << s.volume_id << "\n";
  }
}

inline Dataset load_dataset(const std::string& dir) {
  std::ifstream meta(fs::path(dir) / "meta.txt");
  if (!meta) throw std::runtime_error("load_dataset: missing meta.txt in " + dir);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  Dataset ds;
  const int count = std::stoi(kv.at("count"));
  ds.height = std::stoi(kv.at("height"));
  ds.width = std::stoi(kv.at("width"));
  ds.categories = std::stoi(kv.at("categories"));
  ds.slices_per_volume = std::stoi(kv.at("slices_per_volume"));
  ds.samples.resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Sample& s = ds.samples[static_cast<size_t>(i)];
    s.image = read_pgm((fs::path(dir) / "images" / detail::image_name(i)).string());
    s.mask = Array({ds.height, ds.width, ds.categories});
    for (int c = 1; c <= ds.categories; ++c) {
      Array plane = read_pgm((fs::path(dir) / "masks" / detail::mask_name(i, c)).string());
      for (int y = 0; y < ds.height; ++y)
        for (int x = 0; x < ds.width; ++x) s.mask.at(y, x, c - 1) = plane.at(y, x) >= 0.5 ? 1.0 : 0.0;
    }
  }
  std::ifstream ann(fs::path(dir) / "annotations.csv");
  if (!ann) throw std::runtime_error("load_dataset: missing annotations.csv in " + dir);
  std::getline(ann, line);  // header
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<long> f;
    while (std::getline(ss, tok, ',')) f.push_back(std::stol(tok));
    if (f.size() != 10)
      throw std::runtime_error("load_dataset: malformed annotation row: " + line);
    const auto i = static_cast<size_t>(f[0]);
    if (i >= ds.samples.size())
      throw std::runtime_error("load_dataset: annotation for unknown image: " + line);
    ds.samples[i].boxes.push_back(geom::BBox{static_cast<int>(f[2]), static_cast<int>(f[3]),
                                             static_cast<int>(f[4]), static_cast<int>(f[5]),
                                             static_cast<int>(f[1])});
  }
  std::ifstream vol(fs::path(dir) / "volumes.csv");
  if (vol) {
    std::getline(vol, line);
    while (std::getline(vol, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string a, b;
      std::getline(ss, a, ',');
      std::getline(ss, b, ',');
      const auto i = static_cast<size_t>(std::stol(a));
      if (i < ds.samples.size()) ds.samples[i].volume_id = std::stoi(b);
    }
  }
  return ds;
}

}  // namespace boxmil::data
