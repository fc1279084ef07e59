#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "boxmil/data.hpp"
#include "boxmil/losses.hpp"
#include "boxmil/model.hpp"

namespace boxmil::harness {

namespace fs = std::filesystem;

// ---- Adam -------------------------------------------------------------------

struct AdamState {
  std::vector<Array> m, v;
  int64_t t = 0;

  void init(const net::NetParams& params) {
    m.clear();
    v.clear();
    for (const Array& p : params.tensors) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
    t = 0;
  }
};

/// Standard bias-corrected Adam update. Non-finite gradients abort with a
/// diagnostic rather than poisoning the parameters.
inline void adam_step(net::NetParams& params, const std::vector<Array>& grads, AdamState& state,
                      double lr, double beta1, double beta2, double eps = 1e-8) {
  require(lr > 0.0, "adam: lr must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "adam: betas must be in [0,1)");
  require(grads.size() == params.tensors.size(), "adam: gradient count mismatch");
  if (state.m.empty()) state.init(params);
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t k = 0; k < grads.size(); ++k) {
    Array& p = params.tensors[k];
    const Array& g = grads[k];
    require(g.same_shape(p), "adam: gradient shape mismatch");
    if (!g.all_finite())
      throw std::runtime_error("adam: non-finite gradient in tensor " + params.names[k]);
    Array& m = state.m[k];
    Array& v = state.v[k];
    for (int64_t i = 0; i < p.numel(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
}

// ---- dice -------------------------------------------------------------------

/// Dice per group: predictions of all slices in a group are pooled before
/// the overlap is computed. Empty-vs-empty scores 1 by convention.
inline std::vector<double> dice_per_group(const std::vector<Array>& pred_bin,
                                          const std::vector<Array>& gt_bin,
                                          const std::vector<int>& group_of) {
  require(pred_bin.size() == gt_bin.size() && pred_bin.size() == group_of.size(),
          "dice: size mismatch");
  std::map<int, std::array<int64_t, 3>> acc;  // group -> {intersection, |A|, |B|}
  for (size_t i = 0; i < pred_bin.size(); ++i) {
    require(pred_bin[i].same_shape(gt_bin[i]), "dice: shape mismatch");
    require(group_of[i] >= 0, "dice: unknown group id");
    auto& a = acc[group_of[i]];
    const Array& p = pred_bin[i];
    const Array& g = gt_bin[i];
    for (int64_t k = 0; k < p.numel(); ++k) {
      const bool pp = p[k] != 0.0, gg = g[k] != 0.0;
      a[0] += (pp && gg) ? 1 : 0;
      a[1] += pp ? 1 : 0;
      a[2] += gg ? 1 : 0;
    }
  }
  std::vector<double> out;
  for (const auto& [gid, a] : acc)
    out.push_back(a[1] + a[2] == 0 ? 1.0
                                   : 2.0 * static_cast<double>(a[0]) /
                                         static_cast<double>(a[1] + a[2]));
  return out;
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double s = 0.0;
  for (double x : xs) s += x;
  const double mean = s / static_cast<double>(xs.size());
  double s2 = 0.0;
  for (double x : xs) s2 += (x - mean) * (x - mean);
  return {mean, std::sqrt(s2 / static_cast<double>(xs.size()))};
}

// ---- config -----------------------------------------------------------------

struct TrainConfig {
  std::string method = "proposed";  // baseline | pa | po | proposed | fsis
  loss::LossConfig loss;
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.99, adam_eps = 1e-8;
  int batch = 8;
  int epochs = 60;
  uint64_t seed = 1;
  std::string train_dir, val_dir, out_dir;
  data::PerturbSpec perturb;
  int net_base = 8;
  std::string group_by = "image";  // image | volume
  int workers = 0;                 // 0 -> min(2, hardware)

  void validate() const {
    require(method == "baseline" || method == "pa" || method == "po" || method == "proposed" ||
                method == "fsis",
            "train config: unknown method '" + method + "'");
    require(lr > 0.0, "train config: lr must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
            "train config: betas must be in [0,1)");
    require(batch >= 1 && epochs >= 1, "train config: batch and epochs must be >= 1");
    require(group_by == "image" || group_by == "volume", "train config: bad group_by");
    loss.validate();
  }
};

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    if (!key.empty()) kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline data::PerturbSpec parse_perturb(const std::string& s, bool per_side) {
  if (s.empty() || s == "none" || s == "fixed:0") return data::PerturbSpec::none();
  auto parts = split(s, ':');
  if (parts[0] == "fixed" && parts.size() == 2)
    return data::PerturbSpec::fixed_margin(std::stoi(parts[1]));
  if (parts[0] == "uniform" && parts.size() == 3)
    return data::PerturbSpec::uniform(std::stoi(parts[1]), std::stoi(parts[2]), per_side);
  throw std::invalid_argument("bad perturb spec '" + s + "' (none | fixed:M | uniform:LO:HI)");
}

}  // namespace detail

inline TrainConfig train_config_from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  auto get = [&kv](const char* key, const std::string& dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : it->second;
  };
  c.method = get("method", c.method);
  c.lr = std::stod(get("lr", "1e-4"));
  c.beta1 = std::stod(get("beta1", "0.9"));
  c.beta2 = std::stod(get("beta2", "0.99"));
  c.adam_eps = std::stod(get("adam_eps", "1e-8"));
  c.batch = std::stoi(get("batch", "8"));
  c.epochs = std::stoi(get("epochs", "60"));
  c.seed = std::stoull(get("seed", "1"));
  c.train_dir = get("train_dir", "");
  c.val_dir = get("val_dir", "");
  c.out_dir = get("out_dir", "");
  c.group_by = get("group_by", "image");
  c.workers = std::stoi(get("workers", "0"));
  c.net_base = std::stoi(get("net_base", "8"));
  c.loss.lambda = std::stod(get("lambda", "10"));
  c.loss.beta = std::stod(get("beta", "0.25"));
  c.loss.gamma = std::stod(get("gamma", "2"));
  const std::string sm = get("smoothmax", "quasimax");
  if (sm == "hard")
    c.loss.smooth = smax::SmoothMaxKind::Variant::kHard;
  else if (sm == "softmax")
    c.loss.smooth = smax::SmoothMaxKind::Variant::kAlphaSoftmax;
  else if (sm == "quasimax")
    c.loss.smooth = smax::SmoothMaxKind::Variant::kAlphaQuasimax;
  else
    throw std::invalid_argument("bad smoothmax '" + sm + "' (hard | softmax | quasimax)");
  c.loss.alpha_pa = std::stod(get("alpha_pa", "4"));
  c.loss.alpha_po = std::stod(get("alpha_po", "1"));
  auto ang = detail::split(get("angles", "-40,40,20"), ',');
  require(ang.size() == 3, "train config: angles must be 'a,b,s'");
  c.loss.angles = {std::stod(ang[0]), std::stod(ang[1]), std::stod(ang[2])};
  c.loss.grid.n_r = std::stoi(get("n_r", "20"));
  c.loss.grid.n_theta = std::stoi(get("n_theta", "60"));
  c.loss.w_min = std::stod(get("w_min", "0.5"));
  c.loss.margin = std::stoi(get("margin", "2"));
  c.loss.use_weights = std::stoi(get("use_weights", "1")) != 0;
  c.perturb = detail::parse_perturb(get("perturb", "none"),
                                    std::stoi(get("perturb_per_side", "1")) != 0);
  c.validate();
  return c;
}

inline data::SyntheticSpec synthetic_spec_from_kv(const std::map<std::string, std::string>& kv) {
  data::SyntheticSpec s;
  auto get = [&kv](const char* key, const std::string& dflt) {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : it->second;
  };
  s.count = std::stoi(get("count", "200"));
  s.height = std::stoi(get("height", "64"));
  s.width = std::stoi(get("width", "64"));
  s.categories = std::stoi(get("categories", "1"));
  s.shapes_min = std::stoi(get("shapes_min", "1"));
  s.shapes_max = std::stoi(get("shapes_max", "2"));
  s.kinds.clear();
  for (const std::string& k : detail::split(get("kinds", "ellipse,blob"), ','))
    if (!k.empty()) s.kinds.push_back(k);
  s.size_min = std::stoi(get("size_min", "8"));
  s.size_max = std::stoi(get("size_max", "24"));
  s.noise = std::stod(get("noise", "0.03"));
  s.seed = std::stoull(get("seed", "7"));
  s.border = std::stoi(get("border", "6"));
  s.slices_per_volume = std::stoi(get("slices_per_volume", "8"));
  s.validate();
  return s;
}

/// FNV-1a over the canonical key=value text of a config.
inline std::string fingerprint(const std::map<std::string, std::string>& kv) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& [k, v] : kv)
    for (char c : k + "=" + v + "\n") h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::map<std::string, std::string> canonical_kv(const TrainConfig& c) {
  std::map<std::string, std::string> kv;
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof(b), "%.10g", v);
    return std::string(b);
  };
  kv["method"] = c.method;
  kv["lr"] = num(c.lr);
  kv["beta1"] = num(c.beta1);
  kv["beta2"] = num(c.beta2);
  kv["batch"] = std::to_string(c.batch);
  kv["epochs"] = std::to_string(c.epochs);
  kv["seed"] = std::to_string(c.seed);
  kv["lambda"] = num(c.loss.lambda);
  kv["beta"] = num(c.loss.beta);
  kv["gamma"] = num(c.loss.gamma);
  kv["smoothmax"] = std::to_string(static_cast<int>(c.loss.smooth));
  kv["alpha_pa"] = num(c.loss.alpha_pa);
  kv["alpha_po"] = num(c.loss.alpha_po);
  kv["angles"] = num(c.loss.angles.a) + "," + num(c.loss.angles.b) + "," + num(c.loss.angles.s);
  kv["n_r"] = std::to_string(c.loss.grid.n_r);
  kv["n_theta"] = std::to_string(c.loss.grid.n_theta);
  kv["w_min"] = num(c.loss.w_min);
  kv["margin"] = std::to_string(c.loss.margin);
  kv["use_weights"] = c.loss.use_weights ? "1" : "0";
  kv["net_base"] = std::to_string(c.net_base);
  kv["group_by"] = c.group_by;
  kv["perturb_mode"] = c.perturb.mode == data::PerturbSpec::Mode::kFixed ? "fixed" : "uniform";
  kv["perturb_fixed"] = std::to_string(c.perturb.fixed);
  kv["perturb_lo"] = std::to_string(c.perturb.lo);
  kv["perturb_hi"] = std::to_string(c.perturb.hi);
  kv["perturb_per_side"] = c.perturb.per_side ? "1" : "0";
  return kv;
}

// ---- training ----------------------------------------------------------------

struct EpochRow {
  int epoch = 0;
  double loss = 0.0;
  double dice_mean = 0.0;
  double dice_std = 0.0;
};

struct TrainResult {
  std::vector<EpochRow> log;
  double best_dice = -1.0;
  int best_epoch = -1;
  std::string checkpoint_path, metrics_path;
  data::MardStats mard;
  int64_t origins_total = 0, origins_in_box = 0;
  double final_origin_in_object_frac = 1.0;
  double runtime_sec = 0.0;
  std::string fingerprint;
};

namespace detail {

template <class T>
inline void fisher_yates(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
}

inline void parallel_for(int n, int workers, const std::function<void(int)>& f) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n));
  std::atomic<int> next{0};
  auto body = [&] {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        f(i);
      } catch (...) {
        errors[static_cast<size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const int k = std::min(workers, n);
  pool.reserve(static_cast<size_t>(k));
  for (int t = 0; t < k; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline ad::Var image_loss(ad::Tape& t, const TrainConfig& cfg, ad::Var pred,
                          const data::Sample& sample, const std::vector<geom::BBox>& boxes,
                          int categories, std::vector<loss::OriginRecord>* origins) {
  if (cfg.method == "fsis") return loss::supervised_bce_loss(t, pred, sample.mask);
  if (cfg.method == "baseline")
    return loss::mil_baseline_loss(t, pred, boxes, cfg.loss.lambda, smax::SmoothMaxKind::hard(),
                                   categories);
  loss::TotalLossTerms terms;
  terms.parallel = cfg.method == "pa" || cfg.method == "proposed";
  terms.polar = cfg.method == "po" || cfg.method == "proposed";
  return loss::total_loss(t, pred, boxes, cfg.loss, categories, terms, origins);
}

inline Array binarize_map(const Array& map, double thr = 0.5) {
  Array out(map.shape());
  for (int64_t i = 0; i < map.numel(); ++i) out[i] = map[i] >= thr ? 1.0 : 0.0;
  return out;
}

}  // namespace detail

/// Full training protocol: perturb boxes once up front, then per epoch
/// shuffle, forward, re-select polar origins from the live predictions,
/// backward, Adam. Logs per-epoch loss and validation dice; keeps the
/// best-dice checkpoint. Deterministic for a fixed config.
inline TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  data::Dataset train_ds = data::load_dataset(cfg.train_dir);
  data::Dataset val_ds = data::load_dataset(cfg.val_dir);
  require(!train_ds.samples.empty(), "train: empty training set");
  require(train_ds.categories == val_ds.categories, "train: category count mismatch");

  TrainResult result;
  result.fingerprint = fingerprint(canonical_kv(cfg));
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  data::PerturbResult perturbed =
      data::perturb_dataset(train_ds, cfg.perturb, mix_seed(cfg.seed, 0x626f78ull));
  result.mard = perturbed.stats;
  std::vector<std::vector<geom::BBox>> train_boxes(train_ds.samples.size());
  for (size_t i = 0; i < train_ds.samples.size(); ++i)
    for (const data::PerturbedBox& pb : perturbed.per_image[i]) train_boxes[i].push_back(pb.box);

  if (!cfg.out_dir.empty()) {
    std::ofstream ann(fs::path(cfg.out_dir) / "perturbed_annotations.csv");
    ann << "image_id,category,x1,y1,x2,y2,mx1,mx2,my1,my2\n";
    for (size_t i = 0; i < perturbed.per_image.size(); ++i)
      for (const data::PerturbedBox& pb : perturbed.per_image[i])
        ann << i << "," << pb.box.category << "," << pb.box.x1 << "," << pb.box.y1 << ","
            << pb.box.x2 << "," << pb.box.y2 << "," << pb.mx1 << "," << pb.mx2 << "," << pb.my1
            << "," << pb.my2 << "\n";
  }

  net::NetConfig net_cfg;
  net_cfg.base = cfg.net_base;
  net_cfg.categories = train_ds.categories;
  net::NetParams params = net::init_params(cfg.seed, net_cfg);
  AdamState adam;
  adam.init(params);

  const int workers =
      cfg.workers > 0
          ? cfg.workers
          : std::max(1, std::min(2, static_cast<int>(std::thread::hardware_concurrency())));
  const int n_train = static_cast<int>(train_ds.samples.size());
  const int n_batches = (n_train + cfg.batch - 1) / cfg.batch;

  std::vector<int> val_groups;
  for (const data::Sample& s : val_ds.samples)
    val_groups.push_back(cfg.group_by == "volume" ? s.volume_id
                                                  : static_cast<int>(val_groups.size()));
  std::vector<Array> val_gt;
  for (const data::Sample& s : val_ds.samples) val_gt.push_back(s.mask);

  std::vector<std::string> origin_rows;
  const std::string checkpoint_path =
      cfg.out_dir.empty() ? "" : (fs::path(cfg.out_dir) / "checkpoint.bin").string();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x657063ull + static_cast<uint64_t>(epoch)));
    detail::fisher_yates(order, shuffle_rng);

    double epoch_loss = 0.0;
    int64_t epoch_origins = 0, epoch_origins_in_box = 0, epoch_origins_in_obj = 0;
    for (int b = 0; b < n_batches; ++b) {
      const int lo = b * cfg.batch;
      const int hi = std::min(n_train, lo + cfg.batch);
      const int bsz = hi - lo;
      std::vector<std::vector<Array>> grads(static_cast<size_t>(bsz));
      std::vector<double> losses(static_cast<size_t>(bsz));
      std::vector<std::vector<loss::OriginRecord>> origins(static_cast<size_t>(bsz));
      detail::parallel_for(bsz, workers, [&](int k) {
        const int img = order[static_cast<size_t>(lo + k)];
        const data::Sample& sample = train_ds.samples[static_cast<size_t>(img)];
        ad::Tape tape;
        net::Forward fwd = net::forward(tape, params, sample.image);
        ad::Var l = detail::image_loss(tape, cfg, fwd.pred, sample,
                                       train_boxes[static_cast<size_t>(img)],
                                       train_ds.categories, &origins[static_cast<size_t>(k)]);
        losses[static_cast<size_t>(k)] = tape.value(l)[0];
        ad::Gradients g = tape.backward(l);
        auto& slot = grads[static_cast<size_t>(k)];
        for (ad::Var leaf : fwd.leaves) slot.push_back(g.wrt(leaf));
        // origin validity is a hard invariant of the method
        const int img_gt = img;
        for (const loss::OriginRecord& rec : origins[static_cast<size_t>(k)]) {
          if (!rec.box.contains(rec.origin.y, rec.origin.x))
            throw std::logic_error("train: selected polar origin left its box");
          (void)img_gt;
        }
      });
      std::vector<Array> batch_grad;
      for (const Array& p : params.tensors) batch_grad.emplace_back(p.shape());
      for (int k = 0; k < bsz; ++k)  // fixed order, deterministic accumulation
        for (size_t j = 0; j < batch_grad.size(); ++j) {
          const Array& g = grads[static_cast<size_t>(k)][j];
          for (int64_t i = 0; i < g.numel(); ++i)
            batch_grad[j][i] += g[i] / static_cast<double>(bsz);
        }
      adam_step(params, batch_grad, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
      for (int k = 0; k < bsz; ++k) {
        epoch_loss += losses[static_cast<size_t>(k)];
        const int img = order[static_cast<size_t>(lo + k)];
        const data::Sample& sample = train_ds.samples[static_cast<size_t>(img)];
        for (const loss::OriginRecord& rec : origins[static_cast<size_t>(k)]) {
          ++epoch_origins;
          if (rec.box.contains(rec.origin.y, rec.origin.x)) ++epoch_origins_in_box;
          if (sample.mask.at(rec.origin.y, rec.origin.x, rec.box.category - 1) != 0.0)
            ++epoch_origins_in_obj;
        }
      }
    }
    epoch_loss /= static_cast<double>(n_train);

    std::vector<Array> val_pred(val_ds.samples.size());
    detail::parallel_for(static_cast<int>(val_ds.samples.size()), workers, [&](int i) {
      val_pred[static_cast<size_t>(i)] = detail::binarize_map(
          net::forward_plain(params, val_ds.samples[static_cast<size_t>(i)].image));
    });
    auto [dice_mean, dice_std] =
        mean_std(dice_per_group(val_pred, val_gt, val_groups));

    result.log.push_back({epoch, epoch_loss, dice_mean, dice_std});
    result.origins_total += epoch_origins;
    result.origins_in_box += epoch_origins_in_box;
    if (epoch_origins > 0)
      result.final_origin_in_object_frac =
          static_cast<double>(epoch_origins_in_obj) / static_cast<double>(epoch_origins);
    {
      char row[96];
      std::snprintf(row, sizeof(row), "%d,%.6f,%.6f\n", epoch,
                    epoch_origins > 0 ? static_cast<double>(epoch_origins_in_box) /
                                            static_cast<double>(epoch_origins)
                                      : 1.0,
                    epoch_origins > 0 ? static_cast<double>(epoch_origins_in_obj) /
                                            static_cast<double>(epoch_origins)
                                      : 1.0);
      origin_rows.emplace_back(row);
    }
    if (dice_mean > result.best_dice) {
      result.best_dice = dice_mean;
      result.best_epoch = epoch;
      if (!checkpoint_path.empty()) net::save_checkpoint(checkpoint_path, params);
    }
    std::printf("epoch %3d  loss %.6f  val_dice %.4f (+/- %.4f)\n", epoch, epoch_loss, dice_mean,
                dice_std);
    std::fflush(stdout);
  }

  if (!cfg.out_dir.empty()) {
    result.metrics_path = (fs::path(cfg.out_dir) / "metrics.csv").string();
    std::ofstream os(result.metrics_path, std::ios::binary);
    os << "epoch,loss,val_dice_mean,val_dice_std\n";
    for (const EpochRow& r : result.log) {
      char row[128];
      std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f\n", r.epoch, r.loss, r.dice_mean,
                    r.dice_std);
      os << row;
    }
    std::ofstream org(fs::path(cfg.out_dir) / "origin_stats.csv", std::ios::binary);
    org << "epoch,inside_box_frac,inside_object_frac\n";
    for (const std::string& row : origin_rows) org << row;
  }
  result.checkpoint_path = checkpoint_path;
  result.runtime_sec =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

// ---- evaluation ----------------------------------------------------------------

struct EvalReport {
  std::vector<double> per_group;
  double mean = 0.0, stddev = 0.0;
  std::string fingerprint;
  double runtime_sec = 0.0;
};

inline EvalReport evaluate(const net::NetParams& params, const data::Dataset& ds,
                           const std::string& group_by, const std::string& dump_dir = "",
                           int workers = 2) {
  const auto t0 = std::chrono::steady_clock::now();
  require(group_by == "image" || group_by == "volume", "evaluate: bad group_by");
  std::vector<int> groups;
  for (const data::Sample& s : ds.samples)
    groups.push_back(group_by == "volume" ? s.volume_id : static_cast<int>(groups.size()));
  std::vector<Array> preds(ds.samples.size()), pred_bin(ds.samples.size()), gts;
  detail::parallel_for(static_cast<int>(ds.samples.size()), workers, [&](int i) {
    preds[static_cast<size_t>(i)] =
        net::forward_plain(params, ds.samples[static_cast<size_t>(i)].image);
    pred_bin[static_cast<size_t>(i)] = detail::binarize_map(preds[static_cast<size_t>(i)]);
  });
  for (const data::Sample& s : ds.samples) gts.push_back(s.mask);
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    for (size_t i = 0; i < preds.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "pred_%05d.bmil", static_cast<int>(i));
      data::write_bmil((fs::path(dump_dir) / name).string(), preds[i]);
    }
  }
  EvalReport rep;
  rep.per_group = dice_per_group(pred_bin, gts, groups);
  std::tie(rep.mean, rep.stddev) = mean_std(rep.per_group);
  std::map<std::string, std::string> kv{{"group_by", group_by},
                                        {"images", std::to_string(ds.samples.size())}};
  rep.fingerprint = fingerprint(kv);
  rep.runtime_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---- grid search ----------------------------------------------------------------

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

inline std::vector<GridAxis> parse_grid_file(const std::string& path) {
  std::vector<GridAxis> grid;
  for (const auto& [k, v] : parse_kv_file(path)) {
    GridAxis axis;
    axis.key = k;
    for (const std::string& s : detail::split(v, ','))
      if (!s.empty()) axis.values.push_back(s);
    require(!axis.values.empty(), "grid: empty value list for key " + k);
    grid.push_back(std::move(axis));
  }
  return grid;
}

struct TrialReport {
  int index = 0;
  std::map<std::string, std::string> overrides;
  bool failed = false;
  std::string error;
  double dice_mean = -1.0, dice_std = 0.0;
  int best_epoch = -1;
  double runtime_sec = 0.0;
  std::string fingerprint;
};

/// Trains every combination of the grid over the base config. Failed trials
/// are reported and ranked last; ties break by combination order.
inline std::vector<TrialReport> grid_search(const std::map<std::string, std::string>& base_kv,
                                            const std::vector<GridAxis>& grid,
                                            const std::string& out_root, int jobs = 1) {
  int64_t total = 1;
  for (const GridAxis& a : grid) total *= static_cast<int64_t>(a.values.size());
  require(total >= 1 && total <= 100000, "grid: combination count out of range");
  std::vector<TrialReport> reports(static_cast<size_t>(total));
  fs::create_directories(out_root);
  detail::parallel_for(static_cast<int>(total), std::max(1, jobs), [&](int idx) {
    TrialReport& rep = reports[static_cast<size_t>(idx)];
    rep.index = idx;
    auto kv = base_kv;
    int64_t rem = idx;
    for (const GridAxis& a : grid) {
      const auto pick = static_cast<size_t>(rem % static_cast<int64_t>(a.values.size()));
      rem /= static_cast<int64_t>(a.values.size());
      kv[a.key] = a.values[pick];
      rep.overrides[a.key] = a.values[pick];
    }
    char sub[32];
    std::snprintf(sub, sizeof(sub), "trial_%04d", idx);
    kv["out_dir"] = (fs::path(out_root) / sub).string();
    try {
      TrainConfig cfg = train_config_from_kv(kv);
      TrainResult res = train(cfg);
      rep.dice_mean = res.best_dice;
      rep.best_epoch = res.best_epoch;
      rep.runtime_sec = res.runtime_sec;
      rep.fingerprint = res.fingerprint;
    } catch (const std::exception& e) {
      rep.failed = true;
      rep.error = e.what();
    }
  });
  std::vector<TrialReport> ranked = reports;
  std::stable_sort(ranked.begin(), ranked.end(), [](const TrialReport& a, const TrialReport& b) {
    if (a.failed != b.failed) return !a.failed;
    if (a.dice_mean != b.dice_mean) return a.dice_mean > b.dice_mean;
    return a.index < b.index;
  });
  std::ofstream os(fs::path(out_root) / "grid_results.csv");
  os << "rank,trial,dice_mean,best_epoch,failed,overrides\n";
  for (size_t r = 0; r < ranked.size(); ++r) {
    std::string ov;
    for (const auto& [k, v] : ranked[r].overrides) ov += k + ":" + v + ";";
    char row[160];
    std::snprintf(row, sizeof(row), "%d,%d,%.6f,%d,%d,", static_cast<int>(r),
                  ranked[r].index, ranked[r].dice_mean, ranked[r].best_epoch,
                  ranked[r].failed ? 1 : 0);
    os << row << ov << "\n";
  }
  return ranked;
}

}  // namespace boxmil::harness
