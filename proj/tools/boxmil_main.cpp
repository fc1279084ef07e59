// boxmil command line: data generation, training, evaluation, grid search,
// bag dumps and gradient checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "boxmil/boxmil.hpp"

namespace fs = std::filesystem;
using namespace boxmil;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
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

Array rand_array(const std::vector<int>& shape, Rng& rng, double lo, double hi) {
  Array a(shape);
  for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(lo, hi);
  return a;
}

std::vector<geom::BBox> random_boxes(Rng& rng, int H, int W, int n, int categories) {
  std::vector<geom::BBox> boxes;
  for (int k = 0; k < n; ++k) {
    const int x1 = rng.uniform_int(0, W - 2), y1 = rng.uniform_int(0, H - 2);
    boxes.push_back({x1, y1, rng.uniform_int(x1 + 1, W - 1), rng.uniform_int(y1 + 1, H - 1),
                     rng.uniform_int(1, categories)});
  }
  return boxes;
}

loss::LossConfig small_loss_config() {
  loss::LossConfig cfg;
  cfg.angles = {-40, 40, 20};
  cfg.grid = {5, 8};
  cfg.margin = 2;
  cfg.alpha_pa = 4.0;
  cfg.alpha_po = 1.0;
  return cfg;
}

/// Named gradient-check instances over seeded random inputs.
double run_gradcheck(const std::string& op, uint64_t seed, double eps) {
  Rng rng(mix_seed(seed, 0x6763ull));
  auto sum_sq = [](ad::Tape& t, ad::Var v) { return t.sum(t.mul(v, v)); };

  if (op == "add" || op == "sub" || op == "mul" || op == "div") {
    Array a = rand_array({8}, rng, -3, 3);
    Array b = rand_array({8}, rng, -3, 3);
    if (op == "div")
      for (int64_t i = 0; i < b.numel(); ++i) b[i] += b[i] >= 0 ? 0.75 : -0.75;
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = op == "add"   ? t.add(xs[0], xs[1])
                      : op == "sub" ? t.sub(xs[0], xs[1])
                      : op == "mul" ? t.mul(xs[0], xs[1])
                                    : t.div(xs[0], xs[1]);
          return t.sum(t.mul(r, r));
        },
        {a, b}, eps);
  }
  if (op == "exp" || op == "sigmoid" || op == "add_scalar" || op == "mul_scalar") {
    Array a = rand_array({12}, rng, -3, 3);
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = op == "exp"          ? t.exp(xs[0])
                      : op == "sigmoid"    ? t.sigmoid(xs[0])
                      : op == "add_scalar" ? t.add_scalar(xs[0], 1.25)
                                           : t.mul_scalar(xs[0], -2.5);
          return t.sum(t.mul(r, r));
        },
        {a}, eps);
  }
  if (op == "log" || op == "pow") {
    Array a = rand_array({12}, rng, 0.3, 3);
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = op == "log" ? t.log(xs[0]) : t.pow_scalar(xs[0], 1.7);
          return t.sum(r);
        },
        {a}, eps);
  }
  if (op == "relu" || op == "clamp") {
    Array a = rand_array({12}, rng, -3, 3);
    for (int64_t i = 0; i < a.numel(); ++i) {  // keep clear of the kinks
      if (std::abs(a[i]) < 0.01) a[i] += 0.05;
      if (op == "clamp" && std::abs(std::abs(a[i]) - 1.0) < 0.01) a[i] += 0.05;
    }
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = op == "relu" ? t.relu(xs[0]) : t.clamp(xs[0], -1.0, 1.0);
          return t.sum(t.mul(r, r));
        },
        {a}, eps);
  }
  if (op == "sum" || op == "max") {
    Array a = rand_array({12}, rng, -3, 3);
    if (op == "max") {  // ensure a clear argmax
      int64_t arg = 0;
      for (int64_t i = 1; i < a.numel(); ++i)
        if (a[i] > a[arg]) arg = i;
      a[arg] += 0.05;
    }
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          return op == "sum" ? t.sum(t.mul(xs[0], xs[0])) : t.max_select(xs[0]);
        },
        {a}, eps);
  }
  if (op == "conv") {
    Array x = rand_array({6, 6, 2}, rng, -1, 1);
    Array w = rand_array({3, 3, 2, 3}, rng, -1, 1);
    Array b = rand_array({3}, rng, -1, 1);
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = t.conv2d(xs[0], xs[1], xs[2], 1, 1);
          return t.sum(t.mul(r, r));
        },
        {x, w, b}, eps);
  }
  if (op == "upsample" || op == "slice") {
    Array x = rand_array({4, 4, 3}, rng, -1, 1);
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = op == "upsample" ? t.upsample2x(xs[0]) : ad::Var{};
          if (op == "slice") r = t.slice_c(xs[0], 1);
          return t.sum(t.mul(r, r));
        },
        {x}, eps);
  }
  if (op == "concat") {
    Array a = rand_array({4, 4, 2}, rng, -1, 1);
    Array b = rand_array({4, 4, 3}, rng, -1, 1);
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = t.concat_c(xs[0], xs[1]);
          return t.sum(t.mul(r, r));
        },
        {a, b}, eps);
  }
  if (op == "bilinear") {
    Array plane = rand_array({8, 8}, rng, -1, 1);
    ResamplePlan plan = geom::rotation_plan(6, 6, 17.0);
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = t.bilinear(xs[0], plan, 1, 1, 6, 6);
          return t.sum(t.mul(r, r));
        },
        {plane}, eps);
  }
  if (op == "gather") {
    Array plane = rand_array({6, 6}, rng, -1, 1);
    std::vector<int64_t> idx{0, 7, 14, 14, 35, 3};
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var r = t.gather(xs[0], idx);
          return t.sum(t.mul(r, r));
        },
        {plane}, eps);
  }
  if (op == "softmax" || op == "quasimax" || op == "weighted_softmax" ||
      op == "weighted_quasimax") {
    Array bag = rand_array({9}, rng, 0, 1);
    const bool soft = op == "softmax" || op == "weighted_softmax";
    const auto kind =
        soft ? smax::SmoothMaxKind::softmax(4.0) : smax::SmoothMaxKind::quasimax(4.0);
    std::vector<double> w = smax::polar_weights(9, 0.4).w;
    const bool weighted = op.rfind("weighted", 0) == 0;
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          return weighted ? smax::weighted_bag_prediction(t, xs[0], w, kind)
                          : smax::bag_prediction(t, xs[0], kind);
        },
        {bag}, eps);
  }
  if (op == "unary_baseline" || op == "unary_focal" || op == "pairwise" || op == "total" ||
      op == "baseline_loss" || op == "bce") {
    Array logits = rand_array({8, 8, 1}, rng, -2, 2);
    auto boxes = random_boxes(rng, 8, 8, 1, 1);
    loss::LossConfig cfg = small_loss_config();
    cfg.smooth = (seed % 2 == 0) ? smax::SmoothMaxKind::Variant::kAlphaQuasimax
                                 : smax::SmoothMaxKind::Variant::kAlphaSoftmax;
    Array target({8, 8, 1});
    for (const auto& b : boxes)
      for (int y = b.y1; y <= b.y2; ++y)
        for (int x = b.x1; x <= b.x2; ++x) target.at(y, x, 0) = 1.0;
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var pred = t.sigmoid(xs[0]);
          if (op == "pairwise") return loss::pairwise_loss(t, pred, 1);
          if (op == "bce") return loss::supervised_bce_loss(t, pred, target);
          if (op == "baseline_loss")
            return loss::mil_baseline_loss(t, pred, boxes, 10.0, cfg.kind_pa(), 1);
          if (op == "unary_baseline") {
            auto pos = mil::baseline_positive_bags(t, pred, boxes[0]);
            auto neg = mil::baseline_negative_bags(t, pred, boxes, 1);
            return loss::unary_baseline(t, pos, neg, cfg.kind_pa());
          }
          if (op == "unary_focal") {
            auto pos = mil::parallel_positive_bags(t, pred, boxes[0], cfg.angles, cfg.margin);
            auto neg = mil::pixel_negative_bags(t, pred, boxes, 1);
            return loss::unary_focal(t, pos, neg, cfg.beta, cfg.gamma, cfg.kind_pa(), false);
          }
          return loss::total_loss(t, pred, boxes, cfg, 1);
        },
        {logits}, eps);
  }
  if (op == "model") {
    net::NetConfig cfg;
    cfg.base = 2;
    net::NetParams params = net::init_params(seed, cfg);
    Array image = rand_array({8, 8}, rng, 0, 1);
    return ad::gradcheck(
        [&](ad::Tape& t, const std::vector<ad::Var>& xs) {
          ad::Var pred = net::forward_from_vars(t, cfg, xs, image);
          return t.sum(t.mul(pred, pred));
        },
        params.tensors, eps);
  }
  throw std::invalid_argument("gradcheck: unknown op '" + op + "'");
}

void dump_bags_csv(const std::string& path, const std::vector<mil::Bag>& bags, ad::Tape& tape) {
  std::ofstream os(path);
  os << "bag_id,polarity,length\n";
  for (size_t i = 0; i < bags.size(); ++i)
    os << i << "," << (bags[i].polarity == mil::Polarity::kPositive ? "positive" : "negative")
       << "," << tape.value(bags[i].values).numel() << "\n";
}

std::vector<geom::BBox> load_boxes_csv(const std::string& path, int image_id) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open boxes csv " + path);
  std::vector<geom::BBox> boxes;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || !(std::isdigit(line[0]) || line[0] == '-')) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<long> f;
    while (std::getline(ss, tok, ',')) f.push_back(std::stol(tok));
    if (f.size() >= 10) {  // annotations.csv row: image_id,category,x1,y1,x2,y2,...
      if (f[0] != image_id) continue;
      boxes.push_back({static_cast<int>(f[2]), static_cast<int>(f[3]), static_cast<int>(f[4]),
                       static_cast<int>(f[5]), static_cast<int>(f[1])});
    } else if (f.size() >= 5) {  // category,x1,y1,x2,y2
      boxes.push_back({static_cast<int>(f[1]), static_cast<int>(f[2]), static_cast<int>(f[3]),
                       static_cast<int>(f[4]), static_cast<int>(f[0])});
    } else {
      throw std::runtime_error("malformed boxes row: " + line);
    }
  }
  return boxes;
}

int cmd_bags_dump(const std::string& image_path, const std::string& boxes_path,
                  const std::string& mode, const std::string& out_dir, const std::string& angles,
                  int margin, int n_r, int n_theta, int category, int image_id) {
  Array image = data::read_pgm(image_path);
  const int H = image.dim(0), W = image.dim(1);
  std::vector<geom::BBox> boxes = load_boxes_csv(boxes_path, image_id);
  int categories = category;
  for (const auto& b : boxes) categories = std::max(categories, b.category);
  fs::create_directories(out_dir);

  // the grayscale image stands in for the prediction map, copied per category
  Array pred({H, W, categories});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < categories; ++c) pred.at(y, x, c) = image.at(y, x);
  ad::Tape tape;
  ad::Var pv = tape.constant(pred);

  std::vector<mil::Bag> bags;
  if (mode == "baseline") {
    for (const auto& b : boxes) {
      if (b.category != category) continue;
      auto pos = mil::baseline_positive_bags(tape, pv, b);
      bags.insert(bags.end(), pos.begin(), pos.end());
    }
    auto neg = mil::baseline_negative_bags(tape, pv, boxes, category);
    bags.insert(bags.end(), neg.begin(), neg.end());
  } else if (mode == "parallel") {
    auto parts = split(angles, ',');
    require(parts.size() == 3, "--angles must be 'a,b,s'");
    mil::AngleSet aset{std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
    int bi = 0;
    for (const auto& b : boxes) {
      if (b.category != category) continue;
      for (double angle : aset.angles()) {
        mil::LineBagPlan lp = mil::parallel_plan(b, H, W, angle, margin);
        Array region = geom::crop_plane(image, lp.region);
        Array view = apply_resample(region, lp.plan, 0, 0, lp.region.h, lp.region.w);
        char tag[64];
        std::snprintf(tag, sizeof(tag), "box%d_ang%+05.1f", bi, angle);
        data::write_pgm((fs::path(out_dir) / (std::string("region_") + tag + ".pgm")).string(),
                        view);
        data::write_pgm((fs::path(out_dir) / (std::string("mask_") + tag + ".pgm")).string(),
                        lp.mask);
        Array bagmap({lp.plan.out_h, lp.plan.out_w});
        for (size_t k = 0; k < lp.bags.size(); ++k)
          for (int64_t idx : lp.bags[k])
            bagmap[idx] = static_cast<double>((k * 37) % 256) / 255.0;
        data::write_pgm((fs::path(out_dir) / (std::string("bagmap_") + tag + ".pgm")).string(),
                        bagmap);
      }
      auto pos = mil::parallel_positive_bags(tape, pv, b, aset, margin);
      bags.insert(bags.end(), pos.begin(), pos.end());
      ++bi;
    }
    auto neg = mil::pixel_negative_bags(tape, pv, boxes, category);
    bags.insert(bags.end(), neg.begin(), neg.end());
  } else if (mode == "polar") {
    geom::PolarGrid grid{n_r, n_theta};
    int bi = 0;
    for (const auto& b : boxes) {
      if (b.category != category) continue;
      mil::PixelCoord origin = mil::select_polar_origin(pred, b, category);
      mil::LineBagPlan lp = mil::polar_plan_for_box(b, H, W, origin, grid, margin);
      Array region = geom::crop_plane(image, lp.region);
      Array view = apply_resample(region, lp.plan, 0, 0, lp.region.h, lp.region.w);
      char tag[32];
      std::snprintf(tag, sizeof(tag), "box%d_polar", bi);
      data::write_pgm((fs::path(out_dir) / (std::string("region_") + tag + ".pgm")).string(),
                      view);
      data::write_pgm((fs::path(out_dir) / (std::string("mask_") + tag + ".pgm")).string(),
                      lp.mask);
      Array bagmap({lp.plan.out_h, lp.plan.out_w});
      for (size_t k = 0; k < lp.bags.size(); ++k)
        for (int64_t idx : lp.bags[k]) bagmap[idx] = static_cast<double>((k * 37) % 256) / 255.0;
      data::write_pgm((fs::path(out_dir) / (std::string("bagmap_") + tag + ".pgm")).string(),
                      bagmap);
      auto pos = mil::polar_positive_bags(tape, pv, b, origin, grid, margin, 0.5);
      bags.insert(bags.end(), pos.begin(), pos.end());
      ++bi;
    }
    auto neg = mil::pixel_negative_bags(tape, pv, boxes, category);
    bags.insert(bags.end(), neg.begin(), neg.end());
  } else {
    throw std::invalid_argument("bags-dump: mode must be baseline | parallel | polar");
  }
  dump_bags_csv((fs::path(out_dir) / "bags.csv").string(), bags, tape);
  std::printf("wrote %zu bags to %s\n", bags.size(), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bounding-box MIL segmentation toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_spec, gen_out;
  gen->add_option("--spec", gen_spec, "key=value spec file")->required();
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_config, tr_out;
  tr->add_option("--config", tr_config, "key=value config file")->required();
  tr->add_option("--out", tr_out, "output directory (overrides out_dir key)");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_group = "image", ev_dump;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--group-by", ev_group)->check(CLI::IsMember({"image", "volume"}));
  ev->add_option("--dump-pred", ev_dump, "directory for BMIL prediction dumps");

  auto* gr = app.add_subcommand("grid", "hyperparameter grid search");
  std::string gr_config, gr_grid, gr_out = "grid_out";
  int gr_jobs = 1;
  gr->add_option("--config", gr_config)->required();
  gr->add_option("--grid", gr_grid)->required();
  gr->add_option("--out", gr_out);
  gr->add_option("--jobs", gr_jobs);

  auto* bd = app.add_subcommand("bags-dump", "dump bag structure for inspection");
  std::string bd_image, bd_boxes, bd_mode = "baseline", bd_out = "bags_out",
              bd_angles = "-40,40,20";
  int bd_margin = 2, bd_nr = 20, bd_nt = 60, bd_cat = 1, bd_image_id = 0;
  bd->add_option("--image", bd_image)->required();
  bd->add_option("--boxes", bd_boxes)->required();
  bd->add_option("--mode", bd_mode)->check(CLI::IsMember({"baseline", "parallel", "polar"}));
  bd->add_option("--out", bd_out);
  bd->add_option("--angles", bd_angles);
  bd->add_option("--margin", bd_margin);
  bd->add_option("--n-r", bd_nr);
  bd->add_option("--n-theta", bd_nt);
  bd->add_option("--category", bd_cat);
  bd->add_option("--image-id", bd_image_id, "row filter for annotations.csv inputs");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of a named op");
  std::string gc_op;
  uint64_t gc_seed = 0;
  double gc_eps = 1e-5;
  gc->add_option("--op", gc_op)->required();
  gc->add_option("--seed", gc_seed);
  gc->add_option("--eps", gc_eps);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      data::SyntheticSpec spec = harness::synthetic_spec_from_kv(harness::parse_kv_file(gen_spec));
      data::Dataset ds = data::generate_synthetic(spec);
      data::save_dataset(gen_out, ds);
      std::printf("wrote %zu images (%dx%d, %d categories) to %s\n", ds.samples.size(), ds.height,
                  ds.width, ds.categories, gen_out.c_str());
    } else if (*tr) {
      auto kv = harness::parse_kv_file(tr_config);
      if (!tr_out.empty()) kv["out_dir"] = tr_out;
      harness::TrainConfig cfg = harness::train_config_from_kv(kv);
      harness::TrainResult res = harness::train(cfg);
      std::printf("MARD of training boxes: %.4f (%.4f)\n", res.mard.mean, res.mard.stddev);
      std::printf("best val dice %.4f at epoch %d; runtime %.1fs; config %s\n", res.best_dice,
                  res.best_epoch, res.runtime_sec, res.fingerprint.c_str());
    } else if (*ev) {
      net::NetParams params = net::load_checkpoint(ev_ckpt);
      data::Dataset ds = data::load_dataset(ev_data);
      harness::EvalReport rep = harness::evaluate(params, ds, ev_group, ev_dump);
      for (size_t g = 0; g < rep.per_group.size(); ++g)
        std::printf("group %zu dice %.4f\n", g, rep.per_group[g]);
      std::printf("dice %.4f (+/- %.4f) over %zu groups; runtime %.1fs\n", rep.mean, rep.stddev,
                  rep.per_group.size(), rep.runtime_sec);
    } else if (*gr) {
      auto base = harness::parse_kv_file(gr_config);
      auto grid = harness::parse_grid_file(gr_grid);
      auto ranked = harness::grid_search(base, grid, gr_out, gr_jobs);
      for (size_t r = 0; r < ranked.size(); ++r) {
        std::string ov;
        for (const auto& [k, v] : ranked[r].overrides) ov += k + "=" + v + " ";
        std::printf("#%zu trial %d dice %.4f %s%s\n", r, ranked[r].index, ranked[r].dice_mean,
                    ov.c_str(), ranked[r].failed ? ("FAILED: " + ranked[r].error).c_str() : "");
      }
    } else if (*bd) {
      return cmd_bags_dump(bd_image, bd_boxes, bd_mode, bd_out, bd_angles, bd_margin, bd_nr,
                           bd_nt, bd_cat, bd_image_id);
    } else if (*gc) {
      const double err = run_gradcheck(gc_op, gc_seed, gc_eps);
      std::printf("gradcheck %s seed %llu: max relative error %.3e\n", gc_op.c_str(),
                  static_cast<unsigned long long>(gc_seed), err);
      return err < 1e-4 ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
