#include "mmtseg/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <random>
#include <stdexcept>

#include "mmtseg/eval.hpp"
#include "mmtseg/image_io.hpp"
#include "mmtseg/label_align.hpp"
#include "mmtseg/losses.hpp"
#include "mmtseg/ops.hpp"
#include "mmtseg/trainer.hpp"

namespace mmtseg {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct TrainerFlags {
  TrainerConfig config;
  std::string out_model = "mean1";
  std::string mode = "mutual";
  std::string padding = "reflect";

  void attach(CLI::App* app) {
    app->add_option("--iters", config.iterations, "Training iterations T")->capture_default_str();
    app->add_option("--q", config.network.channels, "Feature channels q")->capture_default_str();
    app->add_option("--layers", config.network.layers, "Convolutional blocks M")->capture_default_str();
    app->add_option("--beta", config.beta, "TV weight")->capture_default_str();
    app->add_option("--alpha", config.alpha, "EMA coefficient of the mean models")->capture_default_str();
    app->add_option("--lr", config.lr, "SGD learning rate")->capture_default_str();
    app->add_option("--momentum", config.momentum, "SGD momentum")->capture_default_str();
    app->add_option("--seed1", config.seed1, "Seed of network 1")->capture_default_str();
    app->add_option("--seed2", config.seed2, "Seed of network 2")->capture_default_str();
    app->add_option("--out-model", out_model, "Model that labels the output")
        ->check(CLI::IsMember({"model1", "model2", "mean1", "mean2"}))
        ->capture_default_str();
    app->add_option("--mode", mode, "mutual: two networks; single: one network on its own labels")
        ->check(CLI::IsMember({"mutual", "single"}))
        ->capture_default_str();
    app->add_option("--padding", padding, "Convolution border handling")
        ->check(CLI::IsMember({"reflect", "zeros"}))
        ->capture_default_str();
  }

  TrainerConfig resolve() const {
    TrainerConfig c = config;
    c.output = parse_output_model(out_model);
    c.mode = mode == "single" ? TrainingMode::single : TrainingMode::mutual;
    c.network.padding = padding == "zeros" ? Padding::zeros : Padding::reflect;
    c.validate();
    return c;
  }
};

void write_metrics(const std::vector<StepMetrics>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "iter\tnet\tL_sim\tL_tv\tL_total\tclusters\n";
  for (const auto& m : log) {
    out << m.iteration << '\t' << m.network << '\t' << exact(m.sim) << '\t' << exact(m.tv) << '\t'
        << exact(m.total) << '\t' << m.clusters << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

void write_labels(const LabelMap& labels, const std::string& png, const std::string& raw) {
  if (!png.empty()) write_label_png(labels, png);
  if (!raw.empty()) write_label_raw(labels, raw);
}

// ----- selftest --------------------------------------------------------------

struct Check {
  std::string name;
  std::function<bool()> run;
};

Tensor uniform(std::vector<std::size_t> shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (double& v : t.data()) v = d(rng);
  return t;
}

std::vector<Check> selftest_checks() {
  std::vector<Check> checks;
  checks.push_back({"conv2d gradient", [] {
    std::mt19937_64 rng(1);
    const Tensor x = uniform({3, 6, 5}, rng), w = uniform({4, 6, 5}, rng);
    ParamTensor k(uniform({4, 3, 3, 3}, rng)), b(uniform({4}, rng));
    auto f = [&](const Tensor& kv, Tensor* grad) {
      ParamTensor kk(kv), bb = b;
      const Tensor y = conv2d(x, kk, bb, 1, Padding::reflect);
      if (grad) {
        conv2d_backward(x, w, kk, bb, 1, false, Padding::reflect);
        *grad = kk.grad;
      }
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
      return s;
    };
    return finite_diff_check(f, k.value) <= 1e-6;
  }});
  checks.push_back({"channel_norm gradient", [] {
    std::mt19937_64 rng(2);
    const Tensor x0 = uniform({3, 5, 4}, rng), w = uniform({3, 5, 4}, rng);
    ParamTensor gamma(uniform({3}, rng)), beta(uniform({3}, rng));
    auto f = [&](const Tensor& x, Tensor* grad) {
      ChannelNormCache cache;
      const Tensor y = channel_norm(x, gamma, beta, kNormEps, &cache);
      if (grad) {
        ParamTensor g = gamma, bt = beta;
        *grad = channel_norm_backward(cache, w, g, bt);
      }
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
      return s;
    };
    return finite_diff_check(f, x0) <= 1e-6;
  }});
  checks.push_back({"softmax cross-entropy gradient", [] {
    std::mt19937_64 rng(3);
    const Tensor y0 = uniform({5, 4, 4}, rng);
    LabelMap t(4, 4);
    for (std::size_t p = 0; p < t.pixels(); ++p) t.labels[p] = static_cast<Label>(p % 5);
    auto f = [&](const Tensor& y, Tensor* grad) {
      const LossValue l = sim_loss(y, t);
      if (grad) *grad = l.gradient;
      return l.value;
    };
    return finite_diff_check(f, y0) <= 1e-6;
  }});
  checks.push_back({"tv gradient", [] {
    std::mt19937_64 rng(4);
    const Tensor y0 = uniform({3, 5, 6}, rng);
    auto f = [](const Tensor& y, Tensor* grad) {
      const LossValue l = tv_loss(y);
      if (grad) *grad = l.gradient;
      return l.value;
    };
    return finite_diff_check(f, y0) <= 1e-6;
  }});
  checks.push_back({"assignment vs brute force", [] {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> dim(1, 6), val(0, 9);
    for (int trial = 0; trial < 100; ++trial) {
      OverlapMatrix m;
      const int r = dim(rng), c = dim(rng);
      for (int i = 0; i < r; ++i) m.rows.push_back(i);
      for (int j = 0; j < c; ++j) m.cols.push_back(j);
      for (int k = 0; k < r * c; ++k) m.counts.push_back(val(rng));
      const auto fast = solve_assignment(m), slow = brute_force_assignment(m);
      if (fast.score != slow.score || fast.pairs != slow.pairs) return false;
    }
    return true;
  }});
  checks.push_back({"self alignment is identity", [] {
    std::mt19937_64 rng(6);
    LabelMap a(9, 7);
    std::uniform_int_distribution<int> d(0, 5);
    for (auto& l : a.labels) l = d(rng);
    return solve_assignment(overlap_matrix(a, a)).is_identity();
  }});
  return checks;
}

int run_selftest(std::ostream& out) {
  int failures = 0;
  for (const auto& c : selftest_checks()) {
    bool ok = false;
    try {
      ok = c.run();
    } catch (const std::exception& e) {
      out << "error in " << c.name << ": " << e.what() << '\n';
    }
    out << (ok ? "pass " : "FAIL ") << c.name << '\n';
    failures += ok ? 0 : 1;
  }
  out << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) failed") << '\n';
  return failures == 0 ? kExitOk : kExitRuntime;
}

// ----- compare ---------------------------------------------------------------

std::vector<EvalImage> load_corpus(const std::string& manifest_path, std::size_t max_side, std::ostream& err) {
  const CorpusManifest manifest = read_manifest(manifest_path);
  std::vector<EvalImage> images;
  for (const auto& e : manifest.entries) {
    EvalImage img;
    img.name = e.image.filename().string();
    img.image = load_image(e.image);
    if (max_side > 0) img.image = downscale_nearest(img.image, max_side);
    for (const auto& g : e.ground_truth) {
      LabelMap gt = read_label_map(g);
      if (max_side > 0) gt = downscale_nearest(gt, max_side);
      if (gt.width != img.image.dim(2) || gt.height != img.image.dim(1)) {
        err << "warning: " << g.string() << " does not match the size of " << e.image.string() << ", ignored\n";
        continue;
      }
      img.ground_truths.push_back(std::move(gt));
    }
    images.push_back(std::move(img));
  }
  return images;
}

void print_reports(const std::vector<EvalReport>& reports, std::ostream& out) {
  out << "method\tmean\tseed_std\tparameters\n";
  for (const auto& r : reports) {
    out << r.method << '\t' << fixed6(r.mean) << '\t' << fixed6(r.seed_std) << '\t' << r.parameters << '\n';
  }
}

void write_report_records(const std::vector<EvalReport>& reports, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& r : reports) {
    nlohmann::json j;
    j["method"] = r.method;
    j["parameters"] = r.parameters;
    j["images"] = r.images;
    j["accuracy"] = r.accuracy;
    j["per_image"] = r.per_image;
    j["mean"] = r.mean;
    j["seed_std"] = r.seed_std;
    out << j.dump() << '\n';
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unsupervised image segmentation with two mutually teaching networks"};
  app.name("mmtseg");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // segment
  auto* segment = app.add_subcommand("segment", "Segment one image");
  std::string image_path, out_png, out_raw, metrics_path;
  std::size_t max_side = 0;
  TrainerFlags seg_flags;
  segment->add_option("image", image_path, "Input PNG or PPM")->required();
  seg_flags.attach(segment);
  segment->add_option("--out-png", out_png, "Colourised label image");
  segment->add_option("--out-raw", out_raw, "16-bit PGM label map");
  segment->add_option("--metrics", metrics_path, "Per-step loss log (tab separated)");
  segment->add_option("--max-side", max_side, "Downscale so no side exceeds this (0 keeps the size)");

  // eval
  auto* eval = app.add_subcommand("eval", "Accuracy of a label map against ground truth");
  std::string pred_path;
  std::vector<std::string> gt_paths;
  eval->add_option("--pred", pred_path, "Predicted label map")->required();
  eval->add_option("--gt", gt_paths, "Ground-truth label map(s)")->required();

  // baseline kmeans
  auto* baseline = app.add_subcommand("baseline", "Classical baselines");
  baseline->require_subcommand(1);
  auto* km = baseline->add_subcommand("kmeans", "K-means on pixel colours");
  std::string km_image, km_png, km_raw, km_gt;
  int km_k = 5;
  std::uint64_t km_seed = 1;
  std::size_t km_iters = 100;
  km->add_option("image", km_image, "Input PNG or PPM")->required();
  km->add_option("--k", km_k, "Number of clusters")->capture_default_str();
  km->add_option("--seed", km_seed, "Seed for the initial centers")->capture_default_str();
  km->add_option("--max-iters", km_iters, "Lloyd iteration cap")->capture_default_str();
  km->add_option("--out-png", km_png, "Colourised label image");
  km->add_option("--out-raw", km_raw, "16-bit PGM label map");
  km->add_option("--gt", km_gt, "Ground truth to score against");

  // compare
  auto* compare = app.add_subcommand("compare", "Run methods over a corpus and report accuracy");
  std::string manifest_path, report_path;
  std::vector<std::uint64_t> seeds{1};
  std::vector<std::string> methods{"kmeans", "single", "mmt"};
  std::size_t cmp_max_side = 128;
  TrainerFlags cmp_flags;
  compare->add_option("--manifest", manifest_path, "Corpus manifest")->required();
  compare->add_option("--seeds", seeds, "Comparison seeds")->delimiter(',')->capture_default_str();
  compare->add_option("--methods", methods, "Methods to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"kmeans", "single", "mmt", "oracle"}))
      ->capture_default_str();
  compare->add_option("--max-side", cmp_max_side, "Downscale so no side exceeds this (0 keeps the size)")
      ->capture_default_str();
  compare->add_option("--report", report_path, "Line-delimited JSON records");
  cmp_flags.attach(compare);

  auto* selftest = app.add_subcommand("selftest", "Gradient and assignment self checks");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*segment) {
      const TrainerConfig cfg = seg_flags.resolve();
      ImageTensor img = load_image(image_path);
      if (max_side > 0) img = downscale_nearest(img, max_side);
      const TrainResult r = train(img, cfg);
      write_labels(r.labels, out_png, out_raw);
      if (!metrics_path.empty()) write_metrics(r.log, metrics_path);
      out << "rounds " << r.rounds << " clusters " << r.labels.cluster_count()
          << (r.collapsed ? " collapsed" : "") << '\n';
      return kExitOk;
    }
    if (*eval) {
      const LabelMap pred = read_label_map(pred_path);
      std::vector<LabelMap> gts;
      for (const auto& g : gt_paths) gts.push_back(read_label_map(g));
      out << "accuracy " << fixed6(mean_accuracy(pred, gts)) << '\n';
      return kExitOk;
    }
    if (*km) {
      const ImageTensor img = load_image(km_image);
      const KMeansResult r = kmeans(img, km_k, km_seed, km_iters);
      write_labels(r.labels, km_png, km_raw);
      out << "clusters " << r.labels.cluster_count() << " iterations " << r.iterations;
      if (!km_gt.empty()) out << " accuracy " << fixed6(optimal_pixel_accuracy(r.labels, read_label_map(km_gt)));
      out << '\n';
      return kExitOk;
    }
    if (*compare) {
      ComparisonOptions opt;
      opt.trainer = cmp_flags.resolve();
      opt.seeds = seeds;
      opt.methods.clear();
      for (const auto& m : methods) opt.methods.push_back(parse_method(m));
      opt.warnings = &err;
      const auto images = load_corpus(manifest_path, cmp_max_side, err);
      const auto reports = run_comparison(images, opt);
      print_reports(reports, out);
      if (!report_path.empty()) write_report_records(reports, report_path);
      return kExitOk;
    }
    if (*selftest) return run_selftest(out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mmtseg
