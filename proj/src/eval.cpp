#include "mmtseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>

#include "mmtseg/label_align.hpp"

namespace mmtseg {

double optimal_pixel_accuracy(const LabelMap& pred, const LabelMap& gt) {
  if (!pred.same_dims(gt)) throw std::invalid_argument("optimal_pixel_accuracy: label maps differ in size");
  if (pred.pixels() == 0) throw std::invalid_argument("optimal_pixel_accuracy: empty label map");
  const auto matched = solve_assignment(overlap_matrix(pred, gt)).score;
  return static_cast<double>(matched) / static_cast<double>(pred.pixels());
}

double mean_accuracy(const LabelMap& pred, const std::vector<LabelMap>& ground_truths) {
  if (ground_truths.empty()) throw std::invalid_argument("mean_accuracy: no ground truth");
  double sum = 0.0;
  for (const auto& gt : ground_truths) sum += optimal_pixel_accuracy(pred, gt);
  return sum / static_cast<double>(ground_truths.size());
}

namespace {

Color pixel(const ImageTensor& image, std::size_t n) {
  const std::size_t plane = image.dim(1) * image.dim(2);
  return {image[n], image[plane + n], image[2 * plane + n]};
}

double squared_distance(const Color& a, const Color& b) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return s;
}

}  // namespace

KMeansResult kmeans(const ImageTensor& image, int k, std::uint64_t seed, std::size_t max_iters) {
  require_chw(image, "kmeans");
  if (image.dim(0) != 3) throw std::invalid_argument("kmeans: expected a 3-channel image");
  const std::size_t n = image.dim(1) * image.dim(2);
  if (k < 1 || static_cast<std::size_t>(k) > n) {
    throw std::invalid_argument("kmeans: k must lie in [1, pixel count]");
  }

  std::vector<Color> colors(n);
  for (std::size_t p = 0; p < n; ++p) colors[p] = pixel(image, p);
  std::vector<Color> distinct = colors;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  // Partial Fisher-Yates draw over the distinct colors.
  std::mt19937_64 rng(seed);
  KMeansResult r;
  const std::size_t drawn = std::min(static_cast<std::size_t>(k), distinct.size());
  for (std::size_t i = 0; i < drawn; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, distinct.size() - 1);
    std::swap(distinct[i], distinct[pick(rng)]);
  }
  for (int c = 0; c < k; ++c) r.initial_centers.push_back(distinct[static_cast<std::size_t>(c) % distinct.size()]);
  r.centers = r.initial_centers;

  std::vector<Label> assign(n, -1);
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      Label best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = squared_distance(colors[p], r.centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      changed = changed || assign[p] != best;
      assign[p] = best;
      objective += best_d;
    }
    r.objective.push_back(objective);
    r.iterations = it + 1;
    if (!changed) break;

    std::vector<Color> sum(k, Color{0, 0, 0});
    std::vector<std::size_t> count(k, 0);
    for (std::size_t p = 0; p < n; ++p) {
      for (int c = 0; c < 3; ++c) sum[assign[p]][c] += colors[p][c];
      ++count[assign[p]];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] == 0) continue;
      for (int ch = 0; ch < 3; ++ch) r.centers[c][ch] = sum[c][ch] / static_cast<double>(count[c]);
    }
  }
  r.labels = LabelMap(image.dim(2), image.dim(1), std::move(assign));
  return r;
}

LabelMap kmeans_segment(const ImageTensor& image, int k, std::uint64_t seed, std::size_t max_iters) {
  return kmeans(image, k, seed, max_iters).labels;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kmeans: return "kmeans";
    case Method::single: return "single";
    case Method::mmt: return "mmt";
    case Method::oracle: return "oracle";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "kmeans") return Method::kmeans;
  if (name == "single") return Method::single;
  if (name == "mmt") return Method::mmt;
  if (name == "oracle") return Method::oracle;
  throw std::invalid_argument("unknown method '" + name + "' (kmeans|single|mmt|oracle)");
}

void EvalReport::finalize() {
  per_image.clear();
  if (accuracy.empty()) throw std::invalid_argument("EvalReport: no images");
  const std::size_t seeds = accuracy.front().size();
  std::vector<double> per_seed(seeds, 0.0);
  for (const auto& row : accuracy) {
    if (row.size() != seeds || seeds == 0) throw std::invalid_argument("EvalReport: ragged accuracy table");
    double s = 0.0;
    for (std::size_t j = 0; j < seeds; ++j) {
      s += row[j];
      per_seed[j] += row[j] / static_cast<double>(accuracy.size());
    }
    per_image.push_back(s / static_cast<double>(seeds));
  }
  mean = 0.0;
  for (double v : per_image) mean += v;
  mean /= static_cast<double>(per_image.size());
  double centre = 0.0;
  for (double v : per_seed) centre += v;
  centre /= static_cast<double>(seeds);
  double var = 0.0;
  for (double v : per_seed) var += (v - centre) * (v - centre);
  seed_std = std::sqrt(var / static_cast<double>(seeds));
}

namespace {

EvalReport empty_report(Method m, const std::vector<const EvalImage*>& images) {
  EvalReport r;
  r.method = to_string(m);
  for (const auto* img : images) r.images.push_back(img->name);
  return r;
}

EvalReport run_network(Method m, const std::vector<const EvalImage*>& images, const ComparisonOptions& opt) {
  EvalReport r = empty_report(m, images);
  TrainerConfig cfg = opt.trainer;
  cfg.mode = m == Method::single ? TrainingMode::single : TrainingMode::mutual;
  r.parameters = "T=" + std::to_string(cfg.iterations) + " q=" + std::to_string(cfg.network.channels) +
                 " beta=" + std::to_string(cfg.beta) + " output=" +
                 (m == Method::single ? std::string("model1") : to_string(cfg.output));
  for (const auto* img : images) {
    std::vector<double> row;
    for (std::uint64_t s : opt.seeds) {
      std::tie(cfg.seed1, cfg.seed2) = seed_pair(s);
      row.push_back(mean_accuracy(train(img->image, cfg).labels, img->ground_truths));
    }
    r.accuracy.push_back(std::move(row));
  }
  r.finalize();
  return r;
}

EvalReport run_kmeans(const std::vector<const EvalImage*>& images, const ComparisonOptions& opt) {
  EvalReport best;
  bool have = false;
  for (int k : opt.k_grid) {
    EvalReport r = empty_report(Method::kmeans, images);
    r.parameters = "k=" + std::to_string(k);
    for (const auto* img : images) {
      std::vector<double> row;
      const int kk = std::min<int>(k, static_cast<int>(img->image.dim(1) * img->image.dim(2)));
      for (std::uint64_t s : opt.seeds) {
        row.push_back(mean_accuracy(kmeans_segment(img->image, kk, s, opt.kmeans_iters), img->ground_truths));
      }
      r.accuracy.push_back(std::move(row));
    }
    r.finalize();
    if (!have || r.mean > best.mean) {
      best = std::move(r);
      have = true;
    }
  }
  if (!have) throw std::invalid_argument("run_comparison: empty k-means grid");
  return best;
}

EvalReport run_oracle(const std::vector<const EvalImage*>& images, const ComparisonOptions& opt) {
  EvalReport r = empty_report(Method::oracle, images);
  r.parameters = "pred=first annotation";
  for (const auto* img : images) {
    const double acc = mean_accuracy(img->ground_truths.front(), img->ground_truths);
    r.accuracy.emplace_back(opt.seeds.size(), acc);
  }
  r.finalize();
  return r;
}

}  // namespace

std::vector<EvalReport> run_comparison(const std::vector<EvalImage>& images, const ComparisonOptions& options) {
  if (options.seeds.empty()) throw std::invalid_argument("run_comparison: no seeds");
  std::vector<const EvalImage*> usable;
  for (const auto& img : images) {
    if (img.ground_truths.empty()) {
      if (options.warnings) *options.warnings << "warning: skipping " << img.name << " (no ground truth)\n";
      continue;
    }
    usable.push_back(&img);
  }
  if (usable.empty()) throw std::invalid_argument("run_comparison: no image has ground truth");

  std::vector<EvalReport> reports;
  for (Method m : options.methods) {
    switch (m) {
      case Method::kmeans: reports.push_back(run_kmeans(usable, options)); break;
      case Method::single:
      case Method::mmt: reports.push_back(run_network(m, usable, options)); break;
      case Method::oracle: reports.push_back(run_oracle(usable, options)); break;
    }
  }
  return reports;
}

}  // namespace mmtseg
