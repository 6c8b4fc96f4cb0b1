#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmtseg/label_map.hpp"
#include "mmtseg/segnet.hpp"
#include "mmtseg/trainer.hpp"

namespace mmtseg {

/// Fraction of pixels that agree after the best one-to-one relabelling of
/// `pred` onto `gt`.
double optimal_pixel_accuracy(const LabelMap& pred, const LabelMap& gt);

/// Mean of optimal_pixel_accuracy against each annotation.
double mean_accuracy(const LabelMap& pred, const std::vector<LabelMap>& ground_truths);

using Color = std::array<double, 3>;

struct KMeansResult {
  LabelMap labels;                  // index of the assigned center; empty centers never appear
  std::vector<Color> initial_centers;
  std::vector<Color> centers;
  std::vector<double> objective;    // sum of squared distances after each assignment pass
  std::size_t iterations = 0;
};

/// Lloyd's algorithm on per-pixel RGB.  Initial centers are drawn without
/// replacement from the distinct colors of the image; when k exceeds that
/// count the draw wraps around and repeats colors.  Ties go to the lower
/// center index and empty clusters keep their previous center.
KMeansResult kmeans(const ImageTensor& image, int k, std::uint64_t seed, std::size_t max_iters = 100);

LabelMap kmeans_segment(const ImageTensor& image, int k, std::uint64_t seed, std::size_t max_iters = 100);

struct EvalImage {
  std::string name;
  ImageTensor image;
  std::vector<LabelMap> ground_truths;
};

enum class Method { kmeans, single, mmt, oracle };

std::string to_string(Method m);
Method parse_method(const std::string& name);

struct ComparisonOptions {
  std::vector<Method> methods{Method::kmeans, Method::single, Method::mmt};
  std::vector<std::uint64_t> seeds{1};
  TrainerConfig trainer;
  std::vector<int> k_grid{2, 5, 8, 11, 14, 17, 20};
  std::size_t kmeans_iters = 100;
  std::ostream* warnings = nullptr;
};

/// Network seeds used for comparison seed `s`.
inline std::pair<std::uint64_t, std::uint64_t> seed_pair(std::uint64_t s) { return {2 * s, 2 * s + 1}; }

struct EvalReport {
  std::string method;
  std::string parameters;
  std::vector<std::string> images;
  std::vector<std::vector<double>> accuracy;  // [image][seed]
  std::vector<double> per_image;              // mean over seeds
  double mean = 0.0;                          // mean over images
  double seed_std = 0.0;                      // population std of the per-seed dataset means

  /// Aggregates `accuracy` into per_image, mean and seed_std.
  void finalize();
};

/// Runs every requested method on every image with ground truth.  K-means
/// reports the grid value with the best dataset-mean accuracy.
std::vector<EvalReport> run_comparison(const std::vector<EvalImage>& images, const ComparisonOptions& options);

}  // namespace mmtseg
