#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "mmtseg/eval.hpp"
#include "test_helpers.hpp"

using namespace mmtseg;
using mmtseg::testing::random_labels;
using mmtseg::testing::random_tensor;

namespace {

// Best raw agreement over every injective relabelling of pred's labels.
double bijection_max(const LabelMap& pred, const LabelMap& gt) {
  const auto pa = pred.alphabet(), ga = gt.alphabet();
  const std::size_t n = std::max(pa.size(), ga.size());
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t agree = 0;
    for (std::size_t p = 0; p < pred.pixels(); ++p) {
      const auto i = std::lower_bound(pa.begin(), pa.end(), pred.labels[p]) - pa.begin();
      const std::size_t j = perm[i];
      agree += j < ga.size() && ga[j] == gt.labels[p];
    }
    best = std::max(best, agree);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.pixels());
}

LabelMap relabel(const LabelMap& m, const std::vector<Label>& to) {
  LabelMap out = m;
  for (auto& l : out.labels) l = to[l];
  return out;
}

// Textbook Lloyd iteration from given centers.
std::vector<Label> reference_lloyd(const Tensor& img, std::vector<Color> centers, std::size_t max_iters) {
  const std::size_t n = img.dim(1) * img.dim(2);
  std::vector<Label> assign(n, -1);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<Label> next(n);
    for (std::size_t p = 0; p < n; ++p) {
      double best = 1e300;
      for (std::size_t c = 0; c < centers.size(); ++c) {
        double d = 0;
        for (std::size_t ch = 0; ch < 3; ++ch) d += std::pow(img[ch * n + p] - centers[c][ch], 2);
        if (d < best) {
          best = d;
          next[p] = static_cast<Label>(c);
        }
      }
    }
    if (next == assign) break;
    assign = next;
    for (std::size_t c = 0; c < centers.size(); ++c) {
      Color s{0, 0, 0};
      int cnt = 0;
      for (std::size_t p = 0; p < n; ++p) {
        if (assign[p] != static_cast<Label>(c)) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) s[ch] += img[ch * n + p];
        ++cnt;
      }
      if (cnt > 0)
        for (std::size_t ch = 0; ch < 3; ++ch) centers[c][ch] = s[ch] / cnt;
    }
  }
  return assign;
}

LabelMap halves(std::size_t size) {
  LabelMap gt(size, size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) gt.at(i, j) = j < size / 2 ? 0 : 1;
  return gt;
}

}  // namespace

TEST_CASE("optimal_pixel_accuracy basics") {
  std::mt19937_64 rng(41);
  const LabelMap gt = random_labels(8, 8, 4, rng);
  CHECK(optimal_pixel_accuracy(gt, gt) == 1.0);
  CHECK(optimal_pixel_accuracy(relabel(gt, {3, 0, 2, 1}), gt) == 1.0);
  CHECK_THROWS_AS(optimal_pixel_accuracy(gt, LabelMap(4, 16)), std::invalid_argument);
}

TEST_CASE("optimal_pixel_accuracy equals the brute-force bijection maximum") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const LabelMap a = random_labels(8, 8, 1 + trial % 5, rng), b = random_labels(8, 8, 5, rng);
    CHECK(optimal_pixel_accuracy(a, b) == doctest::Approx(bijection_max(a, b)).epsilon(1e-15));
  }
}

TEST_CASE("optimal_pixel_accuracy is invariant to relabelling either map") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    const LabelMap a = random_labels(10, 9, 6, rng), b = random_labels(10, 9, 4, rng);
    std::vector<Label> pa{0, 1, 2, 3, 4, 5}, pb{0, 1, 2, 3};
    std::shuffle(pa.begin(), pa.end(), rng);
    std::shuffle(pb.begin(), pb.end(), rng);
    for (auto& l : pa) l += 10;  // names need not be contiguous
    CHECK(optimal_pixel_accuracy(a, b) == optimal_pixel_accuracy(relabel(a, pa), relabel(b, pb)));
    std::size_t raw = 0;
    for (std::size_t p = 0; p < a.pixels(); ++p) raw += a.labels[p] == b.labels[p];
    CHECK(optimal_pixel_accuracy(a, b) >= static_cast<double>(raw) / static_cast<double>(a.pixels()));
  }
}

TEST_CASE("mean_accuracy averages over annotations") {
  const LabelMap a(2, 2, {0, 0, 1, 1}), b(2, 2, {0, 1, 1, 1});
  CHECK(mean_accuracy(a, {a, b}) == doctest::Approx(0.875));
  CHECK_THROWS(mean_accuracy(a, {}));
}

TEST_CASE("kmeans examples") {
  const Tensor img = testing::two_region_image(6);
  CHECK(kmeans_segment(img, 1, 3).cluster_count() == 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CHECK(optimal_pixel_accuracy(kmeans_segment(img, 2, seed), halves(6)) == 1.0);
  }
  // Only two distinct colors: the extra centers repeat, and empty ones vanish.
  const KMeansResult r = kmeans(img, 4, 9);
  CHECK(r.labels.cluster_count() == 2);
  CHECK(r.initial_centers.size() == 4);
  CHECK_THROWS_AS(kmeans(img, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(img, 37, 1), std::invalid_argument);
}

TEST_CASE("kmeans matches a reference Lloyd implementation") {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
    const int k = 2 + trial % 6;
    const KMeansResult r = kmeans(img, k, 100 + trial, 50);
    CHECK(kmeans(img, k, 100 + trial, 50).labels == r.labels);
    CHECK(r.labels.labels == reference_lloyd(img, r.initial_centers, 50));
    // Initial centers are distinct image colors.
    for (std::size_t c = 0; c < r.initial_centers.size(); ++c) {
      for (std::size_t d = 0; d < c; ++d) CHECK(r.initial_centers[c] != r.initial_centers[d]);
    }
  }
}

TEST_CASE("kmeans objective never increases") {
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor img = random_tensor({3, 12, 12}, rng, 0, 1);
    const KMeansResult r = kmeans(img, 3 + trial, trial, 100);
    for (std::size_t i = 1; i < r.objective.size(); ++i) CHECK(r.objective[i] <= r.objective[i - 1] + 1e-12);
  }
}

TEST_CASE("run_comparison reports") {
  std::vector<EvalImage> images;
  images.push_back({"a", testing::two_region_image(6), {halves(6)}});
  images.push_back({"b", testing::two_region_image(8), {halves(8), halves(8)}});
  images.push_back({"no-gt", testing::two_region_image(4), {}});

  ComparisonOptions opt;
  opt.methods = {Method::oracle, Method::kmeans};
  opt.seeds = {1, 2};
  std::ostringstream warn;
  opt.warnings = &warn;
  const auto reports = run_comparison(images, opt);
  REQUIRE(reports.size() == 2);
  CHECK(warn.str().find("no-gt") != std::string::npos);

  const EvalReport& oracle = reports[0];
  CHECK(oracle.method == "oracle");
  CHECK(oracle.images == std::vector<std::string>{"a", "b"});
  CHECK(oracle.mean == 1.0);
  CHECK(oracle.seed_std == 0.0);

  const EvalReport& km = reports[1];
  CHECK(km.method == "kmeans");
  CHECK(km.parameters == "k=2");  // the first grid value already separates both colors
  CHECK(km.mean == 1.0);

  CHECK_THROWS(run_comparison({images[2]}, opt));
}

TEST_CASE("EvalReport aggregates by hand") {
  EvalReport r;
  r.accuracy = {{0.5, 0.7}, {0.9, 0.3}, {0.2, 0.2}};
  r.finalize();
  CHECK(r.per_image[0] == doctest::Approx(0.6));
  CHECK(r.per_image[1] == doctest::Approx(0.6));
  CHECK(r.per_image[2] == doctest::Approx(0.2));
  CHECK(r.mean == doctest::Approx((0.6 + 0.6 + 0.2) / 3));
  // per-seed means 1.6/3 and 1.2/3
  CHECK(r.seed_std == doctest::Approx(0.2 / 3));
}

TEST_CASE("deterministic network runs have zero seed spread on repeats") {
  std::vector<EvalImage> images{{"a", testing::two_region_image(6), {halves(6)}}};
  ComparisonOptions opt;
  opt.methods = {Method::mmt, Method::single};
  opt.seeds = {3, 3};
  opt.trainer.iterations = 3;
  opt.trainer.network.layers = 1;
  opt.trainer.network.channels = 4;
  const auto reports = run_comparison(images, opt);
  for (const auto& r : reports) {
    CHECK(r.seed_std == 0.0);
    CHECK(r.mean >= 0.0);
    CHECK(r.mean <= 1.0);
  }
  CHECK(reports[1].parameters.find("output=model1") != std::string::npos);
}
