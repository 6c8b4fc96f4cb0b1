#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "mmtseg/image_io.hpp"
#include "test_helpers.hpp"

using namespace mmtseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("mmtseg-io-" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

Tensor random_8bit_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Tensor t({3, h, w});
  std::uniform_int_distribution<int> d(0, 255);
  for (double& v : t.data()) v = d(rng) / 255.0;
  return t;
}

}  // namespace

TEST_CASE("load_image decodes a 1x1 PPM") {
  TempDir dir;
  spit(dir / "red.ppm", std::string("P6\n1 1\n255\n") + '\xff' + '\0' + '\0');
  const Tensor t = load_image(dir / "red.ppm");
  CHECK(t.shape() == std::vector<std::size_t>{3, 1, 1});
  CHECK(t[0] == 1.0);
  CHECK(t[1] == 0.0);
  CHECK(t[2] == 0.0);
}

TEST_CASE("load_image reports channel-major shape") {
  TempDir dir;
  std::string ppm = "P6\n# comment\n2 3\n255\n";
  for (int i = 0; i < 18; ++i) ppm += static_cast<char>(i * 10);
  spit(dir / "a.ppm", ppm);
  const Tensor t = load_image(dir / "a.ppm");
  CHECK(t.shape() == std::vector<std::size_t>{3, 3, 2});
  CHECK(t.at(1, 0, 1) == doctest::Approx(40 / 255.0));
}

TEST_CASE("grayscale PGM replicates into three channels") {
  TempDir dir;
  spit(dir / "g.pgm", std::string("P5\n2 1\n255\n") + '\x33' + '\xcc');
  const Tensor t = load_image(dir / "g.pgm");
  CHECK(t.shape() == std::vector<std::size_t>{3, 1, 2});
  for (std::size_t c = 0; c < 3; ++c) CHECK(t.at(c, 0, 1) == 0xcc / 255.0);
}

TEST_CASE("load_image rejects bad input") {
  TempDir dir;
  CHECK_THROWS_AS(load_image(dir / "missing.png"), std::runtime_error);
  spit(dir / "trunc.ppm", "P6\n4 4\n255\nabc");
  CHECK_THROWS_AS(load_image(dir / "trunc.ppm"), std::runtime_error);
  spit(dir / "zero.ppm", "P6\n0 4\n255\n");
  CHECK_THROWS_AS(load_image(dir / "zero.ppm"), std::runtime_error);
  spit(dir / "junk.png", "not an image at all");
  CHECK_THROWS_AS(load_image(dir / "junk.png"), std::runtime_error);
}

TEST_CASE("PNG and PPM roundtrips are bit-identical") {
  TempDir dir;
  std::mt19937_64 rng(51);
  const Tensor img = random_8bit_image(5, 7, rng);
  for (const char* name : {"x.png", "x.ppm"}) {
    write_image(img, dir / name);
    const Tensor once = load_image(dir / name);
    CHECK(once == img);
    write_image(once, dir / (std::string("again-") + name));
    CHECK(load_image(dir / (std::string("again-") + name)) == once);
  }
  const Tensor loaded = load_image(dir / "x.png");
  for (double v : loaded.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("raw label files") {
  TempDir dir;
  write_label_raw(LabelMap(1, 1, 0), dir / "one.pgm");
  CHECK(slurp(dir / "one.pgm") == std::string("P5\n1 1\n65535\n") + std::string(2, '\0'));
  CHECK(slurp(dir / "one.pgm").size() == 15);

  std::mt19937_64 rng(52);
  LabelMap m = testing::random_labels(9, 4, 300, rng);
  m.labels[3] = 65535;
  write_label_raw(m, dir / "m.pgm");
  CHECK(read_label_raw(dir / "m.pgm") == m);
  CHECK(read_label_map(dir / "m.pgm") == m);

  CHECK_THROWS_AS(write_label_raw(LabelMap(1, 1, 65536), dir / "big.pgm"), std::invalid_argument);

  spit(dir / "narrow.pgm", std::string("P5\n3 1\n255\n") + '\0' + '\x07' + '\xff');
  CHECK(read_label_raw(dir / "narrow.pgm").labels == std::vector<Label>{0, 7, 255});
  spit(dir / "bad.pgm", "P2\n1 1\n255\n0");
  CHECK_THROWS(read_label_raw(dir / "bad.pgm"));
}

TEST_CASE("label PNG rendering") {
  TempDir dir;
  write_label_png(LabelMap(4, 3, 0), dir / "zero.png");
  const Tensor z = load_image(dir / "zero.png");
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(z.at(c, i, j) == z.at(c, 0, 0));

  std::mt19937_64 rng(53);
  const LabelMap m = testing::random_labels(16, 16, 20, rng);
  write_label_png(m, dir / "a.png");
  write_label_png(m, dir / "b.png");
  CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));

  std::set<Rgb> seen(palette().begin(), palette().end());
  CHECK(seen.size() == 256);
}

TEST_CASE("downscale_nearest") {
  std::mt19937_64 rng(54);
  const Tensor img = testing::random_tensor({3, 10, 6}, rng, 0, 1);
  CHECK(downscale_nearest(img, 20) == img);
  const Tensor small = downscale_nearest(img, 5);
  CHECK(small.dim(1) == 5);
  CHECK(small.dim(2) == 3);
  const LabelMap m = testing::random_labels(6, 10, 3, rng);
  const LabelMap ms = downscale_nearest(m, 5);
  CHECK(ms.width == 3);
  CHECK(ms.height == 5);
  CHECK(ms.at(0, 0) == m.at(0, 0));
}

TEST_CASE("manifest parsing") {
  TempDir dir;
  fs::create_directories(dir / "sub");
  spit(dir / "sub" / "set.tsv", "# header\n\nimg/a.png\tgt/a1.pgm,gt/a2.pgm\n/abs/b.png\n");
  const CorpusManifest m = read_manifest(dir / "sub" / "set.tsv");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].image == dir / "sub" / "img" / "a.png");
  CHECK(m.entries[0].ground_truth.size() == 2);
  CHECK(m.entries[0].ground_truth[1] == dir / "sub" / "gt" / "a2.pgm");
  CHECK(m.entries[1].image == fs::path("/abs/b.png"));
  CHECK(m.entries[1].ground_truth.empty());
  CHECK(!m.name.empty());
  CHECK_THROWS(read_manifest(dir / "nope.tsv"));
}
