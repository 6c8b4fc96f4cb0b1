#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmtseg/label_map.hpp"
#include "mmtseg/segnet.hpp"

namespace mmtseg {

/// Decodes PNG or binary PPM/PGM into a 3 x H x W tensor with values in
/// [0, 1].  Grayscale is replicated to three channels, alpha is dropped.
ImageTensor load_image(const std::filesystem::path& path);

/// Quantizes to 8 bits (round to nearest) and writes PNG or binary PPM,
/// chosen by extension.
void write_image(const ImageTensor& image, const std::filesystem::path& path);

using Rgb = std::array<std::uint8_t, 3>;
/// Colour used for label l is palette()[l % 256].
const std::array<Rgb, 256>& palette();

void write_label_png(const LabelMap& labels, const std::filesystem::path& path);

/// 16-bit big-endian binary PGM (P5, maxval 65535).
void write_label_raw(const LabelMap& labels, const std::filesystem::path& path);
/// Reads P5 PGM with maxval up to 65535 (8-bit files are widened).
LabelMap read_label_raw(const std::filesystem::path& path);
/// PGM via read_label_raw, or a grayscale PNG whose sample values are labels.
LabelMap read_label_map(const std::filesystem::path& path);

/// Nearest-neighbour resampling so neither side exceeds `max_side`.
ImageTensor downscale_nearest(const ImageTensor& image, std::size_t max_side);
LabelMap downscale_nearest(const LabelMap& labels, std::size_t max_side);

struct CorpusEntry {
  std::filesystem::path image;
  std::vector<std::filesystem::path> ground_truth;
};

struct CorpusManifest {
  std::string name;
  std::vector<CorpusEntry> entries;
};

/// Line format: image_path<TAB>gt_path[,gt_path...]; relative paths resolve
/// against the manifest's directory.  Blank lines and '#' lines are skipped.
CorpusManifest read_manifest(const std::filesystem::path& path);

}  // namespace mmtseg
