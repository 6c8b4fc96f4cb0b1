#include "mmtseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace mmtseg {

namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// Decoded samples straight from the file, no colour transforms beyond
// palette/low-bit-depth expansion.
struct RawRaster {
  std::size_t width = 0, height = 0, channels = 0;
  unsigned maxval = 255;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

// ----- Netpbm ---------------------------------------------------------------

struct PnmHeader {
  char kind = 0;  // '5' or '6'
  std::size_t width = 0, height = 0;
  unsigned maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw std::runtime_error(name + ": not a binary PGM/PPM file");
  }
  PnmHeader h;
  h.kind = static_cast<char>(bytes[1]);
  std::size_t pos = 2;
  auto next_number = [&](const char* field) -> unsigned long {
    for (;;) {
      if (pos >= bytes.size()) throw std::runtime_error(name + ": truncated header (" + field + ")");
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (!std::isdigit(bytes[pos])) throw std::runtime_error(name + ": malformed header (" + field + ")");
    unsigned long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1'000'000'000UL) throw std::runtime_error(name + ": header value too large (" + field + ")");
    }
    return v;
  };
  h.width = next_number("width");
  h.height = next_number("height");
  h.maxval = static_cast<unsigned>(next_number("maxval"));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw std::runtime_error(name + ": malformed header");
  h.data_offset = pos + 1;
  if (h.width == 0 || h.height == 0) throw std::runtime_error(name + ": zero image dimension");
  if (h.maxval == 0 || h.maxval > 65535) throw std::runtime_error(name + ": maxval must lie in [1, 65535]");
  return h;
}

RawRaster decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  const PnmHeader h = parse_pnm_header(bytes, name);
  RawRaster r{h.width, h.height, h.kind == '6' ? 3u : 1u, h.maxval, {}};
  const std::size_t count = r.width * r.height * r.channels;
  const std::size_t bps = h.maxval > 255 ? 2 : 1;
  if (bytes.size() - h.data_offset < count * bps) throw std::runtime_error(name + ": truncated pixel data");
  r.samples.resize(count);
  const std::uint8_t* p = bytes.data() + h.data_offset;
  for (std::size_t i = 0; i < count; ++i) {
    r.samples[i] = bps == 2 ? static_cast<std::uint16_t>(p[2 * i] << 8 | p[2 * i + 1]) : p[i];
    if (r.samples[i] > h.maxval) throw std::runtime_error(name + ": sample exceeds maxval");
  }
  return r;
}

// ----- PNG -----------------------------------------------------------------

struct PngReadHandle {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadHandle() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteHandle {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteHandle() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct MemoryReader {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void read_from_memory(png_structp png, png_bytep out, png_size_t n) {
  auto* src = static_cast<MemoryReader*>(png_get_io_ptr(png));
  if (src->pos + n > src->bytes->size()) png_error(png, "truncated PNG data");
  std::copy_n(src->bytes->data() + src->pos, n, out);
  src->pos += n;
}

void write_to_memory(png_structp png, png_bytep data, png_size_t n) {
  auto* dst = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  dst->insert(dst->end(), data, data + n);
}

void flush_noop(png_structp) {}

void png_error_to_buffer(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<char*>(png_get_error_ptr(png));
  std::snprintf(buf, 256, "%s", msg);
  png_longjmp(png, 1);
}

void png_warning_ignore(png_structp, png_const_charp) {}

bool is_png(const std::vector<std::uint8_t>& bytes) {
  return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

RawRaster decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  char message[256] = "unknown libpng error";
  PngReadHandle h;
  h.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, message, png_error_to_buffer, png_warning_ignore);
  if (!h.png) throw std::runtime_error(name + ": libpng initialisation failed");
  h.info = png_create_info_struct(h.png);
  if (!h.info) throw std::runtime_error(name + ": libpng initialisation failed");
  MemoryReader reader{&bytes, 0};
  RawRaster r;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(h.png))) {
    throw std::runtime_error(name + ": " + message);
  }
  png_set_read_fn(h.png, &reader, read_from_memory);
  png_read_info(h.png, h.info);
  const png_uint_32 w = png_get_image_width(h.png, h.info);
  const png_uint_32 ht = png_get_image_height(h.png, h.info);
  const int color = png_get_color_type(h.png, h.info);
  const int depth = png_get_bit_depth(h.png, h.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(h.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(h.png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(h.png);
  if (depth == 16) png_set_swap(h.png);  // host-order 16-bit samples on little-endian hosts
  png_read_update_info(h.png, h.info);
  const png_size_t rowbytes = png_get_rowbytes(h.png, h.info);
  const int channels = png_get_channels(h.png, h.info);
  const int out_depth = png_get_bit_depth(h.png, h.info);
  buffer.resize(rowbytes * ht);
  rows.resize(ht);
  for (png_uint_32 y = 0; y < ht; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(h.png, rows.data());
  png_read_end(h.png, nullptr);

  r.width = w;
  r.height = ht;
  r.channels = static_cast<std::size_t>(channels);
  r.maxval = out_depth == 16 ? 65535u : 255u;
  const std::size_t count = r.width * r.height * r.channels;
  r.samples.resize(count);
  for (std::size_t y = 0; y < r.height; ++y) {
    const std::uint8_t* row = rows[y];
    for (std::size_t k = 0; k < r.width * r.channels; ++k) {
      std::uint16_t v;
      if (out_depth == 16) {
        std::uint16_t host;
        std::copy_n(row + 2 * k, 2, reinterpret_cast<std::uint8_t*>(&host));
        v = host;
      } else {
        v = row[k];
      }
      r.samples[y * r.width * r.channels + k] = v;
    }
  }
  if (r.width == 0 || r.height == 0) throw std::runtime_error(name + ": zero image dimension");
  return r;
}

std::vector<std::uint8_t> encode_png(std::size_t width, std::size_t height, int channels, int depth,
                                     const std::vector<std::uint8_t>& pixels) {
  char message[256] = "unknown libpng error";
  PngWriteHandle h;
  h.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, message, png_error_to_buffer, png_warning_ignore);
  if (!h.png) throw std::runtime_error("libpng initialisation failed");
  h.info = png_create_info_struct(h.png);
  if (!h.info) throw std::runtime_error("libpng initialisation failed");
  std::vector<std::uint8_t> out;
  std::vector<png_const_bytep> rows(height);
  const std::size_t rowbytes = width * static_cast<std::size_t>(channels) * (depth == 16 ? 2 : 1);
  for (std::size_t y = 0; y < height; ++y) rows[y] = pixels.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(h.png))) {
    throw std::runtime_error(std::string("PNG encoding failed: ") + message);
  }
  png_set_write_fn(h.png, &out, write_to_memory, flush_noop);
  png_set_IHDR(h.png, h.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(h.png, 6);
  png_write_info(h.png, h.info);
  png_write_rows(h.png, const_cast<png_bytepp>(rows.data()), static_cast<png_uint_32>(height));
  png_write_end(h.png, nullptr);
  return out;
}

RawRaster decode_any(const fs::path& path) {
  const auto bytes = read_bytes(path);
  const std::string name = path.string();
  if (bytes.empty()) throw std::runtime_error(name + ": empty file");
  if (is_png(bytes)) return decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) return decode_pnm(bytes, name);
  throw std::runtime_error(name + ": unrecognised image format (expected PNG or binary PPM/PGM)");
}

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(c * 255.0 + 0.5);
}

constexpr std::array<Rgb, 256> make_palette() {
  std::array<Rgb, 256> p{};
  // Each component is an odd-multiplier affine bijection of the index mod 256,
  // so all 256 entries are distinct.
  for (unsigned i = 0; i < 256; ++i) {
    p[i] = Rgb{static_cast<std::uint8_t>((i * 97u + 40u) & 255u), static_cast<std::uint8_t>((i * 181u + 160u) & 255u),
               static_cast<std::uint8_t>((i * 59u + 90u) & 255u)};
  }
  return p;
}

void check_labels_for_raw(const LabelMap& labels) {
  if (labels.width == 0 || labels.height == 0) throw std::invalid_argument("label map has zero dimension");
  if (labels.labels.size() != labels.width * labels.height) throw std::invalid_argument("label map size mismatch");
  for (Label l : labels.labels) {
    if (l < 0 || l > 65535) throw std::invalid_argument("label " + std::to_string(l) + " does not fit in 16 bits");
  }
}

}  // namespace

ImageTensor load_image(const fs::path& path) {
  const RawRaster r = decode_any(path);
  if (r.channels != 1 && r.channels != 3) {
    throw std::runtime_error(path.string() + ": unsupported channel count " + std::to_string(r.channels));
  }
  ImageTensor img({3, r.height, r.width});
  const double maxval = static_cast<double>(r.maxval);
  for (std::size_t i = 0; i < r.height; ++i) {
    for (std::size_t j = 0; j < r.width; ++j) {
      const std::size_t base = (i * r.width + j) * r.channels;
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, i, j) = r.samples[base + (r.channels == 3 ? c : 0)] / maxval;
      }
    }
  }
  return img;
}

void write_image(const ImageTensor& image, const fs::path& path) {
  require_chw(image, "write_image");
  if (image.dim(0) != 3) throw std::invalid_argument("write_image: expected a 3-channel image");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::vector<std::uint8_t> rgb(3 * w * h);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t c = 0; c < 3; ++c) rgb[(i * w + j) * 3 + c] = quantize(image.at(c, i, j));
    }
  }
  const std::string ext = lower_ext(path);
  if (ext == ".png") {
    write_bytes(path, encode_png(w, h, 3, 8, rgb));
  } else if (ext == ".ppm") {
    const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    bytes.insert(bytes.end(), rgb.begin(), rgb.end());
    write_bytes(path, bytes);
  } else {
    throw std::invalid_argument("write_image: unsupported extension '" + ext + "' (use .png or .ppm)");
  }
}

const std::array<Rgb, 256>& palette() {
  static constexpr std::array<Rgb, 256> table = make_palette();
  return table;
}

void write_label_png(const LabelMap& labels, const fs::path& path) {
  if (labels.width == 0 || labels.height == 0) throw std::invalid_argument("label map has zero dimension");
  const auto& pal = palette();
  std::vector<std::uint8_t> rgb(3 * labels.pixels());
  for (std::size_t p = 0; p < labels.pixels(); ++p) {
    const Rgb& c = pal[static_cast<std::size_t>(labels.labels[p]) % 256];
    std::copy(c.begin(), c.end(), rgb.begin() + 3 * p);
  }
  write_bytes(path, encode_png(labels.width, labels.height, 3, 8, rgb));
}

void write_label_raw(const LabelMap& labels, const fs::path& path) {
  check_labels_for_raw(labels);
  const std::string header =
      "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n65535\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(header.size() + 2 * labels.pixels());
  for (Label l : labels.labels) {
    bytes.push_back(static_cast<std::uint8_t>(l >> 8));
    bytes.push_back(static_cast<std::uint8_t>(l & 0xff));
  }
  write_bytes(path, bytes);
}

LabelMap read_label_raw(const fs::path& path) {
  const auto bytes = read_bytes(path);
  const RawRaster r = decode_pnm(bytes, path.string());
  if (r.channels != 1) throw std::runtime_error(path.string() + ": label maps must be single-channel PGM (P5)");
  return LabelMap(r.width, r.height, std::vector<Label>(r.samples.begin(), r.samples.end()));
}

LabelMap read_label_map(const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".pgm") return read_label_raw(path);
  const RawRaster r = decode_any(path);
  if (r.channels != 1) throw std::runtime_error(path.string() + ": label images must be grayscale");
  return LabelMap(r.width, r.height, std::vector<Label>(r.samples.begin(), r.samples.end()));
}

namespace {

std::pair<std::size_t, std::size_t> scaled_dims(std::size_t w, std::size_t h, std::size_t max_side) {
  if (max_side == 0) throw std::invalid_argument("downscale: max_side must be positive");
  const std::size_t longest = std::max(w, h);
  if (longest <= max_side) return {w, h};
  return {std::max<std::size_t>(1, w * max_side / longest), std::max<std::size_t>(1, h * max_side / longest)};
}

std::size_t source_index(std::size_t dst, std::size_t dst_len, std::size_t src_len) {
  return std::min(src_len - 1, (2 * dst + 1) * src_len / (2 * dst_len));
}

}  // namespace

ImageTensor downscale_nearest(const ImageTensor& image, std::size_t max_side) {
  require_chw(image, "downscale_nearest");
  const auto [w, h] = scaled_dims(image.dim(2), image.dim(1), max_side);
  if (w == image.dim(2) && h == image.dim(1)) return image;
  ImageTensor out({image.dim(0), h, w});
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        out.at(c, i, j) = image.at(c, source_index(i, h, image.dim(1)), source_index(j, w, image.dim(2)));
      }
    }
  }
  return out;
}

LabelMap downscale_nearest(const LabelMap& labels, std::size_t max_side) {
  const auto [w, h] = scaled_dims(labels.width, labels.height, max_side);
  if (w == labels.width && h == labels.height) return labels;
  LabelMap out(w, h);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      out.at(i, j) = labels.at(source_index(i, h, labels.height), source_index(j, w, labels.width));
    }
  }
  return out;
}

CorpusManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  CorpusManifest m;
  m.name = path.stem().string();
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& s) {
    fs::path p(s);
    return p.is_absolute() ? p : base / p;
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    CorpusEntry e;
    const auto tab = line.find('\t');
    const std::string image = line.substr(0, tab);
    if (image.empty()) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": empty image path");
    e.image = resolve(image);
    if (tab != std::string::npos) {
      std::stringstream gts(line.substr(tab + 1));
      std::string gt;
      while (std::getline(gts, gt, ',')) {
        if (!gt.empty()) e.ground_truth.push_back(resolve(gt));
      }
    }
    for (const auto& p : std::vector<fs::path>{e.image}) {
      const std::string ext = lower_ext(p);
      if (ext != ".png" && ext != ".ppm" && ext != ".pgm") {
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": unrecognised extension on " +
                                 p.string());
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

}  // namespace mmtseg
