#include "evha/raster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "evha/error.hpp"
#include "evha/simd/kernels.hpp"

namespace evha::raster {

std::string to_string(DwellClass d) {
  switch (d) {
    case DwellClass::DT4: return "dt4";
    case DwellClass::DT5: return "dt5";
    case DwellClass::DT6: return "dt6";
  }
  return "dt6";
}

DwellClass dwell_from_string(const std::string& s) {
  std::string lower;
  std::transform(s.begin(), s.end(), std::back_inserter(lower),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "dt4") return DwellClass::DT4;
  if (lower == "dt5") return DwellClass::DT5;
  if (lower == "dt6") return DwellClass::DT6;
  throw Error("unknown dwell class '" + s + "' (expected dt4, dt5 or dt6)");
}

BoundingBox box_union(const BoundingBox& a, const BoundingBox& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

GrayImage::GrayImage(int width, int height, double fill)
    : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height, fill) {
  if (width < 0 || height < 0) throw Error("negative image dimensions");
  if (!(fill >= 0.0 && fill <= 1.0)) throw Error("fill intensity outside [0,1]");
}

GrayImage::GrayImage(int width, int height, std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width < 0 || height < 0) throw Error("negative image dimensions");
  if (pixels_.size() != static_cast<std::size_t>(width) * height) {
    throw SizeMismatchError("pixel count " + std::to_string(pixels_.size()) + " does not match " +
                            std::to_string(width) + "x" + std::to_string(height));
  }
  for (double v : pixels_) {
    if (!(v >= 0.0 && v <= 1.0)) throw Error("intensity outside [0,1]");
  }
}

void GrayImage::clamp() {
  for (double& v : pixels_) v = std::clamp(v, 0.0, 1.0);
}

BinaryImage::BinaryImage(int width, int height, bool fill)
    : width_(width), height_(height), mask_(static_cast<std::size_t>(width) * height, fill ? 1 : 0) {
  if (width < 0 || height < 0) throw Error("negative image dimensions");
}

std::size_t BinaryImage::foreground_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{1}));
}

namespace {

class PgmHeaderReader {
 public:
  explicit PgmHeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_magic() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '5') {
      throw ParseError("not a binary PGM (magic P5 expected)", 0);
    }
    pos_ = 2;
  }

  long next_int(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000'000) throw ParseError(std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("expected integer for ") + what, start);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t payload_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw ParseError("expected whitespace after maxval", pos_);
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  PgmHeaderReader reader(bytes);
  reader.expect_magic();
  const long width = reader.next_int("width");
  const long height = reader.next_int("height");
  const long maxval = reader.next_int("maxval");
  if (maxval < 1 || maxval > 65535) throw ParseError("maxval must be in [1, 65535]", 0);
  const std::size_t start = reader.payload_start();

  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  const std::size_t available = bytes.size() - start;
  if (available < count * sample_bytes) {
    throw SizeMismatchError("PGM payload has " + std::to_string(available) + " bytes, expected " +
                            std::to_string(count * sample_bytes));
  }

  std::vector<double> pixels(count);
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned v = 0;
    if (sample_bytes == 1) {
      v = bytes[start + i];
    } else {
      v = (static_cast<unsigned>(bytes[start + 2 * i]) << 8) | bytes[start + 2 * i + 1];
    }
    pixels[i] = std::min(1.0, v * scale);
  }
  return GrayImage(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
}

GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  GrayImage img = decode_pgm(bytes);
  img.source_id = path.stem().string();
  return img;
}

std::uint8_t quantize(double intensity) {
  const double clamped = std::clamp(intensity, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(clamped * 255.0 + 0.5));
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.size());
  for (double v : img.pixels()) out.push_back(quantize(v));
  return out;
}

namespace {

void write_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
  write_bytes(encode_pgm(img), path);
}

void save_pgm(const BinaryImage& mask, const std::filesystem::path& path) {
  GrayImage img(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) img.at(x, y) = mask.at(x, y) ? 1.0 : 0.0;
  }
  save_pgm(img, path);
}

double mse(const GrayImage& a, const GrayImage& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw SizeMismatchError("image dimensions differ: " + std::to_string(a.width()) + "x" +
                            std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                            std::to_string(b.height()));
  }
  if (a.empty()) return 0.0;
  return simd::sum_squared_diff(a.pixels().data(), b.pixels().data(), a.size()) /
         static_cast<double>(a.size());
}

double psnr(const GrayImage& a, const GrayImage& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kInfiniteDb;
  return 10.0 * std::log10(1.0 / m);
}

namespace {

void check_box(const BoundingBox& box, int width, int height) {
  if (!box.valid() || box.x2 >= width || box.y2 >= height) {
    throw Error("box (" + std::to_string(box.x1) + "," + std::to_string(box.y1) + ")-(" +
                std::to_string(box.x2) + "," + std::to_string(box.y2) + ") outside " +
                std::to_string(width) + "x" + std::to_string(height) + " image");
  }
}

}  // namespace

GrayImage crop(const GrayImage& img, const BoundingBox& box) {
  check_box(box, img.width(), img.height());
  GrayImage out(box.width(), box.height());
  for (int y = 0; y < box.height(); ++y) {
    const auto src = img.row(box.y1 + y).subspan(box.x1, box.width());
    std::copy(src.begin(), src.end(), out.pixels().begin() + static_cast<std::ptrdiff_t>(y) * box.width());
  }
  out.source_id = img.source_id;
  out.dwell_class = img.dwell_class;
  return out;
}

BinaryImage crop(const BinaryImage& img, const BoundingBox& box) {
  check_box(box, img.width(), img.height());
  BinaryImage out(box.width(), box.height());
  for (int y = 0; y < box.height(); ++y) {
    for (int x = 0; x < box.width(); ++x) out.set(x, y, img.at(box.x1 + x, box.y1 + y));
  }
  return out;
}

GrayImage resize_bilinear(const GrayImage& img, int width, int height) {
  if (img.empty()) throw Error("cannot resize an empty image");
  GrayImage out(width, height);
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      const double top = img.at(x0, y0) * (1 - wx) + img.at(x1, y0) * wx;
      const double bottom = img.at(x0, y1) * (1 - wx) + img.at(x1, y1) * wx;
      out.at(x, y) = std::clamp(top * (1 - wy) + bottom * wy, 0.0, 1.0);
    }
  }
  out.source_id = img.source_id;
  out.dwell_class = img.dwell_class;
  return out;
}

int mirror_index(int i, int n) {
  if (n <= 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<double> histogram(const GrayImage& img, int bins) {
  if (bins <= 0) throw Error("histogram needs at least one bin");
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  if (img.empty()) return h;
  for (double v : img.pixels()) {
    const int b = std::min(bins - 1, static_cast<int>(v * bins));
    h[static_cast<std::size_t>(b)] += 1.0;
  }
  for (double& c : h) c /= static_cast<double>(img.size());
  return h;
}

}  // namespace evha::raster
