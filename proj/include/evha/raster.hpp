#pragma once
// Raster value types shared by every pipeline stage, plus PGM I/O and a few
// pixel-level helpers.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace evha::raster {

// Per-pixel beam dwell time of a SEM capture; longer dwell means less noise.
enum class DwellClass { DT4, DT5, DT6 };

std::string to_string(DwellClass d);
DwellClass dwell_from_string(const std::string& s);

// Inclusive on both corners: a 1x1 box has x1 == x2 and y1 == y2.
struct BoundingBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  int width() const { return x2 - x1 + 1; }
  int height() const { return y2 - y1 + 1; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  bool valid() const { return x1 >= 0 && y1 >= 0 && x1 <= x2 && y1 <= y2; }
  bool contains(int x, int y) const { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }
  BoundingBox translated(int dx, int dy) const { return {x1 + dx, y1 + dy, x2 + dx, y2 + dy}; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

BoundingBox box_union(const BoundingBox& a, const BoundingBox& b);

class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, double fill = 0.0);
  // Throws when pixels.size() != width*height or a value leaves [0,1].
  GrayImage(int width, int height, std::vector<double> pixels);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double at(int x, int y) const { return pixels_[index(x, y)]; }
  // Caller keeps the value in [0,1]; clamp() restores the invariant after bulk edits.
  double& at(int x, int y) { return pixels_[index(x, y)]; }

  std::span<const double> pixels() const { return pixels_; }
  std::span<double> pixels() { return pixels_; }
  std::span<const double> row(int y) const {
    return std::span<const double>(pixels_).subspan(static_cast<std::size_t>(y) * width_, width_);
  }

  void clamp();

  std::string source_id;
  std::optional<DwellClass> dwell_class;

  friend bool operator==(const GrayImage& a, const GrayImage& b) {
    return a.width_ == b.width_ && a.height_ == b.height_ && a.pixels_ == b.pixels_;
  }

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> pixels_;
};

class BinaryImage {
 public:
  BinaryImage() = default;
  BinaryImage(int width, int height, bool fill = false);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return mask_.size(); }

  bool at(int x, int y) const { return mask_[index(x, y)] != 0; }
  void set(int x, int y, bool fg) { mask_[index(x, y)] = fg ? 1 : 0; }
  std::size_t foreground_count() const;

  std::span<const std::uint8_t> mask() const { return mask_; }

  friend bool operator==(const BinaryImage&, const BinaryImage&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> mask_;
};

// Binary P5 PGM. Accepts maxval up to 65535 (16-bit samples big-endian) and
// '#' comments between header tokens. Intensities are value/maxval.
GrayImage load_pgm(const std::filesystem::path& path);
GrayImage decode_pgm(std::span<const std::uint8_t> bytes);

// Always writes maxval 255 with round-half-up quantization.
void save_pgm(const GrayImage& img, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_pgm(const GrayImage& img);
void save_pgm(const BinaryImage& mask, const std::filesystem::path& path);

std::uint8_t quantize(double intensity);

constexpr double kInfiniteDb = std::numeric_limits<double>::infinity();

double mse(const GrayImage& a, const GrayImage& b);
// 10*log10(1/MSE); kInfiniteDb when the images are identical.
double psnr(const GrayImage& a, const GrayImage& b);

GrayImage crop(const GrayImage& img, const BoundingBox& box);
BinaryImage crop(const BinaryImage& img, const BoundingBox& box);

// Bilinear resampling with pixel-center alignment.
GrayImage resize_bilinear(const GrayImage& img, int width, int height);

// Reflect-101 index into [0, n): ... 2 1 | 0 1 2 ... n-1 | n-2 ...
int mirror_index(int i, int n);

// Normalized intensity histogram with `bins` equal-width bins over [0,1].
std::vector<double> histogram(const GrayImage& img, int bins);

}  // namespace evha::raster
