#include "evha/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "evha/error.hpp"
#include "evha/simd/kernels.hpp"

namespace evha::preprocess {

GrayImage normalize_minmax(const GrayImage& img) {
  if (img.empty()) return img;
  const auto [lo, hi] = std::minmax_element(img.pixels().begin(), img.pixels().end());
  const double min = *lo, range = *hi - *lo;
  if (range <= 0.0) return img;
  GrayImage out = img;
  for (double& v : out.pixels()) v = std::clamp((v - min) / range, 0.0, 1.0);
  return out;
}

double estimate_noise_sigma(const GrayImage& img) {
  const int w = img.width(), h = img.height();
  if (w < 3 || h < 3) return 0.0;
  std::vector<double> response;
  response.reserve(static_cast<std::size_t>(w - 2) * (h - 2));
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      response.push_back(img.at(x - 1, y) + img.at(x + 1, y) + img.at(x, y - 1) + img.at(x, y + 1) -
                         4.0 * img.at(x, y));
    }
  }
  auto median = [](std::vector<double>& v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
  };
  const double m = median(response);
  for (double& r : response) r = std::abs(r - m);
  // Unit-variance white noise gives a Laplacian response with variance 20.
  return median(response) / 0.6745 / std::sqrt(20.0);
}

namespace {

struct Padded {
  int width;
  int height;
  std::vector<double> data;
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  const double* row(int y) const { return data.data() + static_cast<std::size_t>(y) * width; }
};

Padded pad_reflect(const GrayImage& img, int pad) {
  Padded p{img.width() + 2 * pad, img.height() + 2 * pad, {}};
  p.data.resize(static_cast<std::size_t>(p.width) * p.height);
  for (int y = 0; y < p.height; ++y) {
    const int sy = raster::mirror_index(y - pad, img.height());
    for (int x = 0; x < p.width; ++x) {
      p.data[static_cast<std::size_t>(y) * p.width + x] = img.at(raster::mirror_index(x - pad, img.width()), sy);
    }
  }
  return p;
}

}  // namespace

GrayImage denoise_nlm(const GrayImage& img, int patch_radius, int search_radius, double h,
                      std::optional<double> sigma) {
  if (patch_radius < 1 || search_radius < 1) throw Error("NL-means radii must be >= 1");
  if (!(h > 0.0)) throw Error("NL-means filtering strength h must be > 0");
  if (img.empty()) return img;
  const double noise = sigma.value_or(estimate_noise_sigma(img));
  const double bias = 2.0 * noise * noise;
  const double inv_h2 = 1.0 / (h * h);

  const int w = img.width(), ht = img.height();
  const int r = patch_radius, s = search_radius, pad = r + s;
  const Padded src = pad_reflect(img, pad);

  // Squared differences live on the output grid grown by r on each side.
  const int dw = w + 2 * r, dh = ht + 2 * r;
  const double patch_area = static_cast<double>((2 * r + 1) * (2 * r + 1));
  std::vector<double> sq(static_cast<std::size_t>(dw) * dh);
  std::vector<double> integral(static_cast<std::size_t>(dw + 1) * (dh + 1), 0.0);
  std::vector<double> weights(static_cast<std::size_t>(w));
  std::vector<double> diffs(static_cast<std::size_t>(w));
  std::vector<double> acc(img.size(), 0.0);
  std::vector<double> wsum(img.size(), 0.0);

  for (int dy = -s; dy <= s; ++dy) {
    for (int dx = -s; dx <= s; ++dx) {
      for (int v = 0; v < dh; ++v) {
        const double* a = src.row(v + s) + s;
        const double* b = src.row(v + s + dy) + s + dx;
        simd::squared_diff(a, b, sq.data() + static_cast<std::size_t>(v) * dw, static_cast<std::size_t>(dw));
      }
      for (int v = 0; v < dh; ++v) {
        double running = 0.0;
        const double* srow = sq.data() + static_cast<std::size_t>(v) * dw;
        double* irow = integral.data() + static_cast<std::size_t>(v + 1) * (dw + 1);
        const double* iprev = integral.data() + static_cast<std::size_t>(v) * (dw + 1);
        for (int u = 0; u < dw; ++u) {
          running += srow[u];
          irow[u + 1] = iprev[u + 1] + running;
        }
      }
      const int span = 2 * r + 1;
      for (int y = 0; y < ht; ++y) {
        const double* top = integral.data() + static_cast<std::size_t>(y) * (dw + 1);
        const double* bottom = integral.data() + static_cast<std::size_t>(y + span) * (dw + 1);
        const double* center = src.row(y + pad) + pad;
        const double* other = src.row(y + pad + dy) + pad + dx;
        for (int x = 0; x < w; ++x) {
          const double box = bottom[x + span] - bottom[x] - top[x + span] + top[x];
          const double d2 = box / patch_area;
          const double excess = d2 - bias;
          weights[x] = excess > 0.0 ? std::exp(-excess * inv_h2) : 1.0;
          diffs[x] = other[x] - center[x];
        }
        const std::size_t off = static_cast<std::size_t>(y) * w;
        simd::mul_acc(weights.data(), diffs.data(), acc.data() + off, static_cast<std::size_t>(w));
        simd::axpy(1.0, weights.data(), wsum.data() + off, static_cast<std::size_t>(w));
      }
    }
  }

  GrayImage out = img;
  auto px = out.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::clamp(px[i] + acc[i] / wsum[i], 0.0, 1.0);
  return out;
}

GrayImage denoise_nlm(const GrayImage& img, const NlmParams& params) {
  const double sigma = params.sigma.value_or(estimate_noise_sigma(img));
  const double h = params.h.value_or(std::max(params.h_factor * sigma, 1e-3));
  return denoise_nlm(img, params.patch_radius, params.search_radius, h, sigma);
}

namespace {

constexpr int kBins = 256;

int bin_of(double v) { return std::clamp(static_cast<int>(v * kBins), 0, kBins - 1); }

}  // namespace

double otsu_threshold(const GrayImage& img) {
  if (img.empty()) throw Error("otsu threshold of an empty image");
  std::array<std::int64_t, kBins> counts{};
  for (double v : img.pixels()) ++counts[static_cast<std::size_t>(bin_of(v))];

  std::int64_t total_n = 0, total_m = 0;
  for (int b = 0; b < kBins; ++b) {
    total_n += counts[b];
    total_m += counts[b] * b;
  }
  // Between-class variance is proportional to (m0*n1 - m1*n0)^2 / (n0*n1);
  // integer class sums keep equal candidates bitwise equal.
  int best_k = 0;
  double best = 0.0;
  std::int64_t n0 = 0, m0 = 0;
  for (int k = 0; k < kBins; ++k) {
    if (k > 0) {
      n0 += counts[k - 1];
      m0 += counts[k - 1] * (k - 1);
    }
    const std::int64_t n1 = total_n - n0, m1 = total_m - m0;
    if (n0 == 0 || n1 == 0) continue;
    const double d = static_cast<double>(m0 * n1 - m1 * n0);
    const double score = d * d / (static_cast<double>(n0) * static_cast<double>(n1));
    if (score > best) {
      best = score;
      best_k = k;
    }
  }
  return static_cast<double>(best_k) / kBins;
}

BinaryImage binarize(const GrayImage& img, double t) {
  BinaryImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.set(x, y, img.at(x, y) >= t);
  }
  return out;
}

}  // namespace evha::preprocess
