#include <cmath>
#include <random>

#include "doctest.h"
#include "evha/preprocess.hpp"
#include "evha/synthgen.hpp"

using namespace evha;
using namespace evha::preprocess;

namespace {

// Direct between-class variance scan over every 256-bin split.
double otsu_oracle(const GrayImage& img) {
  std::vector<double> hist(256, 0.0);
  for (double v : img.pixels()) hist[std::min(255, static_cast<int>(v * 256.0))] += 1.0;
  const double n = static_cast<double>(img.size());
  double best = -1.0;
  int best_k = 0;
  for (int k = 0; k <= 256; ++k) {
    double w0 = 0, m0 = 0, w1 = 0, m1 = 0;
    for (int i = 0; i < 256; ++i) {
      if (i < k) {
        w0 += hist[i];
        m0 += i * hist[i];
      } else {
        w1 += hist[i];
        m1 += i * hist[i];
      }
    }
    double between = 0.0;
    if (w0 > 0 && w1 > 0) between = (w0 / n) * (w1 / n) * std::pow(m0 / w0 - m1 / w1, 2);
    if (between > best * (1 + 1e-12) + 1e-300) {
      best = between;
      best_k = k;
    }
  }
  return best_k / 256.0;
}

GrayImage bimodal(std::uint64_t seed, int w = 40, int h = 30) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mix(0.0, 1.0);
  std::normal_distribution<double> lo(0.1 + 0.3 * mix(rng), 0.05 + 0.05 * mix(rng));
  std::normal_distribution<double> hi(0.6 + 0.3 * mix(rng), 0.05 + 0.05 * mix(rng));
  const double frac = 0.2 + 0.6 * mix(rng);
  std::vector<double> px(static_cast<std::size_t>(w) * h);
  for (double& v : px) v = std::clamp(mix(rng) < frac ? lo(rng) : hi(rng), 0.0, 1.0);
  return GrayImage(w, h, px);
}

}  // namespace

TEST_CASE("otsu matches the exhaustive scan") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const GrayImage img = bimodal(s);
    REQUIRE(otsu_threshold(img) == otsu_oracle(img));
  }
  std::vector<double> px(100, 0.2);
  std::fill(px.begin() + 50, px.end(), 0.8);
  const double t = otsu_threshold(GrayImage(10, 10, px));
  CHECK(t > 0.2);
  CHECK(t <= 0.8);
  CHECK(otsu_threshold(GrayImage(5, 5, 0.4)) == 0.0);
}

TEST_CASE("binarize") {
  const GrayImage img = bimodal(3);
  CHECK(binarize(img, 0.0).foreground_count() == img.size());
  CHECK(binarize(img, std::nextafter(*std::max_element(img.pixels().begin(), img.pixels().end()), 2.0))
            .foreground_count() == 0);
  for (double t = 0.0; t < 1.0; t += 0.05) {
    const auto a = binarize(img, t), b = binarize(img, t + 0.05);
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE((b.mask()[i] <= a.mask()[i]));
  }
  const auto lib = synthgen::default_library();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto l = synthgen::generate_chip({}, lib, s);
    const auto truth = layout::rasterize_layout(l);
    synthgen::NoiseProfile sharp{0, 0, 0, 0.15, 0.80};
    const GrayImage img2 = synthgen::render_sem(l, sharp, s);
    CHECK(binarize(img2, otsu_threshold(img2)) == truth);
  }
}

TEST_CASE("non-local means") {
  const GrayImage flat(20, 15, 0.37);
  CHECK(denoise_nlm(flat, 2, 4, 0.1) == flat);

  // with huge h every weight is 1: the box mean over the mirrored window
  const GrayImage img = bimodal(4, 17, 13);
  const int sr = 3;
  const GrayImage out = denoise_nlm(img, 1, sr, 1e9);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int dy = -sr; dy <= sr; ++dy)
        for (int dx = -sr; dx <= sr; ++dx)
          s += img.at(raster::mirror_index(x + dx, img.width()), raster::mirror_index(y + dy, img.height()));
      REQUIRE(out.at(x, y) == doctest::Approx(s / 49.0).epsilon(1e-6));
    }
  }

  const auto lib = synthgen::default_library();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto l = synthgen::generate_chip({}, lib, s);
    const GrayImage clean = synthgen::render_sem(l, synthgen::clean_profile(), s);
    const GrayImage noisy = synthgen::render_sem(l, raster::DwellClass::DT4, s);
    const GrayImage den = denoise_nlm(noisy);
    CHECK(raster::psnr(den, clean) > raster::psnr(noisy, clean));
    for (double v : den.pixels()) REQUIRE((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("normalization and noise estimate") {
  std::vector<double> px{0.2, 0.4, 0.6};
  const GrayImage n = normalize_minmax(GrayImage(3, 1, px));
  CHECK(n.at(0, 0) == 0.0);
  CHECK(n.at(1, 0) == doctest::Approx(0.5));
  CHECK(n.at(2, 0) == 1.0);
  CHECK(normalize_minmax(GrayImage(3, 1, 0.3)) == GrayImage(3, 1, 0.3));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.5, 0.05);
  std::vector<double> noise(200 * 200);
  for (double& v : noise) v = std::clamp(g(rng), 0.0, 1.0);
  CHECK(estimate_noise_sigma(GrayImage(200, 200, noise)) == doctest::Approx(0.05).epsilon(0.1));
}
