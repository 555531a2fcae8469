#pragma once
// Image processing unit: scaling, non-local means denoising and global
// thresholding ahead of block detection.

#include <optional>

#include "evha/raster.hpp"

namespace evha::preprocess {

using raster::BinaryImage;
using raster::GrayImage;

// Min-max stretch to [0,1]; a constant image is returned unchanged.
GrayImage normalize_minmax(const GrayImage& img);

// Noise standard deviation from the median absolute deviation of the
// 4-neighbour Laplacian response.
double estimate_noise_sigma(const GrayImage& img);

struct NlmParams {
  int patch_radius = 3;
  int search_radius = 10;
  std::optional<double> h;      // absent: h_factor * estimated sigma
  std::optional<double> sigma;  // absent: estimate_noise_sigma
  double h_factor = 0.4;
};

// Each output pixel is the weighted mean over its search window, with weight
// exp(-max(d2 - 2 sigma^2, 0) / h^2) where d2 is the mean squared difference
// between the two patches. Borders use reflect-101 padding.
GrayImage denoise_nlm(const GrayImage& img, int patch_radius, int search_radius, double h,
                      std::optional<double> sigma = std::nullopt);
GrayImage denoise_nlm(const GrayImage& img, const NlmParams& params = {});

// Otsu's threshold over a 256-bin histogram. Candidate k splits bins [0,k)
// from [k,256) and maps to the threshold k/256; ties go to the lowest k.
double otsu_threshold(const GrayImage& img);

// pixel >= t is foreground.
BinaryImage binarize(const GrayImage& img, double t);

}  // namespace evha::preprocess
