#pragma once
// Learned noise-pair denoiser: a small U-Net mapping short-dwell renders to
// their long-dwell counterparts under the L0, L1 or L2 objective.

#include <cstdint>
#include <string>
#include <vector>

#include "evha/nn/network.hpp"
#include "evha/raster.hpp"

namespace evha::denoiser {

using raster::GrayImage;

enum class LossKind { L0, L1, L2 };

std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);

struct NoisePair {
  GrayImage input;   // DT4 or DT5
  GrayImage target;  // DT6 of the same scene
  std::string scene_id;
};

// Three down-sampling and three up-sampling stages with concatenated skips.
// Non-residual: all-zero weights give the final bias everywhere.
nn::Network make_denoiser(std::uint64_t seed, int base_channels = 8);

struct DenoiserConfig {
  int epochs = 30;
  int patch = 48;               // training crop side, multiple of 8
  int patches_per_scene = 8;    // crops drawn per training scene per epoch
  int batch = 8;
  double lr = 0.05;
  double epsilon = 1e-8;
  double val_fraction = 0.15;
  int base_channels = 8;
  std::uint64_t seed = 1;
};

// gamma for L0 at `epoch`: linear from 2 at the first epoch to 0 at the last.
double gamma_at(int epoch, int epochs);

// Per-image objective value of prediction f against target y.
double objective(LossKind kind, const std::vector<double>& f, const std::vector<double>& y, double epsilon,
                 double gamma);

struct DenoiserTraining {
  nn::Network model;
  std::vector<double> val_psnr;  // after each epoch
  double initial_val_psnr = 0.0;
  double raw_val_psnr = 0.0;     // noisy input against target
  std::vector<NoisePair> train;
  std::vector<NoisePair> val;
};

// Seeded split of scenes into train/validation, in that proportion.
std::pair<std::vector<NoisePair>, std::vector<NoisePair>> split_by_scene(const std::vector<NoisePair>& pairs,
                                                                        double val_fraction, std::uint64_t seed);

// Throws for fewer than two pairs or a pair with mismatched dimensions.
DenoiserTraining train_denoiser(const std::vector<NoisePair>& pairs, LossKind kind, const DenoiserConfig& cfg);

// Mirror-pads to a multiple of 8, runs the network, crops and clamps to [0,1].
GrayImage apply_denoiser(const nn::Network& m, const GrayImage& img);

// Mean PSNR of the denoised inputs against their targets. Throws when empty.
double evaluate_psnr(const nn::Network& m, const std::vector<NoisePair>& data);
// Mean PSNR of the raw inputs against their targets.
double raw_psnr(const std::vector<NoisePair>& data);

void save_denoiser(const nn::Network& m, LossKind kind, const std::filesystem::path& path);
nn::Network load_denoiser(const std::filesystem::path& path);

}  // namespace evha::denoiser
