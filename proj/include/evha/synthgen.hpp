#pragma once
// Synthetic data source: golden chips, SEM-like renders at three dwell
// times, Trojan injection, training-time views and histogram fidelity.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evha/layout.hpp"
#include "evha/raster.hpp"

namespace evha::synthgen {

using raster::BoundingBox;
using raster::DwellClass;
using raster::GrayImage;

struct CellTemplate {
  int width = 0;
  std::vector<BoundingBox> dopant_rects;  // cell-local
};

struct CellLibrary {
  int row_height = 28;
  int cell_spacing = 12;  // minimum free pixels between neighbouring cells
  std::map<std::string, CellTemplate> entries;

  std::vector<std::string> type_names() const;
  // Throws unless there are >= 7 types and every template fits its extent.
  void validate() const;
};

// Seven standard-cell-like templates whose dopant regions all straddle the
// row's mid-line, so every region in a row overlaps its neighbours vertically.
CellLibrary default_library();

struct ChipSpec {
  int rows = 4;
  int cells_per_row = 8;
  int cell_gap = 12;     // horizontal spacing between neighbouring cells
  int center_gap = 28;   // spacing between the two halves of a row
  int row_gap = 10;
  int margin = 8;
  int slack = 0;         // extra free width at the right of the die; 0 picks one cell + gaps
  int units = 10;
  int max_die_width = 0;  // 0 means unbounded
};

// Each row holds two halves; the right half repeats the left half's type
// sequence in reverse. Deterministic in `seed`.
layout::Layout generate_chip(const ChipSpec& spec, const CellLibrary& library, std::uint64_t seed);

struct NoiseProfile {
  double gaussian_sigma = 0.0;
  double blur_radius = 0.7;  // Gaussian sigma of the optical blur, pixels
  double speckle_rate = 0.0;
  double background = 0.15;
  double foreground = 0.80;
};

NoiseProfile noise_profile(DwellClass dwell);
NoiseProfile clean_profile();

GrayImage render_sem(const layout::Layout& l, const NoiseProfile& profile, std::uint64_t seed);
GrayImage render_sem(const layout::Layout& l, DwellClass dwell, std::uint64_t seed);

enum class TrojanKind { Addition, Deletion, Change };

std::string to_string(TrojanKind k);
TrojanKind trojan_from_string(const std::string& s);

struct TrojanRecord {
  TrojanKind kind = TrojanKind::Change;
  std::vector<int> affected_cell_ids;
  int row_id = 0;
  std::string description;
};

struct TrojanResult {
  layout::Layout layout;
  TrojanRecord record;
};

TrojanResult insert_trojan(const layout::Layout& l, TrojanKind kind, const CellLibrary& library,
                           std::uint64_t seed);

std::string trojan_to_json(const TrojanRecord& r);
TrojanRecord trojan_from_json(const std::string& text);

struct AugmentParams {
  bool blur = true;
  double blur_sigma_max = 1.2;
  bool noise = true;
  double noise_sigma_max = 0.05;
  bool rotate = true;
  double max_rotation_deg = 5.0;
  bool vertical_flip = true;
  // Extra view transforms used for the self-supervised pair.
  bool horizontal_flip = false;
  bool jitter = false;
  double jitter_strength = 0.15;
  bool random_crop = false;
  double crop_min_scale = 0.8;
  double apply_probability = 0.5;

  static AugmentParams none();
  static AugmentParams classifier();
  static AugmentParams siamese();
};

GrayImage augment_cell(const GrayImage& img, std::uint64_t seed, const AugmentParams& params);

GrayImage gaussian_blur(const GrayImage& img, double sigma);
GrayImage vertical_flip(const GrayImage& img);
GrayImage horizontal_flip(const GrayImage& img);
// Rotation about the image center with bilinear sampling and edge clamping.
GrayImage rotate(const GrayImage& img, double degrees);

struct PatchPlacement {
  BoundingBox source;
  BoundingBox destination;
};

// Copies a random rectangle (area 2%-15% of the image, aspect 0.3-3.3) to a
// different location. Needs at least 16x16 pixels.
GrayImage cutpaste_view(const GrayImage& img, std::uint64_t seed, PatchPlacement* placement = nullptr);

// Base-2 Jensen-Shannon divergence of two normalized histograms, in [0,1].
double jsd(const std::vector<double>& p, const std::vector<double>& q);

// Pooled pixel histogram of an image set.
std::vector<double> pooled_histogram(const std::vector<GrayImage>& images, int bins = 64);

}  // namespace evha::synthgen
