#pragma once
// Chip preparation shared by training and inference, plus harvesting of
// labeled cell images from synthetic chips.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evha/blockdetect.hpp"
#include "evha/layout.hpp"
#include "evha/nn/network.hpp"
#include "evha/preprocess.hpp"
#include "evha/synthgen.hpp"

namespace evha::corpus {

struct PrepareConfig {
  preprocess::NlmParams nlm;
  std::optional<double> threshold;  // absent: Otsu
  blockdetect::DetectParams detect;
};

struct PreparedChip {
  raster::GrayImage denoised;
  raster::BinaryImage mask;
  double threshold = 0.0;
  std::vector<blockdetect::ExtractedCell> cells;
};

// normalize -> NLM (or learned denoiser -> normalize) -> threshold -> detect.
PreparedChip prepare_chip(const raster::GrayImage& raw, const PrepareConfig& cfg,
                          const nn::Network* denoiser = nullptr);

// Positional match of detected cells to layout cells: row by row, in x order,
// only where a row's detected count equals its layout count. Returns for each
// detected cell the matched layout cell id or -1.
std::vector<int> match_to_layout(const std::vector<blockdetect::ExtractedCell>& cells, const layout::Layout& l);

struct HarvestedCell {
  raster::GrayImage image;
  std::string type_name;
  int chip = 0;
};

struct HarvestConfig {
  synthgen::ChipSpec spec;
  raster::DwellClass dwell = raster::DwellClass::DT6;
  PrepareConfig prepare;
  int per_class = 200;  // stop once every type has this many
  int max_chips = 400;
  std::uint64_t seed = 1;
};

// Renders golden chips until every library type reaches per_class images and
// returns exactly per_class per type, types in library order.
std::vector<HarvestedCell> harvest_cells(const synthgen::CellLibrary& lib, const HarvestConfig& cfg,
                                         int* chips_used = nullptr);

}  // namespace evha::corpus
