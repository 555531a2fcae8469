#pragma once
// Block detection unit: 8-connected components, row listing and cell
// separation over the binarized die image.

#include <optional>
#include <vector>

#include "evha/raster.hpp"

namespace evha::blockdetect {

using raster::BinaryImage;
using raster::BoundingBox;
using raster::GrayImage;

struct Component {
  int label = 0;
  BoundingBox box;
  int pixel_count = 0;

  friend bool operator==(const Component&, const Component&) = default;
};

struct ComponentRow {
  int row_index = 0;
  std::vector<Component> components;  // ascending box.x1
};

struct ExtractedCell {
  BoundingBox box;
  int row_index = 0;
  std::vector<Component> members;
  GrayImage image;
};

// Raster scan top-to-bottom, left-to-right; labels are dense from 0 in the
// order components are first met.
std::vector<Component> connected_components(const BinaryImage& b);

// Per-pixel label image matching connected_components (-1 for background).
std::vector<int> label_image(const BinaryImage& b);

std::vector<Component> drop_small(std::vector<Component> components, int min_pixels);

// Sorts by (y1, x1, label), opens a new row whenever y1 >= previous y2, then
// orders each row by x1.
std::vector<ComponentRow> list_rows(std::vector<Component> components);

// Splits a row into its two halves at the widest gap between consecutive
// components when that gap is clearly wider than the typical spacing.
std::vector<ComponentRow> split_halves(const ComponentRow& row);

// 0.35 x median component width of the row.
double adaptive_gap_threshold(const ComponentRow& row);

// Left-to-right sweep merging neighbours whose gap x1(next) - x2(prev) is
// below `gap_threshold`; overlapping neighbours always merge.
std::vector<ExtractedCell> separate_cells(const ComponentRow& row, double gap_threshold);

std::vector<ExtractedCell> extract_cell_images(const GrayImage& img, std::vector<ExtractedCell> cells);

struct DetectParams {
  std::optional<double> gap_threshold;  // absent: adaptive per row half
  int min_component_px = 4;
};

// Full detection over one binarized die: components, rows, halves, cells.
// Cells come back ordered by (row_index, box.x1) with images cropped from `img`.
std::vector<ExtractedCell> detect_cells(const GrayImage& img, const BinaryImage& mask,
                                        const DetectParams& params = {});

}  // namespace evha::blockdetect
