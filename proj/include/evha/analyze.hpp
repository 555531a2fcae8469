#pragma once
// Block analysis unit: per-row cell counts against the golden layout,
// centroid correspondence by k-means and per-region IOU deformity.

#include <optional>
#include <string>
#include <vector>

#include "evha/blockdetect.hpp"
#include "evha/layout.hpp"
#include "evha/raster.hpp"

namespace evha::analyze {

using raster::BinaryImage;
using raster::BoundingBox;

// Inclusive-pixel IOU; disjoint boxes give 0.
double iou(const BoundingBox& a, const BoundingBox& b);

struct Point {
  double x = 0.0;
  double y = 0.0;
};

Point centroid(const BoundingBox& b);
double squared_distance(Point a, Point b);

// One box per 8-connected region of at least min_pixels pixels, in
// connected_components order.
std::vector<BoundingBox> dopant_bboxes(const BinaryImage& cell_mask, int min_pixels = 1);

struct Pair {
  int layout_index = 0;
  int sem_index = 0;
  BoundingBox layout_box;
  BoundingBox sem_box;
  double centroid_distance = 0.0;  // squared Euclidean
};

struct CorrespondenceSet {
  std::vector<Pair> pairs;  // ascending layout_index
  std::vector<int> unmatched_layout;
  std::vector<int> unmatched_sem;
};

// k-means over the pooled centroids with one cluster per layout box, seeded
// at the layout centroids; clusters holding exactly one centroid from each
// side become pairs.
CorrespondenceSet correspond_centroids(const std::vector<BoundingBox>& layout_boxes,
                                       const std::vector<BoundingBox>& sem_boxes, int max_iterations = 100);

struct RowCount {
  int row_id = 0;
  int layout_count = 0;
  int sem_count = 0;
  bool flag = false;
};

struct CountResult {
  std::vector<RowCount> rows;   // layout rows top to bottom
  bool structural_flag = false; // SEM rows do not map one-to-one onto layout rows
  // For each detected cell, the layout row it was assigned to (-1: none).
  std::vector<int> cell_row;
};

// Detected rows are assigned to the layout row they overlap most vertically.
CountResult count_cells(const std::vector<blockdetect::ExtractedCell>& cells, const layout::Layout& l);

enum class CellStatus { Normal, Abnormal };
std::string to_string(CellStatus s);

struct CellAnalysis {
  int id = 0;  // index into the detected cells
  int layout_id = -1;
  int row_id = -1;
  BoundingBox box;
  std::vector<double> ious;
  std::optional<double> min_iou;
  int unmatched = 0;
  CellStatus status = CellStatus::Normal;
};

struct AnalysisReport {
  bool structural_flag = false;
  double iou_threshold = 0.7;
  std::vector<RowCount> rows;
  std::vector<CellAnalysis> cells;
};

struct AnalyzeConfig {
  double iou_threshold = 0.7;
  int min_region_px = 4;
};

// Cells in flagged rows are abnormal without IOU values. Elsewhere each
// detected cell is paired with the layout cell at the same x rank, its mask
// regions are translated so the cell box origin meets the layout dopant
// extent origin, and the cell is abnormal iff a region is unmatched or an
// IOU falls below the threshold.
AnalysisReport analyze_chip(const std::vector<blockdetect::ExtractedCell>& cells, const BinaryImage& mask,
                            const layout::Layout& l, const AnalyzeConfig& cfg = {});

std::string report_to_json(const AnalysisReport& r);
AnalysisReport report_from_json(const std::string& text);

}  // namespace evha::analyze
