#include "evha/blockdetect.hpp"

#include <algorithm>
#include <limits>
#include <tuple>

#include "evha/error.hpp"

namespace evha::blockdetect {

std::vector<int> label_image(const BinaryImage& b) {
  const int w = b.width(), h = b.height();
  std::vector<int> labels(static_cast<std::size_t>(w) * h, -1);
  std::vector<std::pair<int, int>> stack;
  int next = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!b.at(x, y) || labels[static_cast<std::size_t>(y) * w + x] >= 0) continue;
      const int label = next++;
      labels[static_cast<std::size_t>(y) * w + x] = label;
      stack.push_back({x, y});
      while (!stack.empty()) {
        const auto [cx, cy] = stack.back();
        stack.pop_back();
        for (int ny = std::max(0, cy - 1); ny <= std::min(h - 1, cy + 1); ++ny) {
          for (int nx = std::max(0, cx - 1); nx <= std::min(w - 1, cx + 1); ++nx) {
            int& l = labels[static_cast<std::size_t>(ny) * w + nx];
            if (l < 0 && b.at(nx, ny)) {
              l = label;
              stack.push_back({nx, ny});
            }
          }
        }
      }
    }
  }
  return labels;
}

std::vector<Component> connected_components(const BinaryImage& b) {
  const std::vector<int> labels = label_image(b);
  std::vector<Component> out;
  const int w = b.width();
  for (int y = 0; y < b.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      const int l = labels[static_cast<std::size_t>(y) * w + x];
      if (l < 0) continue;
      if (static_cast<std::size_t>(l) == out.size()) {
        out.push_back({l, {x, y, x, y}, 0});
      }
      Component& c = out[static_cast<std::size_t>(l)];
      c.box = raster::box_union(c.box, {x, y, x, y});
      ++c.pixel_count;
    }
  }
  return out;
}

std::vector<Component> drop_small(std::vector<Component> components, int min_pixels) {
  std::erase_if(components, [&](const Component& c) { return c.pixel_count < min_pixels; });
  return components;
}

std::vector<ComponentRow> list_rows(std::vector<Component> components) {
  std::vector<ComponentRow> rows;
  if (components.empty()) return rows;
  std::sort(components.begin(), components.end(), [](const Component& a, const Component& b) {
    return std::tie(a.box.y1, a.box.x1, a.label) < std::tie(b.box.y1, b.box.x1, b.label);
  });
  std::vector<Component> current;
  for (std::size_t i = 1; i < components.size(); ++i) {
    current.push_back(components[i - 1]);
    if (components[i].box.y1 >= components[i - 1].box.y2) {
      rows.push_back({static_cast<int>(rows.size()), std::move(current)});
      current.clear();
    }
  }
  current.push_back(components.back());
  rows.push_back({static_cast<int>(rows.size()), std::move(current)});
  for (auto& r : rows) {
    std::stable_sort(r.components.begin(), r.components.end(),
                     [](const Component& a, const Component& b) { return a.box.x1 < b.box.x1; });
  }
  return rows;
}

std::vector<ComponentRow> split_halves(const ComponentRow& row) {
  const auto& cs = row.components;
  if (cs.size() < 3) return {row};
  std::vector<int> gaps;
  int reach = cs.front().box.x2;
  std::size_t widest_at = 0;
  int widest = std::numeric_limits<int>::min();
  for (std::size_t j = 1; j < cs.size(); ++j) {
    const int g = cs[j].box.x1 - reach;
    gaps.push_back(g);
    if (g > widest) {
      widest = g;
      widest_at = j;
    }
    reach = std::max(reach, cs[j].box.x2);
  }
  std::vector<int> sorted = gaps;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const int median = sorted[sorted.size() / 2];
  if (widest <= 0 || widest < 2 * std::max(median, 1)) return {row};
  ComponentRow left{row.row_index, {cs.begin(), cs.begin() + static_cast<std::ptrdiff_t>(widest_at)}};
  ComponentRow right{row.row_index, {cs.begin() + static_cast<std::ptrdiff_t>(widest_at), cs.end()}};
  return {left, right};
}

double adaptive_gap_threshold(const ComponentRow& row) {
  if (row.components.empty()) return 1.0;
  std::vector<int> widths;
  for (const auto& c : row.components) widths.push_back(c.box.width());
  std::sort(widths.begin(), widths.end());
  const std::size_t n = widths.size();
  const double median = n % 2 == 1 ? widths[n / 2] : 0.5 * (widths[n / 2 - 1] + widths[n / 2]);
  return 0.35 * median;
}

std::vector<ExtractedCell> separate_cells(const ComponentRow& row, double gap_threshold) {
  std::vector<ExtractedCell> cells;
  for (const auto& c : row.components) {
    if (!cells.empty() && c.box.x1 - cells.back().box.x2 < gap_threshold) {
      ExtractedCell& cur = cells.back();
      cur.box = raster::box_union(cur.box, c.box);
      cur.members.push_back(c);
    } else {
      cells.push_back({c.box, row.row_index, {c}, {}});
    }
  }
  return cells;
}

std::vector<ExtractedCell> extract_cell_images(const GrayImage& img, std::vector<ExtractedCell> cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const BoundingBox& b = cells[i].box;
    if (!b.valid() || b.x2 >= img.width() || b.y2 >= img.height()) {
      throw Error("cell " + std::to_string(i) + " (row " + std::to_string(cells[i].row_index) +
                  ") has a box outside the image");
    }
    cells[i].image = raster::crop(img, b);
  }
  return cells;
}

std::vector<ExtractedCell> detect_cells(const GrayImage& img, const BinaryImage& mask, const DetectParams& params) {
  auto components = drop_small(connected_components(mask), params.min_component_px);
  std::vector<ExtractedCell> cells;
  for (const auto& row : list_rows(std::move(components))) {
    std::vector<ExtractedCell> row_cells;
    for (const auto& half : split_halves(row)) {
      const double p = params.gap_threshold.value_or(adaptive_gap_threshold(half));
      auto part = separate_cells(half, p);
      row_cells.insert(row_cells.end(), part.begin(), part.end());
    }
    std::stable_sort(row_cells.begin(), row_cells.end(),
                     [](const ExtractedCell& a, const ExtractedCell& b) { return a.box.x1 < b.box.x1; });
    cells.insert(cells.end(), row_cells.begin(), row_cells.end());
  }
  return extract_cell_images(img, std::move(cells));
}

}  // namespace evha::blockdetect
