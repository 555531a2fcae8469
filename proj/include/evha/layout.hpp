#pragma once
// Golden-design model: rows of typed cells, each cell carrying its dopant
// rectangles in cell-local coordinates. Text form:
//
//   LAYOUT v1
//   UNITS <int>
//   DIE <width> <height>
//   ROW <row_id> <y_top> <height>
//   CELL <cell_id> <type> <row_id> <x_left> <width>
//   RECT <x1> <y1> <x2> <y2>        # attaches to the most recent CELL
//   END

#include <string>
#include <string_view>
#include <vector>

#include "evha/error.hpp"
#include "evha/raster.hpp"

namespace evha::layout {

using raster::BoundingBox;

struct RowRecord {
  int row_id = 0;
  int y_top = 0;
  int height = 0;

  friend bool operator==(const RowRecord&, const RowRecord&) = default;
};

struct CellRecord {
  int cell_id = 0;
  std::string type_name;
  int row_id = 0;
  int x_left = 0;
  int width = 0;
  std::vector<BoundingBox> dopant_rects;  // cell-local

  friend bool operator==(const CellRecord&, const CellRecord&) = default;
};

struct Layout {
  int units = 1;  // pixels per micron
  int die_width = 0;
  int die_height = 0;
  std::vector<RowRecord> rows;
  std::vector<CellRecord> cells;

  const RowRecord* find_row(int row_id) const;
  const CellRecord* find_cell(int cell_id) const;

  // Cell footprint in die coordinates (row height, cell width).
  BoundingBox cell_extent(const CellRecord& cell) const;
  // Dopant rects of a cell translated to die coordinates.
  std::vector<BoundingBox> die_rects(const CellRecord& cell) const;
  // Tight box around a cell's dopant rects in die coordinates.
  BoundingBox dopant_extent(const CellRecord& cell) const;

  // Cells of one row ordered by x_left.
  std::vector<const CellRecord*> cells_in_row(int row_id) const;

  friend bool operator==(const Layout&, const Layout&) = default;
};

enum class LayoutErrorKind {
  Syntax,
  UnknownKeyword,
  DuplicateId,
  DanglingReference,
  Overlap,
  InvalidValue,
};

class LayoutError : public Error {
 public:
  LayoutError(LayoutErrorKind kind, int line, int column, const std::string& message);
  LayoutErrorKind kind() const { return kind_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  LayoutErrorKind kind_;
  int line_;
  int column_;
};

Layout parse_layout(std::string_view text);
std::string serialize_layout(const Layout& layout);

// Throws LayoutError (line 0) when an invariant is violated.
void validate(const Layout& layout);

// Sorts rows, cells and rects into canonical order.
void canonicalize(Layout& layout);

raster::BinaryImage rasterize_layout(const Layout& layout);

Layout load_layout(const std::filesystem::path& path);
void save_layout(const Layout& layout, const std::filesystem::path& path);

}  // namespace evha::layout
