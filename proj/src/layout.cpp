#include "evha/layout.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace evha::layout {

namespace {

std::string kind_name(LayoutErrorKind kind) {
  switch (kind) {
    case LayoutErrorKind::Syntax: return "syntax error";
    case LayoutErrorKind::UnknownKeyword: return "unknown keyword";
    case LayoutErrorKind::DuplicateId: return "duplicate id";
    case LayoutErrorKind::DanglingReference: return "dangling reference";
    case LayoutErrorKind::Overlap: return "overlap";
    case LayoutErrorKind::InvalidValue: return "invalid value";
  }
  return "error";
}

std::string describe(LayoutErrorKind kind, int line, int column, const std::string& message) {
  std::string where = line > 0 ? "line " + std::to_string(line) + ", column " + std::to_string(column)
                               : "layout";
  return where + ": " + kind_name(kind) + ": " + message;
}

}  // namespace

LayoutError::LayoutError(LayoutErrorKind kind, int line, int column, const std::string& message)
    : Error(describe(kind, line, column, message)), kind_(kind), line_(line), column_(column) {}

const RowRecord* Layout::find_row(int row_id) const {
  for (const auto& r : rows) {
    if (r.row_id == row_id) return &r;
  }
  return nullptr;
}

const CellRecord* Layout::find_cell(int cell_id) const {
  for (const auto& c : cells) {
    if (c.cell_id == cell_id) return &c;
  }
  return nullptr;
}

BoundingBox Layout::cell_extent(const CellRecord& cell) const {
  const RowRecord* row = find_row(cell.row_id);
  if (row == nullptr) throw Error("cell " + std::to_string(cell.cell_id) + " has no row");
  return {cell.x_left, row->y_top, cell.x_left + cell.width - 1, row->y_top + row->height - 1};
}

std::vector<BoundingBox> Layout::die_rects(const CellRecord& cell) const {
  const BoundingBox ext = cell_extent(cell);
  std::vector<BoundingBox> out;
  out.reserve(cell.dopant_rects.size());
  for (const auto& r : cell.dopant_rects) out.push_back(r.translated(ext.x1, ext.y1));
  return out;
}

BoundingBox Layout::dopant_extent(const CellRecord& cell) const {
  const auto rects = die_rects(cell);
  if (rects.empty()) return cell_extent(cell);
  BoundingBox box = rects.front();
  for (const auto& r : rects) box = raster::box_union(box, r);
  return box;
}

std::vector<const CellRecord*> Layout::cells_in_row(int row_id) const {
  std::vector<const CellRecord*> out;
  for (const auto& c : cells) {
    if (c.row_id == row_id) out.push_back(&c);
  }
  std::sort(out.begin(), out.end(),
            [](const CellRecord* a, const CellRecord* b) { return a->x_left < b->x_left; });
  return out;
}

namespace {

struct Token {
  std::string_view text;
  int column;
};

std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    if (line[i] == '#') break;
    if (std::isspace(static_cast<unsigned char>(line[i]))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i])) && line[i] != '#') ++i;
    tokens.push_back({line.substr(start, i - start), static_cast<int>(start) + 1});
  }
  return tokens;
}

// Source position of a ROW or CELL record, kept for geometry errors.
struct CellSource {
  int line;
  int column;
};

class Parser {
 public:
  Layout run(std::string_view text) {
    std::size_t pos = 0;
    int line_no = 0;
    while (pos <= text.size()) {
      const std::size_t nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      ++line_no;
      handle_line(tokenize(line), line_no);
      if (nl == std::string_view::npos) break;
      pos = nl + 1;
    }
    if (!seen_header_) throw LayoutError(LayoutErrorKind::Syntax, 1, 1, "missing 'LAYOUT v1' header");
    if (!seen_end_) throw LayoutError(LayoutErrorKind::Syntax, line_no, 1, "missing END");
    check_geometry();
    return std::move(layout_);
  }

 private:
  void handle_line(const std::vector<Token>& t, int line) {
    if (t.empty()) return;
    const std::string_view kw = t[0].text;
    if (seen_end_) throw LayoutError(LayoutErrorKind::Syntax, line, t[0].column, "content after END");
    if (!seen_header_) {
      if (kw != "LAYOUT") {
        throw LayoutError(LayoutErrorKind::Syntax, line, t[0].column, "expected 'LAYOUT v1' header");
      }
      expect_args(t, 1, line);
      if (t[1].text != "v1") {
        throw LayoutError(LayoutErrorKind::InvalidValue, line, t[1].column,
                          "unsupported version '" + std::string(t[1].text) + "'");
      }
      seen_header_ = true;
      return;
    }
    if (kw == "UNITS") {
      expect_args(t, 1, line);
      layout_.units = positive(t[1], line, "UNITS");
    } else if (kw == "DIE") {
      expect_args(t, 2, line);
      layout_.die_width = non_negative(t[1], line, "die width");
      layout_.die_height = non_negative(t[2], line, "die height");
    } else if (kw == "ROW") {
      expect_args(t, 3, line);
      RowRecord r{integer(t[1], line), non_negative(t[2], line, "y_top"), positive(t[3], line, "row height")};
      if (!row_ids_.insert(r.row_id).second) {
        throw LayoutError(LayoutErrorKind::DuplicateId, line, t[1].column,
                          "row " + std::to_string(r.row_id) + " defined twice");
      }
      layout_.rows.push_back(r);
      row_sources_.push_back({line, t[0].column});
    } else if (kw == "CELL") {
      expect_args(t, 5, line);
      CellRecord c;
      c.cell_id = integer(t[1], line);
      c.type_name = std::string(t[2].text);
      c.row_id = integer(t[3], line);
      c.x_left = non_negative(t[4], line, "x_left");
      c.width = positive(t[5], line, "cell width");
      if (!cell_ids_.insert(c.cell_id).second) {
        throw LayoutError(LayoutErrorKind::DuplicateId, line, t[1].column,
                          "cell " + std::to_string(c.cell_id) + " defined twice");
      }
      if (row_ids_.count(c.row_id) == 0) {
        throw LayoutError(LayoutErrorKind::DanglingReference, line, t[3].column,
                          "cell " + std::to_string(c.cell_id) + " references undefined row " +
                              std::to_string(c.row_id));
      }
      layout_.cells.push_back(std::move(c));
      cell_sources_.push_back({line, t[0].column});
    } else if (kw == "RECT") {
      expect_args(t, 4, line);
      if (layout_.cells.empty()) {
        throw LayoutError(LayoutErrorKind::DanglingReference, line, t[0].column, "RECT before any CELL");
      }
      BoundingBox b{non_negative(t[1], line, "x1"), non_negative(t[2], line, "y1"),
                    non_negative(t[3], line, "x2"), non_negative(t[4], line, "y2")};
      if (b.x1 > b.x2 || b.y1 > b.y2) {
        throw LayoutError(LayoutErrorKind::InvalidValue, line, t[1].column, "RECT corners out of order");
      }
      CellRecord& cell = layout_.cells.back();
      const RowRecord* row = layout_.find_row(cell.row_id);
      if (b.x2 >= cell.width || b.y2 >= row->height) {
        throw LayoutError(LayoutErrorKind::InvalidValue, line, t[1].column,
                          "RECT exceeds extent of cell " + std::to_string(cell.cell_id));
      }
      cell.dopant_rects.push_back(b);
    } else if (kw == "END") {
      expect_args(t, 0, line);
      seen_end_ = true;
    } else if (kw == "LAYOUT") {
      throw LayoutError(LayoutErrorKind::Syntax, line, t[0].column, "duplicate LAYOUT header");
    } else {
      throw LayoutError(LayoutErrorKind::UnknownKeyword, line, t[0].column,
                        "unknown keyword '" + std::string(kw) + "'");
    }
  }

  void check_geometry() {
    std::vector<std::size_t> order(layout_.rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return layout_.rows[a].y_top < layout_.rows[b].y_top; });
    for (std::size_t i = 1; i < order.size(); ++i) {
      const RowRecord& prev = layout_.rows[order[i - 1]];
      const RowRecord& cur = layout_.rows[order[i]];
      if (cur.y_top < prev.y_top + prev.height) {
        const CellSource& src = row_sources_[order[i]];
        throw LayoutError(LayoutErrorKind::Overlap, src.line, src.column,
                          "rows " + std::to_string(prev.row_id) + " and " + std::to_string(cur.row_id) +
                              " overlap vertically");
      }
    }
    std::map<int, std::vector<std::size_t>> by_row;
    for (std::size_t i = 0; i < layout_.cells.size(); ++i) by_row[layout_.cells[i].row_id].push_back(i);
    for (auto& [row_id, idx] : by_row) {
      std::sort(idx.begin(), idx.end(),
                [&](std::size_t a, std::size_t b) { return layout_.cells[a].x_left < layout_.cells[b].x_left; });
      for (std::size_t k = 1; k < idx.size(); ++k) {
        const CellRecord& prev = layout_.cells[idx[k - 1]];
        const CellRecord& cur = layout_.cells[idx[k]];
        if (cur.x_left < prev.x_left + prev.width) {
          const CellSource& src = cell_sources_[idx[k]];
          throw LayoutError(LayoutErrorKind::Overlap, src.line, src.column,
                            "cell " + std::to_string(cur.cell_id) + " overlaps cell " +
                                std::to_string(prev.cell_id) + " in row " + std::to_string(row_id));
        }
      }
    }
  }

  static void expect_args(const std::vector<Token>& t, std::size_t n, int line) {
    if (t.size() != n + 1) {
      throw LayoutError(LayoutErrorKind::Syntax, line, t[0].column,
                        std::string(t[0].text) + " expects " + std::to_string(n) + " argument(s), got " +
                            std::to_string(t.size() - 1));
    }
  }

  static int integer(const Token& tok, int line) {
    int v = 0;
    const char* first = tok.text.data();
    const char* last = first + tok.text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      throw LayoutError(LayoutErrorKind::Syntax, line, tok.column,
                        "expected integer, got '" + std::string(tok.text) + "'");
    }
    return v;
  }

  static int non_negative(const Token& tok, int line, const char* what) {
    const int v = integer(tok, line);
    if (v < 0) throw LayoutError(LayoutErrorKind::InvalidValue, line, tok.column, std::string(what) + " must be >= 0");
    return v;
  }

  static int positive(const Token& tok, int line, const char* what) {
    const int v = integer(tok, line);
    if (v <= 0) throw LayoutError(LayoutErrorKind::InvalidValue, line, tok.column, std::string(what) + " must be > 0");
    return v;
  }

  Layout layout_;
  bool seen_header_ = false;
  bool seen_end_ = false;
  std::set<int> row_ids_;
  std::set<int> cell_ids_;
  std::vector<CellSource> cell_sources_;
  std::vector<CellSource> row_sources_;
};

}  // namespace

Layout parse_layout(std::string_view text) {
  Layout l = Parser().run(text);
  return l;
}

void canonicalize(Layout& layout) {
  std::sort(layout.rows.begin(), layout.rows.end(), [](const RowRecord& a, const RowRecord& b) {
    return std::tie(a.y_top, a.row_id) < std::tie(b.y_top, b.row_id);
  });
  for (auto& c : layout.cells) {
    std::sort(c.dopant_rects.begin(), c.dopant_rects.end(), [](const BoundingBox& a, const BoundingBox& b) {
      return std::tie(a.y1, a.x1, a.y2, a.x2) < std::tie(b.y1, b.x1, b.y2, b.x2);
    });
  }
  std::sort(layout.cells.begin(), layout.cells.end(), [](const CellRecord& a, const CellRecord& b) {
    return std::tie(a.row_id, a.x_left, a.cell_id) < std::tie(b.row_id, b.x_left, b.cell_id);
  });
}

std::string serialize_layout(const Layout& input) {
  Layout l = input;
  canonicalize(l);
  std::ostringstream out;
  out << "LAYOUT v1\n";
  out << "UNITS " << l.units << "\n";
  out << "DIE " << l.die_width << " " << l.die_height << "\n";
  for (const auto& r : l.rows) out << "ROW " << r.row_id << " " << r.y_top << " " << r.height << "\n";
  for (const auto& c : l.cells) {
    out << "CELL " << c.cell_id << " " << c.type_name << " " << c.row_id << " " << c.x_left << " " << c.width
        << "\n";
    for (const auto& b : c.dopant_rects) out << "RECT " << b.x1 << " " << b.y1 << " " << b.x2 << " " << b.y2 << "\n";
  }
  out << "END\n";
  return out.str();
}

void validate(const Layout& layout) {
  // Reparsing the canonical text runs every check the parser performs.
  (void)parse_layout(serialize_layout(layout));
  for (const auto& c : layout.cells) {
    if (c.type_name.empty() || c.type_name.find_first_of(" \t\n#") != std::string::npos) {
      throw LayoutError(LayoutErrorKind::InvalidValue, 0, 0,
                        "cell " + std::to_string(c.cell_id) + " has an unusable type name");
    }
  }
}

raster::BinaryImage rasterize_layout(const Layout& layout) {
  raster::BinaryImage mask(layout.die_width, layout.die_height);
  for (const auto& c : layout.cells) {
    for (const auto& r : layout.die_rects(c)) {
      const int x1 = std::max(r.x1, 0), y1 = std::max(r.y1, 0);
      const int x2 = std::min(r.x2, layout.die_width - 1), y2 = std::min(r.y2, layout.die_height - 1);
      for (int y = y1; y <= y2; ++y) {
        for (int x = x1; x <= x2; ++x) mask.set(x, y, true);
      }
    }
  }
  return mask;
}

Layout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_layout(ss.str());
}

void save_layout(const Layout& layout, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize_layout(layout);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace evha::layout
