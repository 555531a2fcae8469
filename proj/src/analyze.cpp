#include "evha/analyze.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <json.hpp>

#include "evha/error.hpp"

namespace evha::analyze {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const long long iw = std::max(0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1) + 1);
  const long long ih = std::max(0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1) + 1);
  const long long inter = iw * ih;
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

Point centroid(const BoundingBox& b) { return {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0}; }

double squared_distance(Point a, Point b) { return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y); }

std::vector<BoundingBox> dopant_bboxes(const BinaryImage& cell_mask, int min_pixels) {
  std::vector<BoundingBox> out;
  for (const auto& c : blockdetect::drop_small(blockdetect::connected_components(cell_mask), min_pixels)) {
    out.push_back(c.box);
  }
  return out;
}

CorrespondenceSet correspond_centroids(const std::vector<BoundingBox>& layout_boxes,
                                       const std::vector<BoundingBox>& sem_boxes, int max_iterations) {
  CorrespondenceSet out;
  const std::size_t k = layout_boxes.size();
  if (k == 0) {
    for (std::size_t j = 0; j < sem_boxes.size(); ++j) out.unmatched_sem.push_back(static_cast<int>(j));
    return out;
  }
  // pooled points: layout first, then SEM
  std::vector<Point> pts;
  for (const auto& b : layout_boxes) pts.push_back(centroid(b));
  for (const auto& b : sem_boxes) pts.push_back(centroid(b));
  std::vector<Point> centers(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<std::size_t> assign(pts.size(), k);

  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = squared_distance(pts[i], centers[c]);
        if (d < bd) {  // ties keep the lowest cluster index
          bd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<Point> sum(k);
    std::vector<int> n(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sum[assign[i]].x += pts[i].x;
      sum[assign[i]].y += pts[i].y;
      ++n[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (n[c] > 0) centers[c] = {sum[c].x / n[c], sum[c].y / n[c]};  // empty clusters keep their centre
    }
  }

  std::vector<std::vector<int>> lay(k), sem(k);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i < k) lay[assign[i]].push_back(static_cast<int>(i));
    else sem[assign[i]].push_back(static_cast<int>(i - k));
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (lay[c].size() == 1 && sem[c].size() == 1) {
      const int li = lay[c][0], si = sem[c][0];
      out.pairs.push_back({li, si, layout_boxes[li], sem_boxes[si],
                           squared_distance(centroid(layout_boxes[li]), centroid(sem_boxes[si]))});
    } else {
      out.unmatched_layout.insert(out.unmatched_layout.end(), lay[c].begin(), lay[c].end());
      out.unmatched_sem.insert(out.unmatched_sem.end(), sem[c].begin(), sem[c].end());
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end(), [](const Pair& a, const Pair& b) { return a.layout_index < b.layout_index; });
  std::sort(out.unmatched_layout.begin(), out.unmatched_layout.end());
  std::sort(out.unmatched_sem.begin(), out.unmatched_sem.end());
  return out;
}

CountResult count_cells(const std::vector<blockdetect::ExtractedCell>& cells, const layout::Layout& l) {
  CountResult out;
  std::vector<const layout::RowRecord*> rows;
  for (const auto& r : l.rows) rows.push_back(&r);
  std::sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) { return a->y_top < b->y_top; });

  // vertical extent of each detected row
  std::map<int, std::pair<int, int>> extent;
  for (const auto& c : cells) {
    auto [it, fresh] = extent.try_emplace(c.row_index, c.box.y1, c.box.y2);
    if (!fresh) {
      it->second.first = std::min(it->second.first, c.box.y1);
      it->second.second = std::max(it->second.second, c.box.y2);
    }
  }
  std::map<int, int> sem_to_layout;  // detected row -> index into rows
  std::vector<int> hits(rows.size(), 0);
  for (const auto& [ri, ext] : extent) {
    int best = -1, best_overlap = 0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const int top = rows[k]->y_top, bottom = rows[k]->y_top + rows[k]->height - 1;
      const int ov = std::min(bottom, ext.second) - std::max(top, ext.first) + 1;
      if (ov > best_overlap) {
        best_overlap = ov;
        best = static_cast<int>(k);
      }
    }
    sem_to_layout[ri] = best;
    if (best < 0) out.structural_flag = true;
    else ++hits[static_cast<std::size_t>(best)];
  }
  if (extent.size() != rows.size()) out.structural_flag = true;
  for (int h : hits) {
    if (h > 1) out.structural_flag = true;
  }

  std::vector<int> sem_count(rows.size(), 0);
  out.cell_row.assign(cells.size(), -1);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const int k = sem_to_layout[cells[i].row_index];
    if (k < 0) continue;
    ++sem_count[static_cast<std::size_t>(k)];
    out.cell_row[i] = rows[static_cast<std::size_t>(k)]->row_id;
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int lc = static_cast<int>(l.cells_in_row(rows[k]->row_id).size());
    out.rows.push_back({rows[k]->row_id, lc, sem_count[k], lc != sem_count[k] || hits[k] > 1});
  }
  return out;
}

std::string to_string(CellStatus s) { return s == CellStatus::Normal ? "normal" : "abnormal"; }

AnalysisReport analyze_chip(const std::vector<blockdetect::ExtractedCell>& cells, const BinaryImage& mask,
                            const layout::Layout& l, const AnalyzeConfig& cfg) {
  if (cfg.iou_threshold < 0.0 || cfg.iou_threshold > 1.0) throw Error("iou threshold must lie in [0,1]");
  AnalysisReport rep;
  rep.iou_threshold = cfg.iou_threshold;
  const CountResult counts = count_cells(cells, l);
  rep.structural_flag = counts.structural_flag;
  rep.rows = counts.rows;
  std::map<int, bool> row_flag;
  for (const auto& r : counts.rows) row_flag[r.row_id] = r.flag;

  // x rank of each detected cell within its layout row
  std::map<int, std::vector<std::size_t>> by_row;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (counts.cell_row[i] >= 0) by_row[counts.cell_row[i]].push_back(i);
  }
  std::vector<const layout::CellRecord*> partner(cells.size(), nullptr);
  std::vector<int> off_x, off_y;
  for (auto& [row_id, idx] : by_row) {
    if (row_flag[row_id]) continue;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return cells[a].box.x1 < cells[b].box.x1; });
    const auto lc = l.cells_in_row(row_id);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      partner[idx[k]] = lc[k];
      const BoundingBox ext = l.dopant_extent(*lc[k]);
      off_x.push_back(cells[idx[k]].box.x1 - ext.x1);
      off_y.push_back(cells[idx[k]].box.y1 - ext.y1);
    }
  }
  // image-to-die offset, taken from the rows whose counts agree
  const auto median = [](std::vector<int> v) {
    if (v.empty()) return 0;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  const int dx = median(off_x), dy = median(off_y);

  // Rows with a count mismatch: pair each detected cell with the layout cell it overlaps most, so a split or
  // added block does not hide which layout cells are intact.
  std::vector<bool> overlap_matched(cells.size(), false);
  for (auto& [row_id, idx] : by_row) {
    if (!row_flag[row_id]) continue;
    for (std::size_t i : idx) {
      const BoundingBox b = cells[i].box.translated(-dx, -dy);
      int best = 0;
      for (const auto* lc : l.cells_in_row(row_id)) {
        const BoundingBox ext = l.dopant_extent(*lc);
        const int ov = std::min(b.x2, ext.x2) - std::max(b.x1, ext.x1) + 1;
        if (ov > best) {
          best = ov;
          partner[i] = lc;
        }
      }
      overlap_matched[i] = partner[i] != nullptr;
    }
  }

  for (std::size_t i = 0; i < cells.size(); ++i) {
    CellAnalysis a;
    a.id = static_cast<int>(i);
    a.row_id = counts.cell_row[i];
    a.box = cells[i].box;
    const layout::CellRecord* lc = partner[i];
    if (lc == nullptr) {
      a.status = CellStatus::Abnormal;
      rep.cells.push_back(std::move(a));
      continue;
    }
    a.layout_id = lc->cell_id;
    const BoundingBox ext = l.dopant_extent(*lc);
    std::vector<BoundingBox> sem = dopant_bboxes(raster::crop(mask, cells[i].box), cfg.min_region_px);
    const int ox = overlap_matched[i] ? cells[i].box.x1 - dx : ext.x1;
    const int oy = overlap_matched[i] ? cells[i].box.y1 - dy : ext.y1;
    for (auto& b : sem) b = b.translated(ox, oy);
    const auto corr = correspond_centroids(l.die_rects(*lc), sem);
    for (const auto& p : corr.pairs) a.ious.push_back(iou(p.layout_box, p.sem_box));
    a.unmatched = static_cast<int>(corr.unmatched_layout.size() + corr.unmatched_sem.size());
    if (!a.ious.empty()) a.min_iou = *std::min_element(a.ious.begin(), a.ious.end());
    const bool low = a.min_iou && *a.min_iou < cfg.iou_threshold;
    a.status = (low || a.unmatched > 0 || a.ious.empty()) ? CellStatus::Abnormal : CellStatus::Normal;
    rep.cells.push_back(std::move(a));
  }
  return rep;
}

std::string report_to_json(const AnalysisReport& r) {
  nlohmann::ordered_json j;
  j["structural_flag"] = r.structural_flag;
  j["iou_threshold"] = r.iou_threshold;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back(
        {{"row_id", row.row_id}, {"layout_count", row.layout_count}, {"sem_count", row.sem_count}, {"flag", row.flag}});
  }
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) {
    nlohmann::ordered_json e;
    e["id"] = c.id;
    e["layout_id"] = c.layout_id;
    e["row_id"] = c.row_id;
    e["box"] = {c.box.x1, c.box.y1, c.box.x2, c.box.y2};
    e["ious"] = c.ious;
    e["min_iou"] = c.min_iou ? nlohmann::ordered_json(*c.min_iou) : nlohmann::ordered_json(nullptr);
    e["unmatched"] = c.unmatched;
    e["status"] = to_string(c.status);
    j["cells"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

AnalysisReport report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  AnalysisReport r;
  r.structural_flag = j.at("structural_flag").get<bool>();
  r.iou_threshold = j.at("iou_threshold").get<double>();
  for (const auto& row : j.at("rows")) {
    r.rows.push_back({row.at("row_id").get<int>(), row.at("layout_count").get<int>(), row.at("sem_count").get<int>(),
                      row.at("flag").get<bool>()});
  }
  for (const auto& e : j.at("cells")) {
    CellAnalysis c;
    c.id = e.at("id").get<int>();
    c.layout_id = e.at("layout_id").get<int>();
    c.row_id = e.at("row_id").get<int>();
    const auto b = e.at("box").get<std::vector<int>>();
    if (b.size() != 4) throw Error("analysis box must have four coordinates");
    c.box = {b[0], b[1], b[2], b[3]};
    c.ious = e.at("ious").get<std::vector<double>>();
    if (!e.at("min_iou").is_null()) c.min_iou = e.at("min_iou").get<double>();
    c.unmatched = e.at("unmatched").get<int>();
    const auto s = e.at("status").get<std::string>();
    if (s != "normal" && s != "abnormal") throw Error("unknown analysis status '" + s + "'");
    c.status = s == "normal" ? CellStatus::Normal : CellStatus::Abnormal;
    r.cells.push_back(std::move(c));
  }
  return r;
}

}  // namespace evha::analyze
