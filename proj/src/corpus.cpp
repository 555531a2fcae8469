#include "evha/corpus.hpp"

#include <algorithm>
#include <map>

#include "evha/denoiser.hpp"
#include "evha/error.hpp"
#include "evha/seed.hpp"

namespace evha::corpus {

PreparedChip prepare_chip(const raster::GrayImage& raw, const PrepareConfig& cfg, const nn::Network* denoiser) {
  PreparedChip out;
  // the learned denoiser was trained on raw renders, so it runs before the stretch
  out.denoised = denoiser ? preprocess::normalize_minmax(denoiser::apply_denoiser(*denoiser, raw))
                          : preprocess::denoise_nlm(preprocess::normalize_minmax(raw), cfg.nlm);
  out.threshold = cfg.threshold ? *cfg.threshold : preprocess::otsu_threshold(out.denoised);
  out.mask = preprocess::binarize(out.denoised, out.threshold);
  out.cells = blockdetect::detect_cells(out.denoised, out.mask, cfg.detect);
  return out;
}

std::vector<int> match_to_layout(const std::vector<blockdetect::ExtractedCell>& cells, const layout::Layout& l) {
  std::vector<int> out(cells.size(), -1);
  std::map<int, std::vector<std::size_t>> by_row;
  for (std::size_t i = 0; i < cells.size(); ++i) by_row[cells[i].row_index].push_back(i);
  std::vector<layout::RowRecord> rows = l.rows;
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.y_top < b.y_top; });
  for (auto& [row_index, idx] : by_row) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return cells[a].box.x1 < cells[b].box.x1; });
    // the layout row whose extent holds the detected row's vertical centre
    const auto& first = cells[idx.front()].box;
    const int cy = (first.y1 + first.y2) / 2;
    const layout::RowRecord* row = nullptr;
    for (const auto& r : rows) {
      if (cy >= r.y_top && cy < r.y_top + r.height) row = &r;
    }
    if (row == nullptr) continue;
    const auto lc = l.cells_in_row(row->row_id);
    if (lc.size() != idx.size()) continue;
    for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = lc[k]->cell_id;
  }
  return out;
}

std::vector<HarvestedCell> harvest_cells(const synthgen::CellLibrary& lib, const HarvestConfig& cfg, int* chips_used) {
  const auto types = lib.type_names();
  std::map<std::string, std::vector<HarvestedCell>> pool;
  int chip = 0;
  auto done = [&] {
    for (const auto& t : types) {
      if (static_cast<int>(pool[t].size()) < cfg.per_class) return false;
    }
    return true;
  };
  for (; chip < cfg.max_chips && !done(); ++chip) {
    const auto l = synthgen::generate_chip(cfg.spec, lib, derive_seed(cfg.seed, 1, chip));
    const auto sem = synthgen::render_sem(l, cfg.dwell, derive_seed(cfg.seed, 2, chip));
    const auto prep = prepare_chip(sem, cfg.prepare);
    const auto match = match_to_layout(prep.cells, l);
    for (std::size_t i = 0; i < prep.cells.size(); ++i) {
      if (match[i] < 0) continue;
      const auto* rec = l.find_cell(match[i]);
      pool[rec->type_name].push_back({prep.cells[i].image, rec->type_name, chip});
    }
  }
  if (chips_used) *chips_used = chip;
  if (!done()) throw Error("harvest: chip budget exhausted before every type reached " + std::to_string(cfg.per_class));
  std::vector<HarvestedCell> out;
  for (const auto& t : types) {
    auto& v = pool[t];
    out.insert(out.end(), v.begin(), v.begin() + cfg.per_class);
  }
  return out;
}

}  // namespace evha::corpus
