#include "evha/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

namespace evha::synthgen {

std::vector<std::string> CellLibrary::type_names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : entries) names.push_back(name);
  return names;
}

void CellLibrary::validate() const {
  if (entries.size() < 7) throw Error("cell library needs at least 7 types");
  for (const auto& [name, t] : entries) {
    if (t.width <= 0) throw Error("template " + name + " has non-positive width");
    for (const auto& r : t.dopant_rects) {
      if (!r.valid() || r.x2 >= t.width || r.y2 >= row_height) {
        throw Error("template " + name + " has a rect outside its extent");
      }
    }
  }
}

CellLibrary default_library() {
  CellLibrary lib;
  lib.row_height = 28;
  lib.entries["INV"] = {16, {{0, 2, 15, 25}}};
  lib.entries["NAND2"] = {40, {{0, 2, 18, 25}, {21, 2, 39, 15}}};
  lib.entries["NOR2"] = {40, {{0, 12, 18, 25}, {21, 2, 39, 25}}};
  lib.entries["AOI21"] = {58, {{0, 2, 17, 25}, {20, 6, 37, 21}, {40, 2, 57, 17}}};
  lib.entries["OAI21"] = {58, {{0, 10, 17, 25}, {20, 2, 37, 25}, {40, 10, 57, 25}}};
  lib.entries["XOR2"] = {76, {{0, 2, 16, 25}, {19, 2, 35, 16}, {38, 11, 56, 25}, {59, 2, 75, 25}}};
  lib.entries["DFF"] = {96, {{0, 2, 21, 25}, {24, 5, 45, 22}, {48, 2, 69, 16}, {72, 9, 95, 25}}};
  return lib;
}

layout::Layout generate_chip(const ChipSpec& spec, const CellLibrary& library, std::uint64_t seed) {
  if (spec.rows <= 0 || spec.cells_per_row <= 0) throw Error("chip spec needs positive rows and cells per row");
  library.validate();
  std::mt19937_64 rng(seed);
  const std::vector<std::string> names = library.type_names();
  std::uniform_int_distribution<std::size_t> pick(0, names.size() - 1);

  int max_template_width = 0;
  for (const auto& [_, t] : library.entries) max_template_width = std::max(max_template_width, t.width);
  const int slack = spec.slack > 0 ? spec.slack : max_template_width + 2 * spec.cell_gap;

  layout::Layout l;
  l.units = spec.units;
  int content_width = 0;
  int next_id = 0;
  for (int r = 0; r < spec.rows; ++r) {
    layout::RowRecord row{r, spec.margin + r * (library.row_height + spec.row_gap), library.row_height};
    l.rows.push_back(row);

    const int left_count = (spec.cells_per_row + 1) / 2;
    const int right_count = spec.cells_per_row / 2;
    std::vector<std::string> types;
    for (int i = 0; i < left_count; ++i) types.push_back(names[pick(rng)]);
    std::vector<std::string> right(types.begin(), types.begin() + right_count);
    std::reverse(right.begin(), right.end());

    int x = spec.margin;
    auto place = [&](const std::string& type) {
      const CellTemplate& t = library.entries.at(type);
      l.cells.push_back({next_id++, type, r, x, t.width, t.dopant_rects});
      x += t.width + spec.cell_gap;
    };
    for (const auto& t : types) place(t);
    if (!right.empty()) {
      x += spec.center_gap - spec.cell_gap;
      for (const auto& t : right) place(t);
    }
    content_width = std::max(content_width, x - spec.cell_gap);
  }
  l.die_width = content_width + slack + spec.margin;
  l.die_height = 2 * spec.margin + spec.rows * library.row_height + (spec.rows - 1) * spec.row_gap;
  if (spec.max_die_width > 0 && l.die_width > spec.max_die_width) {
    throw Error("cells do not fit: die width " + std::to_string(l.die_width) + " exceeds limit " +
                std::to_string(spec.max_die_width));
  }
  layout::canonicalize(l);
  return l;
}

NoiseProfile noise_profile(DwellClass dwell) {
  NoiseProfile p;
  switch (dwell) {
    case DwellClass::DT4:
      p.gaussian_sigma = 0.12;
      p.speckle_rate = 0.01;
      break;
    case DwellClass::DT5:
      p.gaussian_sigma = 0.06;
      p.speckle_rate = 0.004;
      break;
    case DwellClass::DT6:
      p.gaussian_sigma = 0.02;
      p.speckle_rate = 0.001;
      break;
  }
  return p;
}

NoiseProfile clean_profile() { return NoiseProfile{}; }

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0.0 || img.empty()) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  const int w = img.width(), h = img.height();
  std::vector<double> tmp(img.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(raster::mirror_index(x + k, w), y);
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[k + radius] * tmp[static_cast<std::size_t>(raster::mirror_index(y + k, h)) * w + x];
      }
      out.at(x, y) = std::clamp(acc, 0.0, 1.0);
    }
  }
  out.source_id = img.source_id;
  out.dwell_class = img.dwell_class;
  return out;
}

GrayImage render_sem(const layout::Layout& l, const NoiseProfile& profile, std::uint64_t seed) {
  const raster::BinaryImage mask = layout::rasterize_layout(l);
  GrayImage img(l.die_width, l.die_height);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) img.at(x, y) = mask.at(x, y) ? profile.foreground : profile.background;
  }
  img = gaussian_blur(img, profile.blur_radius);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto px = img.pixels();
  if (profile.gaussian_sigma > 0.0) {
    for (double& v : px) v += profile.gaussian_sigma * gauss(rng);
  }
  if (profile.speckle_rate > 0.0) {
    for (double& v : px) {
      if (unit(rng) < profile.speckle_rate) v = unit(rng) < 0.5 ? 0.0 : 1.0;
    }
  }
  img.clamp();
  return img;
}

GrayImage render_sem(const layout::Layout& l, DwellClass dwell, std::uint64_t seed) {
  GrayImage img = render_sem(l, noise_profile(dwell), seed);
  img.dwell_class = dwell;
  return img;
}

std::string to_string(TrojanKind k) {
  switch (k) {
    case TrojanKind::Addition: return "addition";
    case TrojanKind::Deletion: return "deletion";
    case TrojanKind::Change: return "change";
  }
  return "change";
}

TrojanKind trojan_from_string(const std::string& s) {
  if (s == "addition") return TrojanKind::Addition;
  if (s == "deletion") return TrojanKind::Deletion;
  if (s == "change") return TrojanKind::Change;
  throw Error("unknown trojan kind '" + s + "'");
}

namespace {

TrojanResult delete_cell(const layout::Layout& l, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, l.cells.size() - 1);
  const std::size_t victim = pick(rng);
  TrojanResult out{l, {}};
  const layout::CellRecord removed = l.cells[victim];
  out.layout.cells.erase(out.layout.cells.begin() + static_cast<std::ptrdiff_t>(victim));
  out.record = {TrojanKind::Deletion, {removed.cell_id}, removed.row_id,
                "removed " + removed.type_name + " cell " + std::to_string(removed.cell_id) + " at x=" +
                    std::to_string(removed.x_left)};
  return out;
}

TrojanResult add_cell(const layout::Layout& l, const CellLibrary& library, std::mt19937_64& rng) {
  const std::vector<std::string> names = library.type_names();
  std::uniform_int_distribution<std::size_t> pick_type(0, names.size() - 1);
  const std::string type = names[pick_type(rng)];
  const CellTemplate& t = library.entries.at(type);
  const int spacing = library.cell_spacing;

  struct Site {
    int row_id;
    int x;
  };
  std::vector<Site> sites;
  for (const auto& row : l.rows) {
    if (row.height != library.row_height) continue;
    // Leftmost admissible x after each occupied cell, and the bound it must stay below.
    int lo = 1;
    for (const auto* c : l.cells_in_row(row.row_id)) {
      if (lo + t.width + spacing <= c->x_left) sites.push_back({row.row_id, lo});
      lo = c->x_left + c->width + spacing;
    }
    if (lo + t.width - 1 <= l.die_width - 2) sites.push_back({row.row_id, lo});
  }
  if (sites.empty()) throw Error("no free site for an added " + type + " cell");
  std::uniform_int_distribution<std::size_t> pick_site(0, sites.size() - 1);
  const Site site = sites[pick_site(rng)];

  int next_id = 0;
  for (const auto& c : l.cells) next_id = std::max(next_id, c.cell_id + 1);
  TrojanResult out{l, {}};
  out.layout.cells.push_back({next_id, type, site.row_id, site.x, t.width, t.dopant_rects});
  layout::canonicalize(out.layout);
  out.record = {TrojanKind::Addition, {next_id}, site.row_id,
                "added " + type + " cell " + std::to_string(next_id) + " at x=" + std::to_string(site.x)};
  return out;
}

TrojanResult change_cell(const layout::Layout& l, std::mt19937_64& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < l.cells.size(); ++i) {
    if (!l.cells[i].dopant_rects.empty()) candidates.push_back(i);
  }
  if (candidates.empty()) throw Error("no cell with dopant regions to change");
  std::uniform_int_distribution<std::size_t> pick_cell(0, candidates.size() - 1);
  const std::size_t ci = candidates[pick_cell(rng)];
  TrojanResult out{l, {}};
  layout::CellRecord& cell = out.layout.cells[ci];
  std::uniform_int_distribution<std::size_t> pick_rect(0, cell.dopant_rects.size() - 1);
  const std::size_t ri = pick_rect(rng);
  BoundingBox& rect = cell.dopant_rects[ri];

  enum class Edit { Shift, Shrink, Remove };
  std::vector<Edit> edits{Edit::Shrink};
  const int shift = std::max(4, static_cast<int>(std::ceil(0.4 * rect.width())));
  const bool can_right = rect.x2 + shift <= cell.width - 1;
  const bool can_left = rect.x1 - shift >= 0;
  if (can_left || can_right) edits.push_back(Edit::Shift);
  if (cell.dopant_rects.size() >= 2) edits.push_back(Edit::Remove);
  std::uniform_int_distribution<std::size_t> pick_edit(0, edits.size() - 1);
  const Edit edit = edits[pick_edit(rng)];

  std::string what;
  switch (edit) {
    case Edit::Shift: {
      bool right = can_right;
      if (can_left && can_right) right = std::bernoulli_distribution(0.5)(rng);
      const int dx = right ? shift : -shift;
      rect = rect.translated(dx, 0);
      what = "shifted region " + std::to_string(ri) + " by " + std::to_string(dx) + " px";
      break;
    }
    case Edit::Shrink: {
      const int new_width = std::max(1, rect.width() / 2);
      if (std::bernoulli_distribution(0.5)(rng)) {
        rect.x2 = rect.x1 + new_width - 1;
      } else {
        rect.x1 = rect.x2 - new_width + 1;
      }
      what = "narrowed region " + std::to_string(ri) + " to " + std::to_string(new_width) + " px";
      break;
    }
    case Edit::Remove:
      cell.dopant_rects.erase(cell.dopant_rects.begin() + static_cast<std::ptrdiff_t>(ri));
      what = "removed region " + std::to_string(ri);
      break;
  }
  out.record = {TrojanKind::Change, {cell.cell_id}, cell.row_id,
                "changed " + cell.type_name + " cell " + std::to_string(cell.cell_id) + ": " + what};
  return out;
}

}  // namespace

TrojanResult insert_trojan(const layout::Layout& l, TrojanKind kind, const CellLibrary& library,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  switch (kind) {
    case TrojanKind::Deletion:
      if (l.cells.empty()) throw Error("cannot delete from a layout without cells");
      return delete_cell(l, rng);
    case TrojanKind::Addition:
      return add_cell(l, library, rng);
    case TrojanKind::Change:
      return change_cell(l, rng);
  }
  throw Error("unknown trojan kind");
}

std::string trojan_to_json(const TrojanRecord& r) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(r.kind);
  j["affected_cell_ids"] = r.affected_cell_ids;
  j["row_id"] = r.row_id;
  j["description"] = r.description;
  return j.dump(2) + "\n";
}

TrojanRecord trojan_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  TrojanRecord r;
  r.kind = trojan_from_string(j.at("kind").get<std::string>());
  r.affected_cell_ids = j.at("affected_cell_ids").get<std::vector<int>>();
  r.row_id = j.at("row_id").get<int>();
  r.description = j.value("description", "");
  if (r.affected_cell_ids.empty()) throw Error("trojan record lists no affected cells");
  return r;
}

AugmentParams AugmentParams::none() {
  AugmentParams p;
  p.blur = p.noise = p.rotate = p.vertical_flip = false;
  p.horizontal_flip = p.jitter = p.random_crop = false;
  return p;
}

AugmentParams AugmentParams::classifier() { return AugmentParams{}; }

AugmentParams AugmentParams::siamese() {
  AugmentParams p;
  p.vertical_flip = false;
  p.horizontal_flip = true;
  p.jitter = true;
  p.random_crop = true;
  p.rotate = false;
  return p;
}

GrayImage vertical_flip(const GrayImage& img) {
  GrayImage out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.at(x, y) = img.at(x, img.height() - 1 - y);
  }
  return out;
}

GrayImage horizontal_flip(const GrayImage& img) {
  GrayImage out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) out.at(x, y) = img.at(img.width() - 1 - x, y);
  }
  return out;
}

GrayImage rotate(const GrayImage& img, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double cx = (img.width() - 1) / 2.0, cy = (img.height() - 1) / 2.0;
  GrayImage out = img;
  auto sample = [&](int x, int y) {
    return img.at(std::clamp(x, 0, img.width() - 1), std::clamp(y, 0, img.height() - 1));
  };
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = c * dx + s * dy + cx;
      const double sy = -s * dx + c * dy + cy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double wx = sx - x0, wy = sy - y0;
      const double v = (1 - wy) * ((1 - wx) * sample(x0, y0) + wx * sample(x0 + 1, y0)) +
                       wy * ((1 - wx) * sample(x0, y0 + 1) + wx * sample(x0 + 1, y0 + 1));
      out.at(x, y) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

GrayImage augment_cell(const GrayImage& img, std::uint64_t seed, const AugmentParams& params) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto chance = [&] { return unit(rng) < params.apply_probability; };
  GrayImage out = img;

  if (params.random_crop && chance()) {
    const double scale = params.crop_min_scale + (1.0 - params.crop_min_scale) * unit(rng);
    const int cw = std::max(1, static_cast<int>(std::round(out.width() * scale)));
    const int ch = std::max(1, static_cast<int>(std::round(out.height() * scale)));
    const int x = static_cast<int>(unit(rng) * (out.width() - cw + 1));
    const int y = static_cast<int>(unit(rng) * (out.height() - ch + 1));
    const GrayImage part = raster::crop(out, {x, y, x + cw - 1, y + ch - 1});
    out = raster::resize_bilinear(part, img.width(), img.height());
  }
  if (params.rotate && chance()) {
    out = rotate(out, (2.0 * unit(rng) - 1.0) * params.max_rotation_deg);
  }
  if (params.horizontal_flip && chance()) out = horizontal_flip(out);
  if (params.vertical_flip && chance()) out = vertical_flip(out);
  if (params.blur && chance()) out = gaussian_blur(out, 0.3 + (params.blur_sigma_max - 0.3) * unit(rng));
  if (params.jitter && chance()) {
    const double contrast = 1.0 + params.jitter_strength * (2.0 * unit(rng) - 1.0);
    const double brightness = 0.5 * params.jitter_strength * (2.0 * unit(rng) - 1.0);
    for (double& v : out.pixels()) v = (v - 0.5) * contrast + 0.5 + brightness;
    out.clamp();
  }
  if (params.noise && chance()) {
    const double sigma = params.noise_sigma_max * unit(rng);
    std::normal_distribution<double> gauss(0.0, sigma > 0 ? sigma : 1e-12);
    for (double& v : out.pixels()) v += gauss(rng);
    out.clamp();
  }
  out.source_id = img.source_id;
  out.dwell_class = img.dwell_class;
  return out;
}

GrayImage cutpaste_view(const GrayImage& img, std::uint64_t seed, PatchPlacement* placement) {
  const int w = img.width(), h = img.height();
  if (w < 16 || h < 16) throw Error("cutpaste needs an image of at least 16x16 pixels");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> area_ratio(0.02, 0.15);
  std::uniform_real_distribution<double> log_aspect(std::log(0.3), std::log(3.3));
  const double area = area_ratio(rng) * w * h;
  const double aspect = std::exp(log_aspect(rng));
  const int pw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, w - 1);
  const int ph = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, h - 1);

  std::uniform_int_distribution<int> px(0, w - pw), py(0, h - ph);
  const int sx = px(rng), sy = py(rng);
  int dx = px(rng), dy = py(rng);
  while (dx == sx && dy == sy) {
    dx = px(rng);
    dy = py(rng);
  }
  GrayImage out = img;
  for (int y = 0; y < ph; ++y) {
    for (int x = 0; x < pw; ++x) out.at(dx + x, dy + y) = img.at(sx + x, sy + y);
  }
  if (placement != nullptr) {
    placement->source = {sx, sy, sx + pw - 1, sy + ph - 1};
    placement->destination = {dx, dy, dx + pw - 1, dy + ph - 1};
  }
  return out;
}

double jsd(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size() || p.empty()) throw Error("jsd: histograms must have the same non-zero bin count");
  auto check = [](const std::vector<double>& h, const char* name) {
    double s = 0.0;
    for (double v : h) {
      if (v < 0.0) throw Error(std::string("jsd: negative mass in ") + name);
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) throw Error(std::string("jsd: ") + name + " is not normalized");
  };
  check(p, "p");
  check(q, "q");
  auto term = [](double a, double m) { return a > 0.0 ? a * std::log2(a / m) : 0.0; };
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    d += 0.5 * term(p[i], m) + 0.5 * term(q[i], m);
  }
  return std::clamp(d, 0.0, 1.0);
}

std::vector<double> pooled_histogram(const std::vector<GrayImage>& images, int bins) {
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  std::size_t total = 0;
  for (const auto& img : images) {
    for (double v : img.pixels()) h[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>(v * bins)))] += 1.0;
    total += img.size();
  }
  if (total == 0) throw Error("pooled histogram of an empty image set");
  for (double& v : h) v /= static_cast<double>(total);
  return h;
}

}  // namespace evha::synthgen
