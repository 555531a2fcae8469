#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "evha/error.hpp"
#include "evha/synthgen.hpp"

using namespace evha;
using namespace evha::synthgen;

namespace {

GrayImage square_cell(std::uint64_t seed) {
  const auto lib = default_library();
  ChipSpec spec;
  spec.rows = 1;
  spec.cells_per_row = 1;
  const auto l = generate_chip(spec, lib, seed);
  const GrayImage img = render_sem(l, DwellClass::DT6, seed);
  return raster::resize_bilinear(raster::crop(img, l.cell_extent(l.cells[0])), 32, 32);
}

double mean_abs_diff(const GrayImage& a, const GrayImage& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.pixels()[i] - b.pixels()[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("chip generation") {
  const auto lib = default_library();
  CHECK(lib.type_names().size() >= 7);
  ChipSpec one;
  one.rows = 1;
  one.cells_per_row = 1;
  CHECK(generate_chip(one, lib, 1).cells.size() == 1);
  CHECK(layout::serialize_layout(generate_chip({}, lib, 9)) == layout::serialize_layout(generate_chip({}, lib, 9)));
  ChipSpec big;
  big.rows = 10;
  big.cells_per_row = 20;
  const auto l = generate_chip(big, lib, 3);
  CHECK(l.cells.size() == 200);
  CHECK_NOTHROW(layout::validate(l));
  big.max_die_width = 100;
  CHECK_THROWS_AS(generate_chip(big, lib, 3), Error);

  // right half repeats the left half's types in reverse
  const auto row = l.cells_in_row(l.rows[0].row_id);
  for (std::size_t i = 0; i < row.size() / 2; ++i) CHECK(row[i]->type_name == row[row.size() - 1 - i]->type_name);
}

TEST_CASE("render noise ordering") {
  const auto lib = default_library();
  double err[3] = {0, 0, 0};
  double db[3] = {0, 0, 0};
  const DwellClass classes[3] = {DwellClass::DT4, DwellClass::DT5, DwellClass::DT6};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto l = generate_chip({}, lib, s);
    const GrayImage clean = render_sem(l, clean_profile(), s);
    for (int k = 0; k < 3; ++k) {
      const GrayImage noisy = render_sem(l, classes[k], s);
      err[k] += mean_abs_diff(noisy, clean);
      db[k] += raster::psnr(noisy, clean);
    }
  }
  CHECK(err[0] > err[1]);
  CHECK(err[1] > err[2]);
  CHECK(db[2] > db[1]);
  CHECK(db[1] > db[0]);

  const auto l = generate_chip({}, lib, 2);
  CHECK(render_sem(l, DwellClass::DT5, 4) == render_sem(l, DwellClass::DT5, 4));
  const GrayImage noiseless = render_sem(l, clean_profile(), 0);
  CHECK(noiseless == gaussian_blur(render_sem(l, NoiseProfile{0, 0, 0, 0.15, 0.80}, 0), 0.7));
}

TEST_CASE("trojan insertion") {
  const auto lib = default_library();
  ChipSpec one;
  one.rows = 1;
  one.cells_per_row = 1;
  const auto single = generate_chip(one, lib, 1);
  const auto del = insert_trojan(single, TrojanKind::Deletion, lib, 1);
  CHECK(del.layout.cells.empty());
  CHECK(del.record.affected_cell_ids == std::vector<int>{single.cells[0].cell_id});

  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto l = generate_chip({}, lib, s);
    const auto add = insert_trojan(l, TrojanKind::Addition, lib, s);
    CHECK(add.layout.cells.size() == l.cells.size() + 1);
    CHECK_NOTHROW(layout::validate(add.layout));

    const auto ch = insert_trojan(l, TrojanKind::Change, lib, s);
    REQUIRE(ch.record.affected_cell_ids.size() == 1);
    const auto* cell = l.find_cell(ch.record.affected_cell_ids[0]);
    const auto extent = l.cell_extent(*cell);
    const auto a = layout::rasterize_layout(l), b = layout::rasterize_layout(ch.layout);
    int inside = 0, outside = 0;
    for (int y = 0; y < l.die_height; ++y)
      for (int x = 0; x < l.die_width; ++x)
        if (a.at(x, y) != b.at(x, y)) (extent.contains(x, y) ? inside : outside)++;
    CHECK(inside > 0);
    CHECK(outside == 0);
    CHECK(ch.layout.cell_extent(*ch.layout.find_cell(cell->cell_id)) == extent);

    const auto rec = trojan_from_json(trojan_to_json(ch.record));
    CHECK(rec.kind == ch.record.kind);
    CHECK(rec.affected_cell_ids == ch.record.affected_cell_ids);
    CHECK(rec.description == ch.record.description);
  }

  // no room anywhere
  ChipSpec tight;
  tight.rows = 1;
  tight.cells_per_row = 2;
  tight.slack = 1;
  auto packed = generate_chip(tight, lib, 0);
  packed.die_width = packed.cells.back().x_left + packed.cells.back().width + 1;
  CHECK_THROWS_AS(insert_trojan(packed, TrojanKind::Addition, lib, 0), Error);
}

TEST_CASE("augmentation") {
  const GrayImage img = square_cell(1);
  CHECK(augment_cell(img, 5, AugmentParams::none()) == img);
  CHECK(vertical_flip(vertical_flip(img)) == img);
  CHECK(horizontal_flip(horizontal_flip(img)) == img);
  CHECK(augment_cell(img, 5, AugmentParams::classifier()) == augment_cell(img, 5, AugmentParams::classifier()));

  const GrayImage flipped = vertical_flip(img);
  CHECK(flipped != img);
  std::vector<double> a(img.pixels().begin(), img.pixels().end()), b(flipped.pixels().begin(), flipped.pixels().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GrayImage out = augment_cell(img, s, AugmentParams::siamese());
    CHECK(out.width() == img.width());
    CHECK(out.height() == img.height());
  }
  CHECK(rotate(img, 0.0) == img);
}

TEST_CASE("cutpaste view") {
  const GrayImage img = square_cell(2);
  for (std::uint64_t s = 0; s < 50; ++s) {
    PatchPlacement p;
    const GrayImage out = cutpaste_view(img, s, &p);
    CHECK(out == cutpaste_view(img, s));
    CHECK(p.source != p.destination);
    CHECK(p.source.width() == p.destination.width());
    const double ratio = static_cast<double>(p.source.area()) / static_cast<double>(img.size());
    CHECK(ratio >= 0.02 - 0.01);
    CHECK(ratio <= 0.15 + 0.01);
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        if (p.destination.contains(x, y)) {
          const int sx = p.source.x1 + (x - p.destination.x1), sy = p.source.y1 + (y - p.destination.y1);
          REQUIRE(out.at(x, y) == img.at(sx, sy));
        } else {
          REQUIRE(out.at(x, y) == img.at(x, y));
        }
      }
    }
  }
  CHECK_THROWS_AS(cutpaste_view(GrayImage(15, 20, 0.5), 1), Error);
}

TEST_CASE("jensen-shannon divergence") {
  const std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
  CHECK(jsd(p, p) == 0.0);
  CHECK(jsd({1.0, 0.0}, {0.0, 1.0}) == doctest::Approx(1.0).epsilon(1e-15));
  // H(M) - (H(p) + H(q)) / 2 with M = (3/4, 1/4)
  CHECK(jsd(p, q) == doctest::Approx(1.5 - 0.75 * std::log2(3.0)).epsilon(1e-12));
  const std::vector<double> r{0.1, 0.2, 0.7}, t{0.3, 0.3, 0.4};
  CHECK(std::abs(jsd(r, t) - jsd(t, r)) < 1e-12);
  CHECK_THROWS_AS(jsd({0.5, 0.5}, {1.0}), Error);
  CHECK_THROWS_AS(jsd({0.5, 0.6}, {0.5, 0.5}), Error);

  const auto h = pooled_histogram({square_cell(1), square_cell(2)}, 64);
  CHECK(h.size() == 64);
  double sum = 0.0;
  for (double v : h) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}
