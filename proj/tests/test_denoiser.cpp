#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "evha/denoiser.hpp"
#include "evha/error.hpp"
#include "evha/seed.hpp"

using namespace evha;
using namespace evha::denoiser;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Blocky target with additive Gaussian noise on the input.
NoisePair make_pair(int w, int h, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  NoisePair p{raster::GrayImage(w, h), raster::GrayImage(w, h), "scene" + std::to_string(seed)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double t = ((x / 6 + y / 8) % 2) ? 0.8 : 0.15;
      p.target.at(x, y) = t;
      p.input.at(x, y) = std::clamp(t + g(rng), 0.0, 1.0);
    }
  return p;
}

}  // namespace

TEST_CASE("loss identities") {
  const auto f = random_values(200, 1), y = random_values(200, 2);
  CHECK(std::abs(objective(LossKind::L0, f, y, 0.0, 2.0) - objective(LossKind::L2, f, y, 0.0, 0.0)) <= 1e-12);
  CHECK(std::abs(objective(LossKind::L0, f, y, 0.0, 1.0) - objective(LossKind::L1, f, y, 0.0, 0.0)) <= 1e-12);
  CHECK(objective(LossKind::L2, f, f, 0.0, 0.0) == 0.0);
  CHECK(objective(LossKind::L0, f, y, 1e-8, 0.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(objective(LossKind::L1, f, {}, 0.0, 0.0), Error);
}

TEST_CASE("gamma schedule") {
  CHECK(gamma_at(0, 5) == 2.0);
  CHECK(gamma_at(4, 5) == 0.0);
  CHECK(gamma_at(2, 5) == doctest::Approx(1.0));
  CHECK(gamma_at(0, 1) == 2.0);
  for (int e = 1; e < 10; ++e) CHECK(gamma_at(e, 10) < gamma_at(e - 1, 10));
}

TEST_CASE("loss names") {
  CHECK(loss_from_string("l0") == LossKind::L0);
  CHECK(loss_from_string("L2") == LossKind::L2);
  CHECK(to_string(LossKind::L1) == "l1");
  CHECK_THROWS_AS(loss_from_string("l3"), Error);
}

TEST_CASE("network shape and zero weights") {
  nn::Network m = make_denoiser(3);
  CHECK(m.output_shape({1, 24, 40}) == nn::Shape{1, 24, 40});
  for (auto& p : m.parameters()) std::fill(p.value.values().begin(), p.value.values().end(), 0.0);
  const std::size_t last = m.layers().size() - 1;
  m.param("L" + std::to_string(last) + ".b")[0] = 0.3;
  raster::GrayImage img(37, 19);  // not a multiple of 8
  for (double& v : img.pixels()) v = 0.7;
  const auto out = apply_denoiser(m, img);
  CHECK(out.width() == 37);
  CHECK(out.height() == 19);
  for (double v : out.pixels()) CHECK(v == 0.3);

  m.param("L" + std::to_string(last) + ".b")[0] = 4.0;
  const auto clamped = apply_denoiser(m, img);
  for (double v : clamped.pixels()) CHECK(v == 1.0);
}

TEST_CASE("scene split") {
  std::vector<NoisePair> pairs;
  for (int s = 0; s < 20; ++s)
    for (int k = 0; k < 2; ++k) {
      auto p = make_pair(16, 16, 0.1, derive_seed(1, s, k));
      p.scene_id = "s" + std::to_string(s);
      pairs.push_back(p);
    }
  const auto [train, val] = split_by_scene(pairs, 0.15, 4);
  CHECK(train.size() + val.size() == pairs.size());
  CHECK(val.size() == 6);  // 3 of 20 scenes, two pairs each
  std::set<std::string> ts, vs;
  for (const auto& p : train) ts.insert(p.scene_id);
  for (const auto& p : val) vs.insert(p.scene_id);
  for (const auto& s : vs) CHECK(ts.count(s) == 0);
}

TEST_CASE("training") {
  std::vector<NoisePair> pairs;
  for (int s = 0; s < 8; ++s) pairs.push_back(make_pair(24, 24, 0.12, 10 + s));
  DenoiserConfig cfg;
  cfg.epochs = 6;
  cfg.patch = 16;
  cfg.patches_per_scene = 4;
  cfg.batch = 4;
  cfg.val_fraction = 0.25;

  SUBCASE("L2 improves validation PSNR and is reproducible") {
    const auto r = train_denoiser(pairs, LossKind::L2, cfg);
    CHECK(r.val.size() == 2);
    CHECK(r.val_psnr.size() == 6);
    CHECK(r.val_psnr.back() > r.initial_val_psnr);
    const auto again = train_denoiser(pairs, LossKind::L2, cfg);
    CHECK(again.val_psnr == r.val_psnr);
  }
  SUBCASE("L0 and L1 run") {
    CHECK(train_denoiser(pairs, LossKind::L0, cfg).val_psnr.size() == 6);
    CHECK(train_denoiser(pairs, LossKind::L1, cfg).val_psnr.size() == 6);
  }
  SUBCASE("mismatched pair names its scene") {
    auto bad = pairs;
    bad[3].target = raster::GrayImage(10, 10);
    try {
      train_denoiser(bad, LossKind::L2, cfg);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(bad[3].scene_id) != std::string::npos);
    }
  }
  SUBCASE("guards") {
    CHECK_THROWS_AS(train_denoiser({pairs[0]}, LossKind::L2, cfg), Error);
    cfg.patch = 12;
    CHECK_THROWS_AS(train_denoiser(pairs, LossKind::L2, cfg), Error);
  }
}

TEST_CASE("psnr helpers and checkpoint") {
  const auto p = make_pair(16, 16, 0.1, 3);
  CHECK(raw_psnr({p}) == raster::psnr(p.input, p.target));
  CHECK_THROWS_AS(raw_psnr({}), Error);

  const nn::Network m = make_denoiser(5, 4);
  const auto path = std::filesystem::temp_directory_path() / "evha_dn.ckpt";
  save_denoiser(m, LossKind::L0, path);
  const nn::Network back = load_denoiser(path);
  CHECK(raster::mse(apply_denoiser(back, p.input), apply_denoiser(m, p.input)) == 0.0);
  std::filesystem::remove(path);
}
