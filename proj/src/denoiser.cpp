#include "evha/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "evha/error.hpp"
#include "evha/seed.hpp"

namespace evha::denoiser {

using nn::LayerSpec;
using nn::Tape;
using nn::Tensor;
using nn::Var;

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::L0: return "l0";
    case LossKind::L1: return "l1";
    case LossKind::L2: return "l2";
  }
  return "?";
}

LossKind loss_from_string(const std::string& s) {
  if (s == "l0" || s == "L0") return LossKind::L0;
  if (s == "l1" || s == "L1") return LossKind::L1;
  if (s == "l2" || s == "L2") return LossKind::L2;
  throw Error("unknown loss '" + s + "' (expected l0, l1 or l2)");
}

nn::Network make_denoiser(std::uint64_t seed, int base_channels) {
  const int c = base_channels;
  if (c <= 0) throw Error("denoiser channel count must be positive");
  return nn::Network({1, -1, -1},
                     {LayerSpec::conv(c),          LayerSpec::relu(),
                      LayerSpec::save(0),          LayerSpec::maxpool(),
                      LayerSpec::conv(2 * c),      LayerSpec::relu(),
                      LayerSpec::save(1),          LayerSpec::maxpool(),
                      LayerSpec::conv(4 * c),      LayerSpec::relu(),
                      LayerSpec::save(2),          LayerSpec::maxpool(),
                      LayerSpec::conv(4 * c),      LayerSpec::relu(),
                      LayerSpec::upsample(),       LayerSpec::concat_saved(2),
                      LayerSpec::conv(4 * c),      LayerSpec::relu(),
                      LayerSpec::upsample(),       LayerSpec::concat_saved(1),
                      LayerSpec::conv(2 * c),      LayerSpec::relu(),
                      LayerSpec::upsample(),       LayerSpec::concat_saved(0),
                      LayerSpec::conv(c),          LayerSpec::relu(),
                      LayerSpec::conv(1, 1)},
                     seed);
}

double gamma_at(int epoch, int epochs) {
  if (epochs <= 1) return 2.0;
  return 2.0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(epochs - 1));
}

double objective(LossKind kind, const std::vector<double>& f, const std::vector<double>& y, double epsilon,
                 double gamma) {
  if (f.size() != y.size() || f.empty()) throw Error("objective needs equal, non-empty vectors");
  Tape t;
  const Var p = t.input(Tensor({static_cast<int>(f.size())}, f));
  const Tensor target({static_cast<int>(y.size())}, y);
  switch (kind) {
    case LossKind::L0: return t.value(t.power_loss(p, target, epsilon, gamma))[0];
    case LossKind::L1: return t.value(t.l1_loss(p, target))[0];
    case LossKind::L2: return t.value(t.mse_loss(p, target))[0];
  }
  return 0.0;
}

namespace {

Tensor image_tensor(const GrayImage& img) {
  return Tensor({1, img.height(), img.width()}, std::vector<double>(img.pixels().begin(), img.pixels().end()));
}

GrayImage mirror_pad(const GrayImage& img, int w, int h) {
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(x, y) = img.at(raster::mirror_index(x, img.width()), raster::mirror_index(y, img.height()));
  return out;
}

void check_pair(const NoisePair& p) {
  if (p.input.width() != p.target.width() || p.input.height() != p.target.height()) {
    throw Error("scene '" + p.scene_id + "' has mismatched input and target dimensions");
  }
}

Var loss_var(Tape& t, LossKind kind, Var pred, const Tensor& target, double epsilon, double gamma) {
  switch (kind) {
    case LossKind::L0: return t.power_loss(pred, target, epsilon, gamma);
    case LossKind::L1: return t.l1_loss(pred, target);
    case LossKind::L2: return t.mse_loss(pred, target);
  }
  throw Error("unknown loss kind");
}

}  // namespace

std::pair<std::vector<NoisePair>, std::vector<NoisePair>> split_by_scene(const std::vector<NoisePair>& pairs,
                                                                        double val_fraction, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> scenes;
  for (std::size_t i = 0; i < pairs.size(); ++i) scenes[pairs[i].scene_id].push_back(i);
  std::vector<std::string> ids;
  for (const auto& [id, _] : scenes) ids.push_back(id);
  std::mt19937_64 rng(derive_seed(seed, 11));
  std::shuffle(ids.begin(), ids.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(ids.size())));
  if (ids.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, ids.size() - 1);
  std::pair<std::vector<NoisePair>, std::vector<NoisePair>> out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    for (std::size_t i : scenes[ids[k]]) (k < n_val ? out.second : out.first).push_back(pairs[i]);
  }
  return out;
}

GrayImage apply_denoiser(const nn::Network& m, const GrayImage& img) {
  const int w = (img.width() + 7) / 8 * 8, h = (img.height() + 7) / 8 * 8;
  const GrayImage padded = (w == img.width() && h == img.height()) ? img : mirror_pad(img, w, h);
  const Tensor out = nn::predict(m, image_tensor(padded));
  GrayImage res(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      res.at(x, y) = std::clamp(out[static_cast<std::size_t>(y) * w + x], 0.0, 1.0);
  res.source_id = img.source_id;
  return res;
}

double evaluate_psnr(const nn::Network& m, const std::vector<NoisePair>& data) {
  if (data.empty()) throw Error("PSNR evaluation needs at least one pair");
  double s = 0.0;
  for (const auto& p : data) {
    check_pair(p);
    s += raster::psnr(apply_denoiser(m, p.input), p.target);
  }
  return s / static_cast<double>(data.size());
}

double raw_psnr(const std::vector<NoisePair>& data) {
  if (data.empty()) throw Error("PSNR evaluation needs at least one pair");
  double s = 0.0;
  for (const auto& p : data) s += raster::psnr(p.input, p.target);
  return s / static_cast<double>(data.size());
}

DenoiserTraining train_denoiser(const std::vector<NoisePair>& pairs, LossKind kind, const DenoiserConfig& cfg) {
  if (pairs.size() < 2) throw Error("denoiser training needs at least two pairs");
  if (cfg.patch < 8 || cfg.patch % 8 != 0) throw Error("patch side must be a positive multiple of 8");
  if (cfg.epochs < 0 || cfg.batch <= 0 || cfg.patches_per_scene <= 0 || !(cfg.lr > 0.0)) {
    throw Error("denoiser config out of range");
  }
  for (const auto& p : pairs) check_pair(p);

  DenoiserTraining out;
  std::tie(out.train, out.val) = split_by_scene(pairs, cfg.val_fraction, cfg.seed);
  out.model = make_denoiser(derive_seed(cfg.seed, 12), cfg.base_channels);
  out.raw_val_psnr = raw_psnr(out.val);
  out.initial_val_psnr = evaluate_psnr(out.model, out.val);

  std::mt19937_64 rng(derive_seed(cfg.seed, 13));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double gamma = gamma_at(epoch, cfg.epochs);
    // draw this epoch's crops up front so the sample stream does not depend on batching
    struct Crop {
      std::size_t pair;
      int x, y;
    };
    std::vector<Crop> crops;
    for (std::size_t i = 0; i < out.train.size(); ++i) {
      const GrayImage& in = out.train[i].input;
      const int pw = std::min(cfg.patch, in.width() / 8 * 8), ph = std::min(cfg.patch, in.height() / 8 * 8);
      if (pw < 8 || ph < 8) throw Error("scene '" + out.train[i].scene_id + "' is smaller than 8x8");
      for (int k = 0; k < cfg.patches_per_scene; ++k) {
        std::uniform_int_distribution<int> ux(0, in.width() - pw), uy(0, in.height() - ph);
        crops.push_back({i, ux(rng), uy(rng)});
      }
    }
    std::shuffle(crops.begin(), crops.end(), rng);
    for (std::size_t start = 0; start < crops.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(crops.size(), start + static_cast<std::size_t>(cfg.batch));
      nn::Gradients g = nn::zero_gradients(out.model);
      for (std::size_t j = start; j < end; ++j) {
        const NoisePair& p = out.train[crops[j].pair];
        const int pw = std::min(cfg.patch, p.input.width() / 8 * 8), ph = std::min(cfg.patch, p.input.height() / 8 * 8);
        const raster::BoundingBox box{crops[j].x, crops[j].y, crops[j].x + pw - 1, crops[j].y + ph - 1};
        Tape t;
        const Var pred = nn::forward(t, out.model, t.input(image_tensor(raster::crop(p.input, box)))).output;
        const Var l = loss_var(t, kind, pred, image_tensor(raster::crop(p.target, box)), cfg.epsilon, gamma);
        t.backward(l);
        nn::accumulate(g, t, out.model, 1.0 / static_cast<double>(end - start));
      }
      nn::sgd_step(out.model, g, cfg.lr);
    }
    out.val_psnr.push_back(evaluate_psnr(out.model, out.val));
  }
  return out;
}

void save_denoiser(const nn::Network& m, LossKind kind, const std::filesystem::path& path) {
  nn::Checkpoint c;
  c.metadata["kind"] = "denoiser";
  c.metadata["loss"] = to_string(kind);
  c.metadata["base_channels"] = std::to_string(m.parameters().front().value.dim(0));
  c.networks.emplace("denoiser", m);
  nn::save_checkpoint(c, path);
}

nn::Network load_denoiser(const std::filesystem::path& path) {
  const nn::Checkpoint c = nn::load_checkpoint(path, [&](const std::map<std::string, std::string>& md) {
    auto kind = md.find("kind");
    auto ch = md.find("base_channels");
    if (kind == md.end() || kind->second != "denoiser" || ch == md.end()) {
      throw Error(path.string() + " is not a denoiser checkpoint");
    }
    return std::map<std::string, nn::Network>{{"denoiser", make_denoiser(0, std::stoi(ch->second))}};
  });
  return c.networks.at("denoiser");
}

}  // namespace evha::denoiser
