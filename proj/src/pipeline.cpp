#include "evha/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "evha/error.hpp"
#include "evha/seed.hpp"

namespace evha::pipeline {

namespace {

// Stream identifiers for derive_seed; keep them distinct.
constexpr std::uint64_t kCorpusStream = 1;
constexpr std::uint64_t kClassifierStream = 2;
constexpr std::uint64_t kAnomalyStream = 3;
constexpr std::uint64_t kDenoiserStream = 4;

raster::DwellClass dwell_of(const config::Config& cfg, const std::string& key) {
  return raster::dwell_from_string(cfg.raw(key));
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

synthgen::ChipSpec chip_spec(const config::Config& cfg) {
  synthgen::ChipSpec s;
  s.rows = cfg.get_int("gen.rows");
  s.cells_per_row = cfg.get_int("gen.cells_per_row");
  return s;
}

corpus::PrepareConfig prepare_config(const config::Config& cfg) {
  corpus::PrepareConfig p;
  p.nlm.patch_radius = cfg.get_int("nlm.patch_radius");
  p.nlm.search_radius = cfg.get_int("nlm.search_radius");
  p.nlm.h_factor = cfg.get_double("nlm.h_factor");
  p.nlm.h = cfg.get_auto_double("nlm.h");
  p.threshold = cfg.get_auto_double("threshold");
  p.detect.min_component_px = cfg.get_int("detect.min_component_px");
  p.detect.gap_threshold = cfg.get_auto_double("detect.gap_threshold");
  return p;
}

void write_chip(const fs::path& chip_dir, const layout::Layout& golden, const synthgen::TrojanResult* trojan,
                std::uint64_t render_seed) {
  fs::create_directories(chip_dir);
  layout::save_layout(golden, chip_dir / "golden.layout");
  const layout::Layout& fab = trojan ? trojan->layout : golden;
  if (trojan) {
    layout::save_layout(trojan->layout, chip_dir / "trojan.layout");
    write_text(chip_dir / "trojan.json", synthgen::trojan_to_json(trojan->record));
  }
  for (auto d : {raster::DwellClass::DT4, raster::DwellClass::DT5, raster::DwellClass::DT6}) {
    raster::save_pgm(synthgen::render_sem(fab, d, derive_seed(render_seed, static_cast<std::uint64_t>(d))),
                     chip_dir / (raster::to_string(d) + ".pgm"));
  }
}

std::vector<ChipEntry> generate_corpus(const fs::path& dir, const config::Config& cfg) {
  const auto lib = synthgen::default_library();
  const auto spec = chip_spec(cfg);
  const std::uint64_t seed = cfg.get_u64("seed");
  const int n = cfg.get_int("gen.chips_per_kind");
  std::vector<ChipEntry> out;
  const std::optional<synthgen::TrojanKind> kinds[] = {std::nullopt, synthgen::TrojanKind::Addition,
                                                       synthgen::TrojanKind::Deletion, synthgen::TrojanKind::Change};
  for (std::size_t k = 0; k < 4; ++k) {
    for (int i = 0; i < n; ++i) {
      const std::string name = (kinds[k] ? synthgen::to_string(*kinds[k]) : std::string("clean"));
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03d", name.c_str(), i);
      const auto golden = synthgen::generate_chip(spec, lib, derive_seed(seed, kCorpusStream, k * 100000 + i));
      std::optional<synthgen::TrojanResult> t;
      if (kinds[k]) t = synthgen::insert_trojan(golden, *kinds[k], lib, derive_seed(seed, kCorpusStream + 10, k * 100000 + i));
      write_chip(dir / id, golden, t ? &*t : nullptr, derive_seed(seed, kCorpusStream + 20, k * 100000 + i));
      out.push_back({id, kinds[k]});
    }
  }
  return out;
}

ChipReports process_chip(const raster::GrayImage& sem, const layout::Layout& golden, const Models& models,
                         const config::Config& cfg) {
  if (!models.classifier || !models.anomaly) throw Error("the pipeline needs classifier and anomaly models");
  ChipReports r;
  r.prepared = corpus::prepare_chip(sem, prepare_config(cfg), models.denoiser ? &*models.denoiser : nullptr);

  std::set<std::string> types;
  for (const auto& c : golden.cells) types.insert(c.type_name);
  std::vector<recognize::RecognitionInput> inputs;
  for (std::size_t i = 0; i < r.prepared.cells.size(); ++i) {
    inputs.push_back({static_cast<int>(i), r.prepared.cells[i].box, r.prepared.cells[i].image});
  }
  const double threshold = cfg.get_auto_double("anomaly_threshold").value_or(models.anomaly->threshold);
  r.recognition = recognize::recognize_cells(inputs, *models.classifier, models.anomaly->model, models.anomaly->p_c,
                                             threshold, {types.begin(), types.end()});
  analyze::AnalyzeConfig ac;
  ac.iou_threshold = cfg.get_double("iou_threshold");
  ac.min_region_px = cfg.get_int("analyze.min_region_px");
  r.analysis = analyze::analyze_chip(r.prepared.cells, r.prepared.mask, golden, ac);
  decide::DecideConfig dc;
  dc.min_confidence = cfg.get_double("min_confidence");
  r.verdict = decide::decide_verdict(r.recognition, r.analysis, dc, threshold);
  return r;
}

std::vector<std::string> missing_inputs(const fs::path& chip_dir, const config::Config& cfg) {
  std::vector<std::string> missing;
  for (const fs::path& p : {chip_dir / "golden.layout", chip_dir / (cfg.raw("dwell") + ".pgm")}) {
    if (!fs::exists(p)) missing.push_back(p.string());
  }
  return missing;
}

namespace {

void require_inputs(const fs::path& chip_dir, const config::Config& cfg) {
  const auto missing = missing_inputs(chip_dir, cfg);
  if (missing.empty()) return;
  std::string msg = "missing inputs:";
  for (const auto& m : missing) msg += " " + m;
  throw Error(msg);
}

}  // namespace

ChipReports run_pipeline(const fs::path& chip_dir, const Models& models, const config::Config& cfg) {
  require_inputs(chip_dir, cfg);
  const auto golden = layout::load_layout(chip_dir / "golden.layout");
  const auto sem = raster::load_pgm(chip_dir / (cfg.raw("dwell") + ".pgm"));
  ChipReports r = process_chip(sem, golden, models, cfg);
  write_text(chip_dir / "recognition.json", recognize::report_to_json(r.recognition));
  write_text(chip_dir / "analysis.json", analyze::report_to_json(r.analysis));
  write_text(chip_dir / "verdict.json", decide::verdict_to_json(r.verdict));
  write_text(chip_dir / "verdict.txt", decide::verdict_summary(r.verdict));
  return r;
}

analyze::AnalysisReport run_analysis(const fs::path& chip_dir, const config::Config& cfg,
                                     const nn::Network* denoiser) {
  require_inputs(chip_dir, cfg);
  const auto golden = layout::load_layout(chip_dir / "golden.layout");
  const auto prep = corpus::prepare_chip(raster::load_pgm(chip_dir / (cfg.raw("dwell") + ".pgm")),
                                         prepare_config(cfg), denoiser);
  analyze::AnalyzeConfig ac;
  ac.iou_threshold = cfg.get_double("iou_threshold");
  ac.min_region_px = cfg.get_int("analyze.min_region_px");
  auto rep = analyze::analyze_chip(prep.cells, prep.mask, golden, ac);
  write_text(chip_dir / "analysis.json", analyze::report_to_json(rep));
  return rep;
}

std::vector<corpus::HarvestedCell> harvest(const config::Config& cfg, int per_class, std::uint64_t stream) {
  corpus::HarvestConfig hc;
  hc.spec = chip_spec(cfg);
  hc.dwell = dwell_of(cfg, "dwell");
  hc.prepare = prepare_config(cfg);
  hc.per_class = per_class;
  hc.seed = derive_seed(cfg.get_u64("seed"), stream);
  return corpus::harvest_cells(synthgen::default_library(), hc);
}

recognize::ClassifierTraining train_classifier(const config::Config& cfg) {
  const auto names = synthgen::default_library().type_names();
  std::vector<recognize::LabeledImage> data;
  for (auto& c : harvest(cfg, cfg.get_int("train.cls.per_class"), kClassifierStream)) {
    const int label = static_cast<int>(std::find(names.begin(), names.end(), c.type_name) - names.begin());
    data.push_back({std::move(c.image), label});
  }
  recognize::ClassifierConfig cc;
  cc.epochs = cfg.get_int("train.cls.epochs");
  cc.batch = cfg.get_int("train.cls.batch");
  cc.lr = cfg.get_double("train.cls.lr");
  cc.input_side = cfg.get_int("train.cls.input_side");
  cc.seed = derive_seed(cfg.get_u64("seed"), kClassifierStream, 1);
  return recognize::train_classifier(data, names, cc);
}

AnomalyRun train_anomaly(const config::Config& cfg) {
  auto cells = harvest(cfg, cfg.get_int("train.anm.per_class"), kAnomalyStream);
  const std::uint64_t seed = derive_seed(cfg.get_u64("seed"), kAnomalyStream, 1);
  std::vector<std::size_t> order(cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(seed, 1));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_held = std::max<std::size_t>(1, cells.size() / 5);
  AnomalyRun run;
  std::vector<raster::GrayImage> train;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_held ? run.held_out : train).push_back(std::move(cells[order[k]].image));
  }
  const int side = cfg.get_int("train.anm.input_side");
  if (side % 16 != 0) throw config::ConfigError("train.anm.input_side must be a multiple of 16");
  const auto init = recognize::make_anomaly_model(derive_seed(seed, 2), side, cfg.get_double("train.anm.lambda1"),
                                                  cfg.get_double("train.anm.lambda2"));
  recognize::AnomalyConfig ac;
  ac.epochs = cfg.get_int("train.anm.epochs");
  ac.warmup_epochs = cfg.get_int("train.anm.warmup");
  ac.batch = cfg.get_int("train.anm.batch");
  ac.lr = cfg.get_double("train.anm.lr");
  ac.seed = derive_seed(seed, 3);
  auto trained = recognize::train_anomaly(train, init, ac);
  run.log = trained.log;
  run.bundle.model = std::move(trained.model);
  run.bundle.p_c = recognize::mean_clean_prediction(run.bundle.model, train);
  std::vector<double> scores;
  for (const auto& img : run.held_out) scores.push_back(recognize::anomaly_score(run.bundle.model, run.bundle.p_c, img));
  run.bundle.threshold =
      recognize::calibrate_threshold(scores, cfg.get_double("anomaly.quantile"), cfg.get_double("anomaly.margin"));
  return run;
}

std::vector<denoiser::NoisePair> noise_pairs(int scenes, raster::DwellClass input, std::uint64_t seed) {
  const auto lib = synthgen::default_library();
  std::vector<denoiser::NoisePair> out;
  for (int s = 0; s < scenes; ++s) {
    synthgen::ChipSpec spec;
    spec.rows = 1 + s % 2;
    spec.cells_per_row = 4;
    const auto l = synthgen::generate_chip(spec, lib, derive_seed(seed, 1, s));
    char id[32];
    std::snprintf(id, sizeof id, "scene_%03d", s);
    auto in = synthgen::render_sem(l, input, derive_seed(seed, 2, s));
    auto target = synthgen::render_sem(l, raster::DwellClass::DT6, derive_seed(seed, 3, s));
    out.push_back({std::move(in), std::move(target), id});
  }
  return out;
}

denoiser::DenoiserTraining train_denoiser(const config::Config& cfg) {
  const std::uint64_t seed = derive_seed(cfg.get_u64("seed"), kDenoiserStream);
  const auto pairs = noise_pairs(cfg.get_int("train.dn.scenes"), dwell_of(cfg, "train.dn.input"), seed);
  denoiser::DenoiserConfig dc;
  dc.epochs = cfg.get_int("train.dn.epochs");
  dc.lr = cfg.get_double("train.dn.lr");
  dc.batch = cfg.get_int("train.dn.batch");
  dc.patch = cfg.get_int("train.dn.patch");
  dc.patches_per_scene = cfg.get_int("train.dn.patches_per_scene");
  dc.seed = derive_seed(seed, 9);
  return denoiser::train_denoiser(pairs, denoiser::loss_from_string(cfg.raw("train.dn.loss")), dc);
}

}  // namespace evha::pipeline
