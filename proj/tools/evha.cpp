// evha: corpus generation, training, per-chip analysis and verdicts.
// Exit codes: 0 success, 1 a verdict found the chip defective, 2 error.

#include <atomic>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "evha/blockdetect.hpp"
#include "evha/pipeline.hpp"

using namespace evha;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
};

config::Config load_config(const Common& c) {
  config::Config cfg;
  if (!c.config_file.empty()) cfg.apply_file(c.config_file);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw config::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (c.jobs) cfg.set("jobs", std::to_string(*c.jobs));
  return cfg;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Config snapshot, seed and checkpoint hashes; enough to replay the run.
void write_manifest(const fs::path& dir, const std::string& command, const config::Config& cfg,
                    const std::vector<fs::path>& checkpoints) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["seed"] = cfg.get_u64("seed");
  j["config"] = cfg.to_text();
  j["checkpoints"] = nlohmann::ordered_json::object();
  for (const auto& p : checkpoints) {
    if (fs::exists(p)) j["checkpoints"][p.filename().string()] = hex64(nn::fnv1a(nn::read_file_bytes(p)));
  }
  fs::create_directories(dir);
  pipeline::write_text(dir / "manifest.json", j.dump(2) + "\n");
}

fs::path dir_of(const fs::path& file) { return file.has_parent_path() ? file.parent_path() : fs::path("."); }

pipeline::Models load_models(const fs::path& dir, bool need_learned) {
  pipeline::Models m;
  const fs::path cls = dir / "classifier.ckpt", anm = dir / "anomaly.ckpt", dn = dir / "denoiser.ckpt";
  if (need_learned) {
    std::vector<std::string> missing;
    for (const auto& p : {cls, anm}) {
      if (!fs::exists(p)) missing.push_back(p.string());
    }
    if (!missing.empty()) {
      std::string msg = "missing checkpoints:";
      for (const auto& s : missing) msg += " " + s;
      throw Error(msg);
    }
    m.classifier = recognize::load_classifier(cls);
    m.anomaly = recognize::load_anomaly(anm);
  }
  if (fs::exists(dn)) m.denoiser = denoiser::load_denoiser(dn);
  return m;
}

// Chip directories under `root`, or `root` itself when it is one.
std::vector<fs::path> chip_dirs(const fs::path& root) {
  if (fs::exists(root / "golden.layout")) return {root};
  std::vector<fs::path> out;
  if (fs::is_directory(root)) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.is_directory() && fs::exists(e.path() / "golden.layout")) out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error("no chip directories under " + root.string());
  return out;
}

// Runs the pipeline on every chip with up to `jobs` workers; returns the
// number of defective chips. Output order is fixed by the sorted chip list.
int verdict_all(const std::vector<fs::path>& chips, const pipeline::Models& models, const config::Config& cfg) {
  for (const auto& c : chips) {
    const auto missing = pipeline::missing_inputs(c, cfg);
    if (!missing.empty()) throw Error("missing input " + missing.front());
  }
  std::vector<std::string> lines(chips.size());
  std::vector<int> defective(chips.size(), 0);
  std::vector<std::string> errors(chips.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < chips.size();) {
      try {
        const auto r = pipeline::run_pipeline(chips[i], models, cfg);
        defective[i] = r.verdict.status != decide::ChipStatus::Clean;
        lines[i] = chips[i].filename().string() + ": " + decide::to_string(r.verdict.status) + " (" +
                   std::to_string(r.verdict.evidence.size()) + " evidence)";
      } catch (const std::exception& e) {
        errors[i] = chips[i].string() + ": " + e.what();
      }
    }
  };
  const int jobs = std::min<int>(cfg.get_int("jobs"), static_cast<int>(chips.size()));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) throw Error(e);
  }
  int n = 0;
  for (std::size_t i = 0; i < chips.size(); ++i) {
    std::cout << lines[i] << "\n";
    n += defective[i];
  }
  return n;
}

void add_common(CLI::App* app, Common& c, bool with_out = true, bool out_required = true) {
  app->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "override one config key (key=value)");
  app->add_option("--seed", c.seed, "base seed");
  app->add_option("--jobs", c.jobs, "chips processed concurrently");
  if (with_out) {
    auto* o = app->add_option("--out", c.out, "output path");
    if (out_required) o->required();
  }
}

int run(int argc, char** argv) {
  CLI::App app{"evha: SEM-based hardware Trojan detection on synthetic chips"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("gen", "generate a chip corpus");
  add_common(gen, c);

  std::string layout_path, dwell = "dt6", kind;
  auto* render = app.add_subcommand("render", "render a layout as a noisy SEM image");
  add_common(render, c);
  render->add_option("--layout", layout_path, "layout file")->required()->check(CLI::ExistingFile);
  render->add_option("--dwell", dwell, "dt4, dt5 or dt6");

  auto* trojan = app.add_subcommand("trojan", "insert a Trojan into a layout");
  add_common(trojan, c);
  trojan->add_option("--layout", layout_path, "golden layout")->required()->check(CLI::ExistingFile);
  trojan->add_option("--kind", kind, "addition, deletion or change")->required();

  std::string image_path;
  auto* extract = app.add_subcommand("extract", "preprocess an SEM image and extract cells");
  add_common(extract, c);
  extract->add_option("--image", image_path, "SEM image (PGM)")->required()->check(CLI::ExistingFile);

  auto* train_cls = app.add_subcommand("train-cls", "train the cell classifier");
  add_common(train_cls, c);
  auto* train_anm = app.add_subcommand("train-anm", "train the anomaly detector");
  add_common(train_anm, c);
  std::string loss;
  auto* train_dn = app.add_subcommand("train-dn", "train the learned denoiser");
  add_common(train_dn, c);
  train_dn->add_option("--loss", loss, "l0, l1 or l2");

  std::string chip, models_dir = ".";
  auto* analyze_cmd = app.add_subcommand("analyze", "count and IOU analysis of chip directories");
  add_common(analyze_cmd, c, false);
  analyze_cmd->add_option("--chip", chip, "chip directory or corpus")->required();
  analyze_cmd->add_option("--models", models_dir, "directory holding denoiser.ckpt (optional)");

  auto* verdict = app.add_subcommand("verdict", "full pipeline and verdict for chip directories");
  add_common(verdict, c, false);
  verdict->add_option("--chip", chip, "chip directory or corpus")->required();
  verdict->add_option("--models", models_dir, "directory holding the checkpoints");

  auto* all = app.add_subcommand("all", "generate, train and judge a corpus");
  add_common(all, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;  // --help succeeds; usage errors share the error code
  }
  if (!loss.empty()) c.overrides.push_back("train.dn.loss=" + loss);
  const config::Config cfg = load_config(c);
  const fs::path out = c.out;

  if (gen->parsed()) {
    for (const auto& e : pipeline::generate_corpus(out, cfg)) std::cout << e.chip_id << "\n";
    write_manifest(out, "gen", cfg, {});
    return 0;
  }
  if (render->parsed()) {
    const auto l = layout::load_layout(layout_path);
    raster::save_pgm(synthgen::render_sem(l, raster::dwell_from_string(dwell), cfg.get_u64("seed")), out);
    write_manifest(dir_of(out), "render", cfg, {});
    return 0;
  }
  if (trojan->parsed()) {
    const auto t = synthgen::insert_trojan(layout::load_layout(layout_path), synthgen::trojan_from_string(kind),
                                           synthgen::default_library(), cfg.get_u64("seed"));
    fs::create_directories(out);
    layout::save_layout(t.layout, out / "trojan.layout");
    pipeline::write_text(out / "trojan.json", synthgen::trojan_to_json(t.record));
    write_manifest(out, "trojan", cfg, {});
    std::cout << t.record.description << "\n";
    return 0;
  }
  if (extract->parsed()) {
    const auto prep = corpus::prepare_chip(raster::load_pgm(image_path), pipeline::prepare_config(cfg));
    fs::create_directories(out);
    raster::save_pgm(prep.denoised, out / "denoised.pgm");
    raster::save_pgm(prep.mask, out / "mask.pgm");
    nlohmann::ordered_json j;
    j["threshold"] = prep.threshold;
    j["cells"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < prep.cells.size(); ++i) {
      const auto& cell = prep.cells[i];
      char name[32];
      std::snprintf(name, sizeof name, "cell_%03zu.pgm", i);
      raster::save_pgm(cell.image, out / name);
      j["cells"].push_back({{"id", i},
                            {"row", cell.row_index},
                            {"box", {cell.box.x1, cell.box.y1, cell.box.x2, cell.box.y2}},
                            {"image", name}});
    }
    pipeline::write_text(out / "cells.json", j.dump(2) + "\n");
    write_manifest(out, "extract", cfg, {});
    std::cout << prep.cells.size() << " cells\n";
    return 0;
  }
  if (train_cls->parsed()) {
    const auto r = pipeline::train_classifier(cfg);
    for (const auto& e : r.log) {
      std::printf("epoch %d loss %.4f train_acc %.4f val_acc %.4f\n", e.epoch, e.train_loss, e.train_accuracy,
                  e.val_accuracy);
    }
    recognize::save_classifier(r.model, out);
    write_manifest(dir_of(out), "train-cls", cfg, {out});
    return 0;
  }
  if (train_anm->parsed()) {
    const auto r = pipeline::train_anomaly(cfg);
    for (const auto& e : r.log) {
      std::printf("epoch %d clean %.5f anomaly %.5f total %.5f\n", e.epoch, e.clean_loss, e.anomaly_loss,
                  e.total_loss);
    }
    std::printf("threshold %.6f\n", r.bundle.threshold);
    recognize::save_anomaly(r.bundle, out);
    write_manifest(dir_of(out), "train-anm", cfg, {out});
    return 0;
  }
  if (train_dn->parsed()) {
    const auto r = pipeline::train_denoiser(cfg);
    std::printf("raw %.3f dB, initial %.3f dB\n", r.raw_val_psnr, r.initial_val_psnr);
    for (std::size_t e = 0; e < r.val_psnr.size(); ++e) std::printf("epoch %zu val_psnr %.3f\n", e, r.val_psnr[e]);
    denoiser::save_denoiser(r.model, denoiser::loss_from_string(cfg.raw("train.dn.loss")), out);
    write_manifest(dir_of(out), "train-dn", cfg, {out});
    return 0;
  }
  if (analyze_cmd->parsed()) {
    const auto models = load_models(models_dir, false);
    for (const auto& d : chip_dirs(chip)) {
      const auto rep = pipeline::run_analysis(d, cfg, models.denoiser ? &*models.denoiser : nullptr);
      int abnormal = 0, flags = 0;
      for (const auto& cell : rep.cells) abnormal += cell.status == analyze::CellStatus::Abnormal;
      for (const auto& r : rep.rows) flags += r.flag;
      std::cout << d.filename().string() << ": " << flags << " row flags, " << abnormal << " abnormal cells\n";
    }
    return 0;
  }
  if (verdict->parsed()) {
    const auto models = load_models(models_dir, true);
    return verdict_all(chip_dirs(chip), models, cfg) > 0 ? 1 : 0;
  }
  if (all->parsed()) {
    const fs::path corpus_dir = out / "corpus", models_path = out / "models";
    fs::create_directories(models_path);
    pipeline::generate_corpus(corpus_dir, cfg);
    recognize::save_classifier(pipeline::train_classifier(cfg).model, models_path / "classifier.ckpt");
    recognize::save_anomaly(pipeline::train_anomaly(cfg).bundle, models_path / "anomaly.ckpt");
    const std::vector<fs::path> ckpts{models_path / "classifier.ckpt", models_path / "anomaly.ckpt"};
    write_manifest(out, "all", cfg, ckpts);
    const auto models = load_models(models_path, true);
    return verdict_all(chip_dirs(corpus_dir), models, cfg) > 0 ? 1 : 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "evha: " << e.what() << "\n";
    return 2;
  }
}
