#pragma once
// Orchestration shared by the command-line tool and the acceptance suite:
// corpus layout on disk, config-driven training, and the per-chip pipeline
// denoise -> binarize -> detect -> (recognize, analyze) -> decide.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evha/analyze.hpp"
#include "evha/config.hpp"
#include "evha/corpus.hpp"
#include "evha/decide.hpp"
#include "evha/denoiser.hpp"
#include "evha/recognize.hpp"
#include "evha/synthgen.hpp"

namespace evha::pipeline {

namespace fs = std::filesystem;

synthgen::ChipSpec chip_spec(const config::Config& cfg);
corpus::PrepareConfig prepare_config(const config::Config& cfg);

// Chip directory convention: golden.layout, dt4.pgm, dt5.pgm, dt6.pgm, and
// for Trojan chips trojan.layout plus trojan.json. Renders show the
// fabricated (possibly modified) layout.
struct ChipEntry {
  std::string chip_id;
  std::optional<synthgen::TrojanKind> kind;
};

// gen.chips_per_kind chips of each kind (clean, addition, deletion, change).
std::vector<ChipEntry> generate_corpus(const fs::path& dir, const config::Config& cfg);
void write_chip(const fs::path& chip_dir, const layout::Layout& golden, const synthgen::TrojanResult* trojan,
                std::uint64_t render_seed);

struct Models {
  std::optional<recognize::ClassifierModel> classifier;
  std::optional<recognize::AnomalyBundle> anomaly;
  std::optional<nn::Network> denoiser;
};

struct ChipReports {
  corpus::PreparedChip prepared;
  recognize::RecognitionReport recognition;
  analyze::AnalysisReport analysis;
  decide::ChipVerdict verdict;
};

// In-memory pipeline on one render. Requires classifier and anomaly models.
ChipReports process_chip(const raster::GrayImage& sem, const layout::Layout& golden, const Models& models,
                         const config::Config& cfg);

// Inputs run_pipeline would need that do not exist, listed before any work.
std::vector<std::string> missing_inputs(const fs::path& chip_dir, const config::Config& cfg);

// Reads the chip directory and writes recognition.json, analysis.json,
// verdict.json and verdict.txt into it.
ChipReports run_pipeline(const fs::path& chip_dir, const Models& models, const config::Config& cfg);

// Analysis only (no learned models): analysis.json in the chip directory.
analyze::AnalysisReport run_analysis(const fs::path& chip_dir, const config::Config& cfg,
                                     const nn::Network* denoiser = nullptr);

// Labeled cell images harvested from golden chips rendered at `dwell`.
std::vector<corpus::HarvestedCell> harvest(const config::Config& cfg, int per_class, std::uint64_t stream);

recognize::ClassifierTraining train_classifier(const config::Config& cfg);

struct AnomalyRun {
  recognize::AnomalyBundle bundle;
  std::vector<recognize::AnomalyEpochLog> log;
  std::vector<raster::GrayImage> held_out;  // clean cells not used for training
};
AnomalyRun train_anomaly(const config::Config& cfg);

// Scenes of one or two rows rendered at the noisy dwell and at DT6.
std::vector<denoiser::NoisePair> noise_pairs(int scenes, raster::DwellClass input, std::uint64_t seed);
denoiser::DenoiserTraining train_denoiser(const config::Config& cfg);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace evha::pipeline
