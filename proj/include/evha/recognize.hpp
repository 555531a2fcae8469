#pragma once
// Block recognition unit: cell-type classifier with Grad-CAM heatmaps and a
// siamese anomaly detector scored against the mean clean prediction.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evha/nn/network.hpp"
#include "evha/raster.hpp"
#include "evha/synthgen.hpp"

namespace evha::recognize {

using raster::BoundingBox;
using raster::GrayImage;

// Bilinear resize to side x side, centered around zero.
nn::Tensor to_input(const GrayImage& img, int side);

struct LabeledImage {
  GrayImage image;
  int label = 0;
};

struct ClassifierModel {
  nn::Network net;
  std::vector<std::string> class_names;
  int input_side = 96;
  int cam_layer = 0;  // index of the rectified last convolution output
};

ClassifierModel make_classifier(std::vector<std::string> class_names, std::uint64_t seed, int input_side = 96);

struct ClassifierConfig {
  int epochs = 25;
  int batch = 16;
  double lr = 0.1;
  double val_fraction = 0.2;
  bool augment = true;
  int input_side = 96;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct ClassifierTraining {
  ClassifierModel model;
  std::vector<EpochLog> log;
  double val_accuracy = 0.0;
  std::size_t train_count = 0;
  std::size_t val_count = 0;
};

// Stratified seeded split per class, then SGD on softmax cross-entropy with
// augment_cell applied to the training stream. Throws for an empty class.
ClassifierTraining train_classifier(const std::vector<LabeledImage>& data, const std::vector<std::string>& class_names,
                                    const ClassifierConfig& cfg);

std::vector<double> classify(const ClassifierModel& m, const GrayImage& cell);

// Gradient-weighted class activation map, resized to the cell's dimensions
// and min-max normalized (an all-zero map stays zero).
GrayImage gradcam(const ClassifierModel& m, const GrayImage& cell, int class_idx);
// Raw rectified map at the activation resolution, before any normalization.
std::vector<double> gradcam_raw(const ClassifierModel& m, const GrayImage& cell, int class_idx);

struct AnomalyModel {
  nn::Network encoder;    // backbone + projection head
  nn::Network predictor;  // prediction head
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  int input_side = 64;
};

AnomalyModel make_anomaly_model(std::uint64_t seed, int input_side = 64, double lambda1 = 1.0, double lambda2 = 0.5);

struct AnomalyConfig {
  int epochs = 20;
  int warmup_epochs = 15;
  int batch = 128;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  synthgen::AugmentParams augment = synthgen::AugmentParams::siamese();
};

// Per-view outputs of one forward pass through f then h.
struct ViewOutputs {
  nn::Var z;
  nn::Var p;
};

ViewOutputs encode_view(nn::Tape& tape, const AnomalyModel& m, const nn::Tensor& x);

// 0.5 D(p_a, stopgrad(z_b)) + 0.5 D(p_b, stopgrad(z_a)).
nn::Var symmetric_loss(nn::Tape& tape, const ViewOutputs& a, const ViewOutputs& b, bool stop_gradient = true);

struct ObjectiveTerms {
  nn::Var total;
  double clean = 0.0;
  double anomaly = 0.0;
};

// Clean pair (x, x_aug) and anomalous pair (x, x_anm); after warm-up the
// total is lambda1 * L_clean - lambda2 * L_anomaly, before it L_clean alone.
ObjectiveTerms anomaly_objective(nn::Tape& tape, const AnomalyModel& m, const nn::Tensor& x, const nn::Tensor& x_aug,
                                 const nn::Tensor& x_anm, bool warm);

struct AnomalyEpochLog {
  int epoch = 0;
  double clean_loss = 0.0;
  double anomaly_loss = 0.0;
  double total_loss = 0.0;
};

struct AnomalyTraining {
  AnomalyModel model;
  std::vector<AnomalyEpochLog> log;
};

// Throws when the batch is larger than the dataset.
AnomalyTraining train_anomaly(const std::vector<GrayImage>& clean, const AnomalyModel& init, const AnomalyConfig& cfg);

nn::Tensor predict_view(const AnomalyModel& m, const GrayImage& img);

// Mean of h(f(x)) over the set. Throws when empty.
nn::Tensor mean_clean_prediction(const AnomalyModel& m, const std::vector<GrayImage>& clean);

// cos(p_c, h(f(cell))); 1 is most normal.
double anomaly_score(const AnomalyModel& m, const nn::Tensor& p_c, const GrayImage& cell);

// Value below which a held-out clean score counts as anomalous: the given
// quantile of the clean scores minus a margin.
double calibrate_threshold(std::vector<double> clean_scores, double quantile, double margin = 0.0);

enum class CellStatus { Known, Unknown, Malicious };
std::string to_string(CellStatus s);

struct CellRecognition {
  int id = 0;
  BoundingBox box;
  std::vector<double> class_probs;
  std::string top_class;
  double confidence = 0.0;
  double anomaly_score = 0.0;
  CellStatus status = CellStatus::Known;
};

struct RecognitionReport {
  std::vector<std::string> class_names;
  std::vector<CellRecognition> cells;
};

struct RecognitionInput {
  int id = 0;
  BoundingBox box;
  GrayImage image;
};

// Malicious when the score is below the threshold; otherwise unknown when
// the top class is outside `expected_types` (if non-empty); otherwise known.
RecognitionReport recognize_cells(const std::vector<RecognitionInput>& cells, const ClassifierModel& cls,
                                  const AnomalyModel& anm, const nn::Tensor& p_c, double anomaly_threshold,
                                  const std::vector<std::string>& expected_types = {});

std::string report_to_json(const RecognitionReport& r);
RecognitionReport report_from_json(const std::string& text);

// Checkpoint bundles.
void save_classifier(const ClassifierModel& m, const std::filesystem::path& path);
ClassifierModel load_classifier(const std::filesystem::path& path);

struct AnomalyBundle {
  AnomalyModel model;
  nn::Tensor p_c;
  double threshold = 0.0;
};

void save_anomaly(const AnomalyBundle& b, const std::filesystem::path& path);
AnomalyBundle load_anomaly(const std::filesystem::path& path);

}  // namespace evha::recognize
