#include "evha/recognize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "evha/error.hpp"
#include "evha/seed.hpp"

namespace evha::recognize {

using nn::LayerSpec;
using nn::Tape;
using nn::Tensor;
using nn::Var;

Tensor to_input(const GrayImage& img, int side) {
  const GrayImage r = (img.width() == side && img.height() == side) ? img : raster::resize_bilinear(img, side, side);
  Tensor t({1, side, side});
  for (std::size_t i = 0; i < r.size(); ++i) t[i] = r.pixels()[i] - 0.5;
  return t;
}

ClassifierModel make_classifier(std::vector<std::string> class_names, std::uint64_t seed, int input_side) {
  if (class_names.empty()) throw Error("classifier needs at least one class");
  if (input_side < 16 || input_side % 8 != 0) throw Error("classifier input side must be a multiple of 8, >= 16");
  std::vector<LayerSpec> layers;
  for (int c : {8, 16, 32}) {
    layers.insert(layers.end(), {LayerSpec::conv(c), LayerSpec::norm(), LayerSpec::relu(), LayerSpec::maxpool()});
  }
  layers.insert(layers.end(), {LayerSpec::conv(32), LayerSpec::norm(), LayerSpec::relu()});
  const int cam = static_cast<int>(layers.size()) - 1;
  layers.push_back(LayerSpec::gap());
  layers.push_back(LayerSpec::dense(static_cast<int>(class_names.size())));
  ClassifierModel m;
  m.net = nn::Network({1, input_side, input_side}, std::move(layers), seed);
  m.class_names = std::move(class_names);
  m.input_side = input_side;
  m.cam_layer = cam;
  return m;
}

namespace {

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= z;
  return p;
}

double accuracy(const ClassifierModel& m, const std::vector<Tensor>& xs, const std::vector<int>& ys) {
  if (xs.empty()) return 1.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor logits = nn::predict(m.net, xs[i]);
    hit += argmax(std::vector<double>(logits.values().begin(), logits.values().end())) == ys[i];
  }
  return static_cast<double>(hit) / static_cast<double>(xs.size());
}

}  // namespace

ClassifierTraining train_classifier(const std::vector<LabeledImage>& data, const std::vector<std::string>& class_names,
                                    const ClassifierConfig& cfg) {
  if (cfg.epochs < 0 || cfg.batch <= 0 || !(cfg.lr > 0.0)) throw Error("classifier config out of range");
  const int k = static_cast<int>(class_names.size());
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label < 0 || data[i].label >= k) throw Error("sample " + std::to_string(i) + " has an invalid label");
    by_class[static_cast<std::size_t>(data[i].label)].push_back(i);
  }
  for (int c = 0; c < k; ++c) {
    if (by_class[static_cast<std::size_t>(c)].empty()) throw Error("class '" + class_names[c] + "' has no samples");
  }

  std::vector<std::size_t> train, val;
  std::mt19937_64 split_rng(derive_seed(cfg.seed, 1));
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), split_rng);
    std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    else n_val = 0;
    val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  }

  ClassifierTraining out;
  out.model = make_classifier(class_names, derive_seed(cfg.seed, 2), cfg.input_side);
  out.train_count = train.size();
  out.val_count = val.size();
  std::vector<Tensor> val_x;
  std::vector<int> val_y;
  for (std::size_t i : val) {
    val_x.push_back(to_input(data[i].image, cfg.input_side));
    val_y.push_back(data[i].label);
  }
  const auto aug = cfg.augment ? synthgen::AugmentParams::classifier() : synthgen::AugmentParams::none();

  std::mt19937_64 order_rng(derive_seed(cfg.seed, 3));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), order_rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(cfg.batch));
      nn::Gradients g = nn::zero_gradients(out.model.net);
      for (std::size_t j = start; j < end; ++j) {
        const LabeledImage& s = data[train[j]];
        const GrayImage view = cfg.augment ? synthgen::augment_cell(raster::resize_bilinear(s.image, cfg.input_side,
                                                                                           cfg.input_side),
                                                                    derive_seed(cfg.seed, 100 + epoch, train[j]), aug)
                                           : s.image;
        Tape tape;
        std::vector<double> probs;
        const Var logits = nn::forward(tape, out.model.net, tape.input(to_input(view, cfg.input_side))).output;
        const Var loss = tape.softmax_cross_entropy(logits, s.label, &probs);
        loss_sum += tape.value(loss)[0];
        hits += argmax(probs) == s.label;
        tape.backward(loss);
        nn::accumulate(g, tape, out.model.net, 1.0 / static_cast<double>(end - start));
      }
      nn::sgd_step(out.model.net, g, cfg.lr);
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = train.empty() ? 0.0 : loss_sum / static_cast<double>(train.size());
    e.train_accuracy = train.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(train.size());
    e.val_accuracy = accuracy(out.model, val_x, val_y);
    out.log.push_back(e);
  }
  out.val_accuracy = out.log.empty() ? accuracy(out.model, val_x, val_y) : out.log.back().val_accuracy;
  return out;
}

std::vector<double> classify(const ClassifierModel& m, const GrayImage& cell) {
  const Tensor logits = nn::predict(m.net, to_input(cell, m.input_side));
  return softmax(logits.values());
}

std::vector<double> gradcam_raw(const ClassifierModel& m, const GrayImage& cell, int class_idx) {
  if (class_idx < 0 || static_cast<std::size_t>(class_idx) >= m.class_names.size()) {
    throw Error("class index " + std::to_string(class_idx) + " out of range");
  }
  Tape tape;
  const Var x = tape.input(to_input(cell, m.input_side));
  const nn::ForwardTrace tr = nn::forward(tape, m.net, x);
  Tensor upstream(tape.value(tr.output).shape());
  upstream[static_cast<std::size_t>(class_idx)] = 1.0;
  tape.backward(tr.output, upstream);
  const Var act = tr.layer_outputs[static_cast<std::size_t>(m.cam_layer)];
  const Tensor& a = tape.value(act);
  const auto g = tape.grad(act);
  const int c = a.dim(0);
  const std::size_t n = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  std::vector<double> cam(n, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double alpha = 0.0;
    if (!g.empty()) {
      for (std::size_t i = 0; i < n; ++i) alpha += g[static_cast<std::size_t>(ch) * n + i];
    }
    alpha /= static_cast<double>(n);
    if (alpha == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) cam[i] += alpha * a[static_cast<std::size_t>(ch) * n + i];
  }
  for (double& v : cam) v = std::max(v, 0.0);
  return cam;
}

GrayImage gradcam(const ClassifierModel& m, const GrayImage& cell, int class_idx) {
  std::vector<double> cam = gradcam_raw(m, cell, class_idx);
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cam.size()))));
  const auto [lo, hi] = std::minmax_element(cam.begin(), cam.end());
  const double mn = *lo, mx = *hi;
  for (double& v : cam) v = mx > mn ? (v - mn) / (mx - mn) : 0.0;
  return raster::resize_bilinear(GrayImage(side, side, std::move(cam)), cell.width(), cell.height());
}

AnomalyModel make_anomaly_model(std::uint64_t seed, int input_side, double lambda1, double lambda2) {
  if (input_side < 32 || input_side % 16 != 0) throw Error("anomaly input side must be a multiple of 16, >= 32");
  if (lambda1 < 0.0 || lambda1 > 1.0 || lambda2 < 0.0 || lambda2 > 1.0) throw Error("lambda values must lie in [0,1]");
  std::vector<LayerSpec> enc{LayerSpec::conv(8, 3, 2, 1), LayerSpec::norm(), LayerSpec::relu(), LayerSpec::maxpool()};
  const int widths[] = {16, 32, 64, 128};
  for (int b = 0; b < 4; ++b) {
    if (b > 0) enc.push_back(LayerSpec::maxpool());
    enc.insert(enc.end(), {LayerSpec::save(0), LayerSpec::conv(widths[b]), LayerSpec::norm(), LayerSpec::relu(),
                           LayerSpec::conv(widths[b]), LayerSpec::norm(), LayerSpec::add_saved(0), LayerSpec::relu()});
  }
  enc.insert(enc.end(), {LayerSpec::gap(), LayerSpec::dense(64), LayerSpec::norm(), LayerSpec::relu(), LayerSpec::dense(64),
                         LayerSpec::norm()});
  AnomalyModel m;
  m.encoder = nn::Network({1, input_side, input_side}, std::move(enc), derive_seed(seed, 1));
  m.predictor = nn::Network({64}, {LayerSpec::dense(32), LayerSpec::norm(), LayerSpec::relu(), LayerSpec::dense(64), LayerSpec::norm()}, derive_seed(seed, 2));
  m.lambda1 = lambda1;
  m.lambda2 = lambda2;
  m.input_side = input_side;
  return m;
}

ViewOutputs encode_view(Tape& tape, const AnomalyModel& m, const Tensor& x) {
  const Var z = nn::forward(tape, m.encoder, tape.input(x)).output;
  const Var p = nn::forward(tape, m.predictor, z).output;
  return {z, p};
}

Var symmetric_loss(Tape& tape, const ViewOutputs& a, const ViewOutputs& b, bool stop_gradient) {
  const Var zb = stop_gradient ? tape.stopgrad(b.z) : b.z;
  const Var za = stop_gradient ? tape.stopgrad(a.z) : a.z;
  return tape.add(tape.scale(tape.neg_cosine(a.p, zb), 0.5), tape.scale(tape.neg_cosine(b.p, za), 0.5));
}

ObjectiveTerms anomaly_objective(Tape& tape, const AnomalyModel& m, const Tensor& x, const Tensor& x_aug,
                                 const Tensor& x_anm, bool warm) {
  const ViewOutputs v = encode_view(tape, m, x);
  const ViewOutputs va = encode_view(tape, m, x_aug);
  const Var clean = symmetric_loss(tape, v, va);
  ObjectiveTerms t;
  t.clean = tape.value(clean)[0];
  if (warm) {
    t.total = clean;
    return t;
  }
  const ViewOutputs vn = encode_view(tape, m, x_anm);
  const Var anomaly = symmetric_loss(tape, v, vn);
  t.anomaly = tape.value(anomaly)[0];
  t.total = tape.add(tape.scale(clean, m.lambda1), tape.scale(anomaly, -m.lambda2));
  return t;
}

AnomalyTraining train_anomaly(const std::vector<GrayImage>& clean, const AnomalyModel& init, const AnomalyConfig& cfg) {
  if (cfg.batch <= 0 || static_cast<std::size_t>(cfg.batch) > clean.size()) {
    throw Error("batch size " + std::to_string(cfg.batch) + " exceeds the dataset of " + std::to_string(clean.size()));
  }
  if (cfg.epochs < 0 || cfg.warmup_epochs < 0 || cfg.lr < 0.0) throw Error("anomaly config out of range");
  AnomalyTraining out;
  out.model = init;
  AnomalyModel& m = out.model;
  const int side = m.input_side;
  std::vector<GrayImage> base;
  base.reserve(clean.size());
  for (const auto& img : clean) base.push_back(raster::resize_bilinear(img, side, side));

  std::vector<std::size_t> order(base.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(cfg.seed, 7));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool warm = epoch < cfg.warmup_epochs;
    std::shuffle(order.begin(), order.end(), rng);
    AnomalyEpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      nn::Gradients ge = nn::zero_gradients(m.encoder);
      nn::Gradients gp = nn::zero_gradients(m.predictor);
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t j = start; j < end; ++j) {
        const GrayImage& img = base[order[j]];
        const GrayImage aug = synthgen::augment_cell(img, derive_seed(cfg.seed, 1000 + epoch, 2 * order[j]), cfg.augment);
        Tensor x_anm;
        if (!warm) x_anm = to_input(synthgen::cutpaste_view(img, derive_seed(cfg.seed, 1000 + epoch, 2 * order[j] + 1)), side);
        Tape tape;
        const ObjectiveTerms t = anomaly_objective(tape, m, to_input(img, side), to_input(aug, side), x_anm, warm);
        log.clean_loss += t.clean;
        log.anomaly_loss += t.anomaly;
        log.total_loss += tape.value(t.total)[0];
        tape.backward(t.total);
        nn::accumulate(ge, tape, m.encoder, w);
        nn::accumulate(gp, tape, m.predictor, w);
      }
      nn::sgd_step(m.encoder, ge, cfg.lr);
      nn::sgd_step(m.predictor, gp, cfg.lr);
    }
    const double n = static_cast<double>(order.size());
    log.clean_loss /= n;
    log.anomaly_loss /= n;
    log.total_loss /= n;
    out.log.push_back(log);
  }
  return out;
}

Tensor predict_view(const AnomalyModel& m, const GrayImage& img) {
  return nn::predict(m.predictor, nn::predict(m.encoder, to_input(img, m.input_side)));
}

Tensor mean_clean_prediction(const AnomalyModel& m, const std::vector<GrayImage>& clean) {
  if (clean.empty()) throw Error("mean clean prediction needs at least one image");
  std::vector<Tensor> preds;
  preds.reserve(clean.size());
  for (const auto& img : clean) preds.push_back(predict_view(m, img));
  Tensor mean(preds.front().shape());
  // summing a sorted copy per entry keeps the result independent of set order
  std::vector<double> column(preds.size());
  for (std::size_t k = 0; k < mean.size(); ++k) {
    for (std::size_t i = 0; i < preds.size(); ++i) column[i] = preds[i][k];
    std::sort(column.begin(), column.end());
    mean[k] = std::accumulate(column.begin(), column.end(), 0.0) / static_cast<double>(preds.size());
  }
  return mean;
}

double anomaly_score(const AnomalyModel& m, const Tensor& p_c, const GrayImage& cell) {
  const Tensor p = predict_view(m, cell);
  if (p.size() != p_c.size()) throw Error("mean clean prediction has the wrong width");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    dot += p[i] * p_c[i];
    na += p[i] * p[i];
    nb += p_c[i] * p_c[i];
  }
  const double denom = std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
  return std::clamp(dot / denom, -1.0, 1.0);
}

double calibrate_threshold(std::vector<double> clean_scores, double quantile, double margin) {
  if (clean_scores.empty()) throw Error("threshold calibration needs clean scores");
  if (quantile < 0.0 || quantile > 1.0) throw Error("quantile must lie in [0,1]");
  std::sort(clean_scores.begin(), clean_scores.end());
  const double pos = quantile * static_cast<double>(clean_scores.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, clean_scores.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return clean_scores[lo] + frac * (clean_scores[hi] - clean_scores[lo]) - margin;
}

std::string to_string(CellStatus s) {
  switch (s) {
    case CellStatus::Known: return "known";
    case CellStatus::Unknown: return "unknown";
    case CellStatus::Malicious: return "malicious";
  }
  return "?";
}

namespace {

CellStatus status_from_string(const std::string& s) {
  if (s == "known") return CellStatus::Known;
  if (s == "unknown") return CellStatus::Unknown;
  if (s == "malicious") return CellStatus::Malicious;
  throw Error("unknown cell status '" + s + "'");
}

}  // namespace

RecognitionReport recognize_cells(const std::vector<RecognitionInput>& cells, const ClassifierModel& cls,
                                  const AnomalyModel& anm, const Tensor& p_c, double anomaly_threshold,
                                  const std::vector<std::string>& expected_types) {
  RecognitionReport r;
  r.class_names = cls.class_names;
  for (const auto& c : cells) {
    CellRecognition rec;
    rec.id = c.id;
    rec.box = c.box;
    rec.class_probs = classify(cls, c.image);
    const int top = argmax(rec.class_probs);
    rec.top_class = cls.class_names[static_cast<std::size_t>(top)];
    rec.confidence = rec.class_probs[static_cast<std::size_t>(top)];
    rec.anomaly_score = anomaly_score(anm, p_c, c.image);
    if (rec.anomaly_score < anomaly_threshold) {
      rec.status = CellStatus::Malicious;
    } else if (!expected_types.empty() &&
               std::find(expected_types.begin(), expected_types.end(), rec.top_class) == expected_types.end()) {
      rec.status = CellStatus::Unknown;
    }
    r.cells.push_back(std::move(rec));
  }
  return r;
}

std::string report_to_json(const RecognitionReport& r) {
  nlohmann::ordered_json j;
  j["class_names"] = r.class_names;
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : r.cells) {
    nlohmann::ordered_json probs = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < c.class_probs.size(); ++i) probs[r.class_names[i]] = c.class_probs[i];
    j["cells"].push_back({{"id", c.id},
                          {"box", {c.box.x1, c.box.y1, c.box.x2, c.box.y2}},
                          {"class_probs", probs},
                          {"top_class", c.top_class},
                          {"confidence", c.confidence},
                          {"anomaly_score", c.anomaly_score},
                          {"status", to_string(c.status)}});
  }
  return j.dump(2) + "\n";
}

RecognitionReport report_from_json(const std::string& text) {
  const auto j = nlohmann::ordered_json::parse(text);
  RecognitionReport r;
  r.class_names = j.at("class_names").get<std::vector<std::string>>();
  for (const auto& c : j.at("cells")) {
    CellRecognition rec;
    rec.id = c.at("id").get<int>();
    const auto b = c.at("box").get<std::vector<int>>();
    if (b.size() != 4) throw Error("recognition box must have four coordinates");
    rec.box = {b[0], b[1], b[2], b[3]};
    for (const auto& name : r.class_names) rec.class_probs.push_back(c.at("class_probs").at(name).get<double>());
    rec.top_class = c.at("top_class").get<std::string>();
    rec.confidence = c.at("confidence").get<double>();
    rec.anomaly_score = c.at("anomaly_score").get<double>();
    rec.status = status_from_string(c.at("status").get<std::string>());
    r.cells.push_back(std::move(rec));
  }
  return r;
}

namespace {

std::string join_lines(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += x + "\n";
  return s;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

const std::string& meta(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw Error("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace

void save_classifier(const ClassifierModel& m, const std::filesystem::path& path) {
  nn::Checkpoint c;
  c.metadata["kind"] = "classifier";
  c.metadata["classes"] = join_lines(m.class_names);
  c.metadata["input_side"] = std::to_string(m.input_side);
  c.networks.emplace("classifier", m.net);
  nn::save_checkpoint(c, path);
}

ClassifierModel load_classifier(const std::filesystem::path& path) {
  ClassifierModel model;
  const nn::Checkpoint c = nn::load_checkpoint(path, [&](const std::map<std::string, std::string>& md) {
    if (meta(md, "kind") != "classifier") throw Error(path.string() + " is not a classifier checkpoint");
    model = make_classifier(split_lines(meta(md, "classes")), 0, std::stoi(meta(md, "input_side")));
    return std::map<std::string, nn::Network>{{"classifier", model.net}};
  });
  model.net = c.networks.at("classifier");
  return model;
}

void save_anomaly(const AnomalyBundle& b, const std::filesystem::path& path) {
  nn::Checkpoint c;
  c.metadata["kind"] = "anomaly";
  c.metadata["input_side"] = std::to_string(b.model.input_side);
  c.networks.emplace("encoder", b.model.encoder);
  c.networks.emplace("predictor", b.model.predictor);
  c.tensors.emplace("p_c", b.p_c);
  c.tensors.emplace("threshold", Tensor::vector({b.threshold}));
  c.tensors.emplace("lambda", Tensor::vector({b.model.lambda1, b.model.lambda2}));
  nn::save_checkpoint(c, path);
}

AnomalyBundle load_anomaly(const std::filesystem::path& path) {
  AnomalyBundle b;
  const nn::Checkpoint c = nn::load_checkpoint(path, [&](const std::map<std::string, std::string>& md) {
    if (meta(md, "kind") != "anomaly") throw Error(path.string() + " is not an anomaly checkpoint");
    b.model = make_anomaly_model(0, std::stoi(meta(md, "input_side")));
    return std::map<std::string, nn::Network>{{"encoder", b.model.encoder}, {"predictor", b.model.predictor}};
  });
  b.model.encoder = c.networks.at("encoder");
  b.model.predictor = c.networks.at("predictor");
  auto tensor = [&](const char* name) -> const Tensor& {
    auto it = c.tensors.find(name);
    if (it == c.tensors.end()) throw Error(path.string() + " lacks tensor '" + name + "'");
    return it->second;
  };
  b.p_c = tensor("p_c");
  b.threshold = tensor("threshold")[0];
  b.model.lambda1 = tensor("lambda")[0];
  b.model.lambda2 = tensor("lambda")[1];
  return b;
}

}  // namespace evha::recognize
