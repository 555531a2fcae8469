#include "evha/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace evha::config {

namespace {

enum class Kind { Int, Double, U64, AutoDouble, Choice };

struct Rule {
  KeyInfo info;
  Kind kind;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::string> choices;
};

const std::vector<Rule>& rules() {
  static const std::vector<Rule> r = [] {
    std::vector<Rule> v{
        {{"seed", "7", "base seed for every random stream"}, Kind::U64, 0, 0, {}},
        {{"jobs", "1", "chips processed concurrently"}, Kind::Int, 1, 256, {}},
        {{"dwell", "dt6", "dwell class of the analyzed render"}, Kind::Choice, 0, 0, {"dt4", "dt5", "dt6"}},
        {{"gen.rows", "4", "rows per generated chip"}, Kind::Int, 1, 64, {}},
        {{"gen.cells_per_row", "8", "cells per generated row"}, Kind::Int, 2, 64, {}},
        {{"gen.chips_per_kind", "5", "chips per kind (clean, addition, deletion, change)"}, Kind::Int, 0, 10000, {}},
        {{"nlm.patch_radius", "3", "non-local means patch radius"}, Kind::Int, 0, 10, {}},
        {{"nlm.search_radius", "10", "non-local means search radius"}, Kind::Int, 1, 40, {}},
        {{"nlm.h_factor", "0.4", "filter strength relative to the noise estimate"}, Kind::Double, 1e-6, 100, {}},
        {{"nlm.h", "auto", "absolute filter strength"}, Kind::AutoDouble, 1e-9, 100, {}},
        {{"threshold", "auto", "binarization threshold (auto: Otsu)"}, Kind::AutoDouble, 0, 1, {}},
        {{"detect.min_component_px", "4", "smallest component kept"}, Kind::Int, 0, 100000, {}},
        {{"detect.gap_threshold", "auto", "cell separation gap (auto: adaptive)"}, Kind::AutoDouble, 0, 10000, {}},
        {{"iou_threshold", "0.7", "IOU below which a region is deformed"}, Kind::Double, 0, 1, {}},
        {{"analyze.min_region_px", "4", "smallest dopant region kept"}, Kind::Int, 0, 100000, {}},
        {{"min_confidence", "0.5", "classifier confidence below which a cell is evidence"}, Kind::Double, 0, 1, {}},
        {{"anomaly_threshold", "auto", "anomaly score threshold (auto: calibrated)"}, Kind::AutoDouble, -1, 1, {}},
        {{"anomaly.quantile", "0", "held-out clean score quantile used for calibration"}, Kind::Double, 0, 1, {}},
        {{"anomaly.margin", "0.02", "subtracted from the calibrated quantile"}, Kind::Double, 0, 2, {}},
        {{"train.cls.per_class", "200", "training images per cell type"}, Kind::Int, 2, 100000, {}},
        {{"train.cls.epochs", "25", "classifier epochs"}, Kind::Int, 0, 10000, {}},
        {{"train.cls.batch", "16", "classifier batch size"}, Kind::Int, 1, 4096, {}},
        {{"train.cls.lr", "0.1", "classifier learning rate"}, Kind::Double, 1e-9, 10, {}},
        {{"train.cls.input_side", "96", "classifier input side"}, Kind::Int, 16, 512, {}},
        {{"train.anm.per_class", "200", "clean cells per type for the anomaly detector"}, Kind::Int, 2, 100000, {}},
        {{"train.anm.epochs", "20", "anomaly detector epochs"}, Kind::Int, 0, 10000, {}},
        {{"train.anm.warmup", "15", "epochs trained on clean pairs only"}, Kind::Int, 0, 10000, {}},
        {{"train.anm.batch", "128", "anomaly detector batch size"}, Kind::Int, 1, 4096, {}},
        {{"train.anm.lr", "0.0001", "anomaly detector learning rate"}, Kind::Double, 1e-12, 10, {}},
        {{"train.anm.lambda1", "1", "clean-pair weight"}, Kind::Double, 0, 1, {}},
        {{"train.anm.lambda2", "0.5", "anomalous-pair weight"}, Kind::Double, 0, 1, {}},
        {{"train.anm.input_side", "64", "anomaly detector input side"}, Kind::Int, 32, 512, {}},
        {{"train.dn.loss", "l2", "denoiser objective"}, Kind::Choice, 0, 0, {"l0", "l1", "l2"}},
        {{"train.dn.scenes", "100", "noise-pair scenes"}, Kind::Int, 2, 100000, {}},
        {{"train.dn.epochs", "20", "denoiser epochs"}, Kind::Int, 0, 10000, {}},
        {{"train.dn.lr", "0.05", "denoiser learning rate"}, Kind::Double, 1e-9, 10, {}},
        {{"train.dn.batch", "8", "denoiser batch size"}, Kind::Int, 1, 4096, {}},
        {{"train.dn.patch", "48", "denoiser crop side (multiple of 8)"}, Kind::Int, 8, 512, {}},
        {{"train.dn.patches_per_scene", "8", "crops per scene per epoch"}, Kind::Int, 1, 10000, {}},
        {{"train.dn.input", "dt4", "noisy dwell class of the pairs"}, Kind::Choice, 0, 0, {"dt4", "dt5"}},
    };
    std::sort(v.begin(), v.end(), [](const Rule& a, const Rule& b) { return a.info.name < b.info.name; });
    return v;
  }();
  return r;
}

const Rule* find_rule(const std::string& key) {
  for (const auto& r : rules()) {
    if (r.info.name == key) return &r;
  }
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

void check_value(const Rule& r, const std::string& v) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("key '" + r.info.name + "': value '" + v + "' " + why);
  };
  switch (r.kind) {
    case Kind::Int: {
      long long x = 0;
      if (!parse_number(v, x)) fail("is not an integer");
      if (x < r.lo || x > r.hi) fail("is outside [" + std::to_string(static_cast<long long>(r.lo)) + ", " +
                                     std::to_string(static_cast<long long>(r.hi)) + "]");
      break;
    }
    case Kind::U64: {
      std::uint64_t x = 0;
      if (!parse_number(v, x)) fail("is not an unsigned integer");
      break;
    }
    case Kind::AutoDouble:
      if (v == "auto") break;
      [[fallthrough]];
    case Kind::Double: {
      double x = 0.0;
      if (!parse_number(v, x) || !std::isfinite(x)) fail("is not a number");
      if (x < r.lo || x > r.hi) {
        std::ostringstream os;
        os << "is outside [" << r.lo << ", " << r.hi << "]";
        fail(os.str());
      }
      break;
    }
    case Kind::Choice:
      if (std::find(r.choices.begin(), r.choices.end(), v) == r.choices.end()) fail("is not an allowed choice");
      break;
  }
}

}  // namespace

const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> k = [] {
    std::vector<KeyInfo> v;
    for (const auto& r : rules()) v.push_back(r.info);
    return v;
  }();
  return k;
}

Config::Config() {
  for (const auto& r : rules()) values_[r.info.name] = r.info.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  const Rule* r = find_rule(key);
  if (r == nullptr) throw ConfigError("unknown key '" + key + "'");
  check_value(*r, value);
  values_[key] = value;
}

void Config::apply_text(std::string_view text, const std::string& origin) {
  std::istringstream is{std::string(text)};
  int line_no = 0;
  for (std::string line; std::getline(is, line);) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void Config::apply_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str(), path);
}

const std::string& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

int Config::get_int(const std::string& key) const {
  int x = 0;
  if (!parse_number(raw(key), x)) throw ConfigError("key '" + key + "' is not an integer");
  return x;
}

double Config::get_double(const std::string& key) const {
  double x = 0.0;
  if (!parse_number(raw(key), x)) throw ConfigError("key '" + key + "' is not a number");
  return x;
}

std::uint64_t Config::get_u64(const std::string& key) const {
  std::uint64_t x = 0;
  if (!parse_number(raw(key), x)) throw ConfigError("key '" + key + "' is not an unsigned integer");
  return x;
}

std::optional<double> Config::get_auto_double(const std::string& key) const {
  if (raw(key) == "auto") return std::nullopt;
  return get_double(key);
}

std::string Config::to_text() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

}  // namespace evha::config
