#pragma once
// Decision unit: OR-fusion of recognition and analysis evidence into a chip
// verdict.

#include <string>
#include <vector>

#include "evha/analyze.hpp"
#include "evha/recognize.hpp"

namespace evha::decide {

enum class ChipStatus { Clean, DefectiveOrInfected };
std::string to_string(ChipStatus s);

struct Evidence {
  std::string source;  // "recognition" or "analysis"
  std::string ref;     // "cell <id>", "row <id>" or "chip"
  std::string reason;
  double score = 0.0;

  friend bool operator==(const Evidence&, const Evidence&) = default;
};

struct DecideConfig {
  double min_confidence = 0.5;
};

struct ChipVerdict {
  ChipStatus status = ChipStatus::Clean;
  std::vector<Evidence> evidence;
  DecideConfig parameters;
  double anomaly_threshold = 0.0;
  double iou_threshold = 0.0;
};

// Throws when the two reports do not cover the same cell ids.
ChipVerdict decide_verdict(const recognize::RecognitionReport& rec, const analyze::AnalysisReport& ana,
                           const DecideConfig& cfg, double anomaly_threshold = 0.0);

std::string verdict_to_json(const ChipVerdict& v);
std::string verdict_summary(const ChipVerdict& v);

}  // namespace evha::decide
