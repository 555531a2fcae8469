#include "evha/decide.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <json.hpp>

#include "evha/error.hpp"

namespace evha::decide {

std::string to_string(ChipStatus s) { return s == ChipStatus::Clean ? "clean" : "defective_or_infected"; }

ChipVerdict decide_verdict(const recognize::RecognitionReport& rec, const analyze::AnalysisReport& ana,
                           const DecideConfig& cfg, double anomaly_threshold) {
  std::set<int> rec_ids, ana_ids;
  for (const auto& c : rec.cells) rec_ids.insert(c.id);
  for (const auto& c : ana.cells) ana_ids.insert(c.id);
  if (rec_ids != ana_ids || rec_ids.size() != rec.cells.size() || ana_ids.size() != ana.cells.size()) {
    throw Error("recognition and analysis reports cover different cell sets");
  }

  ChipVerdict v;
  v.parameters = cfg;
  v.anomaly_threshold = anomaly_threshold;
  v.iou_threshold = ana.iou_threshold;
  auto cell = [](int id) { return "cell " + std::to_string(id); };

  for (const auto& c : rec.cells) {
    if (c.status == recognize::CellStatus::Malicious) {
      v.evidence.push_back({"recognition", cell(c.id), "anomaly score below threshold", c.anomaly_score});
    } else if (c.status == recognize::CellStatus::Unknown) {
      v.evidence.push_back({"recognition", cell(c.id), "type " + c.top_class + " not in the golden layout",
                            c.confidence});
    }
    if (c.confidence < cfg.min_confidence) {
      v.evidence.push_back({"recognition", cell(c.id), "low classifier confidence", c.confidence});
    }
  }
  if (ana.structural_flag) v.evidence.push_back({"analysis", "chip", "row structure differs from the layout", 0.0});
  for (const auto& r : ana.rows) {
    if (r.flag) {
      v.evidence.push_back({"analysis", "row " + std::to_string(r.row_id),
                            "cell count " + std::to_string(r.sem_count) + " vs layout " +
                                std::to_string(r.layout_count),
                            static_cast<double>(r.sem_count - r.layout_count)});
    }
  }
  for (const auto& c : ana.cells) {
    if (c.status != analyze::CellStatus::Abnormal) continue;
    std::string reason = "deformed dopant regions";
    if (c.layout_id < 0) reason = "no layout counterpart (flagged row)";
    else if (c.unmatched > 0) reason = std::to_string(c.unmatched) + " unmatched dopant regions";
    v.evidence.push_back({"analysis", cell(c.id), reason, c.min_iou.value_or(0.0)});
  }
  v.status = v.evidence.empty() ? ChipStatus::Clean : ChipStatus::DefectiveOrInfected;
  return v;
}

std::string verdict_to_json(const ChipVerdict& v) {
  nlohmann::ordered_json j;
  j["status"] = to_string(v.status);
  j["evidence"] = nlohmann::ordered_json::array();
  for (const auto& e : v.evidence) {
    j["evidence"].push_back({{"source", e.source}, {"ref", e.ref}, {"reason", e.reason}, {"score", e.score}});
  }
  j["parameters_used"] = {{"min_confidence", v.parameters.min_confidence},
                          {"anomaly_threshold", v.anomaly_threshold},
                          {"iou_threshold", v.iou_threshold}};
  return j.dump(2) + "\n";
}

std::string verdict_summary(const ChipVerdict& v) {
  std::ostringstream os;
  os << "verdict: " << to_string(v.status) << " (" << v.evidence.size() << " evidence item"
     << (v.evidence.size() == 1 ? "" : "s") << ")\n";
  for (const auto& e : v.evidence) os << "  [" << e.source << "] " << e.ref << ": " << e.reason << " (" << e.score << ")\n";
  return os.str();
}

}  // namespace evha::decide
