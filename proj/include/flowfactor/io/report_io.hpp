#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "flowfactor/losses.hpp"

namespace flowfactor {

/// Flat JSON object with exactly the keys pho, pla, axi, tan, rad, total,
/// valid_pixel_count.
inline nlohmann::ordered_json loss_report_json(const LossReport& report) {
  nlohmann::ordered_json j;
  j["pho"] = report.pho;
  j["pla"] = report.pla;
  j["axi"] = report.axi;
  j["tan"] = report.tan;
  j["rad"] = report.rad;
  j["total"] = report.total;
  j["valid_pixel_count"] = report.valid_pixel_count;
  return j;
}

inline void write_loss_report(const LossReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << loss_report_json(report).dump(2) << "\n";
}

}  // namespace flowfactor
