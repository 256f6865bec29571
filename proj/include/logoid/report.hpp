#pragma once

#include "logoid/eval.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace logoid {

/// Writes report.json plus roc.svg (when the report has a ROC) and
/// sweep.svg (when it has a sweep). Output bytes depend only on the report.
/// Returns the written paths.
std::vector<std::filesystem::path> emit_report(const EvalReport& report,
                                               const std::filesystem::path& out_dir);

/// Reads a report.json back.
EvalReport load_report(const std::filesystem::path& path);

std::string roc_svg(std::span<const RocPoint> roc, double auc, const std::string& label);
/// Log-scaled x axis (gallery size), linear y axis (Top-1 in [0, 1]).
std::string sweep_svg(std::span<const SweepPoint> sweep, const std::string& label);

}  // namespace logoid
