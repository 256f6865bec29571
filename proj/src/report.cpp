#include "logoid/report.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <sstream>

namespace logoid {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 480, kHeight = 400;
constexpr double kLeft = 60, kRight = 20, kTop = 30, kBottom = 50;
constexpr double kPlotW = kWidth - kLeft - kRight;
constexpr double kPlotH = kHeight - kTop - kBottom;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void frame(std::ostringstream& svg, const std::string& title, const std::string& xlabel,
           const std::string& ylabel) {
  svg << fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
      "viewBox=\"0 0 {0} {1}\" font-family=\"sans-serif\" font-size=\"12\">\n",
      kWidth, kHeight);
  svg << fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", kWidth,
                     kHeight);
  svg << fmt::format(
      "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
      kLeft, kTop, kPlotW, kPlotH);
  svg << fmt::format("<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{}</text>\n",
                     kLeft + kPlotW / 2, escape(title));
  svg << fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                     kLeft + kPlotW / 2, kHeight - 10, escape(xlabel));
  svg << fmt::format(
      "<text x=\"15\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {0})\">{1}</text>\n",
      kTop + kPlotH / 2, escape(ylabel));
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    const double y = kTop + kPlotH * (1.0 - v);
    svg << fmt::format(
        "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#ddd\"/>\n", kLeft,
        y, kLeft + kPlotW, y);
    svg << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.1f}</text>\n",
                       kLeft - 5, y + 4, v);
  }
}

}  // namespace

std::string roc_svg(std::span<const RocPoint> roc, double auc, const std::string& label) {
  std::ostringstream svg;
  frame(svg, "ROC", "false positive rate", "true positive rate");
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    const double x = kLeft + kPlotW * v;
    svg << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.1f}</text>\n", x,
                       kTop + kPlotH + 16, v);
  }
  svg << fmt::format(
      "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#999\" "
      "stroke-dasharray=\"4 4\"/>\n",
      kLeft, kTop + kPlotH, kLeft + kPlotW, kTop);
  svg << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < roc.size(); ++i) {
    svg << fmt::format("{}{:.2f},{:.2f}", i ? " " : "", kLeft + kPlotW * roc[i].fpr,
                       kTop + kPlotH * (1.0 - roc[i].tpr));
  }
  svg << "\"/>\n";
  svg << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{} (AUC {:.1f})</text>\n",
                     kLeft + kPlotW - 8, kTop + kPlotH - 10, escape(label), 100.0 * auc);
  svg << "</svg>\n";
  return svg.str();
}

std::string sweep_svg(std::span<const SweepPoint> sweep, const std::string& label) {
  std::ostringstream svg;
  frame(svg, "Top-1 accuracy vs gallery size", "gallery size", "top-1 accuracy");
  if (!sweep.empty()) {
    const double lo = std::log10(static_cast<double>(std::max<std::size_t>(1, sweep.front().gallery_size)));
    double hi = std::log10(static_cast<double>(std::max<std::size_t>(1, sweep.back().gallery_size)));
    if (hi <= lo) hi = lo + 1.0;
    auto xpos = [&](std::size_t s) {
      return kLeft + kPlotW * (std::log10(static_cast<double>(std::max<std::size_t>(1, s))) - lo) /
                         (hi - lo);
    };
    for (const SweepPoint& p : sweep) {
      const std::string tick = p.gallery_size >= 1000 && p.gallery_size % 1000 == 0
                                   ? fmt::format("{}k", p.gallery_size / 1000)
                                   : fmt::format("{}", p.gallery_size);
      svg << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
                         xpos(p.gallery_size), kTop + kPlotH + 16, tick);
    }
    svg << "<polyline fill=\"none\" stroke=\"#2c3e50\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      svg << fmt::format("{}{:.2f},{:.2f}", i ? " " : "", xpos(sweep[i].gallery_size),
                         kTop + kPlotH * (1.0 - sweep[i].top1));
    }
    svg << "\"/>\n";
    for (const SweepPoint& p : sweep) {
      svg << fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"#2c3e50\"/>\n",
                         xpos(p.gallery_size), kTop + kPlotH * (1.0 - p.top1));
    }
  }
  svg << fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{}</text>\n",
                     kLeft + kPlotW - 8, kTop + 16, escape(label));
  svg << "</svg>\n";
  return svg.str();
}

namespace {

void write_file(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out << bytes;
    if (!out) throw Error(fmt::format("write failed for '{}'", path.string()));
  }
  fs::rename(tmp, path);
}

}  // namespace

std::vector<fs::path> emit_report(const EvalReport& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw Error(fmt::format("cannot create report directory '{}'", out_dir.string()));
  }
  std::vector<fs::path> written;
  const fs::path json_path = out_dir / "report.json";
  write_file(json_path, report.to_json().dump(2) + "\n");
  written.push_back(json_path);
  if (report.roc) {
    const fs::path p = out_dir / "roc.svg";
    write_file(p, roc_svg(*report.roc, report.auc.value_or(auc_trapezoid(*report.roc)),
                      report.provenance.value("label", std::string("model"))));
    written.push_back(p);
  }
  if (report.sweep) {
    const fs::path p = out_dir / "sweep.svg";
    write_file(p, sweep_svg(*report.sweep, report.provenance.value("label", std::string("model"))));
    written.push_back(p);
  }
  return written;
}

EvalReport load_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("report '{}' not found", path.string()));
  return EvalReport::from_json(nlohmann::json::parse(in));
}

}  // namespace logoid
