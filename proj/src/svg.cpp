#include "logos/svg.hpp"

#include <cstdio>
#include <fstream>

#include "logos/error.hpp"

namespace logos {
namespace {

constexpr const char* kPalette[] = {"#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4",
                                    "#f032e6", "#bfef45", "#469990", "#9a6324", "#800000", "#000075"};
constexpr int kPaletteSize = static_cast<int>(sizeof kPalette / sizeof kPalette[0]);
constexpr double kCanvas = 1000.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v * kCanvas);
  return buf;
}

}  // namespace

const char* cluster_color(int cluster) {
  if (cluster < 0) throw ContractError("cluster id must be nonnegative");
  return kPalette[cluster % kPaletteSize];
}

std::string cluster_svg(std::span<const NormBox> boxes, const ClusterAssignment& assignment) {
  if (assignment.cluster_of_line.size() != boxes.size()) {
    throw ContractError("cluster assignment covers " + std::to_string(assignment.cluster_of_line.size()) +
                        " lines, expected " + std::to_string(boxes.size()));
  }
  std::string out =
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1000\" height=\"1000\" viewBox=\"0 0 1000 1000\">\n"
      "<rect x=\"0\" y=\"0\" width=\"1000\" height=\"1000\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const NormBox& b = boxes[i];
    const int c = assignment.cluster_of_line[i];
    out += "<rect x=\"" + fmt(b.x1) + "\" y=\"" + fmt(b.y1) + "\" width=\"" + fmt(b.x2 - b.x1) + "\" height=\"" +
           fmt(b.y2 - b.y1) + "\" fill=\"none\" stroke=\"" + cluster_color(c) + "\" stroke-width=\"2\" data-cluster=\"" +
           std::to_string(c) + "\"/>\n";
  }
  out += "</svg>\n";
  return out;
}

void emit_cluster_svg(std::span<const NormBox> boxes, const ClusterAssignment& assignment,
                      const std::filesystem::path& out_path) {
  const std::string doc = cluster_svg(boxes, assignment);
  std::ofstream os(out_path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + out_path.string() + "'");
  os << doc;
  if (!os) throw IoError("failed writing '" + out_path.string() + "'");
}

}  // namespace logos
