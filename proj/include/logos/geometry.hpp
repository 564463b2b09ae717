#pragma once

// Box geometry, proximity clustering of OCR lines, and the hierarchical
// (cluster, line, token) sinusoidal descriptor attached to every OCR token.

#include <cstdint>
#include <span>
#include <vector>

namespace logos {

// Axis-aligned box in normalized image coordinates, origin top-left.
// Zero-area boxes are legal.
struct NormBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  bool valid() const;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool contains(const NormBox& other, double slack = 0.0) const;

  friend bool operator==(const NormBox&, const NormBox&) = default;
};

// Throws ContractError unless 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1.
void require_valid(const NormBox& box);
NormBox union_box(std::span<const NormBox> boxes);

// Minimum Euclidean distance between any two points of the two boxes.
double box_min_distance(const NormBox& a, const NormBox& b);

struct ClusterAssignment {
  std::vector<int> cluster_of_line;
  int n_clusters = 0;
};

// DBSCAN over line boxes with minPts = 1, so every line is a core point and
// no line is labelled noise. Clusters are numbered by their top-most, then
// left-most, member corner.
ClusterAssignment cluster_lines(std::span<const NormBox> boxes, double epsilon);

// Sinusoidal position embedding of width d (d even): [sin, cos] pairs with
// frequencies 10000^(-2k/d).
std::vector<double> sinusoidal_embedding(std::int64_t position, int d);

struct SpatialDescriptor {
  std::int64_t cluster_id = 0;
  std::int64_t line_index = 0;
  std::int64_t token_index = 0;
  std::vector<double> embedding;  // Pos(cluster) ++ Pos(line) ++ Pos(token), length 3d
};

SpatialDescriptor spatial_descriptor(std::int64_t cluster_id, std::int64_t line_index, std::int64_t token_index,
                                     int d);

}  // namespace logos
