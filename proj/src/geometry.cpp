#include "logos/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>
#include <utility>

#include "logos/error.hpp"

namespace logos {

bool NormBox::valid() const {
  const double v[] = {x1, y1, x2, y2};
  for (double c : v)
    if (!std::isfinite(c) || c < 0.0 || c > 1.0) return false;
  return x1 <= x2 && y1 <= y2;
}

bool NormBox::contains(const NormBox& o, double slack) const {
  return o.x1 >= x1 - slack && o.y1 >= y1 - slack && o.x2 <= x2 + slack && o.y2 <= y2 + slack;
}

void require_valid(const NormBox& box) {
  if (!box.valid()) {
    throw ContractError("invalid box [" + std::to_string(box.x1) + ", " + std::to_string(box.y1) + ", " +
                        std::to_string(box.x2) + ", " + std::to_string(box.y2) + "]");
  }
}

NormBox union_box(std::span<const NormBox> boxes) {
  if (boxes.empty()) throw EmptyInputError("union of no boxes");
  NormBox u = boxes.front();
  for (const NormBox& b : boxes) {
    u.x1 = std::min(u.x1, b.x1);
    u.y1 = std::min(u.y1, b.y1);
    u.x2 = std::max(u.x2, b.x2);
    u.y2 = std::max(u.y2, b.y2);
  }
  return u;
}

double box_min_distance(const NormBox& a, const NormBox& b) {
  require_valid(a);
  require_valid(b);
  const double dx = std::max({0.0, a.x1 - b.x2, b.x1 - a.x2});
  const double dy = std::max({0.0, a.y1 - b.y2, b.y1 - a.y2});
  return std::hypot(dx, dy);
}

ClusterAssignment cluster_lines(std::span<const NormBox> boxes, double epsilon) {
  if (boxes.empty()) throw EmptyInputError("cluster_lines needs at least one line box");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be positive");
  for (const NormBox& b : boxes) require_valid(b);

  const std::size_t m = boxes.size();
  constexpr int kUnvisited = -1;
  std::vector<int> label(m, kUnvisited);
  int next = 0;
  std::deque<std::size_t> frontier;
  for (std::size_t seed = 0; seed < m; ++seed) {
    if (label[seed] != kUnvisited) continue;
    label[seed] = next;
    frontier.push_back(seed);
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      // Region query; with minPts = 1 every neighbour is itself a core point.
      for (std::size_t q = 0; q < m; ++q) {
        if (label[q] != kUnvisited) continue;
        if (box_min_distance(boxes[p], boxes[q]) <= epsilon) {
          label[q] = next;
          frontier.push_back(q);
        }
      }
    }
    ++next;
  }

  // Canonical numbering by the lexicographically smallest (y1, x1) corner.
  std::vector<std::pair<double, double>> corner(next, {2.0, 2.0});
  for (std::size_t i = 0; i < m; ++i) {
    corner[label[i]] = std::min(corner[label[i]], {boxes[i].y1, boxes[i].x1});
  }
  std::vector<int> order(next);
  for (int c = 0; c < next; ++c) order[c] = c;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return corner[a] < corner[b]; });
  std::vector<int> rank(next);
  for (int r = 0; r < next; ++r) rank[order[r]] = r;

  ClusterAssignment out;
  out.n_clusters = next;
  out.cluster_of_line.resize(m);
  for (std::size_t i = 0; i < m; ++i) out.cluster_of_line[i] = rank[label[i]];
  return out;
}

std::vector<double> sinusoidal_embedding(std::int64_t position, int d) {
  if (d < 2 || d % 2 != 0) throw ConfigError("sinusoidal embedding width must be even and >= 2, got " + std::to_string(d));
  if (position < 0) throw ContractError("negative position " + std::to_string(position));
  std::vector<double> out(static_cast<std::size_t>(d));
  const double p = static_cast<double>(position);
  for (int k = 0; k < d / 2; ++k) {
    const double angle = p / std::pow(10000.0, 2.0 * k / d);
    out[2 * k] = std::sin(angle);
    out[2 * k + 1] = std::cos(angle);
  }
  return out;
}

SpatialDescriptor spatial_descriptor(std::int64_t cluster_id, std::int64_t line_index, std::int64_t token_index,
                                     int d) {
  if (cluster_id < 0 || line_index < 0 || token_index < 0) {
    throw ContractError("spatial descriptor indices must be nonnegative");
  }
  SpatialDescriptor s{cluster_id, line_index, token_index, {}};
  s.embedding.reserve(3 * static_cast<std::size_t>(d));
  for (std::int64_t idx : {cluster_id, line_index, token_index}) {
    auto part = sinusoidal_embedding(idx, d);
    s.embedding.insert(s.embedding.end(), part.begin(), part.end());
  }
  return s;
}

}  // namespace logos
