#pragma once

#include <filesystem>
#include <ostream>
#include <span>
#include <string>

#include "logos/geometry.hpp"

namespace logos {

// One rectangle per line box on a 1000x1000 canvas; the stroke colour cycles
// a fixed palette by cluster id.
std::string cluster_svg(std::span<const NormBox> boxes, const ClusterAssignment& assignment);

void emit_cluster_svg(std::span<const NormBox> boxes, const ClusterAssignment& assignment,
                      const std::filesystem::path& out_path);

// Palette entry used for a cluster id.
const char* cluster_color(int cluster);

}  // namespace logos
