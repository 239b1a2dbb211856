#pragma once

#include <optional>
#include <string>

#include "core/sim/sim2d.hpp"

namespace mmr::kin {

struct IKQuery {
  sim::BasePose base;
  double goal_x = 0, goal_y = 0;
  std::vector<sim::Box> obstacles;
  double tolerance = 0.1;
};

// True iff some joint triple within limits puts the end effector within
// tolerance of the goal with collision-free arm geometry. Coarse-to-fine grid
// search: 15 degree sweep, 2 degree refinement around candidates, then a
// 0.5 degree polish.
bool ik_reachable(const IKQuery& q);

// The best collision-free config found by the same search, or nullopt when
// none lands within tolerance.
std::optional<std::array<double, 3>> solve_ik(const IKQuery& q);

// Planar base-to-goal distance strictly below 0.8 m.
bool near_goal(const sim::BasePose& base, double goal_x, double goal_y);

// Precomputed obstacle-free reachability over base-frame goal offsets.
// Square grid of n x n cells, cell centers at
// (-half_extent + (i + 0.5) * resolution) for i in [0, n).
struct ReachabilityTable {
  int n = 0;
  double resolution = 0;
  double half_extent = 0;
  std::vector<uint8_t> bits;  // row-major, bit k = row * n + col, LSB first

  bool get(int row, int col) const {
    size_t k = static_cast<size_t>(row) * n + col;
    return (bits[k >> 3] >> (k & 7)) & 1;
  }
};

ReachabilityTable compute_reachability_table(double half_extent, double resolution,
                                             double tolerance = 0.1);
void save_reachability_table(const std::string& path, const ReachabilityTable& table);
ReachabilityTable load_reachability_table(const std::string& path);

}  // namespace mmr::kin
