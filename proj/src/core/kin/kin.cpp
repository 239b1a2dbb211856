#include "core/kin/kin.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace mmr::kin {

namespace {

constexpr double kCoarseStep = kPi / 12.0;   // 15 degrees
constexpr double kRefineStep = kPi / 90.0;   // 2 degrees
constexpr double kPolishStep = kPi / 360.0;  // 0.5 degrees
constexpr int kRefineHalf = 4;               // +-8 degrees covers half a coarse cell
constexpr int kPolishHalf = 3;               // +-1.5 degrees

// Any config within tolerance lies inside the refine window of some coarse
// grid point whose own distance is at most tolerance plus the window's
// end-effector travel (8 degrees against at most 1.5 m of lever arm).
constexpr double kCandidateMargin = 0.22;

struct Best {
  double dist = std::numeric_limits<double>::infinity();
  std::array<double, 3> joints{0, 0, 0};
};

bool arm_collides(const sim::BasePose& base, const std::array<double, 3>& joints,
                  const std::vector<sim::Box>& obstacles) {
  if (obstacles.empty()) return false;
  sim::ArmPoints pts = sim::fk_points(base, joints);
  for (const sim::Box& box : obstacles) {
    for (int i = 0; i < 3; ++i) {
      if (sim::segment_intersects_box(pts[i].first, pts[i].second, pts[i + 1].first,
                                      pts[i + 1].second, box))
        return true;
    }
  }
  return false;
}

std::vector<double> axis_values(double center, double half_range, double step) {
  std::vector<double> vals;
  for (int k = -static_cast<int>(std::round(half_range / step));
       k <= static_cast<int>(std::round(half_range / step)); ++k) {
    double v = center + k * step;
    if (v >= -sim::kJointLimit - 1e-12 && v <= sim::kJointLimit + 1e-12)
      vals.push_back(std::clamp(v, -sim::kJointLimit, sim::kJointLimit));
  }
  return vals;
}

std::vector<double> coarse_values() {
  std::vector<double> vals;
  for (double v = -sim::kJointLimit; v < sim::kJointLimit - 1e-9; v += kCoarseStep)
    vals.push_back(v);
  vals.push_back(sim::kJointLimit);
  return vals;
}

// Scans a local grid around a center config, keeping the best collision-free
// config within tolerance. Distance pruning on the partial chain cuts most
// of the volume. Returns true (and stops) on the first hit when first_hit.
bool scan_grid(const IKQuery& q, const std::array<double, 3>& center, double half_range,
               double step, bool first_hit, Best& best) {
  const double gx = q.goal_x, gy = q.goal_y;
  auto j1s = axis_values(center[0], half_range, step);
  auto j2s = axis_values(center[1], half_range, step);
  auto j3s = axis_values(center[2], half_range, step);
  for (double j1 : j1s) {
    double a1 = q.base.yaw + j1;
    double x1 = q.base.x + sim::kLink1 * std::cos(a1);
    double y1 = q.base.y + sim::kLink1 * std::sin(a1);
    if (std::hypot(x1 - gx, y1 - gy) - (sim::kLink2 + sim::kLink3) > q.tolerance) continue;
    for (double j2 : j2s) {
      double a2 = a1 + j2;
      double x2 = x1 + sim::kLink2 * std::cos(a2);
      double y2 = y1 + sim::kLink2 * std::sin(a2);
      if (std::hypot(x2 - gx, y2 - gy) - sim::kLink3 > q.tolerance) continue;
      for (double j3 : j3s) {
        double a3 = a2 + j3;
        double ex = x2 + sim::kLink3 * std::cos(a3);
        double ey = y2 + sim::kLink3 * std::sin(a3);
        double dist = std::hypot(ex - gx, ey - gy);
        if (dist >= q.tolerance || dist >= best.dist) continue;
        std::array<double, 3> cfg{j1, j2, j3};
        if (arm_collides(q.base, cfg, q.obstacles)) continue;
        best.dist = dist;
        best.joints = cfg;
        if (first_hit) return true;
      }
    }
  }
  return false;
}

Best search(const IKQuery& q, bool first_hit) {
  Best best;
  MMR_REQUIRE(q.tolerance > 0.0, "ik: tolerance must be positive");
  double base_dist = std::hypot(q.base.x - q.goal_x, q.base.y - q.goal_y);
  if (base_dist > sim::kArmReach + q.tolerance) return best;

  // Coarse pass: collect grid configs whose end effector lands within the
  // candidate margin of tolerance.
  const double gx = q.goal_x, gy = q.goal_y;
  const double keep = q.tolerance + kCandidateMargin;
  std::vector<std::array<double, 3>> candidates;
  auto coarse = coarse_values();
  for (double j1 : coarse) {
    double a1 = q.base.yaw + j1;
    double x1 = q.base.x + sim::kLink1 * std::cos(a1);
    double y1 = q.base.y + sim::kLink1 * std::sin(a1);
    if (std::hypot(x1 - gx, y1 - gy) - (sim::kLink2 + sim::kLink3) > keep) continue;
    for (double j2 : coarse) {
      double a2 = a1 + j2;
      double x2 = x1 + sim::kLink2 * std::cos(a2);
      double y2 = y1 + sim::kLink2 * std::sin(a2);
      if (std::hypot(x2 - gx, y2 - gy) - sim::kLink3 > keep) continue;
      for (double j3 : coarse) {
        double a3 = a2 + j3;
        double ex = x2 + sim::kLink3 * std::cos(a3);
        double ey = y2 + sim::kLink3 * std::sin(a3);
        if (std::hypot(ex - gx, ey - gy) <= keep) candidates.push_back({j1, j2, j3});
      }
    }
  }

  for (const auto& c : candidates) {
    if (scan_grid(q, c, kRefineHalf * kRefineStep, kRefineStep, first_hit, best) && first_hit)
      return best;
  }
  if (std::isfinite(best.dist))
    scan_grid(q, best.joints, kPolishHalf * kPolishStep, kPolishStep, false, best);
  return best;
}

}  // namespace

bool ik_reachable(const IKQuery& q) { return search(q, true).dist < q.tolerance; }

std::optional<std::array<double, 3>> solve_ik(const IKQuery& q) {
  Best best = search(q, false);
  if (best.dist < q.tolerance) return best.joints;
  return std::nullopt;
}

bool near_goal(const sim::BasePose& base, double goal_x, double goal_y) {
  return std::hypot(base.x - goal_x, base.y - goal_y) < sim::kNearGoalRadius;
}

ReachabilityTable compute_reachability_table(double half_extent, double resolution,
                                             double tolerance) {
  MMR_REQUIRE(half_extent > 0 && resolution > 0, "reachability table: bad geometry");
  ReachabilityTable table;
  table.n = static_cast<int>(std::round(2.0 * half_extent / resolution));
  table.resolution = resolution;
  table.half_extent = half_extent;
  table.bits.assign((static_cast<size_t>(table.n) * table.n + 7) / 8, 0);
  IKQuery q;
  q.base = sim::BasePose{0, 0, 0};
  q.tolerance = tolerance;
  for (int row = 0; row < table.n; ++row) {
    for (int col = 0; col < table.n; ++col) {
      q.goal_x = -half_extent + (col + 0.5) * resolution;
      q.goal_y = -half_extent + (row + 0.5) * resolution;
      if (ik_reachable(q)) {
        size_t k = static_cast<size_t>(row) * table.n + col;
        table.bits[k >> 3] |= static_cast<uint8_t>(1u << (k & 7));
      }
    }
  }
  return table;
}

void save_reachability_table(const std::string& path, const ReachabilityTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write reachability table: " + path);
  char header[96];
  int len = std::snprintf(header, sizeof(header), "MMRTAB1 %d %.17g %.17g\n", table.n,
                          table.resolution, table.half_extent);
  out.write(header, len);
  out.write(reinterpret_cast<const char*>(table.bits.data()),
            static_cast<std::streamsize>(table.bits.size()));
  if (!out) throw IoError("short write for reachability table: " + path);
}

ReachabilityTable load_reachability_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read reachability table: " + path);
  std::string magic;
  ReachabilityTable table;
  in >> magic >> table.n >> table.resolution >> table.half_extent;
  if (!in || magic != "MMRTAB1" || table.n <= 0)
    throw IoError("malformed reachability table header: " + path);
  in.ignore(1);  // newline
  table.bits.assign((static_cast<size_t>(table.n) * table.n + 7) / 8, 0);
  in.read(reinterpret_cast<char*>(table.bits.data()),
          static_cast<std::streamsize>(table.bits.size()));
  if (in.gcount() != static_cast<std::streamsize>(table.bits.size()))
    throw IoError("truncated reachability table: " + path);
  return table;
}

}  // namespace mmr::kin
