#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "core/common.hpp"

namespace mmr::sim {

inline constexpr double kLink1 = 0.3;
inline constexpr double kLink2 = 0.3;
inline constexpr double kLink3 = 0.2;
inline constexpr double kArmReach = kLink1 + kLink2 + kLink3;  // 0.8 m
inline constexpr double kJointLimit = 2.6;
inline constexpr double kBaseRadius = 0.25;
inline constexpr double kSuccessRadius = 0.1;
inline constexpr double kNearGoalRadius = 0.8;

// Folded arm pose used as the travel configuration; keeps every link within
// ~0.37 m of the base center.
inline constexpr std::array<double, 3> kHomeJoints{2.2, -2.4, 2.2};

struct Box {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

  bool contains(double x, double y) const {
    return x >= xmin && x <= xmax && y >= ymin && y <= ymax;
  }
  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
};

struct BasePose {
  double x = 0, y = 0, yaw = 0;
};

struct WorldState {
  BasePose base;
  std::array<double, 3> joints{0, 0, 0};
  double goal_x = 0, goal_y = 0;
  std::vector<Box> obstacles;
  Box bounds{0, 0, 5, 5};
  int step_count = 0;
};

// Channels: 0 base translate (m), 1 base yaw (rad), 2..4 joint deltas (rad),
// 5..6 reserved (must stay zero).
struct CommandArray {
  std::array<double, 7> v{0, 0, 0, 0, 0, 0, 0};
};

inline constexpr std::array<double, 7> kCommandCaps{0.1, 0.26, 0.17, 0.17, 0.17, 0.0, 0.0};

struct StepOutcome {
  int r = 0;      // task reward: end effector within kSuccessRadius of goal
  int c = 0;      // collision flag for the post-motion geometry
  bool done = false;
};

// The predefined action set. Indices 0..3 drive the base (forward, backward,
// yaw+, yaw-), 4..9 step one joint each (joint1+, joint1-, joint2+, ...).
inline constexpr int kNumActions = 10;
inline constexpr int kNumBaseActions = 4;

CommandArray action_command(int action);
inline bool is_arm_action(int action) { return action >= kNumBaseActions; }

struct StepOptions {
  bool terminate_on_event = false;  // evaluation mode: stop on success/collision
  int max_steps = 120;
};

// Base origin, elbow 1, elbow 2, end effector.
using ArmPoints = std::array<std::pair<double, double>, 4>;

ArmPoints fk_points(const BasePose& base, const std::array<double, 3>& joints);
std::pair<double, double> forward_kinematics(const BasePose& base,
                                             const std::array<double, 3>& joints);

bool segment_intersects_box(double x0, double y0, double x1, double y1, const Box& box);
double point_box_distance(double x, double y, const Box& box);

int check_collision(const WorldState& state);

std::pair<WorldState, StepOutcome> step(const WorldState& state, const CommandArray& cmd,
                                        const StepOptions& opts = {});

// 32x32x3 occupancy grid over the workspace bounds plus an 8-value proprio
// vector. Grid layout is plane-major: index = channel*32*32 + row*32 + col,
// with row 0 at ymin and col 0 at xmin. Channels: 0 obstacles, 1 goal,
// 2 robot body. Proprio: sin/cos yaw, three joints / 2.6, normalized base x
// and y, goal-in-bounds flag.
struct Observation {
  static constexpr int kGridSize = 32;
  static constexpr int kChannels = 3;
  static constexpr int kGridCells = kGridSize * kGridSize * kChannels;
  static constexpr int kProprio = 8;
  static constexpr int kFlatDim = kGridCells + kProprio;

  std::vector<uint8_t> grid;  // kGridCells entries, each 0 or 1
  std::array<double, 8> proprio{};
};

Observation render_observation(const WorldState& state);

enum class EnvId { kEmpty, kObstacleBase, kObstacleArm, kRoom };

EnvId parse_env_id(const std::string& name);
std::string env_id_name(EnvId id);

// Static description of one environment: fixed goal and obstacles plus the
// region the base start pose is sampled from.
struct EnvSpec {
  Box bounds{0, 0, 5, 5};
  double goal_x = 0, goal_y = 0;
  Box start_region;
  std::vector<Box> obstacles;
  std::array<double, 3> start_joints = kHomeJoints;
};

EnvSpec env_spec(EnvId id);

WorldState sample_start(const EnvSpec& spec, Rng& rng);
WorldState make_env(EnvId id, uint64_t seed);
WorldState make_env_at(EnvId id, double x, double y, double yaw);

}  // namespace mmr::sim
