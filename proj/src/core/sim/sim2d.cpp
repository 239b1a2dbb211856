#include "core/sim/sim2d.hpp"

#include <algorithm>
#include <cmath>

namespace mmr::sim {

ArmPoints fk_points(const BasePose& base, const std::array<double, 3>& joints) {
  ArmPoints pts;
  pts[0] = {base.x, base.y};
  const double lens[3] = {kLink1, kLink2, kLink3};
  double angle = base.yaw;
  double x = base.x, y = base.y;
  for (int i = 0; i < 3; ++i) {
    angle += joints[i];
    x += lens[i] * std::cos(angle);
    y += lens[i] * std::sin(angle);
    pts[i + 1] = {x, y};
  }
  return pts;
}

std::pair<double, double> forward_kinematics(const BasePose& base,
                                             const std::array<double, 3>& joints) {
  return fk_points(base, joints)[3];
}

bool segment_intersects_box(double x0, double y0, double x1, double y1, const Box& box) {
  double tmin = 0.0, tmax = 1.0;
  const double p[2] = {x0, y0};
  const double d[2] = {x1 - x0, y1 - y0};
  const double lo[2] = {box.xmin, box.ymin};
  const double hi[2] = {box.xmax, box.ymax};
  for (int axis = 0; axis < 2; ++axis) {
    if (d[axis] == 0.0) {
      if (p[axis] < lo[axis] || p[axis] > hi[axis]) return false;
    } else {
      double t1 = (lo[axis] - p[axis]) / d[axis];
      double t2 = (hi[axis] - p[axis]) / d[axis];
      if (t1 > t2) std::swap(t1, t2);
      tmin = std::max(tmin, t1);
      tmax = std::min(tmax, t2);
      if (tmin > tmax) return false;
    }
  }
  return true;
}

double point_box_distance(double x, double y, const Box& box) {
  double cx = std::clamp(x, box.xmin, box.xmax);
  double cy = std::clamp(y, box.ymin, box.ymax);
  return std::hypot(x - cx, y - cy);
}

int check_collision(const WorldState& state) {
  ArmPoints pts = fk_points(state.base, state.joints);
  for (const Box& box : state.obstacles) {
    if (point_box_distance(state.base.x, state.base.y, box) < kBaseRadius) return 1;
    for (int i = 0; i < 3; ++i) {
      if (segment_intersects_box(pts[i].first, pts[i].second, pts[i + 1].first,
                                 pts[i + 1].second, box))
        return 1;
    }
  }
  return 0;
}

std::pair<WorldState, StepOutcome> step(const WorldState& state, const CommandArray& cmd,
                                        const StepOptions& opts) {
  for (int i = 0; i < 7; ++i)
    MMR_REQUIRE(std::abs(cmd.v[i]) <= kCommandCaps[i] + 1e-12,
                "step: command channel " + std::to_string(i) + " exceeds its cap");

  WorldState next = state;
  next.base.x += cmd.v[0] * std::cos(state.base.yaw);
  next.base.y += cmd.v[0] * std::sin(state.base.yaw);
  next.base.yaw = wrap_angle(state.base.yaw + cmd.v[1]);
  next.base.x = std::clamp(next.base.x, state.bounds.xmin + kBaseRadius,
                           state.bounds.xmax - kBaseRadius);
  next.base.y = std::clamp(next.base.y, state.bounds.ymin + kBaseRadius,
                           state.bounds.ymax - kBaseRadius);
  for (int i = 0; i < 3; ++i)
    next.joints[i] = std::clamp(state.joints[i] + cmd.v[2 + i], -kJointLimit, kJointLimit);
  next.step_count = state.step_count + 1;

  StepOutcome out;
  out.c = check_collision(next);
  auto [ex, ey] = forward_kinematics(next.base, next.joints);
  out.r = std::hypot(ex - next.goal_x, ey - next.goal_y) < kSuccessRadius ? 1 : 0;
  out.done = (opts.terminate_on_event && (out.r == 1 || out.c == 1)) ||
             next.step_count >= opts.max_steps;
  return {next, out};
}

CommandArray action_command(int action) {
  MMR_REQUIRE(action >= 0 && action < kNumActions, "action_command: index out of range");
  CommandArray cmd;
  switch (action) {
    case 0: cmd.v[0] = 0.1; break;
    case 1: cmd.v[0] = -0.1; break;
    case 2: cmd.v[1] = 0.26; break;
    case 3: cmd.v[1] = -0.26; break;
    default: {
      int joint = (action - kNumBaseActions) / 2;
      double sign = (action - kNumBaseActions) % 2 == 0 ? 1.0 : -1.0;
      cmd.v[2 + joint] = sign * 0.17;
      break;
    }
  }
  return cmd;
}

Observation render_observation(const WorldState& state) {
  constexpr int N = Observation::kGridSize;
  Observation obs;
  obs.grid.assign(Observation::kGridCells, 0);

  const double cw = state.bounds.width() / N;
  const double ch = state.bounds.height() / N;
  auto cell_box = [&](int row, int col) {
    return Box{state.bounds.xmin + col * cw, state.bounds.ymin + row * ch,
               state.bounds.xmin + (col + 1) * cw, state.bounds.ymin + (row + 1) * ch};
  };
  auto set = [&](int channel, int row, int col) {
    obs.grid[static_cast<size_t>(channel) * N * N + static_cast<size_t>(row) * N + col] = 1;
  };

  ArmPoints pts = fk_points(state.base, state.joints);
  for (int row = 0; row < N; ++row) {
    for (int col = 0; col < N; ++col) {
      Box cell = cell_box(row, col);
      for (const Box& b : state.obstacles) {
        if (b.xmax > cell.xmin && b.xmin < cell.xmax && b.ymax > cell.ymin &&
            b.ymin < cell.ymax) {
          set(0, row, col);
          break;
        }
      }
      if (cell.contains(state.goal_x, state.goal_y)) set(1, row, col);
      bool body = point_box_distance(state.base.x, state.base.y, cell) < kBaseRadius;
      for (int i = 0; i < 3 && !body; ++i)
        body = segment_intersects_box(pts[i].first, pts[i].second, pts[i + 1].first,
                                      pts[i + 1].second, cell);
      if (body) set(2, row, col);
    }
  }

  obs.proprio[0] = std::sin(state.base.yaw);
  obs.proprio[1] = std::cos(state.base.yaw);
  for (int i = 0; i < 3; ++i) obs.proprio[2 + i] = state.joints[i] / kJointLimit;
  obs.proprio[5] = (state.base.x - state.bounds.xmin) / state.bounds.width();
  obs.proprio[6] = (state.base.y - state.bounds.ymin) / state.bounds.height();
  obs.proprio[7] = state.bounds.contains(state.goal_x, state.goal_y) ? 1.0 : 0.0;
  return obs;
}

EnvId parse_env_id(const std::string& name) {
  if (name == "empty") return EnvId::kEmpty;
  if (name == "obstacle-base") return EnvId::kObstacleBase;
  if (name == "obstacle-arm") return EnvId::kObstacleArm;
  if (name == "room") return EnvId::kRoom;
  throw ContractError("unknown environment: " + name);
}

std::string env_id_name(EnvId id) {
  switch (id) {
    case EnvId::kEmpty: return "empty";
    case EnvId::kObstacleBase: return "obstacle-base";
    case EnvId::kObstacleArm: return "obstacle-arm";
    case EnvId::kRoom: return "room";
  }
  throw ContractError("unknown environment id");
}

EnvSpec env_spec(EnvId id) {
  EnvSpec spec;
  spec.bounds = Box{0, 0, 5, 5};
  switch (id) {
    case EnvId::kEmpty:
      spec.goal_x = 4.0;
      spec.goal_y = 2.5;
      spec.start_region = Box{0.5, 1.0, 1.5, 4.0};
      break;
    case EnvId::kObstacleBase:
      spec.goal_x = 4.0;
      spec.goal_y = 2.5;
      spec.start_region = Box{0.5, 1.5, 1.2, 3.5};
      // One block across the straight line from the start region to the goal.
      spec.obstacles.push_back(Box{2.3, 1.5, 2.7, 3.5});
      break;
    case EnvId::kObstacleArm:
      spec.goal_x = 4.0;
      spec.goal_y = 2.5;
      spec.start_region = Box{0.5, 2.0, 1.2, 4.0};
      // Block beside the goal.
      spec.obstacles.push_back(Box{3.7, 1.7, 4.3, 2.2});
      // Thin stick angled across the upper-left approach, built from small
      // axis-aligned segments.
      for (int i = 0; i < 5; ++i) {
        double x = 3.15 + 0.1 * i;
        double y = 2.75 + 0.1 * i;
        spec.obstacles.push_back(Box{x, y, x + 0.12, y + 0.12});
      }
      break;
    case EnvId::kRoom:
      spec.goal_x = 3.5;
      spec.goal_y = 3.15;
      spec.start_region = Box{0.4, 0.4, 1.1, 1.2};
      spec.obstacles.push_back(Box{0.0, 2.2, 1.6, 2.5});   // wall stub, left
      spec.obstacles.push_back(Box{3.1, 0.0, 3.3, 1.2});   // wall stub, bottom
      spec.obstacles.push_back(Box{3.6, 3.4, 4.6, 3.9});   // table; goal near its corner
      spec.obstacles.push_back(Box{1.0, 3.6, 1.6, 4.2});   // side table
      spec.obstacles.push_back(Box{4.4, 0.8, 5.0, 1.3});   // cabinet
      break;
  }
  return spec;
}

WorldState sample_start(const EnvSpec& spec, Rng& rng) {
  WorldState s;
  s.bounds = spec.bounds;
  s.goal_x = spec.goal_x;
  s.goal_y = spec.goal_y;
  s.obstacles = spec.obstacles;
  s.joints = spec.start_joints;
  s.base.x = rng.uniform(spec.start_region.xmin, spec.start_region.xmax);
  s.base.y = rng.uniform(spec.start_region.ymin, spec.start_region.ymax);
  s.base.yaw = wrap_angle(rng.uniform(-kPi, kPi));
  s.step_count = 0;
  return s;
}

WorldState make_env(EnvId id, uint64_t seed) {
  Rng rng(seed, "env." + env_id_name(id));
  return sample_start(env_spec(id), rng);
}

WorldState make_env_at(EnvId id, double x, double y, double yaw) {
  const EnvSpec& spec = env_spec(id);
  WorldState s;
  s.bounds = spec.bounds;
  s.goal_x = spec.goal_x;
  s.goal_y = spec.goal_y;
  s.obstacles = spec.obstacles;
  s.joints = spec.start_joints;
  s.base.x = x;
  s.base.y = y;
  s.base.yaw = wrap_angle(yaw);
  s.step_count = 0;
  return s;
}

}  // namespace mmr::sim
