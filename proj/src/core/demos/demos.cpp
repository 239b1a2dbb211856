#include "core/demos/demos.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <optional>

#include "core/kin/kin.hpp"

namespace mmr::demos {

namespace {

// Path planning clearance: the folded travel arm sweeps ~0.37 m around the
// base center, plus tracking slack.
constexpr double kInflate = 0.55;
constexpr double kLosInflate = 0.50;
constexpr double kCell = 0.1;
constexpr double kTargetRadius = 0.65;
constexpr double kWaypointRadius = 0.15;
constexpr double kHeadingGate = 0.14;
constexpr double kArmTolerance = 0.08;
constexpr int kMinDemoSteps = 32;
constexpr int kMaxAttempts = 20;

struct Pt {
  double x, y;
};

sim::Box inflate(const sim::Box& b, double by) {
  return sim::Box{b.xmin - by, b.ymin - by, b.xmax + by, b.ymax + by};
}

bool segment_clear(const Pt& a, const Pt& b, const std::vector<sim::Box>& obstacles,
                   double by) {
  for (const sim::Box& box : obstacles)
    if (sim::segment_intersects_box(a.x, a.y, b.x, b.y, inflate(box, by))) return false;
  return true;
}

// Breadth-first search over an inflated occupancy grid from the start pose to
// any free cell within kTargetRadius of the goal; returns line-of-sight
// smoothed waypoints, or nothing when unreachable.
std::optional<std::vector<Pt>> plan_base_path(const sim::WorldState& s) {
  const sim::Box& bounds = s.bounds;
  const int nx = static_cast<int>(std::round(bounds.width() / kCell));
  const int ny = static_cast<int>(std::round(bounds.height() / kCell));
  auto center = [&](int cx, int cy) {
    return Pt{bounds.xmin + (cx + 0.5) * kCell, bounds.ymin + (cy + 0.5) * kCell};
  };
  auto free_cell = [&](int cx, int cy) {
    Pt p = center(cx, cy);
    if (p.x < bounds.xmin + sim::kBaseRadius || p.x > bounds.xmax - sim::kBaseRadius ||
        p.y < bounds.ymin + sim::kBaseRadius || p.y > bounds.ymax - sim::kBaseRadius)
      return false;
    for (const sim::Box& box : s.obstacles)
      if (sim::point_box_distance(p.x, p.y, box) < kInflate) return false;
    return true;
  };

  int sx = std::clamp(static_cast<int>((s.base.x - bounds.xmin) / kCell), 0, nx - 1);
  int sy = std::clamp(static_cast<int>((s.base.y - bounds.ymin) / kCell), 0, ny - 1);
  if (!free_cell(sx, sy)) {
    // The sampled start may sit between cell centers; look one ring around.
    bool found = false;
    for (int dx = -1; dx <= 1 && !found; ++dx)
      for (int dy = -1; dy <= 1 && !found; ++dy)
        if (free_cell(sx + dx, sy + dy)) {
          sx += dx;
          sy += dy;
          found = true;
        }
    if (!found) return std::nullopt;
  }

  std::vector<int> parent(static_cast<size_t>(nx) * ny, -1);
  auto idx = [&](int cx, int cy) { return cy * nx + cx; };
  std::deque<std::pair<int, int>> queue;
  queue.emplace_back(sx, sy);
  parent[idx(sx, sy)] = idx(sx, sy);
  int goal_idx = -1;
  const int dxs[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  const int dys[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  while (!queue.empty() && goal_idx < 0) {
    auto [cx, cy] = queue.front();
    queue.pop_front();
    Pt p = center(cx, cy);
    if (std::hypot(p.x - s.goal_x, p.y - s.goal_y) <= kTargetRadius) {
      goal_idx = idx(cx, cy);
      break;
    }
    for (int k = 0; k < 8; ++k) {
      int mx = cx + dxs[k], my = cy + dys[k];
      if (mx < 0 || my < 0 || mx >= nx || my >= ny) continue;
      if (parent[idx(mx, my)] >= 0 || !free_cell(mx, my)) continue;
      parent[idx(mx, my)] = idx(cx, cy);
      queue.emplace_back(mx, my);
    }
  }
  if (goal_idx < 0) return std::nullopt;

  std::vector<Pt> cells;
  for (int at = goal_idx;; at = parent[at]) {
    cells.push_back(center(at % nx, at / nx));
    if (parent[at] == at) break;
  }
  std::reverse(cells.begin(), cells.end());

  // Line-of-sight smoothing into corner waypoints.
  std::vector<Pt> waypoints;
  size_t anchor = 0;
  Pt anchor_pt{s.base.x, s.base.y};
  while (anchor < cells.size()) {
    size_t best = anchor;
    for (size_t j = cells.size(); j-- > anchor;) {
      if (segment_clear(anchor_pt, cells[j], s.obstacles, kLosInflate)) {
        best = j;
        break;
      }
    }
    waypoints.push_back(cells[best]);
    if (best + 1 >= cells.size()) break;
    anchor = best + 1;
    anchor_pt = cells[best];
  }
  return waypoints;
}

// Joint targets restricted to the action lattice: home + k * 0.17 per joint.
struct LatticePlan {
  std::array<int, 3> steps{0, 0, 0};  // signed step counts from home
  std::array<double, 3> target{0, 0, 0};
  std::vector<int> order;             // action indices, one joint step each
};

constexpr double kJointStep = 0.17;

std::array<double, 3> lattice_config(const std::array<int, 3>& k) {
  return {sim::kHomeJoints[0] + k[0] * kJointStep, sim::kHomeJoints[1] + k[1] * kJointStep,
          sim::kHomeJoints[2] + k[2] * kJointStep};
}

bool arm_path_clear(const sim::WorldState& s, const std::vector<int>& actions) {
  std::array<double, 3> joints = sim::kHomeJoints;
  for (int a : actions) {
    int joint = (a - sim::kNumBaseActions) / 2;
    double sign = (a - sim::kNumBaseActions) % 2 == 0 ? 1.0 : -1.0;
    joints[joint] += sign * kJointStep;
    sim::ArmPoints pts = sim::fk_points(s.base, joints);
    for (const sim::Box& box : s.obstacles)
      for (int i = 0; i < 3; ++i)
        if (sim::segment_intersects_box(pts[i].first, pts[i].second, pts[i + 1].first,
                                        pts[i + 1].second, box))
          return false;
  }
  return true;
}

std::vector<int> joint_actions(int joint, int count) {
  int action = sim::kNumBaseActions + 2 * joint + (count >= 0 ? 0 : 1);
  return std::vector<int>(static_cast<size_t>(std::abs(count)), action);
}

// Orderings to try: round-robin interleave, then every finish-one-joint-
// at-a-time permutation.
std::vector<std::vector<int>> candidate_orders(const std::array<int, 3>& k) {
  std::vector<std::vector<int>> orders;
  std::vector<int> rr;
  std::array<int, 3> left{std::abs(k[0]), std::abs(k[1]), std::abs(k[2])};
  while (left[0] + left[1] + left[2] > 0) {
    for (int j = 0; j < 3; ++j) {
      if (left[j] == 0) continue;
      rr.push_back(sim::kNumBaseActions + 2 * j + (k[j] >= 0 ? 0 : 1));
      --left[j];
    }
  }
  orders.push_back(std::move(rr));
  std::array<int, 3> perm{0, 1, 2};
  std::sort(perm.begin(), perm.end());
  do {
    std::vector<int> seq;
    for (int j : perm) {
      auto part = joint_actions(j, k[j]);
      seq.insert(seq.end(), part.begin(), part.end());
    }
    orders.push_back(std::move(seq));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return orders;
}

std::optional<LatticePlan> plan_arm(const sim::WorldState& s) {
  struct Cand {
    double dist;
    std::array<int, 3> k;
  };
  std::vector<Cand> cands;
  auto range = [](double home) {
    int lo = static_cast<int>(std::ceil((-sim::kJointLimit - home) / kJointStep - 1e-9));
    int hi = static_cast<int>(std::floor((sim::kJointLimit - home) / kJointStep + 1e-9));
    return std::pair<int, int>{lo, hi};
  };
  auto [lo1, hi1] = range(sim::kHomeJoints[0]);
  auto [lo2, hi2] = range(sim::kHomeJoints[1]);
  auto [lo3, hi3] = range(sim::kHomeJoints[2]);
  for (int k1 = lo1; k1 <= hi1; ++k1) {
    double a1 = s.base.yaw + sim::kHomeJoints[0] + k1 * kJointStep;
    double x1 = s.base.x + sim::kLink1 * std::cos(a1);
    double y1 = s.base.y + sim::kLink1 * std::sin(a1);
    if (std::hypot(x1 - s.goal_x, y1 - s.goal_y) - (sim::kLink2 + sim::kLink3) >
        kArmTolerance)
      continue;
    for (int k2 = lo2; k2 <= hi2; ++k2) {
      double a2 = a1 + sim::kHomeJoints[1] + k2 * kJointStep;
      double x2 = x1 + sim::kLink2 * std::cos(a2);
      double y2 = y1 + sim::kLink2 * std::sin(a2);
      if (std::hypot(x2 - s.goal_x, y2 - s.goal_y) - sim::kLink3 > kArmTolerance) continue;
      for (int k3 = lo3; k3 <= hi3; ++k3) {
        double a3 = a2 + sim::kHomeJoints[2] + k3 * kJointStep;
        double ex = x2 + sim::kLink3 * std::cos(a3);
        double ey = y2 + sim::kLink3 * std::sin(a3);
        double dist = std::hypot(ex - s.goal_x, ey - s.goal_y);
        if (dist < kArmTolerance) cands.push_back({dist, {k1, k2, k3}});
      }
    }
  }
  std::sort(cands.begin(), cands.end(),
            [](const Cand& a, const Cand& b) { return a.dist < b.dist; });
  if (cands.size() > 200) cands.resize(200);
  for (const Cand& c : cands) {
    for (auto& order : candidate_orders(c.k)) {
      if (arm_path_clear(s, order)) {
        LatticePlan plan;
        plan.steps = c.k;
        plan.target = lattice_config(c.k);
        plan.order = std::move(order);
        return plan;
      }
    }
  }
  return std::nullopt;
}

bool transition_gate(const sim::WorldState& s) {
  kin::IKQuery q;
  q.base = s.base;
  q.goal_x = s.goal_x;
  q.goal_y = s.goal_y;
  q.obstacles = s.obstacles;
  if (!kin::ik_reachable(q)) return false;
  return plan_arm(s).has_value();
}

struct AttemptError {};

Episode run_attempt(sim::EnvId env, uint64_t episode_seed, Rng& rng) {
  sim::WorldState state = sim::sample_start(sim::env_spec(env), rng);
  if (sim::check_collision(state) == 1) throw AttemptError{};

  Episode ep;
  ep.env = sim::env_id_name(env);
  ep.seed = episode_seed;
  ep.states.push_back(state);
  ep.obs.push_back(sim::render_observation(state));

  auto record = [&](int action, int stage_label) {
    if (ep.length() >= 118) throw AttemptError{};
    sim::CommandArray cmd = sim::action_command(action);
    auto [next, out] = sim::step(state, cmd, sim::StepOptions{true, 120});
    if (out.c == 1) throw AttemptError{};
    state = next;
    ep.action.push_back(action);
    ep.command.push_back(cmd);
    ep.mask.push_back(stage_label == 1 ? 0 : 1);
    ep.reward.push_back(out.r);
    ep.collision.push_back(out.c);
    ep.stage.push_back(stage_label);
    ep.states.push_back(state);
    ep.obs.push_back(sim::render_observation(state));
    return out;
  };

  auto waypoints_opt = plan_base_path(state);
  if (!waypoints_opt) throw AttemptError{};
  std::vector<Pt>& waypoints = *waypoints_opt;

  size_t wp = 0;
  int base_steps = 0;
  while (!transition_gate(state)) {
    if (++base_steps > 100) throw AttemptError{};
    while (wp < waypoints.size() &&
           std::hypot(waypoints[wp].x - state.base.x, waypoints[wp].y - state.base.y) <
               kWaypointRadius)
      ++wp;
    Pt target = wp < waypoints.size() ? waypoints[wp] : Pt{state.goal_x, state.goal_y};
    if (wp >= waypoints.size() &&
        std::hypot(state.goal_x - state.base.x, state.goal_y - state.base.y) < 0.35)
      throw AttemptError{};  // ran out of path without a feasible arm plan
    double desired = std::atan2(target.y - state.base.y, target.x - state.base.x);
    double err = wrap_angle(desired - state.base.yaw);
    int action;
    if (std::abs(err) > kHeadingGate)
      action = err > 0 ? 2 : 3;
    else
      action = 0;
    record(action, 1);
  }

  ep.stage_boundary = ep.length();
  auto plan = plan_arm(state);
  if (!plan) throw AttemptError{};
  for (int action : plan->order) {
    auto out = record(action, 2);
    if (out.r == 1) break;
  }
  if (ep.reward.empty() || ep.reward.back() != 1) throw AttemptError{};
  if (ep.length() < kMinDemoSteps) throw AttemptError{};
  ep.success = true;
  return ep;
}

}  // namespace

void validate_demo(const Episode& e) {
  MMR_REQUIRE(e.obs.size() == e.action.size() + 1, "demo: obs/action length mismatch");
  MMR_REQUIRE(e.states.size() == e.obs.size(), "demo: state/obs length mismatch");
  size_t n = e.action.size();
  MMR_REQUIRE(e.command.size() == n && e.mask.size() == n && e.reward.size() == n &&
                  e.collision.size() == n && e.stage.size() == n,
              "demo: ragged step arrays");
  for (size_t t = 0; t < n; ++t) {
    MMR_REQUIRE(e.stage[t] == 1 || e.stage[t] == 2, "demo: bad stage label");
    if (t > 0) MMR_REQUIRE(e.stage[t] >= e.stage[t - 1], "demo: stage labels decrease");
    MMR_REQUIRE(e.mask[t] == (e.stage[t] == 1 ? 0 : 1), "demo: stage/mask disagreement");
    const auto& v = e.command[t].v;
    if (e.mask[t] == 0)
      MMR_REQUIRE(v[2] == 0 && v[3] == 0 && v[4] == 0, "demo: base step moves arm");
    else
      MMR_REQUIRE(v[0] == 0 && v[1] == 0, "demo: arm step moves base");
    MMR_REQUIRE(e.collision[t] == 0, "demo: collision recorded");
    if (t + 1 < n) MMR_REQUIRE(e.reward[t] == 0, "demo: non-terminal reward");
  }
  if (e.success) MMR_REQUIRE(!e.reward.empty() && e.reward.back() == 1,
                             "demo: success without terminal reward");
}

Episode generate_demo(sim::EnvId env, uint64_t seed) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Rng rng(seed, "demo." + sim::env_id_name(env) + "." + std::to_string(attempt));
    try {
      Episode ep = run_attempt(env, seed, rng);
      validate_demo(ep);
      return ep;
    } catch (const AttemptError&) {
      continue;
    }
  }
  throw ContractError("generate_demo: no successful attempt for env " +
                      sim::env_id_name(env) + " seed " + std::to_string(seed) + " after " +
                      std::to_string(kMaxAttempts) + " tries");
}

StageGoals compute_stage_goals(const std::vector<Episode>& demos, const EncodeFn& encode) {
  MMR_REQUIRE(!demos.empty(), "compute_stage_goals: no demos");
  StageGoals out;
  size_t count = 0;
  for (const Episode& ep : demos) {
    auto enc = encode(ep);
    MMR_REQUIRE(enc.size() == ep.obs.size(), "compute_stage_goals: encoding length mismatch");
    const auto& s1 = enc[static_cast<size_t>(ep.stage_boundary)];
    const auto& s2 = enc.back();
    if (out.stg1.empty()) {
      out.stg1.assign(s1.size(), 0.0f);
      out.stg2.assign(s2.size(), 0.0f);
    }
    MMR_REQUIRE(s1.size() == out.stg1.size() && s2.size() == out.stg2.size(),
                "compute_stage_goals: inconsistent encoding dims");
    for (size_t i = 0; i < s1.size(); ++i) out.stg1[i] += s1[i];
    for (size_t i = 0; i < s2.size(); ++i) out.stg2[i] += s2[i];
    ++count;
  }
  for (auto& v : out.stg1) v /= static_cast<float>(count);
  for (auto& v : out.stg2) v /= static_cast<float>(count);
  return out;
}

}  // namespace mmr::demos
