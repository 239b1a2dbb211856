#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "core/sim/sim2d.hpp"

using namespace mmr;
using namespace mmr::sim;

namespace {

// Independent FK oracle: explicit 2x2 rotation matrices composed per link,
// rather than the cumulative-angle summation used by the implementation.
std::pair<double, double> fk_oracle(const BasePose& base, const std::array<double, 3>& joints) {
  double R[2][2] = {{std::cos(base.yaw), -std::sin(base.yaw)},
                    {std::sin(base.yaw), std::cos(base.yaw)}};
  double px = base.x, py = base.y;
  const double lens[3] = {kLink1, kLink2, kLink3};
  for (int i = 0; i < 3; ++i) {
    double c = std::cos(joints[i]), s = std::sin(joints[i]);
    double r00 = R[0][0] * c + R[0][1] * s;
    double r01 = -R[0][0] * s + R[0][1] * c;
    double r10 = R[1][0] * c + R[1][1] * s;
    double r11 = -R[1][0] * s + R[1][1] * c;
    R[0][0] = r00; R[0][1] = r01; R[1][0] = r10; R[1][1] = r11;
    px += R[0][0] * lens[i];
    py += R[1][0] * lens[i];
  }
  return {px, py};
}

WorldState open_state(double x, double y, double yaw) {
  WorldState s;
  s.base = {x, y, yaw};
  s.joints = {0, 0, 0};
  s.goal_x = 4.5;
  s.goal_y = 4.5;
  return s;
}

}  // namespace

TEST_CASE("fk straight chain and quarter turn") {
  BasePose origin{0, 0, 0};
  auto [x, y] = forward_kinematics(origin, {0, 0, 0});
  CHECK(x == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(y == doctest::Approx(0.0).epsilon(1e-12));

  auto [x2, y2] = forward_kinematics(origin, {kPi / 2, 0, 0});
  CHECK(x2 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(y2 == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("fk matches the rotation-matrix oracle") {
  Rng rng(77);
  for (int i = 0; i < 500; ++i) {
    BasePose base{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(-kPi, kPi)};
    std::array<double, 3> joints{rng.uniform(-2.6, 2.6), rng.uniform(-2.6, 2.6),
                                 rng.uniform(-2.6, 2.6)};
    auto [x, y] = forward_kinematics(base, joints);
    auto [ox, oy] = fk_oracle(base, joints);
    CHECK(std::abs(x - ox) < 1e-9);
    CHECK(std::abs(y - oy) < 1e-9);
  }
}

TEST_CASE("fk points are spaced by the link lengths") {
  Rng rng(78);
  for (int i = 0; i < 50; ++i) {
    BasePose base{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(-kPi, kPi)};
    std::array<double, 3> joints{rng.uniform(-2.6, 2.6), rng.uniform(-2.6, 2.6),
                                 rng.uniform(-2.6, 2.6)};
    ArmPoints pts = fk_points(base, joints);
    const double lens[3] = {kLink1, kLink2, kLink3};
    for (int k = 0; k < 3; ++k) {
      double d = std::hypot(pts[k + 1].first - pts[k].first, pts[k + 1].second - pts[k].second);
      CHECK(d == doctest::Approx(lens[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero command leaves the state unchanged") {
  WorldState s = open_state(2.0, 3.0, 0.7);
  s.joints = {0.5, -1.0, 0.3};
  auto [next, out] = step(s, CommandArray{});
  CHECK(next.base.x == s.base.x);
  CHECK(next.base.y == s.base.y);
  CHECK(next.base.yaw == s.base.yaw);
  CHECK(next.joints == s.joints);
  CHECK(next.step_count == 1);
  CHECK(out.r == 0);
  CHECK(out.c == 0);
}

TEST_CASE("forward motion follows the heading") {
  WorldState s = open_state(1.0, 1.0, 0.0);
  CommandArray cmd;
  cmd.v[0] = 0.1;
  auto [next, out] = step(s, cmd);
  CHECK(next.base.x == doctest::Approx(1.1).epsilon(1e-12));
  CHECK(next.base.y == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("translation happens along the pre-rotation heading") {
  WorldState s = open_state(1.0, 1.0, 0.0);
  CommandArray cmd;
  cmd.v[0] = 0.1;
  cmd.v[1] = 0.26;
  auto [next, out] = step(s, cmd);
  CHECK(next.base.x == doctest::Approx(1.1).epsilon(1e-12));
  CHECK(next.base.y == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(next.base.yaw == doctest::Approx(0.26).epsilon(1e-12));
}

TEST_CASE("base command leaves joints bit-identical") {
  WorldState s = open_state(2.0, 2.0, 1.1);
  s.joints = {0.123456789, -1.23456789, 2.3456789};
  CommandArray cmd;
  cmd.v[0] = 0.1;
  cmd.v[1] = -0.26;
  auto [next, out] = step(s, cmd);
  CHECK(next.joints[0] == s.joints[0]);
  CHECK(next.joints[1] == s.joints[1]);
  CHECK(next.joints[2] == s.joints[2]);
}

TEST_CASE("embodiment isolation holds for random commands") {
  Rng rng(79);
  for (int i = 0; i < 200; ++i) {
    WorldState s = open_state(rng.uniform(0.5, 4.5), rng.uniform(0.5, 4.5),
                              rng.uniform(-kPi, kPi));
    s.joints = {rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5), rng.uniform(-2.5, 2.5)};
    CommandArray cmd;
    if (i % 2 == 0) {
      cmd.v[0] = rng.uniform(-0.1, 0.1);
      cmd.v[1] = rng.uniform(-0.26, 0.26);
      auto [next, out] = step(s, cmd);
      CHECK(next.joints == s.joints);
    } else {
      cmd.v[2] = rng.uniform(-0.17, 0.17);
      cmd.v[3] = rng.uniform(-0.17, 0.17);
      cmd.v[4] = rng.uniform(-0.17, 0.17);
      auto [next, out] = step(s, cmd);
      CHECK(next.base.x == s.base.x);
      CHECK(next.base.y == s.base.y);
      CHECK(next.base.yaw == s.base.yaw);
    }
  }
}

TEST_CASE("commands beyond the caps are rejected") {
  WorldState s = open_state(2, 2, 0);
  CommandArray cmd;
  cmd.v[0] = 0.11;
  CHECK_THROWS_AS(step(s, cmd), ContractError);
  cmd.v[0] = 0;
  cmd.v[5] = 0.01;
  CHECK_THROWS_AS(step(s, cmd), ContractError);
}

TEST_CASE("joints clamp at their limits") {
  WorldState s = open_state(2, 2, 0);
  s.joints = {2.55, -2.55, 0};
  CommandArray cmd;
  cmd.v[2] = 0.17;
  cmd.v[3] = -0.17;
  auto [next, out] = step(s, cmd);
  CHECK(next.joints[0] == doctest::Approx(2.6));
  CHECK(next.joints[1] == doctest::Approx(-2.6));
}

TEST_CASE("yaw stays normalized") {
  WorldState s = open_state(2, 2, 3.0);
  CommandArray cmd;
  cmd.v[1] = 0.26;
  auto [next, out] = step(s, cmd);
  CHECK(next.base.yaw <= kPi);
  CHECK(next.base.yaw > -kPi);
  CHECK(next.base.yaw == doctest::Approx(3.26 - 2 * kPi).epsilon(1e-12));
}

TEST_CASE("bounds clip the base without flagging a collision") {
  WorldState s = open_state(4.7, 2.5, 0.0);
  CommandArray cmd;
  cmd.v[0] = 0.1;
  auto [next, out] = step(s, cmd);
  CHECK(next.base.x == doctest::Approx(5.0 - kBaseRadius));
  CHECK(out.c == 0);
}

TEST_CASE("collision in an empty world is always zero") {
  Rng rng(80);
  for (int i = 0; i < 200; ++i) {
    WorldState s = open_state(rng.uniform(0.3, 4.7), rng.uniform(0.3, 4.7),
                              rng.uniform(-kPi, kPi));
    s.joints = {rng.uniform(-2.6, 2.6), rng.uniform(-2.6, 2.6), rng.uniform(-2.6, 2.6)};
    CHECK(check_collision(s) == 0);
  }
}

TEST_CASE("base center inside a box collides") {
  WorldState s = open_state(2.0, 2.0, 0.0);
  s.obstacles.push_back(Box{1.8, 1.8, 2.2, 2.2});
  CHECK(check_collision(s) == 1);
}

TEST_CASE("base disc touching a box collides by distance") {
  WorldState s = open_state(1.0, 1.0, kPi);  // arm points away from the box
  s.obstacles.push_back(Box{1.2, 0.8, 1.5, 1.2});
  CHECK(check_collision(s) == 1);  // gap 0.2 < radius 0.25

  WorldState s2 = open_state(0.9, 1.0, kPi);
  s2.obstacles.push_back(Box{1.2, 0.8, 1.5, 1.2});
  CHECK(check_collision(s2) == 0);  // gap 0.3
}

TEST_CASE("arm segment crossing a box collides") {
  WorldState s = open_state(1.0, 1.0, 0.0);  // arm spans (1,1)..(1.8,1)
  s.obstacles.push_back(Box{1.4, 0.9, 1.5, 1.1});
  CHECK(check_collision(s) == 1);

  // Same box shifted above the arm line and out of the base disc.
  WorldState s2 = open_state(1.0, 1.0, 0.0);
  s2.obstacles.push_back(Box{1.4, 1.3, 1.5, 1.5});
  CHECK(check_collision(s2) == 0);
}

TEST_CASE("reward threshold sits at 0.1 m") {
  WorldState s = open_state(1.0, 1.0, 0.0);  // EE at (1.8, 1.0), exactly y = 1
  s.goal_x = 1.0 + 0.3 + 0.3 + 0.2;
  s.goal_y = 1.0 + 0.10000001;
  auto [n1, o1] = step(s, CommandArray{});
  CHECK(o1.r == 0);

  s.goal_y = 1.0 + 0.09999999;
  auto [n2, o2] = step(s, CommandArray{});
  CHECK(o2.r == 1);
}

TEST_CASE("reward agrees with forward kinematics for random states") {
  Rng rng(81);
  for (int i = 0; i < 300; ++i) {
    WorldState s = open_state(rng.uniform(0.5, 4.5), rng.uniform(0.5, 4.5),
                              rng.uniform(-kPi, kPi));
    s.joints = {rng.uniform(-2.6, 2.6), rng.uniform(-2.6, 2.6), rng.uniform(-2.6, 2.6)};
    s.goal_x = rng.uniform(0.5, 4.5);
    s.goal_y = rng.uniform(0.5, 4.5);
    if (i % 3 == 0) {
      // Plant the goal near the end effector so both branches get exercised.
      auto [ex, ey] = forward_kinematics(s.base, s.joints);
      s.goal_x = ex + rng.uniform(-0.15, 0.15);
      s.goal_y = ey + rng.uniform(-0.15, 0.15);
    }
    auto [next, out] = step(s, CommandArray{});
    auto [ex, ey] = forward_kinematics(next.base, next.joints);
    int expect = std::hypot(ex - next.goal_x, ey - next.goal_y) < 0.1 ? 1 : 0;
    CHECK(out.r == expect);
  }
}

TEST_CASE("evaluation termination and step caps") {
  WorldState s = open_state(1.0, 1.0, 0.0);
  s.goal_x = 1.85;
  s.goal_y = 1.0;
  auto [n1, o1] = step(s, CommandArray{}, StepOptions{true, 120});
  CHECK(o1.r == 1);
  CHECK(o1.done);

  auto [n2, o2] = step(s, CommandArray{}, StepOptions{false, 120});
  CHECK(o2.r == 1);
  CHECK_FALSE(o2.done);

  WorldState far = open_state(1.0, 1.0, 0.0);
  far.step_count = 59;
  auto [n3, o3] = step(far, CommandArray{}, StepOptions{false, 60});
  CHECK(o3.done);
}

TEST_CASE("action table respects caps and embodiment split") {
  for (int a = 0; a < kNumActions; ++a) {
    CommandArray cmd = action_command(a);
    for (int i = 0; i < 7; ++i) CHECK(std::abs(cmd.v[i]) <= kCommandCaps[i]);
    bool arm = cmd.v[2] != 0 || cmd.v[3] != 0 || cmd.v[4] != 0;
    bool base = cmd.v[0] != 0 || cmd.v[1] != 0;
    CHECK(arm != base);
    CHECK(is_arm_action(a) == arm);
  }
  CHECK_THROWS_AS(action_command(10), ContractError);
  CHECK(action_command(0).v[0] == doctest::Approx(0.1));
  CHECK(action_command(1).v[0] == doctest::Approx(-0.1));
  CHECK(action_command(2).v[1] == doctest::Approx(0.26));
  CHECK(action_command(9).v[4] == doctest::Approx(-0.17));
}

TEST_CASE("empty world renders an all-zero obstacle channel") {
  WorldState s = open_state(2.5, 2.5, 0.0);
  Observation obs = render_observation(s);
  for (int k = 0; k < 32 * 32; ++k) CHECK(obs.grid[k] == 0);
}

TEST_CASE("goal at the bounds center marks exactly the central cells") {
  WorldState s = open_state(1.0, 1.0, 0.0);
  s.goal_x = 2.5;
  s.goal_y = 2.5;
  Observation obs = render_observation(s);
  int marked = 0;
  for (int row = 0; row < 32; ++row) {
    for (int col = 0; col < 32; ++col) {
      if (obs.grid[32 * 32 + row * 32 + col]) {
        ++marked;
        CHECK((row == 15 || row == 16));
        CHECK((col == 15 || col == 16));
      }
    }
  }
  CHECK(marked == 4);  // the center point touches four cells
}

TEST_CASE("rendering is deterministic and local to the goal channel") {
  WorldState s = open_state(1.7, 3.1, 0.9);
  s.joints = {0.4, -0.8, 1.2};
  s.obstacles.push_back(Box{2.0, 2.0, 3.0, 2.4});
  s.goal_x = 4.0;
  s.goal_y = 1.0;

  Observation a = render_observation(s);
  Observation b = render_observation(s);
  CHECK(a.grid == b.grid);

  WorldState s2 = s;
  s2.goal_x = 1.0;
  s2.goal_y = 4.0;
  Observation c = render_observation(s2);
  for (int k = 0; k < 32 * 32; ++k) {
    CHECK(a.grid[k] == c.grid[k]);                      // obstacle plane
    CHECK(a.grid[2 * 32 * 32 + k] == c.grid[2 * 32 * 32 + k]);  // robot plane
  }
  bool goal_differs = false;
  for (int k = 32 * 32; k < 2 * 32 * 32; ++k)
    if (a.grid[k] != c.grid[k]) goal_differs = true;
  CHECK(goal_differs);
}

TEST_CASE("an obstacle aligned to the cell lattice fills exactly its row") {
  WorldState s = open_state(2.5, 4.0, 0.0);
  double cell = 5.0 / 32.0;
  s.obstacles.push_back(Box{0.0, 0.0, 5.0, cell});
  Observation obs = render_observation(s);
  for (int col = 0; col < 32; ++col) {
    CHECK(obs.grid[0 * 32 + col] == 1);
    CHECK(obs.grid[1 * 32 + col] == 0);
  }
}

TEST_CASE("robot channel covers the base disc") {
  WorldState s = open_state(2.5, 2.5, 0.0);
  Observation obs = render_observation(s);
  int body = 0;
  for (int k = 0; k < 32 * 32; ++k) body += obs.grid[2 * 32 * 32 + k];
  // Disc area pi * 0.25^2 over cell area (5/32)^2 is about 8 cells; the arm
  // adds a few more.
  CHECK(body >= 8);
  CHECK(body <= 40);
}

TEST_CASE("proprio fields are normalized and consistent") {
  WorldState s = open_state(1.25, 3.75, 0.6);
  s.joints = {1.3, -2.6, 0.0};
  Observation obs = render_observation(s);
  CHECK(obs.proprio[0] == doctest::Approx(std::sin(0.6)));
  CHECK(obs.proprio[1] == doctest::Approx(std::cos(0.6)));
  CHECK(obs.proprio[2] == doctest::Approx(0.5));
  CHECK(obs.proprio[3] == doctest::Approx(-1.0));
  CHECK(obs.proprio[4] == doctest::Approx(0.0));
  CHECK(obs.proprio[5] == doctest::Approx(0.25));
  CHECK(obs.proprio[6] == doctest::Approx(0.75));
  CHECK(obs.proprio[7] == doctest::Approx(1.0));
}

TEST_CASE("environments are seeded deterministically") {
  for (auto id : {EnvId::kEmpty, EnvId::kObstacleBase, EnvId::kObstacleArm, EnvId::kRoom}) {
    WorldState a = make_env(id, 7);
    WorldState b = make_env(id, 7);
    CHECK(a.base.x == b.base.x);
    CHECK(a.base.y == b.base.y);
    CHECK(a.base.yaw == b.base.yaw);
    WorldState c = make_env(id, 8);
    bool differs = a.base.x != c.base.x || a.base.y != c.base.y || a.base.yaw != c.base.yaw;
    CHECK(differs);
  }
}

TEST_CASE("every start pose is outside arm reach of the goal") {
  for (auto id : {EnvId::kEmpty, EnvId::kObstacleBase, EnvId::kObstacleArm, EnvId::kRoom}) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      WorldState s = make_env(id, seed);
      CHECK(std::hypot(s.base.x - s.goal_x, s.base.y - s.goal_y) > kNearGoalRadius);
      CHECK(check_collision(s) == 0);
      CHECK(s.bounds.contains(s.base.x, s.base.y));
    }
  }
}

TEST_CASE("obstacle-base blocks the straight line from start centroid to goal") {
  EnvSpec spec = env_spec(EnvId::kObstacleBase);
  REQUIRE(spec.obstacles.size() == 1);
  double cx = 0.5 * (spec.start_region.xmin + spec.start_region.xmax);
  double cy = 0.5 * (spec.start_region.ymin + spec.start_region.ymax);
  CHECK(segment_intersects_box(cx, cy, spec.goal_x, spec.goal_y, spec.obstacles[0]));
}

TEST_CASE("obstacle-arm places a block and a multi-part stick") {
  EnvSpec spec = env_spec(EnvId::kObstacleArm);
  CHECK(spec.obstacles.size() >= 3);
}

TEST_CASE("env ids round-trip through their names") {
  for (auto id : {EnvId::kEmpty, EnvId::kObstacleBase, EnvId::kObstacleArm, EnvId::kRoom})
    CHECK(parse_env_id(env_id_name(id)) == id);
  CHECK_THROWS_AS(parse_env_id("bogus"), ContractError);
}

TEST_CASE("segment box intersection basics") {
  Box box{1, 1, 2, 2};
  CHECK(segment_intersects_box(0, 0, 3, 3, box));
  CHECK(segment_intersects_box(1.5, 0, 1.5, 3, box));
  CHECK_FALSE(segment_intersects_box(0, 0, 0.9, 0.9, box));
  CHECK_FALSE(segment_intersects_box(0, 2.5, 3, 2.5, box));
  CHECK(segment_intersects_box(1.2, 1.2, 1.8, 1.8, box));  // fully inside
}
