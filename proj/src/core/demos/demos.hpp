#pragma once

#include <functional>
#include <string>
#include <vector>

#include "core/sim/sim2d.hpp"

namespace mmr::demos {

// One recorded episode. states/obs have one more entry than the step arrays:
// states[t] is what action[t] was taken from, states.back() is the state
// after the last action, and obs[t] renders states[t].
// reward[t]/collision[t] are the outcome of action[t].
struct Episode {
  std::string env;
  uint64_t seed = 0;
  bool success = false;
  int stage_boundary = 0;  // index of the first arm step

  std::vector<sim::WorldState> states;
  std::vector<sim::Observation> obs;
  std::vector<int> action;
  std::vector<sim::CommandArray> command;
  std::vector<int> mask;    // 0 base, 1 arm
  std::vector<int> reward;
  std::vector<int> collision;
  std::vector<int> stage;   // 1 or 2

  int length() const { return static_cast<int>(action.size()); }
};

// Throws ContractError if the episode violates the demo invariants
// (monotone stages, stage/mask agreement, command/mask isolation,
// 0...0-then-1 rewards on success, zero collisions).
void validate_demo(const Episode& e);

// Scripted two-stage expert: drives the base along a collision-free path
// until the goal is IK-reachable, then steps the arm to a solved
// configuration. Deterministic in (env, seed); retries internally with
// derived seeds up to 20 times; throws ContractError when no attempt works.
Episode generate_demo(sim::EnvId env, uint64_t seed);

// Latent encodings of each episode's observations, one vector per obs index.
using EncodeFn =
    std::function<std::vector<std::vector<float>>(const Episode&)>;

struct StageGoals {
  std::vector<float> stg1;
  std::vector<float> stg2;
};

// stg1 = mean encoded state at each demo's base-stage end (obs index
// stage_boundary), stg2 = mean encoded final state (last obs).
StageGoals compute_stage_goals(const std::vector<Episode>& demos, const EncodeFn& encode);

}  // namespace mmr::demos
