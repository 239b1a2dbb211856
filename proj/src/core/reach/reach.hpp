#pragma once

#include <functional>
#include <vector>

#include "core/wm/worldmodel.hpp"

namespace mmr::reach {

using num::Mat;
using num::Vec;

struct ReachabilityConfig {
  double r_th = 0.7;
  double c_th = 0.3;
  int horizon = 18;
  double reward_arm_reachable = 2.0;
  double reward_arm_unreachable = -1.0;
  double reward_base = 0.0;
};

// Imagined arm-only rollout for a batch of initial states. states has
// horizon + 1 entries (the initial posterior state included); rewards and
// collisions are predictor outputs at every state; actions has horizon
// entries of one-hot rows.
struct PredictedRollout {
  std::vector<wm::LatentBatch> states;
  std::vector<Vec> rewards;
  std::vector<Vec> collisions;
  std::vector<Mat> actions;

  int rows() const { return states.empty() ? 0 : states.front().rows(); }
  int horizon() const { return static_cast<int>(actions.size()); }
};

// Produces one-hot arm actions for the current imagined state. The step
// index lets the caller refresh its subgoal on its own schedule.
using ArmPolicy = std::function<Mat(const wm::LatentBatch&, int step)>;

// Rolls the world model forward under arm-only actions. Every action row
// must have zero base channels; violations throw. Embodiment is fixed for
// the whole rollout.
PredictedRollout rollout_fixed_arm(const wm::WorldModel& model, const wm::LatentBatch& s0,
                                   const ArmPolicy& policy, Rng& rng,
                                   const ReachabilityConfig& cfg = {});

// Reachable iff some predicted reward strictly exceeds r_th and every
// predicted collision stays strictly below c_th, scanning all horizon + 1
// states.
std::vector<uint8_t> evaluate(const PredictedRollout& rollout, const ReachabilityConfig& cfg = {});

// Table lookup. mask: 0 = base, 1 = arm.
double reachability_reward(int mask, bool reachable, const ReachabilityConfig& cfg = {});

}  // namespace mmr::reach
