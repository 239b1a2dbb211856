#include "core/reach/reach.hpp"

namespace mmr::reach {

PredictedRollout rollout_fixed_arm(const wm::WorldModel& model, const wm::LatentBatch& s0,
                                   const ArmPolicy& policy, Rng& rng,
                                   const ReachabilityConfig& cfg) {
  MMR_REQUIRE(cfg.horizon >= 1, "rollout: horizon must be positive");
  PredictedRollout out;
  out.states.reserve(cfg.horizon + 1);
  out.states.push_back(s0);
  auto [r0, c0] = model.predict(s0);
  out.rewards.push_back(r0);
  out.collisions.push_back(c0);

  for (int t = 0; t < cfg.horizon; ++t) {
    Mat a = policy(out.states.back(), t);
    MMR_REQUIRE(a.rows() == s0.rows() && a.cols() == model.cfg().action_dim,
                "rollout: bad action shape");
    for (int r = 0; r < a.rows(); ++r) {
      for (int k = 0; k < sim::kNumBaseActions; ++k)
        MMR_REQUIRE(a(r, k) == 0.0f, "rollout: base channel active under arm embodiment");
    }
    out.actions.push_back(a);
    out.states.push_back(model.imagine_step(out.states.back(), a, rng));
    auto [rt, ct] = model.predict(out.states.back());
    out.rewards.push_back(rt);
    out.collisions.push_back(ct);
  }
  return out;
}

std::vector<uint8_t> evaluate(const PredictedRollout& rollout, const ReachabilityConfig& cfg) {
  MMR_REQUIRE(!rollout.states.empty(), "evaluate: empty rollout");
  MMR_REQUIRE(rollout.rewards.size() == rollout.states.size() &&
                  rollout.collisions.size() == rollout.states.size(),
              "evaluate: length mismatch");
  const int n = rollout.rows();
  std::vector<uint8_t> reachable(n, 0);
  for (int b = 0; b < n; ++b) {
    bool reward_hit = false;
    bool collision_free = true;
    for (size_t i = 0; i < rollout.rewards.size(); ++i) {
      double r = rollout.rewards[i][b];
      double c = rollout.collisions[i][b];
      MMR_REQUIRE(r >= 0.0 && r <= 1.0 && c >= 0.0 && c <= 1.0,
                  "evaluate: predictions outside [0,1]");
      if (r > cfg.r_th) reward_hit = true;
      if (!(c < cfg.c_th)) collision_free = false;
    }
    reachable[b] = reward_hit && collision_free;
  }
  return reachable;
}

double reachability_reward(int mask, bool reachable, const ReachabilityConfig& cfg) {
  MMR_REQUIRE(mask == 0 || mask == 1, "reachability_reward: bad mask");
  if (mask == 0) return cfg.reward_base;
  return reachable ? cfg.reward_arm_reachable : cfg.reward_arm_unreachable;
}

}  // namespace mmr::reach
