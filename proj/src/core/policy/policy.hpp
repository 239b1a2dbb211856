#pragma once

#include <string>
#include <vector>

#include "core/num/adam.hpp"
#include "core/num/nets.hpp"
#include "core/wm/worldmodel.hpp"

namespace mmr::policy {

using num::Mat;
using num::Vec;

constexpr int kMaskBase = 0;
constexpr int kMaskArm = 1;

struct PolicyConfig {
  int feature_dim = 160;
  int goal_dim = 128;
  int action_dim = sim::kNumActions;
  int code_groups = 4;
  int code_classes = 8;
  int hidden = 128;
  float actor_lr = 1e-4f;
  float critic_lr = 1e-4f;
  float eta = 3e-3f;
  float gamma = 0.99f;
  float lambda = 0.95f;
  int horizon = 18;
  int manager_period = 6;
  float w_task = 1.0f;
  float w_collision = -0.1f;
  float w_progress = 0.1f;
  float w_goal = 0.1f;
  float imitation_weight = 0.1f;
  int frozen_sync = 100;
  float mu_predefined = 0.9f;
  float mu_min = 0.05f;
  float mu_max = 0.95f;
  // Separate per-embodiment networks for manager and worker (the modified
  // variant); the mask input is dropped since the copy encodes it.
  bool modified = false;

  int code_dim() const { return code_groups * code_classes; }
};

struct UpdateReport {
  double actor_loss = 0;
  double critic_loss = 0;
  double entropy = 0;
  double imitation = 0;
  bool applied = true;
};

// V^lambda_t = r_t + gamma * ((1 - lambda) * v_{t+1} + lambda * V^lambda_{t+1}),
// bootstrapped with V^lambda_T = v_T. values has one more entry than rewards.
std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& values, double gamma,
                                   double lambda);

// clamp(mu_predefined - 10 * l_rew, [mu_min, mu_max])
double compute_mu(double l_rew, const PolicyConfig& cfg);

// Per-sample critic target mu * r + (1 - mu) * q_frozen.
Vec selector_targets(const Vec& reward, const Vec& q_frozen, double mu);

// Mean cross-entropy of integer labels under rowwise softmax logits.
double cross_entropy(const Mat& logits, const std::vector<int>& labels);

// Embodiment selector: two-way categorical over [features, stg1, stg2] with
// a Q critic per mask and a periodically frozen target copy.
class Selector {
 public:
  Selector(const PolicyConfig& cfg, uint64_t seed);

  int select(const Vec& feat, const Vec& stg1, const Vec& stg2, double eps, Rng& rng) const;
  std::vector<int> select_batch(const Mat& feats, const Mat& stg1, const Mat& stg2, double eps,
                                Rng& rng) const;
  // Actor probabilities per row, [Bx2].
  Mat probs(const Mat& feats, const Mat& stg1, const Mat& stg2) const;
  // Critic values per row and mask, [Bx2]; q_frozen reads the target copy.
  Mat q(const Mat& feats, const Mat& stg1, const Mat& stg2) const;
  Mat q_frozen(const Mat& feats, const Mat& stg1, const Mat& stg2) const;

  struct Batch {
    Mat feats;
    Mat stg1;
    Mat stg2;
    std::vector<int> mask;
    Vec reward;
  };
  UpdateReport update(const Batch& batch, double mu, Rng& rng);

  long updates() const { return updates_; }
  num::ParamStore& actor_store() { return actor_store_; }
  num::ParamStore& critic_store() { return critic_store_; }
  num::ParamStore& frozen_store() { return frozen_store_; }
  void sync_frozen();

 private:
  Mat assemble(const Mat& feats, const Mat& stg1, const Mat& stg2) const;

  PolicyConfig cfg_;
  num::ParamStore actor_store_, critic_store_, frozen_store_;
  Rng init_rng_;
  num::Mlp actor_;
  num::Mlp critic_;
  num::Mlp frozen_;
  num::Adam actor_adam_, critic_adam_;
  long updates_ = 0;
};

// Subgoal manager: 4x8 categorical codes over [features, stage goal] (and
// the mask when networks are shared), with task / collision / progress
// critics combined at fixed weights.
class Manager {
 public:
  Manager(const PolicyConfig& cfg, uint64_t seed);

  // Samples a code and returns its one-hot row [1 x 32].
  wm::SubgoalCode sample(const Vec& feat, const Vec& goal, int mask, Rng& rng) const;
  Mat sample_batch(const Mat& feats, const Mat& goals, const std::vector<int>& mask,
                   Rng& rng) const;
  // Critic value per row for one channel (0 task, 1 collision, 2 progress).
  Vec channel_value(int channel, const Mat& feats, const Mat& goals,
                    const std::vector<int>& embodiment) const;

  struct Batch {
    int batch = 0;
    int steps = 0;            // abstract steps
    Mat feats;                // batch*(steps+1) rows, time-major
    Mat goals;                // batch*(steps+1) rows
    Mat codes;                // batch*steps rows of one-hot codes
    Vec r_task, r_collision, r_progress;  // batch*steps
    std::vector<int> embodiment;          // batch entries
  };
  struct Imitation {
    Mat feats;
    Mat goals;
    Mat codes;
    std::vector<int> embodiment;
  };
  UpdateReport update(const Batch& batch, const Imitation* imitation, Rng& rng);

  num::ParamStore& actor_store() { return actor_store_; }
  num::ParamStore& critic_store() { return critic_store_; }

 private:
  friend class PolicyTestPeek;
  Mat assemble(const Mat& feats, const Mat& goals, const std::vector<int>& embodiment) const;

  PolicyConfig cfg_;
  int copies_;
  num::ParamStore actor_store_, critic_store_;
  Rng init_rng_;
  std::vector<num::Mlp> actors_;                 // one per copy
  std::vector<std::vector<num::Mlp>> critics_;   // [copy][channel: task, collision, progress]
  num::Adam actor_adam_, critic_adam_;
};

// Masked action head over [features, subgoal] (and the mask when shared).
class Worker {
 public:
  Worker(const PolicyConfig& cfg, uint64_t seed);

  int act(const Vec& feat, const Vec& subgoal, int mask, double eps, Rng& rng) const;
  // One-hot actions per row; indices optionally written to out_indices.
  Mat act_batch(const Mat& feats, const Mat& subgoals, const std::vector<int>& mask, double eps,
                Rng& rng, std::vector<int>* out_indices = nullptr) const;
  Vec value(const Mat& feats, const Mat& subgoals, const std::vector<int>& embodiment) const;

  struct Batch {
    int batch = 0;
    int steps = 0;
    Mat feats;                 // batch*(steps+1) rows, time-major
    Mat subgoals;              // batch*(steps+1) rows
    std::vector<int> actions;  // batch*steps
    Vec reward;                // batch*steps
    std::vector<int> embodiment;  // batch entries
  };
  struct Imitation {
    Mat feats;
    Mat subgoals;
    std::vector<int> actions;
    std::vector<int> embodiment;
  };
  UpdateReport update(const Batch& batch, const Imitation* imitation, Rng& rng);

  num::ParamStore& actor_store() { return actor_store_; }
  num::ParamStore& critic_store() { return critic_store_; }

 private:
  Mat assemble(const Mat& feats, const Mat& subgoals, const std::vector<int>& embodiment) const;

  PolicyConfig cfg_;
  int copies_;
  num::ParamStore actor_store_, critic_store_;
  Rng init_rng_;
  std::vector<num::Mlp> actors_;
  std::vector<num::Mlp> critics_;
  num::Adam actor_adam_, critic_adam_;
};

// Sum over the next K states of cosine(h_i, stg2).
double progress_reward(const std::vector<Vec>& h_states, const Vec& stg2);

// cosine(h, subgoal)
double goal_reward(const Vec& h, const Vec& subgoal);

}  // namespace mmr::policy
