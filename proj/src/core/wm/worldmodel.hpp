#pragma once

#include <array>
#include <utility>
#include <vector>

#include "core/num/adam.hpp"
#include "core/num/nets.hpp"
#include "core/sim/sim2d.hpp"

namespace mmr::wm {

using num::Mat;
using num::Vec;

struct WmConfig {
  int h_dim = 128;
  int z_dim = 32;
  int hidden = 128;
  int action_dim = sim::kNumActions;
  int obs_dim = sim::Observation::kGridCells + sim::Observation::kProprio;
  int grid_dim = sim::Observation::kGridCells;
  float beta = 1.0f;
  float std_floor = 0.1f;
  float lr = 3e-4f;
  float codec_lr = 3e-4f;
  double l_rew_decay = 0.99;
  int code_groups = 4;
  int code_classes = 8;

  int feature_dim() const { return h_dim + z_dim; }
  int code_dim() const { return code_groups * code_classes; }
};

// A batch of latent states: one row per sequence. mean/stddev describe the
// diagonal Gaussian the z rows were sampled from (posterior after observe,
// prior after imagine_step).
struct LatentBatch {
  Mat h;
  Mat z;
  Mat mean;
  Mat stddev;

  int rows() const { return static_cast<int>(h.rows()); }
};

// Discrete subgoal id: one class per group.
struct SubgoalCode {
  std::array<int, 4> cls{};
};

struct WMLossReport {
  double reconstruction = 0;
  double reward_pred = 0;
  double collision_pred = 0;
  double kl = 0;
  double total = 0;
  double l_rew = 0;
  bool applied = true;
  double grad_norm = 0;
};

double wm_total_loss(double reconstruction, double reward_pred, double collision_pred,
                     double kl, double beta);

// Training sequences, time-major: row t * batch + b holds step t of sequence
// b. prev_action[i] is the one-hot action that led into observation i (zero
// row at an episode start); reward/collision are the outcomes of that same
// action, so they are aligned with the state being observed.
struct SeqBatch {
  int batch = 0;
  int steps = 0;
  Mat obs;
  Mat prev_action;
  Vec reward;
  Vec collision;
  Vec demo_mask;

  int rows() const { return batch * steps; }
};

Vec observation_to_vec(const sim::Observation& obs);

// Recurrent latent dynamics with reconstruction and reward/collision heads,
// plus the discrete subgoal codec over the deterministic features h.
class WorldModel {
 public:
  WorldModel(const WmConfig& cfg, uint64_t seed);

  const WmConfig& cfg() const { return cfg_; }

  LatentBatch initial(int rows) const;

  // Posterior step: h advances through the recurrent cell, z is drawn from
  // the (h, encoded obs) Gaussian.
  LatentBatch observe(const LatentBatch& prev, const Mat& prev_action, const Mat& obs,
                      Rng& rng) const;

  // Prior step: same recurrence, z drawn from the h-only Gaussian. Never
  // sees an observation.
  LatentBatch imagine_step(const LatentBatch& prev, const Mat& prev_action, Rng& rng) const;

  // Reconstruction; grid channels pass through a logistic, proprio is linear.
  Mat decode(const LatentBatch& s) const;

  // Predicted task reward and collision signal per row, both in [0, 1].
  std::pair<Vec, Vec> predict(const LatentBatch& s) const;

  static Mat features(const LatentBatch& s);

  // One optimizer step over the summed sequence loss. Updates l_rew from the
  // demo-masked reward-prediction error.
  // When out_posteriors is given, the per-step posterior states from the
  // training pass are copied into it (T entries of B rows each).
  WMLossReport train_batch(const SeqBatch& batch, Rng& rng,
                           std::vector<LatentBatch>* out_posteriors = nullptr);

  // Subgoal codec over h vectors.
  SubgoalCode encode_goal(const Vec& h) const;
  Vec decode_goal(const SubgoalCode& code) const;
  Mat decode_codes(const Mat& onehot) const;
  Mat code_to_onehot(const SubgoalCode& code) const;
  double train_codec(const Mat& h_batch, Rng& rng);

  double l_rew() const { return l_rew_; }
  void set_l_rew(double v) { l_rew_ = v; }

  num::ParamStore& rssm_store() { return store_; }
  num::ParamStore& codec_store() { return codec_store_; }
  const num::ParamStore& rssm_store() const { return store_; }
  const num::ParamStore& codec_store() const { return codec_store_; }
  num::Adam& optimizer() { return adam_; }

 private:
  struct Dist {
    Mat mean;
    Mat stddev;
  };
  Dist split_dist(const Mat& raw) const;

  WmConfig cfg_;
  num::ParamStore store_;
  num::ParamStore codec_store_;
  Rng init_rng_;
  num::Mlp encoder_;
  num::GruCell cell_;
  num::Mlp post_head_;
  num::Mlp prior_head_;
  num::Mlp decoder_;
  num::Mlp reward_head_;
  num::Mlp collision_head_;
  num::Mlp code_enc_;
  num::Mlp code_dec_;
  num::Adam adam_;
  num::Adam codec_adam_;
  double l_rew_ = 1.0;
};

}  // namespace mmr::wm
