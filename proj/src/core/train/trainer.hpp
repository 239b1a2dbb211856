#pragma once

#include <string>
#include <vector>

#include "core/demos/demos.hpp"
#include "core/policy/policy.hpp"
#include "core/reach/reach.hpp"
#include "core/train/replay.hpp"
#include "core/wm/worldmodel.hpp"

namespace mmr::train {

using num::Mat;
using num::Vec;

enum class DemoVariant { kFull, kDemoExperience, kDemoGoal, kNoDemo };
enum class Hierarchy { kFull, kFlat };
enum class ManagerReward { kProgress, kExploration };

const char* demo_variant_name(DemoVariant v);
const char* hierarchy_name(Hierarchy h);
const char* manager_reward_name(ManagerReward r);
DemoVariant parse_demo_variant(const std::string& s);
Hierarchy parse_hierarchy(const std::string& s);
ManagerReward parse_manager_reward(const std::string& s);

struct TrainConfig {
  sim::EnvId env = sim::EnvId::kEmpty;
  uint64_t seed = 1;
  DemoVariant demo_variant = DemoVariant::kFull;
  Hierarchy hierarchy = Hierarchy::kFull;
  ManagerReward manager_reward = ManagerReward::kProgress;
  bool modified = false;

  int demo_count = 50;
  int pretrain_steps = 5000;
  int pretrain_slices = 4;
  long train_env_steps = 150000;
  int episode_len = 60;
  int rl_iters_per_cycle = 4;
  int eval_every_cycles = 50;
  int eval_episodes = 20;
  int eval_step_cap = 120;
  int slices_per_iter = 2;
  int slice_len = 32;
  long buffer_capacity = 200000;
  double eps_start = 0.3;
  double eps_final = 0.05;
  long eps_anneal_steps = 50000;
  int checkpoint_every_cycles = 0;  // 0: final checkpoint only

  wm::WmConfig wm;
  policy::PolicyConfig policy;
  reach::ReachabilityConfig reach;
};

// One row per rl_iteration.
struct MetricsRow {
  long iteration = 0;
  long cycle = 0;
  long env_steps = 0;
  double eps = 0;
  double wm_total = 0, wm_recon = 0, wm_reward = 0, wm_collision = 0, wm_kl = 0;
  double codec_loss = 0;
  double l_rew = 0;
  double mu = 0;
  double sel_actor = 0, sel_critic = 0, sel_entropy = 0;
  double mgr_actor = 0, mgr_critic = 0, mgr_entropy = 0, mgr_imitation = 0;
  double wkr_actor = 0, wkr_critic = 0, wkr_entropy = 0, wkr_imitation = 0;
  double reachable_fraction = 0;
  double arm_fraction = 0;
  long buffer_steps = 0;
  int aborted = 0;
};

// One row per evaluation round.
struct EvalRow {
  long cycle = 0;
  long env_steps = 0;
  double success_rate = 0;
  double arm_near_goal = 0;   // over episodes with >= 1 arm selection
  double first_arm_ratio = 0;  // over successful episodes with >= 1 arm selection
  double mean_length = 0;
  int episodes = 0;
  int successes = 0;
  int episodes_with_arm = 0;
};

struct EvalStep {
  int t = 0;
  int mask = 0;
  int action = 0;
  double base_x = 0, base_y = 0;
  bool near_goal = false;
};

struct EvalEpisodeLog {
  uint64_t env_seed = 0;
  bool success = false;
  bool collision = false;
  int length = 0;
  int first_arm = -1;
  std::vector<EvalStep> arm_steps;  // arm-selection steps only
};

EvalRow compute_eval_stats(const std::vector<EvalEpisodeLog>& episodes);

// Owns the world model, the three policy levels and the replay buffer, and
// runs the pretrain -> {collect, rl_iteration, eval} loop. Deterministic per
// config: all randomness flows from cfg.seed through named sub-streams.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& cfg() const { return cfg_; }

  void generate_demos();
  void set_demos(std::vector<demos::Episode> demos);
  const std::vector<demos::Episode>& demos() const { return demos_; }

  // World model + codec on demo slices, then stage goals. Policies are not
  // touched. No-op under the no-demo variant.
  void pretrain();

  void collect_training_episode();
  MetricsRow rl_iteration();
  std::vector<EvalEpisodeLog> run_eval();

  // Full pipeline. When out_dir is nonempty writes metrics.csv, eval.csv,
  // eval_episodes.jsonl, heatmap.csv/.pgm (final round) and checkpoint/.
  void run(const std::string& out_dir);

  void save_checkpoint(const std::string& dir);
  void load_checkpoint(const std::string& dir);

  double epsilon() const;
  long env_steps() const { return env_steps_; }
  long iterations() const { return iterations_; }
  long aborted_iterations() const { return aborted_iterations_; }
  const Vec& stg1() const { return stg1_; }
  const Vec& stg2() const { return stg2_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  const std::vector<EvalRow>& eval_rows() const { return eval_rows_; }

  wm::WorldModel& world_model() { return wm_; }
  policy::Selector& selector() { return selector_; }
  policy::Manager& manager() { return manager_; }
  policy::Worker& worker() { return worker_; }
  ReplayBuffer& buffer() { return buffer_; }

  bool stage_inputs_zeroed() const;
  ManagerReward effective_manager_reward() const;

  // Latest evaluation state pairs for reachability-vs-oracle probes:
  // posterior latent rows with their ground-truth world states.
  struct EvalProbe {
    wm::LatentBatch latents;
    std::vector<sim::WorldState> states;
  };
  EvalProbe collect_eval_probe(int episodes, uint64_t salt);

  std::vector<uint8_t> predict_reachable(const wm::LatentBatch& s0, uint64_t salt);

 private:
  void seed_demo_buffer();
  Vec stage_input(int which) const;  // zero under DE / NO variants
  Mat manager_goal_rows(const std::vector<int>& mask) const;
  Vec subgoal_for(const Vec& feat, int mask, Rng& rng) const;
  double codec_error(const Vec& h) const;
  void check_command(const sim::CommandArray& cmd, int mask) const;
  EvalEpisodeLog eval_episode(Rng& env_rng, Rng& policy_rng, Rng& latent_rng,
                              std::vector<sim::WorldState>* probe_states,
                              std::vector<wm::LatentBatch>* probe_latents);
  void rl_iteration_core(MetricsRow& row);

  std::vector<uint8_t> reachability(const wm::LatentBatch& s0, Rng& policy_rng,
                                    Rng& latent_rng) const;

  TrainConfig cfg_;
  policy::PolicyConfig pcfg_;
  wm::WorldModel wm_;
  policy::Selector selector_;
  policy::Manager manager_;
  policy::Worker worker_;
  ReplayBuffer buffer_;
  std::vector<demos::Episode> demos_;
  Vec stg1_, stg2_;
  bool pretrained_ = false;

  long env_steps_ = 0;
  long cycle_ = 0;
  long iterations_ = 0;
  long aborted_iterations_ = 0;
  long eval_rounds_ = 0;
  std::vector<MetricsRow> metrics_;
  std::vector<EvalRow> eval_rows_;

  Rng rng_env_, rng_policy_, rng_latent_, rng_sample_, rng_demo_;
};

}  // namespace mmr::train
