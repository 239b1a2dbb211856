#include "core/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <nlohmann/json.hpp>

#include "core/io/io.hpp"
#include "core/kin/kin.hpp"
#include "core/num/tape.hpp"

namespace mmr::train {

namespace {

using json = nlohmann::ordered_json;

Mat replicate_vec_rows(const Vec& v, int rows) {
  Mat m(rows, v.size());
  for (int r = 0; r < rows; ++r) m.row(r) = v.transpose();
  return m;
}

// Stack per-step batches into one time-major batch (rows t*B + b).
wm::LatentBatch concat_latents(const std::vector<wm::LatentBatch>& parts) {
  MMR_REQUIRE(!parts.empty(), "concat_latents: empty");
  const int B = parts.front().rows();
  const int T = static_cast<int>(parts.size());
  wm::LatentBatch out;
  out.h.resize(T * B, parts.front().h.cols());
  out.z.resize(T * B, parts.front().z.cols());
  out.mean.resize(T * B, parts.front().mean.cols());
  out.stddev.resize(T * B, parts.front().stddev.cols());
  for (int t = 0; t < T; ++t) {
    const auto& p = parts[static_cast<size_t>(t)];
    MMR_REQUIRE(p.rows() == B, "concat_latents: ragged parts");
    out.h.middleRows(t * B, B) = p.h;
    out.z.middleRows(t * B, B) = p.z;
    out.mean.middleRows(t * B, B) = p.mean;
    out.stddev.middleRows(t * B, B) = p.stddev;
  }
  return out;
}

policy::PolicyConfig derive_policy_cfg(const TrainConfig& cfg) {
  policy::PolicyConfig p = cfg.policy;
  p.modified = cfg.modified;
  return p;
}

std::vector<double> json_vec(const Vec& v) {
  std::vector<double> out(static_cast<size_t>(v.size()));
  for (int i = 0; i < v.size(); ++i) out[static_cast<size_t>(i)] = v(i);
  return out;
}

}  // namespace

const char* demo_variant_name(DemoVariant v) {
  switch (v) {
    case DemoVariant::kFull: return "full";
    case DemoVariant::kDemoExperience: return "demo-as-experience";
    case DemoVariant::kDemoGoal: return "demo-as-goal";
    case DemoVariant::kNoDemo: return "no-demo";
  }
  return "full";
}

const char* hierarchy_name(Hierarchy h) {
  return h == Hierarchy::kFlat ? "flat" : "full";
}

const char* manager_reward_name(ManagerReward r) {
  return r == ManagerReward::kExploration ? "exploration" : "progress";
}

DemoVariant parse_demo_variant(const std::string& s) {
  if (s == "full") return DemoVariant::kFull;
  if (s == "demo-as-experience") return DemoVariant::kDemoExperience;
  if (s == "demo-as-goal") return DemoVariant::kDemoGoal;
  if (s == "no-demo") return DemoVariant::kNoDemo;
  throw ConfigError("unknown demo variant: " + s);
}

Hierarchy parse_hierarchy(const std::string& s) {
  if (s == "full") return Hierarchy::kFull;
  if (s == "flat") return Hierarchy::kFlat;
  throw ConfigError("unknown hierarchy: " + s);
}

ManagerReward parse_manager_reward(const std::string& s) {
  if (s == "progress") return ManagerReward::kProgress;
  if (s == "exploration") return ManagerReward::kExploration;
  throw ConfigError("unknown manager reward: " + s);
}

EvalRow compute_eval_stats(const std::vector<EvalEpisodeLog>& episodes) {
  EvalRow r;
  r.episodes = static_cast<int>(episodes.size());
  double near_sum = 0, first_sum = 0, len_sum = 0;
  int first_n = 0;
  for (const auto& e : episodes) {
    if (e.success) ++r.successes;
    len_sum += e.length;
    if (!e.arm_steps.empty()) {
      ++r.episodes_with_arm;
      int near = 0;
      for (const auto& s : e.arm_steps) near += s.near_goal ? 1 : 0;
      near_sum += static_cast<double>(near) / static_cast<double>(e.arm_steps.size());
    }
    if (e.success && e.first_arm >= 0 && e.length > 0) {
      ++first_n;
      first_sum += static_cast<double>(e.first_arm) / static_cast<double>(e.length);
    }
  }
  if (r.episodes > 0) {
    r.success_rate = static_cast<double>(r.successes) / r.episodes;
    r.mean_length = len_sum / r.episodes;
  }
  if (r.episodes_with_arm > 0) r.arm_near_goal = near_sum / r.episodes_with_arm;
  if (first_n > 0) r.first_arm_ratio = first_sum / first_n;
  return r;
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg),
      pcfg_(derive_policy_cfg(cfg)),
      wm_(cfg.wm, Rng(cfg.seed, "wm-init").seed()),
      selector_(pcfg_, Rng(cfg.seed, "selector-init").seed()),
      manager_(pcfg_, Rng(cfg.seed, "manager-init").seed()),
      worker_(pcfg_, Rng(cfg.seed, "worker-init").seed()),
      buffer_(cfg.buffer_capacity),
      stg1_(Vec::Zero(pcfg_.goal_dim)),
      stg2_(Vec::Zero(pcfg_.goal_dim)),
      rng_env_(cfg.seed, "env"),
      rng_policy_(cfg.seed, "policy"),
      rng_latent_(cfg.seed, "latent"),
      rng_sample_(cfg.seed, "sample"),
      rng_demo_(cfg.seed, "demo") {
  MMR_REQUIRE(pcfg_.feature_dim == cfg_.wm.feature_dim(), "Trainer: feature dim mismatch");
  MMR_REQUIRE(pcfg_.goal_dim == cfg_.wm.h_dim, "Trainer: goal dim mismatch");
  MMR_REQUIRE(pcfg_.action_dim == cfg_.wm.action_dim, "Trainer: action dim mismatch");
  MMR_REQUIRE(pcfg_.code_groups == cfg_.wm.code_groups &&
                  pcfg_.code_classes == cfg_.wm.code_classes,
              "Trainer: codec shape mismatch");
  MMR_REQUIRE(pcfg_.horizon >= 1 && pcfg_.manager_period >= 1 &&
                  pcfg_.horizon % pcfg_.manager_period == 0,
              "Trainer: horizon must be a multiple of the manager period");
  MMR_REQUIRE(cfg_.episode_len >= 1 && cfg_.slice_len >= 2, "Trainer: bad lengths");
  MMR_REQUIRE(cfg_.slices_per_iter >= 1 && cfg_.pretrain_slices >= 1, "Trainer: bad slice counts");
}

void Trainer::generate_demos() {
  if (cfg_.demo_variant == DemoVariant::kNoDemo) return;
  std::vector<demos::Episode> d;
  d.reserve(static_cast<size_t>(cfg_.demo_count));
  for (int i = 0; i < cfg_.demo_count; ++i)
    d.push_back(demos::generate_demo(cfg_.env, rng_demo_.next_u64()));
  set_demos(std::move(d));
}

void Trainer::set_demos(std::vector<demos::Episode> demos) { demos_ = std::move(demos); }

bool Trainer::stage_inputs_zeroed() const {
  return cfg_.demo_variant == DemoVariant::kDemoExperience ||
         cfg_.demo_variant == DemoVariant::kNoDemo;
}

ManagerReward Trainer::effective_manager_reward() const {
  if (stage_inputs_zeroed()) return ManagerReward::kExploration;
  return cfg_.manager_reward;
}

Vec Trainer::stage_input(int which) const {
  if (stage_inputs_zeroed()) return Vec::Zero(pcfg_.goal_dim);
  return which == 1 ? stg1_ : stg2_;
}

double Trainer::epsilon() const {
  double f = cfg_.eps_anneal_steps <= 0
                 ? 1.0
                 : std::min(1.0, static_cast<double>(env_steps_) /
                                     static_cast<double>(cfg_.eps_anneal_steps));
  return cfg_.eps_start + (cfg_.eps_final - cfg_.eps_start) * f;
}

void Trainer::pretrain() {
  MMR_REQUIRE(!pretrained_, "pretrain: already ran");
  pretrained_ = true;
  if (cfg_.demo_variant == DemoVariant::kNoDemo) return;
  MMR_REQUIRE(!demos_.empty(), "pretrain: no demos loaded");

  long demo_steps = 0;
  for (const auto& e : demos_) demo_steps += e.length();
  ReplayBuffer demo_buf(std::max<long>(demo_steps, 1));
  for (const auto& e : demos_) demo_buf.add(pack_episode(e));
  seed_demo_buffer();

  std::vector<wm::LatentBatch> posts;
  for (int i = 0; i < cfg_.pretrain_steps; ++i) {
    auto sb = demo_buf.sample_slices(cfg_.pretrain_slices, cfg_.slice_len, rng_sample_);
    wm_.train_batch(sb, rng_latent_, &posts);
    Mat h_all(sb.rows(), cfg_.wm.h_dim);
    for (size_t t = 0; t < posts.size(); ++t)
      h_all.middleRows(static_cast<int>(t) * sb.batch, sb.batch) = posts[t].h;
    wm_.train_codec(h_all, rng_latent_);
  }

  Rng enc_rng(cfg_.seed, "stage-encode");
  auto encode = [this, &enc_rng](const demos::Episode& e) {
    std::vector<std::vector<float>> out;
    out.reserve(e.obs.size());
    wm::LatentBatch s = wm_.initial(1);
    Mat prev = Mat::Zero(1, pcfg_.action_dim);
    Mat obs_row(1, cfg_.wm.obs_dim);
    for (size_t i = 0; i < e.obs.size(); ++i) {
      obs_row.row(0) = wm::observation_to_vec(e.obs[i]).transpose();
      s = wm_.observe(s, prev, obs_row, enc_rng);
      out.emplace_back(s.h.row(0).begin(), s.h.row(0).end());
      prev.setZero();
      if (i < e.action.size()) prev(0, e.action[i]) = 1.0f;
    }
    return out;
  };
  auto goals = demos::compute_stage_goals(demos_, encode);
  MMR_REQUIRE(static_cast<int>(goals.stg1.size()) == pcfg_.goal_dim, "pretrain: stage goal dim");
  stg1_ = Eigen::Map<const Vec>(goals.stg1.data(), static_cast<long>(goals.stg1.size()));
  stg2_ = Eigen::Map<const Vec>(goals.stg2.data(), static_cast<long>(goals.stg2.size()));
}

void Trainer::seed_demo_buffer() {
  bool in_buffer = cfg_.demo_variant == DemoVariant::kFull ||
                   cfg_.demo_variant == DemoVariant::kDemoExperience;
  if (!in_buffer || buffer_.demo_episodes() > 0) return;
  for (const auto& e : demos_) buffer_.add(pack_episode(e));
}

Mat Trainer::manager_goal_rows(const std::vector<int>& mask) const {
  Vec g1 = stage_input(1), g2 = stage_input(2);
  Mat m(static_cast<int>(mask.size()), pcfg_.goal_dim);
  for (size_t i = 0; i < mask.size(); ++i) {
    const Vec& g = pcfg_.modified && mask[i] == policy::kMaskBase ? g1 : g2;
    m.row(static_cast<int>(i)) = g.transpose();
  }
  return m;
}

Vec Trainer::subgoal_for(const Vec& feat, int mask, Rng& rng) const {
  if (cfg_.hierarchy == Hierarchy::kFlat) return stage_input(2);
  Vec goal = pcfg_.modified && mask == policy::kMaskBase ? stage_input(1) : stage_input(2);
  auto code = manager_.sample(feat, goal, mask, rng);
  return wm_.decode_goal(code);
}

double Trainer::codec_error(const Vec& h) const {
  Vec rec = wm_.decode_goal(wm_.encode_goal(h));
  return (rec - h).squaredNorm() / static_cast<double>(h.size());
}

void Trainer::check_command(const sim::CommandArray& cmd, int mask) const {
  if (mask == policy::kMaskBase) {
    MMR_REQUIRE(cmd.v[2] == 0.0 && cmd.v[3] == 0.0 && cmd.v[4] == 0.0,
                "mask safety: arm channel driven under base selection");
  } else {
    MMR_REQUIRE(cmd.v[0] == 0.0 && cmd.v[1] == 0.0,
                "mask safety: base channel driven under arm selection");
  }
}

void Trainer::collect_training_episode() {
  uint64_t ep_seed = rng_env_.next_u64();
  sim::WorldState w = sim::make_env(cfg_.env, ep_seed);
  wm::LatentBatch s = wm_.initial(1);
  Mat prev = Mat::Zero(1, pcfg_.action_dim);
  Mat obs_row(1, cfg_.wm.obs_dim);
  Vec g1 = stage_input(1), g2 = stage_input(2);
  double eps = epsilon();

  StoredEpisode ep;
  sim::Observation o = sim::render_observation(w);
  ep.steps.push_back(pack_step(o, -1, 0.0f, 0.0f));
  for (int t = 0; t < cfg_.episode_len; ++t) {
    obs_row.row(0) = wm::observation_to_vec(o).transpose();
    s = wm_.observe(s, prev, obs_row, rng_latent_);
    Vec feat = wm::WorldModel::features(s).row(0).transpose();
    int m = selector_.select(feat, g1, g2, eps, rng_policy_);
    Vec sg = subgoal_for(feat, m, rng_policy_);
    int a = worker_.act(feat, sg, m, eps, rng_policy_);
    sim::CommandArray cmd = sim::action_command(a);
    check_command(cmd, m);
    auto [w2, outcome] = sim::step(w, cmd, {});
    w = w2;
    o = sim::render_observation(w);
    ep.steps.push_back(pack_step(o, a, static_cast<float>(outcome.r),
                                 static_cast<float>(outcome.c)));
    prev.setZero();
    prev(0, a) = 1.0f;
    ++env_steps_;
  }
  buffer_.add(std::move(ep));
}

std::vector<uint8_t> Trainer::reachability(const wm::LatentBatch& s0, Rng& policy_rng,
                                           Rng& latent_rng) const {
  const int n = s0.rows();
  std::vector<int> arm_mask(static_cast<size_t>(n), policy::kMaskArm);
  Mat goals = manager_goal_rows(arm_mask);
  Vec g2 = stage_input(2);
  Mat sg;
  auto pol = [&](const wm::LatentBatch& s, int step) -> Mat {
    Mat f = wm::WorldModel::features(s);
    if (step % pcfg_.manager_period == 0) {
      if (cfg_.hierarchy == Hierarchy::kFlat)
        sg = replicate_vec_rows(g2, n);
      else
        sg = wm_.decode_codes(manager_.sample_batch(f, goals, arm_mask, policy_rng));
    }
    return worker_.act_batch(f, sg, arm_mask, 0.0, policy_rng, nullptr);
  };
  auto roll = reach::rollout_fixed_arm(wm_, s0, pol, latent_rng, cfg_.reach);
  return reach::evaluate(roll, cfg_.reach);
}

std::vector<uint8_t> Trainer::predict_reachable(const wm::LatentBatch& s0, uint64_t salt) {
  Rng pr(cfg_.seed ^ salt, "probe-reach-policy");
  Rng lr(cfg_.seed ^ salt, "probe-reach-latent");
  return reachability(s0, pr, lr);
}

MetricsRow Trainer::rl_iteration() {
  MetricsRow row;
  row.iteration = iterations_ + 1;
  row.cycle = cycle_;
  row.env_steps = env_steps_;
  row.eps = epsilon();
  row.buffer_steps = buffer_.total_steps();
  try {
    rl_iteration_core(row);
  } catch (const std::exception& ex) {
    row.aborted = 1;
    std::cerr << "rl_iteration " << row.iteration << " aborted: " << ex.what() << "\n";
  }
  ++iterations_;
  if (row.aborted) ++aborted_iterations_;
  metrics_.push_back(row);
  return row;
}

void Trainer::rl_iteration_core(MetricsRow& row) {
  auto sb = buffer_.sample_slices(cfg_.slices_per_iter, cfg_.slice_len, rng_sample_);
  std::vector<wm::LatentBatch> posts;
  auto wrep = wm_.train_batch(sb, rng_latent_, &posts);
  row.wm_total = wrep.total;
  row.wm_recon = wrep.reconstruction;
  row.wm_reward = wrep.reward_pred;
  row.wm_collision = wrep.collision_pred;
  row.wm_kl = wrep.kl;
  row.l_rew = wrep.l_rew;

  wm::LatentBatch all = concat_latents(posts);
  const int B = all.rows();
  row.codec_loss = wm_.train_codec(all.h, rng_latent_);

  Mat feats = wm::WorldModel::features(all);
  Mat stg1r = replicate_vec_rows(stage_input(1), B);
  Mat stg2r = replicate_vec_rows(stage_input(2), B);
  double eps = epsilon();

  std::vector<int> mask = selector_.select_batch(feats, stg1r, stg2r, eps, rng_policy_);
  int arm_n = 0;
  for (int m : mask) arm_n += m == policy::kMaskArm ? 1 : 0;
  row.arm_fraction = static_cast<double>(arm_n) / B;

  auto reachable = reachability(all, rng_policy_, rng_latent_);
  long reach_n = 0;
  for (uint8_t v : reachable) reach_n += v ? 1 : 0;
  row.reachable_fraction = static_cast<double>(reach_n) / B;

  Vec sel_reward(B);
  for (int i = 0; i < B; ++i)
    sel_reward(i) = static_cast<float>(
        reach::reachability_reward(mask[static_cast<size_t>(i)],
                                   reachable[static_cast<size_t>(i)] != 0, cfg_.reach));
  double mu = policy::compute_mu(wm_.l_rew(), pcfg_);
  row.mu = mu;
  auto srep = selector_.update({feats, stg1r, stg2r, mask, sel_reward}, mu, rng_policy_);
  row.sel_actor = srep.actor_loss;
  row.sel_critic = srep.critic_loss;
  row.sel_entropy = srep.entropy;

  // Imagination rollout under the embodiment selected at the initial state.
  const int H = pcfg_.horizon, K = pcfg_.manager_period, S = H / K;
  std::vector<wm::LatentBatch> states;
  states.reserve(static_cast<size_t>(H) + 1);
  states.push_back(all);
  std::vector<Vec> pred_r(static_cast<size_t>(H) + 1), pred_c(static_cast<size_t>(H) + 1);
  {
    auto p0 = wm_.predict(all);
    pred_r[0] = p0.first;
    pred_c[0] = p0.second;
  }
  Mat goals = manager_goal_rows(mask);
  Vec g2 = stage_input(2);
  Mat sg;
  std::vector<Mat> sg_steps;
  std::vector<Mat> codes;
  std::vector<Mat> feat_steps(static_cast<size_t>(H) + 1);
  std::vector<int> actions(static_cast<size_t>(H) * B);
  for (int t = 0; t < H; ++t) {
    feat_steps[static_cast<size_t>(t)] = wm::WorldModel::features(states.back());
    const Mat& f_t = feat_steps[static_cast<size_t>(t)];
    if (t % K == 0) {
      if (cfg_.hierarchy == Hierarchy::kFlat) {
        sg = replicate_vec_rows(g2, B);
      } else {
        Mat c = manager_.sample_batch(f_t, goals, mask, rng_policy_);
        codes.push_back(c);
        sg = wm_.decode_codes(c);
      }
    }
    sg_steps.push_back(sg);
    std::vector<int> idx;
    Mat a = worker_.act_batch(f_t, sg, mask, 0.0, rng_policy_, &idx);
    for (int i = 0; i < B; ++i) actions[static_cast<size_t>(t * B + i)] = idx[static_cast<size_t>(i)];
    states.push_back(wm_.imagine_step(states.back(), a, rng_latent_));
    auto p = wm_.predict(states.back());
    pred_r[static_cast<size_t>(t) + 1] = p.first;
    pred_c[static_cast<size_t>(t) + 1] = p.second;
  }
  feat_steps[static_cast<size_t>(H)] = wm::WorldModel::features(states.back());

  // Imitation rows from demo-flagged slice positions (modified variant).
  std::unique_ptr<policy::Worker::Imitation> wimit;
  std::unique_ptr<policy::Manager::Imitation> mimit;
  if (pcfg_.modified) {
    const int ns = sb.batch, T = sb.steps;
    std::vector<int> rows_sel, act_label, mask_label;
    for (int t = 0; t + 1 < T; ++t) {
      for (int b = 0; b < ns; ++b) {
        int r = t * ns + b;
        if (sb.demo_mask(r) < 0.5f) continue;
        int next = (t + 1) * ns + b;
        int a = -1;
        for (int k = 0; k < pcfg_.action_dim; ++k)
          if (sb.prev_action(next, k) > 0.5f) a = k;
        if (a < 0) continue;
        rows_sel.push_back(r);
        act_label.push_back(a);
        mask_label.push_back(sim::is_arm_action(a) ? policy::kMaskArm : policy::kMaskBase);
      }
    }
    if (!rows_sel.empty()) {
      int n = static_cast<int>(rows_sel.size());
      Mat ifeats(n, pcfg_.feature_dim);
      Mat isg(n, pcfg_.goal_dim);
      Mat icodes(n, pcfg_.code_dim());
      for (int i = 0; i < n; ++i) {
        int r = rows_sel[static_cast<size_t>(i)];
        ifeats.row(i) = feats.row(r);
        int t = r / ns, b = r % ns;
        int tf = std::min(t + K, T - 1);
        Vec h_f = all.h.row(tf * ns + b).transpose();
        auto code = wm_.encode_goal(h_f);
        icodes.row(i) = wm_.code_to_onehot(code).row(0);
        if (cfg_.hierarchy == Hierarchy::kFlat)
          isg.row(i) = g2.transpose();
        else
          isg.row(i) = wm_.decode_goal(code).transpose();
      }
      wimit = std::make_unique<policy::Worker::Imitation>();
      wimit->feats = ifeats;
      wimit->subgoals = isg;
      wimit->actions = act_label;
      wimit->embodiment = mask_label;
      if (cfg_.hierarchy == Hierarchy::kFull) {
        mimit = std::make_unique<policy::Manager::Imitation>();
        mimit->feats = ifeats;
        mimit->goals = manager_goal_rows(mask_label);
        mimit->codes = icodes;
        mimit->embodiment = mask_label;
      }
    }
  }

  // Worker batch over the dense horizon.
  policy::Worker::Batch wb;
  wb.batch = B;
  wb.steps = H;
  wb.feats.resize((H + 1) * B, pcfg_.feature_dim);
  wb.subgoals.resize((H + 1) * B, pcfg_.goal_dim);
  for (int t = 0; t <= H; ++t)
    wb.feats.middleRows(t * B, B) = feat_steps[static_cast<size_t>(t)];
  for (int t = 0; t < H; ++t)
    wb.subgoals.middleRows(t * B, B) = sg_steps[static_cast<size_t>(t)];
  wb.subgoals.middleRows(H * B, B) = sg_steps.back();
  wb.actions = actions;
  wb.reward.resize(H * B);
  for (int t = 0; t < H; ++t) {
    const Mat& sgt = sg_steps[static_cast<size_t>(t)];
    for (int i = 0; i < B; ++i) {
      Vec h_next = states[static_cast<size_t>(t) + 1].h.row(i).transpose();
      Vec sgv = sgt.row(i).transpose();
      double cos = num::cosine_similarity(h_next, sgv);
      wb.reward(t * B + i) = pred_r[static_cast<size_t>(t) + 1](i) +
                             pcfg_.w_collision * pred_c[static_cast<size_t>(t) + 1](i) +
                             pcfg_.w_goal * static_cast<float>(cos);
    }
  }
  wb.embodiment = mask;
  auto wkrep = worker_.update(wb, wimit.get(), rng_policy_);
  row.wkr_actor = wkrep.actor_loss;
  row.wkr_critic = wkrep.critic_loss;
  row.wkr_entropy = wkrep.entropy;
  row.wkr_imitation = wkrep.imitation;

  // Manager batch over abstract steps.
  if (cfg_.hierarchy == Hierarchy::kFull) {
    bool explo = effective_manager_reward() == ManagerReward::kExploration;
    Vec s2 = stage_input(2);
    policy::Manager::Batch mb;
    mb.batch = B;
    mb.steps = S;
    mb.feats.resize((S + 1) * B, pcfg_.feature_dim);
    mb.goals.resize((S + 1) * B, pcfg_.goal_dim);
    mb.codes.resize(S * B, pcfg_.code_dim());
    for (int j = 0; j <= S; ++j) {
      mb.feats.middleRows(j * B, B) = feat_steps[static_cast<size_t>(j * K)];
      mb.goals.middleRows(j * B, B) = goals;
    }
    for (int j = 0; j < S; ++j)
      mb.codes.middleRows(j * B, B) = codes[static_cast<size_t>(j)];
    mb.r_task.resize(S * B);
    mb.r_collision.resize(S * B);
    mb.r_progress.resize(S * B);
    for (int j = 0; j < S; ++j) {
      for (int i = 0; i < B; ++i) {
        double rt = 0, rc = 0, rp = 0;
        for (int u = j * K + 1; u <= j * K + K; ++u) {
          rt += pred_r[static_cast<size_t>(u)](i);
          rc += pred_c[static_cast<size_t>(u)](i);
          Vec h_u = states[static_cast<size_t>(u)].h.row(i).transpose();
          if (explo)
            rp += codec_error(h_u);
          else
            rp += num::cosine_similarity(h_u, s2);
        }
        mb.r_task(j * B + i) = static_cast<float>(rt);
        mb.r_collision(j * B + i) = static_cast<float>(rc);
        mb.r_progress(j * B + i) = static_cast<float>(rp);
      }
    }
    mb.embodiment = mask;
    auto mgrep = manager_.update(mb, mimit.get(), rng_policy_);
    row.mgr_actor = mgrep.actor_loss;
    row.mgr_critic = mgrep.critic_loss;
    row.mgr_entropy = mgrep.entropy;
    row.mgr_imitation = mgrep.imitation;
  }
}

EvalEpisodeLog Trainer::eval_episode(Rng& env_rng, Rng& policy_rng, Rng& latent_rng,
                                     std::vector<sim::WorldState>* probe_states,
                                     std::vector<wm::LatentBatch>* probe_latents) {
  EvalEpisodeLog log;
  log.env_seed = env_rng.next_u64();
  sim::WorldState w = sim::make_env(cfg_.env, log.env_seed);
  wm::LatentBatch s = wm_.initial(1);
  Mat prev = Mat::Zero(1, pcfg_.action_dim);
  Mat obs_row(1, cfg_.wm.obs_dim);
  Vec g1 = stage_input(1), g2 = stage_input(2);
  sim::StepOptions opts;
  opts.terminate_on_event = true;
  opts.max_steps = cfg_.eval_step_cap;

  for (int t = 0; t < cfg_.eval_step_cap; ++t) {
    sim::Observation o = sim::render_observation(w);
    obs_row.row(0) = wm::observation_to_vec(o).transpose();
    s = wm_.observe(s, prev, obs_row, latent_rng);
    if (probe_states) probe_states->push_back(w);
    if (probe_latents) probe_latents->push_back(s);
    Vec feat = wm::WorldModel::features(s).row(0).transpose();
    int m = selector_.select(feat, g1, g2, 0.0, policy_rng);
    Vec sg = subgoal_for(feat, m, policy_rng);
    int a = worker_.act(feat, sg, m, 0.0, policy_rng);
    sim::CommandArray cmd = sim::action_command(a);
    check_command(cmd, m);
    if (m == policy::kMaskArm) {
      if (log.first_arm < 0) log.first_arm = t;
      EvalStep es;
      es.t = t;
      es.mask = m;
      es.action = a;
      es.base_x = w.base.x;
      es.base_y = w.base.y;
      es.near_goal = kin::near_goal(w.base, w.goal_x, w.goal_y);
      log.arm_steps.push_back(es);
    }
    auto [w2, outcome] = sim::step(w, cmd, opts);
    w = w2;
    prev.setZero();
    prev(0, a) = 1.0f;
    log.length = t + 1;
    if (outcome.done) {
      log.success = outcome.r == 1;
      log.collision = outcome.c == 1;
      break;
    }
  }
  return log;
}

std::vector<EvalEpisodeLog> Trainer::run_eval() {
  ++eval_rounds_;
  std::string tag = std::to_string(eval_rounds_);
  Rng env_rng(cfg_.seed, "eval-env-" + tag);
  Rng policy_rng(cfg_.seed, "eval-policy-" + tag);
  Rng latent_rng(cfg_.seed, "eval-latent-" + tag);
  std::vector<EvalEpisodeLog> out;
  out.reserve(static_cast<size_t>(cfg_.eval_episodes));
  for (int e = 0; e < cfg_.eval_episodes; ++e)
    out.push_back(eval_episode(env_rng, policy_rng, latent_rng, nullptr, nullptr));
  EvalRow r = compute_eval_stats(out);
  r.cycle = cycle_;
  r.env_steps = env_steps_;
  eval_rows_.push_back(r);
  return out;
}

Trainer::EvalProbe Trainer::collect_eval_probe(int episodes, uint64_t salt) {
  Rng env_rng(cfg_.seed ^ salt, "probe-env");
  Rng policy_rng(cfg_.seed ^ salt, "probe-policy");
  Rng latent_rng(cfg_.seed ^ salt, "probe-latent");
  std::vector<sim::WorldState> states;
  std::vector<wm::LatentBatch> lat;
  for (int e = 0; e < episodes; ++e)
    eval_episode(env_rng, policy_rng, latent_rng, &states, &lat);
  MMR_REQUIRE(!lat.empty(), "collect_eval_probe: no states collected");
  EvalProbe probe;
  probe.states = std::move(states);
  probe.latents = concat_latents(lat);
  return probe;
}

void Trainer::run(const std::string& out_dir) {
  bool write = !out_dir.empty();
  std::ofstream eval_jsonl;
  if (write) {
    std::filesystem::create_directories(out_dir);
    eval_jsonl.open(out_dir + "/eval_episodes.jsonl", std::ios::trunc);
    MMR_REQUIRE(eval_jsonl.good(), "run: cannot open eval episode log");
  }
  if (demos_.empty() && cfg_.demo_variant != DemoVariant::kNoDemo) generate_demos();
  if (!pretrained_) pretrain();
  seed_demo_buffer();

  long n_cycles = cfg_.train_env_steps / cfg_.episode_len;
  std::vector<EvalEpisodeLog> last_eval;
  for (long c = 1; c <= n_cycles; ++c) {
    cycle_ = c;
    collect_training_episode();
    for (int k = 0; k < cfg_.rl_iters_per_cycle; ++k) rl_iteration();
    if (cfg_.eval_every_cycles > 0 && c % cfg_.eval_every_cycles == 0) {
      last_eval = run_eval();
      if (write) io::append_eval_episodes(eval_jsonl, c, last_eval);
    }
    if (write && cfg_.checkpoint_every_cycles > 0 && c % cfg_.checkpoint_every_cycles == 0 &&
        c < n_cycles)
      save_checkpoint(out_dir + "/ckpt_" + std::to_string(env_steps_));
  }

  if (write) {
    io::write_metrics_csv(out_dir + "/metrics.csv", metrics_);
    io::write_eval_csv(out_dir + "/eval.csv", eval_rows_);
    std::vector<std::pair<double, double>> pts;
    for (const auto& e : last_eval)
      for (const auto& st : e.arm_steps) pts.emplace_back(st.base_x, st.base_y);
    auto spec = sim::env_spec(cfg_.env);
    auto hm = io::build_heatmap(pts, spec.bounds);
    io::write_heatmap_csv(out_dir + "/heatmap.csv", hm);
    io::write_heatmap_pgm(out_dir + "/heatmap.pgm", hm);
    save_checkpoint(out_dir + "/checkpoint");
  }
}

void Trainer::save_checkpoint(const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto save = [&](const num::ParamStore& st, const std::string& name) {
    st.save(dir + "/" + name + ".bin", dir + "/" + name + ".manifest");
  };
  save(wm_.rssm_store(), "wm");
  save(wm_.codec_store(), "codec");
  save(selector_.actor_store(), "sel_actor");
  save(selector_.critic_store(), "sel_critic");
  save(selector_.frozen_store(), "sel_frozen");
  save(manager_.actor_store(), "mgr_actor");
  save(manager_.critic_store(), "mgr_critic");
  save(worker_.actor_store(), "wkr_actor");
  save(worker_.critic_store(), "wkr_critic");

  json meta;
  meta["format"] = 1;
  meta["env"] = sim::env_id_name(cfg_.env);
  meta["demo_variant"] = demo_variant_name(cfg_.demo_variant);
  meta["hierarchy"] = hierarchy_name(cfg_.hierarchy);
  meta["manager_reward"] = manager_reward_name(cfg_.manager_reward);
  meta["modified"] = cfg_.modified;
  meta["env_steps"] = env_steps_;
  meta["l_rew"] = wm_.l_rew();
  meta["stg1"] = json_vec(stg1_);
  meta["stg2"] = json_vec(stg2_);
  std::ofstream os(dir + "/meta.json", std::ios::trunc);
  MMR_REQUIRE(os.good(), "save_checkpoint: cannot write meta");
  os << meta.dump(2) << "\n";
}

void Trainer::load_checkpoint(const std::string& dir) {
  std::ifstream is(dir + "/meta.json");
  if (!is.good()) throw IoError("checkpoint not found: " + dir);
  json meta = json::parse(is, nullptr, true);
  MMR_REQUIRE(meta.at("format").get<int>() == 1, "load_checkpoint: unknown format");
  std::string env = meta.at("env").get<std::string>();
  if (env != sim::env_id_name(cfg_.env))
    throw IoError("checkpoint env " + env + " does not match config env " +
                  sim::env_id_name(cfg_.env));

  auto load = [&](num::ParamStore& st, const std::string& name) {
    st.load(dir + "/" + name + ".bin", dir + "/" + name + ".manifest");
  };
  load(wm_.rssm_store(), "wm");
  load(wm_.codec_store(), "codec");
  load(selector_.actor_store(), "sel_actor");
  load(selector_.critic_store(), "sel_critic");
  load(selector_.frozen_store(), "sel_frozen");
  load(manager_.actor_store(), "mgr_actor");
  load(manager_.critic_store(), "mgr_critic");
  load(worker_.actor_store(), "wkr_actor");
  load(worker_.critic_store(), "wkr_critic");

  env_steps_ = meta.at("env_steps").get<long>();
  wm_.set_l_rew(meta.at("l_rew").get<double>());
  auto s1 = meta.at("stg1").get<std::vector<double>>();
  auto s2 = meta.at("stg2").get<std::vector<double>>();
  MMR_REQUIRE(static_cast<int>(s1.size()) == pcfg_.goal_dim &&
                  static_cast<int>(s2.size()) == pcfg_.goal_dim,
              "load_checkpoint: stage goal dim");
  for (int i = 0; i < pcfg_.goal_dim; ++i) {
    stg1_(i) = static_cast<float>(s1[static_cast<size_t>(i)]);
    stg2_(i) = static_cast<float>(s2[static_cast<size_t>(i)]);
  }
  pretrained_ = true;
}

}  // namespace mmr::train
