#include "core/policy/policy.hpp"

#include <algorithm>
#include <cmath>

#include "core/num/tape.hpp"

namespace mmr::policy {

namespace {

constexpr float kMaskedLogit = -1e9f;

std::vector<int> range_indices(int lo, int hi) {
  std::vector<int> out;
  for (int i = lo; i < hi; ++i) out.push_back(i);
  return out;
}

std::vector<int> allowed_actions(int mask) {
  MMR_REQUIRE(mask == kMaskBase || mask == kMaskArm, "bad embodiment mask");
  return mask == kMaskBase ? range_indices(0, sim::kNumBaseActions)
                           : range_indices(sim::kNumBaseActions, sim::kNumActions);
}

// 0/1 row selectors per copy, replicated across cols, row b of every time
// block belongs to embodiment[b].
Mat copy_mask(const std::vector<int>& embodiment, int rows, int cols, int copy) {
  const int B = static_cast<int>(embodiment.size());
  MMR_REQUIRE(B > 0 && rows % B == 0, "copy_mask: rows not a multiple of batch");
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) m.row(r).setConstant(embodiment[r % B] == copy ? 1.0f : 0.0f);
  return m;
}

num::Var forward_copies(num::Tape& tape, const std::vector<num::Mlp>& nets, num::Var in,
                        const std::vector<int>& embodiment) {
  if (nets.size() == 1) return nets[0].forward(tape, in);
  const int rows = static_cast<int>(tape.val(in).rows());
  const int cols = nets[0].out_dim();
  num::Var o0 = tape.cmul(nets[0].forward(tape, in), copy_mask(embodiment, rows, cols, 0));
  num::Var o1 = tape.cmul(nets[1].forward(tape, in), copy_mask(embodiment, rows, cols, 1));
  return tape.add(o0, o1);
}

Mat forward_copies_raw(const std::vector<num::Mlp>& nets, const Mat& in,
                       const std::vector<int>& embodiment) {
  if (nets.size() == 1) return nets[0].forward_raw(in);
  const int rows = static_cast<int>(in.rows());
  Mat out = nets[0].forward_raw(in);
  Mat alt = nets[1].forward_raw(in);
  const int B = static_cast<int>(embodiment.size());
  MMR_REQUIRE(B > 0 && rows % B == 0, "forward_copies: rows not a multiple of batch");
  for (int r = 0; r < rows; ++r)
    if (embodiment[r % B] == 1) out.row(r) = alt.row(r);
  return out;
}

// -1e9 on actions outside the embodiment's range.
Mat action_mask_bias(const std::vector<int>& embodiment, int rows, int action_dim) {
  const int B = static_cast<int>(embodiment.size());
  MMR_REQUIRE(B > 0 && rows % B == 0, "action_mask: rows not a multiple of batch");
  Mat m = Mat::Zero(rows, action_dim);
  for (int r = 0; r < rows; ++r) {
    if (embodiment[r % B] == kMaskBase)
      m.row(r).segment(sim::kNumBaseActions, action_dim - sim::kNumBaseActions)
          .setConstant(kMaskedLogit);
    else
      m.row(r).segment(0, sim::kNumBaseActions).setConstant(kMaskedLogit);
  }
  return m;
}

Mat onehot_rows(const std::vector<int>& idx, int cols) {
  Mat m = Mat::Zero(static_cast<int>(idx.size()), cols);
  for (size_t r = 0; r < idx.size(); ++r) {
    MMR_REQUIRE(idx[r] >= 0 && idx[r] < cols, "onehot: index out of range");
    m(static_cast<int>(r), idx[r]) = 1.0f;
  }
  return m;
}

// Per-sequence lambda returns over a time-major value/reward layout.
Vec batched_lambda_returns(const Vec& rewards, const Vec& values, int B, int steps, double gamma,
                           double lambda) {
  Vec out(B * steps);
  std::vector<double> r(steps), v(steps + 1);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < steps; ++t) r[t] = rewards[t * B + b];
    for (int t = 0; t <= steps; ++t) v[t] = values[t * B + b];
    std::vector<double> tgt = lambda_returns(r, v, gamma, lambda);
    for (int t = 0; t < steps; ++t) out[t * B + b] = static_cast<float>(tgt[t]);
  }
  return out;
}

int shared_in_dim(const PolicyConfig& cfg, int copies) {
  return cfg.feature_dim + cfg.goal_dim + (copies == 1 ? 2 : 0);
}

std::vector<num::Mlp> make_heads(num::ParamStore& store, const std::string& prefix, int copies,
                                 const std::vector<int>& sizes, Rng& rng) {
  std::vector<num::Mlp> nets;
  for (int c = 0; c < copies; ++c)
    nets.emplace_back(store, prefix + std::to_string(c), sizes, rng, 0.1f);
  return nets;
}

std::vector<std::vector<num::Mlp>> make_manager_critics(num::ParamStore& store,
                                                        const PolicyConfig& cfg, int copies,
                                                        Rng& rng) {
  const std::vector<int> sizes{shared_in_dim(cfg, copies), cfg.hidden, cfg.hidden, 1};
  const char* channels[3] = {"task", "col", "prog"};
  std::vector<std::vector<num::Mlp>> out(copies);
  for (int c = 0; c < copies; ++c)
    for (const char* ch : channels)
      out[c].emplace_back(store, std::string("mgr.") + ch + std::to_string(c), sizes, rng, 0.1f);
  return out;
}

}  // namespace

std::vector<double> lambda_returns(const std::vector<double>& rewards,
                                   const std::vector<double>& values, double gamma,
                                   double lambda) {
  MMR_REQUIRE(values.size() == rewards.size() + 1, "lambda_returns: values must have T+1 entries");
  const int T = static_cast<int>(rewards.size());
  std::vector<double> out(T);
  double next = values[T];
  for (int t = T - 1; t >= 0; --t) {
    out[t] = rewards[t] + gamma * ((1.0 - lambda) * values[t + 1] + lambda * next);
    next = out[t];
  }
  return out;
}

double compute_mu(double l_rew, const PolicyConfig& cfg) {
  double mu = cfg.mu_predefined - 10.0 * l_rew;
  return std::min(static_cast<double>(cfg.mu_max), std::max(static_cast<double>(cfg.mu_min), mu));
}

Vec selector_targets(const Vec& reward, const Vec& q_frozen, double mu) {
  MMR_REQUIRE(reward.size() == q_frozen.size(), "selector_targets: size mismatch");
  MMR_REQUIRE(mu >= 0.0 && mu <= 1.0, "selector_targets: mu outside [0,1]");
  return (mu * reward.cast<double>() + (1.0 - mu) * q_frozen.cast<double>()).cast<float>();
}

double cross_entropy(const Mat& logits, const std::vector<int>& labels) {
  MMR_REQUIRE(static_cast<size_t>(logits.rows()) == labels.size(), "cross_entropy: row mismatch");
  double total = 0;
  for (int r = 0; r < logits.rows(); ++r) {
    MMR_REQUIRE(labels[r] >= 0 && labels[r] < logits.cols(), "cross_entropy: bad label");
    double mx = logits.row(r).maxCoeff();
    double lse = 0;
    for (int c = 0; c < logits.cols(); ++c) lse += std::exp(logits(r, c) - mx);
    total += std::log(lse) + mx - logits(r, labels[r]);
  }
  return total / logits.rows();
}

double progress_reward(const std::vector<Vec>& h_states, const Vec& stg2) {
  double sum = 0;
  for (const Vec& h : h_states) sum += num::cosine_similarity(h, stg2);
  return sum;
}

double goal_reward(const Vec& h, const Vec& subgoal) {
  return num::cosine_similarity(h, subgoal);
}

// ----- Selector -----

Selector::Selector(const PolicyConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      init_rng_(seed),
      actor_(actor_store_, "sel.actor",
             {cfg.feature_dim + 2 * cfg.goal_dim, cfg.hidden, cfg.hidden, 2}, init_rng_, 0.1f),
      critic_(critic_store_, "sel.critic",
              {cfg.feature_dim + 2 * cfg.goal_dim, cfg.hidden, cfg.hidden, 2}, init_rng_, 0.1f),
      frozen_(frozen_store_, "sel.critic",
              {cfg.feature_dim + 2 * cfg.goal_dim, cfg.hidden, cfg.hidden, 2}, init_rng_, 0.1f),
      actor_adam_(actor_store_, cfg.actor_lr),
      critic_adam_(critic_store_, cfg.critic_lr) {
  frozen_store_.copy_values_from(critic_store_);
}

Mat Selector::assemble(const Mat& feats, const Mat& stg1, const Mat& stg2) const {
  MMR_REQUIRE(feats.rows() == stg1.rows() && feats.rows() == stg2.rows(),
              "selector: row mismatch");
  Mat in(feats.rows(), feats.cols() + stg1.cols() + stg2.cols());
  in << feats, stg1, stg2;
  return in;
}

void Selector::sync_frozen() { frozen_store_.copy_values_from(critic_store_); }

int Selector::select(const Vec& feat, const Vec& stg1, const Vec& stg2, double eps,
                     Rng& rng) const {
  if (rng.uniform() < eps) return rng.uniform_int(2);
  Mat in = assemble(feat.transpose(), stg1.transpose(), stg2.transpose());
  Vec logits = actor_.forward_raw(in).row(0).transpose();
  return num::sample_categorical(logits, rng);
}

std::vector<int> Selector::select_batch(const Mat& feats, const Mat& stg1, const Mat& stg2,
                                        double eps, Rng& rng) const {
  Mat logits = actor_.forward_raw(assemble(feats, stg1, stg2));
  std::vector<int> out(feats.rows());
  for (int r = 0; r < feats.rows(); ++r) {
    if (rng.uniform() < eps)
      out[r] = rng.uniform_int(2);
    else
      out[r] = num::sample_categorical(logits.row(r).transpose(), rng);
  }
  return out;
}

Mat Selector::probs(const Mat& feats, const Mat& stg1, const Mat& stg2) const {
  Mat logits = actor_.forward_raw(assemble(feats, stg1, stg2));
  Mat p(logits.rows(), logits.cols());
  for (int r = 0; r < logits.rows(); ++r)
    p.row(r) = num::softmax_vec(logits.row(r).transpose()).transpose();
  return p;
}

Mat Selector::q(const Mat& feats, const Mat& stg1, const Mat& stg2) const {
  return critic_.forward_raw(assemble(feats, stg1, stg2));
}

Mat Selector::q_frozen(const Mat& feats, const Mat& stg1, const Mat& stg2) const {
  return frozen_.forward_raw(assemble(feats, stg1, stg2));
}

UpdateReport Selector::update(const Batch& batch, double mu, Rng&) {
  const int B = static_cast<int>(batch.feats.rows());
  MMR_REQUIRE(B > 0 && static_cast<int>(batch.mask.size()) == B && batch.reward.size() == B,
              "selector update: shape mismatch");
  Mat in = assemble(batch.feats, batch.stg1, batch.stg2);

  Mat qf_all = frozen_.forward_raw(in);
  Vec qf(B);
  for (int b = 0; b < B; ++b) qf[b] = qf_all(b, batch.mask[b]);
  Vec targets = selector_targets(batch.reward, qf, mu);

  num::Tape tape;
  num::Var in_c = tape.constant(in);
  Mat mask_oh = onehot_rows(batch.mask, 2);

  num::Var q_all = critic_.forward(tape, in_c);
  num::Var q_sa = tape.rowsum(tape.cmul(q_all, mask_oh));
  num::Var critic_loss =
      tape.scale(tape.sum_all(tape.square(tape.sub(q_sa, tape.constant(targets)))), 0.5f / B);

  num::Var logits = actor_.forward(tape, in_c);
  num::Var logp = tape.log_softmax(logits);
  num::Var lnpi = tape.rowsum(tape.cmul(logp, mask_oh));
  num::Var weight = tape.stop_gradient(q_sa);
  num::Var ent = tape.scale(tape.sum_all(tape.entropy(logits)), 1.0f / B);
  num::Var actor_loss = tape.sub(tape.scale(tape.sum_all(tape.mul(lnpi, weight)), -1.0f / B),
                                 tape.scale(ent, cfg_.eta));

  num::Var total = tape.add(actor_loss, critic_loss);

  UpdateReport rep;
  rep.actor_loss = tape.val(actor_loss)(0, 0);
  rep.critic_loss = tape.val(critic_loss)(0, 0);
  rep.entropy = tape.val(ent)(0, 0);
  if (!std::isfinite(tape.val(total)(0, 0))) {
    actor_store_.zero_grads();
    critic_store_.zero_grads();
    rep.applied = false;
    return rep;
  }
  tape.backward(total);
  bool a = actor_adam_.step();
  bool c = critic_adam_.step();
  rep.applied = a && c;

  ++updates_;
  if (updates_ % cfg_.frozen_sync == 0) sync_frozen();
  return rep;
}

// ----- Manager -----

Manager::Manager(const PolicyConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      copies_(cfg.modified ? 2 : 1),
      init_rng_(seed),
      actors_(make_heads(actor_store_, "mgr.actor", copies_,
                         {shared_in_dim(cfg, copies_), cfg.hidden, cfg.hidden, cfg.code_dim()},
                         init_rng_)),
      critics_(make_manager_critics(critic_store_, cfg, copies_, init_rng_)),
      actor_adam_(actor_store_, cfg.actor_lr),
      critic_adam_(critic_store_, cfg.critic_lr) {}

Mat Manager::assemble(const Mat& feats, const Mat& goals,
                      const std::vector<int>& embodiment) const {
  MMR_REQUIRE(feats.rows() == goals.rows(), "manager: row mismatch");
  if (copies_ == 2) {
    Mat in(feats.rows(), feats.cols() + goals.cols());
    in << feats, goals;
    return in;
  }
  Mat in(feats.rows(), feats.cols() + goals.cols() + 2);
  const int B = static_cast<int>(embodiment.size());
  MMR_REQUIRE(B > 0 && feats.rows() % B == 0, "manager: rows not a multiple of batch");
  for (int r = 0; r < feats.rows(); ++r) {
    int m = embodiment[r % B];
    MMR_REQUIRE(m == kMaskBase || m == kMaskArm, "manager: bad mask");
    in.row(r) << feats.row(r), goals.row(r), (m == kMaskBase ? 1.0f : 0.0f),
        (m == kMaskArm ? 1.0f : 0.0f);
  }
  return in;
}

wm::SubgoalCode Manager::sample(const Vec& feat, const Vec& goal, int mask, Rng& rng) const {
  Mat in = assemble(feat.transpose(), goal.transpose(), {mask});
  Mat logits = forward_copies_raw(actors_, in, {mask});
  wm::SubgoalCode code;
  for (int g = 0; g < cfg_.code_groups; ++g) {
    Vec lg = logits.row(0).segment(g * cfg_.code_classes, cfg_.code_classes).transpose();
    code.cls[g] = num::sample_categorical(lg, rng);
  }
  return code;
}

Mat Manager::sample_batch(const Mat& feats, const Mat& goals, const std::vector<int>& mask,
                          Rng& rng) const {
  Mat logits = forward_copies_raw(actors_, assemble(feats, goals, mask), mask);
  Mat out = Mat::Zero(feats.rows(), cfg_.code_dim());
  for (int r = 0; r < feats.rows(); ++r) {
    for (int g = 0; g < cfg_.code_groups; ++g) {
      Vec lg = logits.row(r).segment(g * cfg_.code_classes, cfg_.code_classes).transpose();
      out(r, g * cfg_.code_classes + num::sample_categorical(lg, rng)) = 1.0f;
    }
  }
  return out;
}

Vec Manager::channel_value(int channel, const Mat& feats, const Mat& goals,
                           const std::vector<int>& embodiment) const {
  MMR_REQUIRE(channel >= 0 && channel < 3, "manager: bad channel");
  std::vector<num::Mlp> nets;
  for (int c = 0; c < copies_; ++c) nets.push_back(critics_[c][channel]);
  return forward_copies_raw(nets, assemble(feats, goals, embodiment), embodiment).col(0);
}

UpdateReport Manager::update(const Batch& batch, const Imitation* imitation, Rng&) {
  const int B = batch.batch, S = batch.steps;
  const int rows_sa = B * S, rows_all = B * (S + 1);
  MMR_REQUIRE(B > 0 && S > 0, "manager update: empty batch");
  MMR_REQUIRE(batch.feats.rows() == rows_all && batch.codes.rows() == rows_sa &&
                  batch.r_task.size() == rows_sa && batch.r_collision.size() == rows_sa &&
                  batch.r_progress.size() == rows_sa &&
                  static_cast<int>(batch.embodiment.size()) == B,
              "manager update: shape mismatch");

  Mat in_all = assemble(batch.feats, batch.goals, batch.embodiment);
  Mat in_sa = in_all.topRows(rows_sa);

  const Vec* channel_rewards[3] = {&batch.r_task, &batch.r_collision, &batch.r_progress};
  const float channel_weights[3] = {cfg_.w_task, cfg_.w_collision, cfg_.w_progress};
  Vec targets[3];
  Vec adv = Vec::Zero(rows_sa);
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<num::Mlp> nets;
    for (int c = 0; c < copies_; ++c) nets.push_back(critics_[c][ch]);
    Vec v_all = forward_copies_raw(nets, in_all, batch.embodiment).col(0);
    targets[ch] =
        batched_lambda_returns(*channel_rewards[ch], v_all, B, S, cfg_.gamma, cfg_.lambda);
    adv += channel_weights[ch] * (targets[ch] - v_all.head(rows_sa));
  }

  num::Tape tape;
  num::Var in_sa_c = tape.constant(in_sa);

  num::Var critic_loss = tape.constant(Mat::Zero(1, 1));
  for (int ch = 0; ch < 3; ++ch) {
    std::vector<num::Mlp> nets;
    for (int c = 0; c < copies_; ++c) nets.push_back(critics_[c][ch]);
    num::Var v_hat = forward_copies(tape, nets, in_sa_c, batch.embodiment);
    num::Var diff = tape.sub(v_hat, tape.constant(targets[ch]));
    critic_loss = tape.add(critic_loss,
                           tape.scale(tape.sum_all(tape.square(diff)), 0.5f / rows_sa));
  }

  num::Var logits = forward_copies(tape, actors_, in_sa_c, batch.embodiment);
  num::Var lnp = tape.constant(Mat::Zero(rows_sa, 1));
  num::Var ent_sum = tape.constant(Mat::Zero(rows_sa, 1));
  for (int g = 0; g < cfg_.code_groups; ++g) {
    num::Var lg = tape.slice_cols(logits, g * cfg_.code_classes, cfg_.code_classes);
    Mat code_g = batch.codes.middleCols(g * cfg_.code_classes, cfg_.code_classes);
    lnp = tape.add(lnp, tape.rowsum(tape.cmul(tape.log_softmax(lg), code_g)));
    ent_sum = tape.add(ent_sum, tape.entropy(lg));
  }
  num::Var ent = tape.scale(tape.sum_all(ent_sum), 1.0f / rows_sa);
  num::Var pg = tape.scale(tape.sum_all(tape.cmul(lnp, adv)), -1.0f / rows_sa);
  num::Var actor_loss = tape.sub(pg, tape.scale(ent, cfg_.eta));

  UpdateReport rep;
  if (imitation) {
    const int ir = static_cast<int>(imitation->feats.rows());
    MMR_REQUIRE(ir > 0 && imitation->codes.rows() == ir, "manager imitation: shape mismatch");
    num::Var lim =
        forward_copies(tape, actors_,
                       tape.constant(assemble(imitation->feats, imitation->goals,
                                              imitation->embodiment)),
                       imitation->embodiment);
    num::Var ce = tape.constant(Mat::Zero(1, 1));
    for (int g = 0; g < cfg_.code_groups; ++g) {
      num::Var lg = tape.slice_cols(lim, g * cfg_.code_classes, cfg_.code_classes);
      Mat code_g = imitation->codes.middleCols(g * cfg_.code_classes, cfg_.code_classes);
      ce = tape.sub(ce, tape.scale(tape.sum_all(tape.cmul(tape.log_softmax(lg), code_g)),
                                   1.0f / ir));
    }
    rep.imitation = tape.val(ce)(0, 0);
    actor_loss = tape.add(actor_loss, tape.scale(ce, cfg_.imitation_weight));
  }

  num::Var total = tape.add(actor_loss, critic_loss);
  rep.actor_loss = tape.val(actor_loss)(0, 0);
  rep.critic_loss = tape.val(critic_loss)(0, 0);
  rep.entropy = tape.val(ent)(0, 0);
  if (!std::isfinite(tape.val(total)(0, 0))) {
    actor_store_.zero_grads();
    critic_store_.zero_grads();
    rep.applied = false;
    return rep;
  }
  tape.backward(total);
  bool a = actor_adam_.step();
  bool c = critic_adam_.step();
  rep.applied = a && c;
  return rep;
}

// ----- Worker -----

Worker::Worker(const PolicyConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      copies_(cfg.modified ? 2 : 1),
      init_rng_(seed),
      actors_(make_heads(actor_store_, "wkr.actor", copies_,
                         {shared_in_dim(cfg, copies_), cfg.hidden, cfg.hidden, cfg.action_dim},
                         init_rng_)),
      critics_(make_heads(critic_store_, "wkr.critic", copies_,
                          {shared_in_dim(cfg, copies_), cfg.hidden, cfg.hidden, 1}, init_rng_)),
      actor_adam_(actor_store_, cfg.actor_lr),
      critic_adam_(critic_store_, cfg.critic_lr) {}

Mat Worker::assemble(const Mat& feats, const Mat& subgoals,
                     const std::vector<int>& embodiment) const {
  MMR_REQUIRE(feats.rows() == subgoals.rows(), "worker: row mismatch");
  if (copies_ == 2) {
    Mat in(feats.rows(), feats.cols() + subgoals.cols());
    in << feats, subgoals;
    return in;
  }
  Mat in(feats.rows(), feats.cols() + subgoals.cols() + 2);
  const int B = static_cast<int>(embodiment.size());
  MMR_REQUIRE(B > 0 && feats.rows() % B == 0, "worker: rows not a multiple of batch");
  for (int r = 0; r < feats.rows(); ++r) {
    int m = embodiment[r % B];
    MMR_REQUIRE(m == kMaskBase || m == kMaskArm, "worker: bad mask");
    in.row(r) << feats.row(r), subgoals.row(r), (m == kMaskBase ? 1.0f : 0.0f),
        (m == kMaskArm ? 1.0f : 0.0f);
  }
  return in;
}

int Worker::act(const Vec& feat, const Vec& subgoal, int mask, double eps, Rng& rng) const {
  std::vector<int> allowed = allowed_actions(mask);
  int idx;
  if (rng.uniform() < eps) {
    idx = allowed[rng.uniform_int(static_cast<int>(allowed.size()))];
  } else {
    Mat in = assemble(feat.transpose(), subgoal.transpose(), {mask});
    Vec logits = forward_copies_raw(actors_, in, {mask}).row(0).transpose();
    idx = num::sample_categorical_masked(logits, allowed, rng);
  }
  MMR_REQUIRE(sim::is_arm_action(idx) == (mask == kMaskArm), "worker: mask violation");
  return idx;
}

Mat Worker::act_batch(const Mat& feats, const Mat& subgoals, const std::vector<int>& mask,
                      double eps, Rng& rng, std::vector<int>* out_indices) const {
  MMR_REQUIRE(static_cast<int>(mask.size()) == feats.rows(), "act_batch: mask size");
  Mat logits = forward_copies_raw(actors_, assemble(feats, subgoals, mask), mask);
  Mat out = Mat::Zero(feats.rows(), cfg_.action_dim);
  if (out_indices) out_indices->assign(feats.rows(), -1);
  for (int r = 0; r < feats.rows(); ++r) {
    std::vector<int> allowed = allowed_actions(mask[r]);
    int idx;
    if (rng.uniform() < eps)
      idx = allowed[rng.uniform_int(static_cast<int>(allowed.size()))];
    else
      idx = num::sample_categorical_masked(logits.row(r).transpose(), allowed, rng);
    MMR_REQUIRE(sim::is_arm_action(idx) == (mask[r] == kMaskArm), "act_batch: mask violation");
    out(r, idx) = 1.0f;
    if (out_indices) (*out_indices)[r] = idx;
  }
  return out;
}

Vec Worker::value(const Mat& feats, const Mat& subgoals,
                  const std::vector<int>& embodiment) const {
  return forward_copies_raw(critics_, assemble(feats, subgoals, embodiment), embodiment).col(0);
}

UpdateReport Worker::update(const Batch& batch, const Imitation* imitation, Rng&) {
  const int B = batch.batch, S = batch.steps;
  const int rows_sa = B * S, rows_all = B * (S + 1);
  MMR_REQUIRE(B > 0 && S > 0, "worker update: empty batch");
  MMR_REQUIRE(batch.feats.rows() == rows_all &&
                  static_cast<int>(batch.actions.size()) == rows_sa &&
                  batch.reward.size() == rows_sa &&
                  static_cast<int>(batch.embodiment.size()) == B,
              "worker update: shape mismatch");

  Mat in_all = assemble(batch.feats, batch.subgoals, batch.embodiment);
  Mat in_sa = in_all.topRows(rows_sa);

  Vec v_all = forward_copies_raw(critics_, in_all, batch.embodiment).col(0);
  Vec targets = batched_lambda_returns(batch.reward, v_all, B, S, cfg_.gamma, cfg_.lambda);
  Vec adv = targets - v_all.head(rows_sa);

  num::Tape tape;
  num::Var in_sa_c = tape.constant(in_sa);

  num::Var v_hat = forward_copies(tape, critics_, in_sa_c, batch.embodiment);
  num::Var critic_loss = tape.scale(
      tape.sum_all(tape.square(tape.sub(v_hat, tape.constant(targets)))), 0.5f / rows_sa);

  num::Var logits = forward_copies(tape, actors_, in_sa_c, batch.embodiment);
  num::Var masked =
      tape.add(logits, tape.constant(action_mask_bias(batch.embodiment, rows_sa,
                                                      cfg_.action_dim)));
  num::Var logp = tape.log_softmax(masked);
  num::Var lnpi = tape.rowsum(tape.cmul(logp, onehot_rows(batch.actions, cfg_.action_dim)));
  num::Var ent = tape.scale(tape.sum_all(tape.entropy(masked)), 1.0f / rows_sa);
  num::Var pg = tape.scale(tape.sum_all(tape.cmul(lnpi, adv)), -1.0f / rows_sa);
  num::Var actor_loss = tape.sub(pg, tape.scale(ent, cfg_.eta));

  UpdateReport rep;
  if (imitation) {
    const int ir = static_cast<int>(imitation->feats.rows());
    MMR_REQUIRE(ir > 0 && static_cast<int>(imitation->actions.size()) == ir,
                "worker imitation: shape mismatch");
    num::Var lim = forward_copies(
        tape, actors_,
        tape.constant(assemble(imitation->feats, imitation->subgoals, imitation->embodiment)),
        imitation->embodiment);
    num::Var lim_masked = tape.add(
        lim, tape.constant(action_mask_bias(imitation->embodiment, ir, cfg_.action_dim)));
    num::Var ce = tape.scale(
        tape.sum_all(tape.cmul(tape.log_softmax(lim_masked),
                               onehot_rows(imitation->actions, cfg_.action_dim))),
        -1.0f / ir);
    rep.imitation = tape.val(ce)(0, 0);
    actor_loss = tape.add(actor_loss, tape.scale(ce, cfg_.imitation_weight));
  }

  num::Var total = tape.add(actor_loss, critic_loss);
  rep.actor_loss = tape.val(actor_loss)(0, 0);
  rep.critic_loss = tape.val(critic_loss)(0, 0);
  rep.entropy = tape.val(ent)(0, 0);
  if (!std::isfinite(tape.val(total)(0, 0))) {
    actor_store_.zero_grads();
    critic_store_.zero_grads();
    rep.applied = false;
    return rep;
  }
  tape.backward(total);
  bool a = actor_adam_.step();
  bool c = critic_adam_.step();
  rep.applied = a && c;
  return rep;
}

}  // namespace mmr::policy
