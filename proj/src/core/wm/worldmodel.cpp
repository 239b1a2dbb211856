#include "core/wm/worldmodel.hpp"

#include <cmath>

#include "core/num/tape.hpp"

namespace mmr::wm {

namespace {

float softplus_floor(float v, float floor) {
  float sp;
  if (v > 20.0f)
    sp = v;
  else if (v < -20.0f)
    sp = std::exp(v);
  else
    sp = std::log1p(std::exp(v));
  return sp + floor;
}

float logistic(float v) {
  return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
}

Mat hconcat(const Mat& a, const Mat& b) {
  MMR_REQUIRE(a.rows() == b.rows(), "hconcat: row mismatch");
  Mat out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

Mat sample_gaussian(const Mat& mean, const Mat& stddev, Rng& rng) {
  Mat z(mean.rows(), mean.cols());
  for (int r = 0; r < z.rows(); ++r)
    for (int c = 0; c < z.cols(); ++c)
      z(r, c) = mean(r, c) + stddev(r, c) * static_cast<float>(rng.normal());
  return z;
}

}  // namespace

double wm_total_loss(double reconstruction, double reward_pred, double collision_pred,
                     double kl, double beta) {
  return reconstruction + reward_pred + collision_pred + beta * kl;
}

Vec observation_to_vec(const sim::Observation& obs) {
  Vec v(sim::Observation::kGridCells + sim::Observation::kProprio);
  for (int i = 0; i < sim::Observation::kGridCells; ++i) v[i] = obs.grid[i];
  for (int i = 0; i < sim::Observation::kProprio; ++i)
    v[sim::Observation::kGridCells + i] = static_cast<float>(obs.proprio[i]);
  return v;
}

WorldModel::WorldModel(const WmConfig& cfg, uint64_t seed)
    : cfg_(cfg),
      init_rng_(seed),
      encoder_(store_, "wm.enc", {cfg.obs_dim, cfg.hidden, cfg.hidden}, init_rng_),
      cell_(store_, "wm.gru", cfg.z_dim + cfg.action_dim, cfg.h_dim, init_rng_),
      post_head_(store_, "wm.post", {cfg.h_dim + cfg.hidden, cfg.hidden, 2 * cfg.z_dim},
                 init_rng_),
      prior_head_(store_, "wm.prior", {cfg.h_dim, cfg.hidden, 2 * cfg.z_dim}, init_rng_),
      decoder_(store_, "wm.dec", {cfg.feature_dim(), cfg.hidden, cfg.hidden, cfg.obs_dim},
               init_rng_),
      reward_head_(store_, "wm.rew", {cfg.feature_dim(), cfg.hidden, 1}, init_rng_),
      collision_head_(store_, "wm.col", {cfg.feature_dim(), cfg.hidden, 1}, init_rng_),
      code_enc_(codec_store_, "codec.enc", {cfg.h_dim, cfg.hidden, cfg.code_dim()}, init_rng_),
      code_dec_(codec_store_, "codec.dec", {cfg.code_dim(), cfg.hidden, cfg.h_dim}, init_rng_),
      adam_(store_, cfg.lr),
      codec_adam_(codec_store_, cfg.codec_lr) {}

LatentBatch WorldModel::initial(int rows) const {
  LatentBatch s;
  s.h = Mat::Zero(rows, cfg_.h_dim);
  s.z = Mat::Zero(rows, cfg_.z_dim);
  s.mean = Mat::Zero(rows, cfg_.z_dim);
  s.stddev = Mat::Constant(rows, cfg_.z_dim, 1.0f);
  return s;
}

WorldModel::Dist WorldModel::split_dist(const Mat& raw) const {
  Dist d;
  d.mean = raw.leftCols(cfg_.z_dim);
  d.stddev = raw.rightCols(cfg_.z_dim).unaryExpr(
      [this](float v) { return softplus_floor(v, cfg_.std_floor); });
  return d;
}

LatentBatch WorldModel::observe(const LatentBatch& prev, const Mat& prev_action, const Mat& obs,
                                Rng& rng) const {
  MMR_REQUIRE(prev.h.rows() == prev_action.rows() && prev.h.rows() == obs.rows(),
              "observe: batch mismatch");
  MMR_REQUIRE(obs.cols() == cfg_.obs_dim && prev_action.cols() == cfg_.action_dim,
              "observe: bad widths");
  MMR_REQUIRE(obs.allFinite(), "observe: non-finite observation");
  LatentBatch s;
  s.h = cell_.forward_raw(hconcat(prev.z, prev_action), prev.h);
  Mat e = encoder_.forward_raw(obs);
  Dist d = split_dist(post_head_.forward_raw(hconcat(s.h, e)));
  s.mean = d.mean;
  s.stddev = d.stddev;
  s.z = sample_gaussian(d.mean, d.stddev, rng);
  return s;
}

LatentBatch WorldModel::imagine_step(const LatentBatch& prev, const Mat& prev_action,
                                     Rng& rng) const {
  MMR_REQUIRE(prev.h.rows() == prev_action.rows() && prev_action.cols() == cfg_.action_dim,
              "imagine_step: batch mismatch");
  LatentBatch s;
  s.h = cell_.forward_raw(hconcat(prev.z, prev_action), prev.h);
  Dist d = split_dist(prior_head_.forward_raw(s.h));
  s.mean = d.mean;
  s.stddev = d.stddev;
  s.z = sample_gaussian(d.mean, d.stddev, rng);
  return s;
}

Mat WorldModel::decode(const LatentBatch& s) const {
  Mat out = decoder_.forward_raw(features(s));
  out.leftCols(cfg_.grid_dim) =
      out.leftCols(cfg_.grid_dim).unaryExpr([](float v) { return logistic(v); });
  return out;
}

std::pair<Vec, Vec> WorldModel::predict(const LatentBatch& s) const {
  Mat f = features(s);
  Vec r = reward_head_.forward_raw(f).col(0).unaryExpr([](float v) { return logistic(v); });
  Vec c = collision_head_.forward_raw(f).col(0).unaryExpr([](float v) { return logistic(v); });
  return {r, c};
}

Mat WorldModel::features(const LatentBatch& s) { return hconcat(s.h, s.z); }

WMLossReport WorldModel::train_batch(const SeqBatch& batch, Rng& rng,
                                     std::vector<LatentBatch>* out_posteriors) {
  const int B = batch.batch, T = batch.steps, BT = B * T;
  MMR_REQUIRE(B >= 1 && T >= 2, "train_batch: need sequences of length >= 2");
  MMR_REQUIRE(batch.obs.rows() == BT && batch.obs.cols() == cfg_.obs_dim,
              "train_batch: obs shape");
  MMR_REQUIRE(batch.prev_action.rows() == BT && batch.reward.size() == BT &&
                  batch.collision.size() == BT && batch.demo_mask.size() == BT,
              "train_batch: label shape");
  if (out_posteriors) out_posteriors->clear();

  num::Tape tape;
  num::Var obs_c = tape.constant(batch.obs);
  num::Var e_all = encoder_.forward(tape, obs_c);

  num::Var h = tape.constant(Mat::Zero(B, cfg_.h_dim));
  num::Var z = tape.constant(Mat::Zero(B, cfg_.z_dim));
  num::Var kl_sum = tape.constant(Mat::Zero(1, 1));
  std::vector<num::Var> feats_t;
  feats_t.reserve(T);

  for (int t = 0; t < T; ++t) {
    num::Var a_t = tape.constant(batch.prev_action.middleRows(t * B, B));
    num::Var x = tape.concat_cols({z, a_t});
    h = cell_.forward(tape, x, h);

    num::Var e_t = tape.slice_rows(e_all, t * B, B);
    num::Var post_raw = post_head_.forward(tape, tape.concat_cols({h, e_t}));
    num::Var pm = tape.slice_cols(post_raw, 0, cfg_.z_dim);
    num::Var ps = tape.add_const(tape.softplus(tape.slice_cols(post_raw, cfg_.z_dim, cfg_.z_dim)),
                                 cfg_.std_floor);
    num::Var prior_raw = prior_head_.forward(tape, h);
    num::Var qm = tape.slice_cols(prior_raw, 0, cfg_.z_dim);
    num::Var qs = tape.add_const(
        tape.softplus(tape.slice_cols(prior_raw, cfg_.z_dim, cfg_.z_dim)), cfg_.std_floor);

    kl_sum = tape.add(kl_sum, tape.sum_all(tape.kl_diag_gaussian(pm, ps, qm, qs)));
    z = tape.gaussian_reparam(pm, ps, rng);
    feats_t.push_back(tape.concat_cols({h, z}));
    if (out_posteriors)
      out_posteriors->push_back({tape.val(h), tape.val(z), tape.val(pm), tape.val(ps)});
  }

  num::Var feats = tape.concat_rows(feats_t);
  num::Var dec = decoder_.forward(tape, feats);
  num::Var grid_hat = tape.sigmoid(tape.slice_cols(dec, 0, cfg_.grid_dim));
  num::Var prop_hat = tape.slice_cols(dec, cfg_.grid_dim, cfg_.obs_dim - cfg_.grid_dim);
  num::Var grid_c = tape.slice_cols(obs_c, 0, cfg_.grid_dim);
  num::Var prop_c = tape.slice_cols(obs_c, cfg_.grid_dim, cfg_.obs_dim - cfg_.grid_dim);

  float inv = 1.0f / static_cast<float>(BT);
  num::Var recon = tape.scale(
      tape.add(tape.sum_all(tape.square(tape.sub(grid_hat, grid_c))),
               tape.sum_all(tape.square(tape.sub(prop_hat, prop_c)))),
      inv);

  num::Var r_hat = tape.sigmoid(reward_head_.forward(tape, feats));
  num::Var c_hat = tape.sigmoid(collision_head_.forward(tape, feats));
  num::Var r_sq = tape.square(tape.sub(r_hat, tape.constant(batch.reward)));
  num::Var c_sq = tape.square(tape.sub(c_hat, tape.constant(batch.collision)));
  num::Var rew_loss = tape.scale(tape.sum_all(r_sq), inv);
  num::Var col_loss = tape.scale(tape.sum_all(c_sq), inv);
  num::Var kl_mean = tape.scale(kl_sum, inv);

  num::Var total =
      tape.add(tape.add(recon, rew_loss), tape.add(col_loss, tape.scale(kl_mean, cfg_.beta)));

  WMLossReport rep;
  rep.reconstruction = tape.val(recon)(0, 0);
  rep.reward_pred = tape.val(rew_loss)(0, 0);
  rep.collision_pred = tape.val(col_loss)(0, 0);
  rep.kl = tape.val(kl_mean)(0, 0);
  rep.total = tape.val(total)(0, 0);

  if (!std::isfinite(rep.total)) {
    store_.zero_grads();
    rep.applied = false;
    rep.l_rew = l_rew_;
    return rep;
  }

  tape.backward(total);
  rep.applied = adam_.step();
  rep.grad_norm = adam_.last_grad_norm();

  if (rep.applied) {
    const Mat& sq = tape.val(r_sq);
    double demo_sum = 0, demo_n = 0;
    for (int i = 0; i < BT; ++i) {
      if (batch.demo_mask[i] > 0.5f) {
        demo_sum += sq(i, 0);
        demo_n += 1;
      }
    }
    if (demo_n > 0)
      l_rew_ = cfg_.l_rew_decay * l_rew_ + (1.0 - cfg_.l_rew_decay) * (demo_sum / demo_n);
  }
  rep.l_rew = l_rew_;
  return rep;
}

SubgoalCode WorldModel::encode_goal(const Vec& h) const {
  MMR_REQUIRE(h.size() == cfg_.h_dim, "encode_goal: bad h size");
  Mat logits = code_enc_.forward_raw(h.transpose());
  SubgoalCode code;
  for (int g = 0; g < cfg_.code_groups; ++g) {
    int best = 0;
    for (int k = 1; k < cfg_.code_classes; ++k)
      if (logits(0, g * cfg_.code_classes + k) > logits(0, g * cfg_.code_classes + best))
        best = k;
    code.cls[g] = best;
  }
  return code;
}

Mat WorldModel::code_to_onehot(const SubgoalCode& code) const {
  Mat onehot = Mat::Zero(1, cfg_.code_dim());
  for (int g = 0; g < cfg_.code_groups; ++g) {
    MMR_REQUIRE(code.cls[g] >= 0 && code.cls[g] < cfg_.code_classes, "bad subgoal code");
    onehot(0, g * cfg_.code_classes + code.cls[g]) = 1.0f;
  }
  return onehot;
}

Vec WorldModel::decode_goal(const SubgoalCode& code) const {
  return code_dec_.forward_raw(code_to_onehot(code)).row(0).transpose();
}

Mat WorldModel::decode_codes(const Mat& onehot) const {
  MMR_REQUIRE(onehot.cols() == cfg_.code_dim(), "decode_codes: bad width");
  return code_dec_.forward_raw(onehot);
}

double WorldModel::train_codec(const Mat& h_batch, Rng& rng) {
  MMR_REQUIRE(h_batch.cols() == cfg_.h_dim && h_batch.rows() >= 1, "train_codec: bad batch");
  num::Tape tape;
  num::Var hc = tape.constant(h_batch);
  num::Var logits = code_enc_.forward(tape, hc);
  std::vector<num::Var> groups;
  for (int g = 0; g < cfg_.code_groups; ++g)
    groups.push_back(
        tape.st_onehot(tape.slice_cols(logits, g * cfg_.code_classes, cfg_.code_classes), rng));
  num::Var recon = code_dec_.forward(tape, tape.concat_cols(groups));
  num::Var loss = tape.mean_all(tape.square(tape.sub(recon, hc)));
  double out = tape.val(loss)(0, 0);
  tape.backward(loss);
  codec_adam_.step();
  return out;
}

}  // namespace mmr::wm
