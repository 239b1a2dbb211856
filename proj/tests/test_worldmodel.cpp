#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "core/num/tape.hpp"
#include "core/wm/worldmodel.hpp"

using namespace mmr;
using namespace mmr::wm;
using num::Mat;
using num::Vec;

namespace {

Mat random_obs(Rng& rng, int rows) {
  WmConfig cfg;
  Mat obs(rows, cfg.obs_dim);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cfg.grid_dim; ++c) obs(r, c) = rng.uniform(0, 1) < 0.2 ? 1.0f : 0.0f;
    for (int c = cfg.grid_dim; c < cfg.obs_dim; ++c)
      obs(r, c) = static_cast<float>(rng.uniform(-1, 1));
  }
  return obs;
}

Mat onehot_actions(Rng& rng, int rows) {
  Mat a = Mat::Zero(rows, sim::kNumActions);
  for (int r = 0; r < rows; ++r) a(r, rng.uniform_int(sim::kNumActions)) = 1.0f;
  return a;
}

SeqBatch random_batch(Rng& rng, int B, int T, float demo_fill) {
  SeqBatch b;
  b.batch = B;
  b.steps = T;
  b.obs = random_obs(rng, B * T);
  b.prev_action = onehot_actions(rng, B * T);
  b.reward = Vec::Zero(B * T);
  b.collision = Vec::Zero(B * T);
  b.demo_mask = Vec::Constant(B * T, demo_fill);
  for (int i = 0; i < B * T; ++i) {
    if (rng.uniform(0, 1) < 0.1) b.reward[i] = 1.0f;
    if (rng.uniform(0, 1) < 0.1) b.collision[i] = 1.0f;
  }
  return b;
}

bool same(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a - b).cwiseAbs().maxCoeff() == 0.0f;
}

}  // namespace

TEST_CASE("total loss is the component sum") {
  CHECK(wm_total_loss(0.2, 0.05, 0.03, 0.4, 1.0) == doctest::Approx(0.68).epsilon(1e-12));
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    double r = rng.uniform(0, 2), w = rng.uniform(0, 1), c = rng.uniform(0, 1),
           k = rng.uniform(0, 3), beta = rng.uniform(0.1, 2);
    CHECK(wm_total_loss(r, w, c, k, beta) == doctest::Approx(r + w + c + k * beta).epsilon(1e-12));
  }
}

TEST_CASE("train_batch reports an additive total") {
  WorldModel wm(WmConfig{}, 11);
  Rng rng(12);
  SeqBatch b = random_batch(rng, 2, 3, 0.0f);
  Rng train_rng(13);
  WMLossReport rep = wm.train_batch(b, train_rng);
  CHECK(rep.applied);
  double sum = wm_total_loss(rep.reconstruction, rep.reward_pred, rep.collision_pred, rep.kl,
                             WmConfig{}.beta);
  CHECK(std::abs(rep.total - sum) <= 1e-6 * std::max(1.0, std::abs(sum)));
  CHECK(rep.kl >= 0.0);
  CHECK(rep.reconstruction >= 0.0);
}

TEST_CASE("observe is deterministic given the rng seed and floors the stddev") {
  WorldModel wm(WmConfig{}, 3);
  Rng rng(5);
  Mat obs = random_obs(rng, 2);
  Mat act = onehot_actions(rng, 2);
  LatentBatch prev = wm.initial(2);

  Rng r1(42), r2(42);
  LatentBatch a = wm.observe(prev, act, obs, r1);
  LatentBatch b = wm.observe(prev, act, obs, r2);
  CHECK(same(a.h, b.h));
  CHECK(same(a.z, b.z));
  CHECK(same(a.mean, b.mean));
  CHECK(same(a.stddev, b.stddev));
  CHECK(a.h.allFinite());
  CHECK(a.stddev.minCoeff() >= 0.1f);
  CHECK(a.z.cols() == 32);
  CHECK(a.h.cols() == 128);

  Mat bad = obs;
  bad(0, 0) = std::numeric_limits<float>::quiet_NaN();
  Rng r3(42);
  CHECK_THROWS_AS(wm.observe(prev, act, bad, r3), ContractError);
}

TEST_CASE("imagine_step chains without observations and matches posterior shape") {
  WorldModel wm(WmConfig{}, 3);
  Rng rng(6);
  LatentBatch s = wm.initial(4);

  Rng r1(9), r2(9);
  LatentBatch i1 = wm.imagine_step(s, onehot_actions(rng, 4), r1);
  Rng rng2(6);
  LatentBatch i2 = wm.imagine_step(s, onehot_actions(rng2, 4), r2);
  CHECK(same(i1.z, i2.z));

  std::vector<LatentBatch> chain;
  chain.push_back(s);
  Rng roll(17);
  Rng act_rng(18);
  for (int t = 0; t < 18; ++t)
    chain.push_back(wm.imagine_step(chain.back(), onehot_actions(act_rng, 4), roll));
  CHECK(chain.size() == 19);
  for (const LatentBatch& st : chain) {
    CHECK(st.mean.cols() == 32);
    CHECK(st.stddev.cols() == 32);
    CHECK(st.h.allFinite());
    CHECK(st.stddev.minCoeff() >= 0.1f);
  }
}

TEST_CASE("decode produces observation-shaped output with squashed grid") {
  WorldModel wm(WmConfig{}, 4);
  Rng rng(7);
  LatentBatch s = wm.initial(3);
  Rng r1(8);
  s = wm.observe(s, onehot_actions(rng, 3), random_obs(rng, 3), r1);

  Mat d1 = wm.decode(s);
  Mat d2 = wm.decode(s);
  CHECK(same(d1, d2));
  CHECK(d1.rows() == 3);
  CHECK(d1.cols() == WmConfig{}.obs_dim);
  Mat grid = d1.leftCols(WmConfig{}.grid_dim);
  CHECK(grid.minCoeff() >= 0.0f);
  CHECK(grid.maxCoeff() <= 1.0f);
}

TEST_CASE("predict outputs stay in the unit interval") {
  WorldModel wm(WmConfig{}, 5);
  Rng rng(9);
  LatentBatch s = wm.initial(8);
  Rng r1(10);
  s = wm.observe(s, onehot_actions(rng, 8), random_obs(rng, 8), r1);
  auto [r, c] = wm.predict(s);
  CHECK(r.size() == 8);
  CHECK(c.size() == 8);
  CHECK(r.minCoeff() >= 0.0f);
  CHECK(r.maxCoeff() <= 1.0f);
  CHECK(c.minCoeff() >= 0.0f);
  CHECK(c.maxCoeff() <= 1.0f);
}

TEST_CASE("reparameterized mean gradient is one") {
  num::Tape tape;
  Rng rng(11);
  num::Param mean("m", 1, 32);
  num::Var m = tape.param(mean);
  num::Var s = tape.constant(Mat::Constant(1, 32, 0.7f));
  num::Var z = tape.gaussian_reparam(m, s, rng);
  tape.backward(tape.sum_all(z));
  for (int i = 0; i < 32; ++i) CHECK(mean.grad(0, i) == doctest::Approx(1.0f));
}

TEST_CASE("decoder parameters receive gradient from training") {
  WorldModel wm(WmConfig{}, 6);
  Mat before = wm.rssm_store().get("wm.dec.w0").value;
  Mat enc_before = wm.rssm_store().get("wm.enc.w0").value;
  Rng rng(14);
  SeqBatch b = random_batch(rng, 2, 3, 0.0f);
  Rng train_rng(15);
  WMLossReport rep = wm.train_batch(b, train_rng);
  CHECK(rep.applied);
  CHECK(rep.grad_norm > 0.0);
  CHECK_FALSE(same(before, wm.rssm_store().get("wm.dec.w0").value));
  CHECK_FALSE(same(enc_before, wm.rssm_store().get("wm.enc.w0").value));
}

TEST_CASE("training is deterministic across identically seeded models") {
  WmConfig cfg;
  WorldModel a(cfg, 21), b(cfg, 21);
  Rng rng(22);
  SeqBatch batch = random_batch(rng, 2, 4, 1.0f);
  Rng ra(23), rb(23);
  WMLossReport rep_a = a.train_batch(batch, ra);
  WMLossReport rep_b = b.train_batch(batch, rb);
  CHECK(rep_a.total == rep_b.total);
  CHECK(rep_a.l_rew == rep_b.l_rew);
  CHECK(a.rssm_store().flatten() == b.rssm_store().flatten());
}

TEST_CASE("overfitting a tiny batch reduces the loss") {
  WorldModel wm(WmConfig{}, 7);
  Rng rng(16);
  SeqBatch b = random_batch(rng, 1, 4, 0.0f);
  Rng train_rng(17);
  double first = wm.train_batch(b, train_rng).total;
  double last = first;
  for (int i = 0; i < 300; ++i) last = wm.train_batch(b, train_rng).total;
  CHECK(last < first);
  CHECK(last < 0.5 * first);
}

TEST_CASE("l_rew tracks only demo steps") {
  WorldModel wm(WmConfig{}, 8);
  Rng rng(18);

  double before = wm.l_rew();
  SeqBatch plain = random_batch(rng, 2, 3, 0.0f);
  Rng r1(19);
  wm.train_batch(plain, r1);
  CHECK(wm.l_rew() == before);

  wm.set_l_rew(0.5);
  SeqBatch demo = random_batch(rng, 2, 3, 1.0f);
  Rng r2(20);
  WMLossReport rep = wm.train_batch(demo, r2);
  CHECK(rep.applied);
  CHECK(wm.l_rew() == doctest::Approx(0.99 * 0.5 + 0.01 * rep.reward_pred).epsilon(1e-4));
}

TEST_CASE("sequence length below two is rejected") {
  WorldModel wm(WmConfig{}, 9);
  Rng rng(24);
  SeqBatch b = random_batch(rng, 2, 1, 0.0f);
  Rng r1(25);
  CHECK_THROWS_AS(wm.train_batch(b, r1), ContractError);
}

TEST_CASE("subgoal codes are 4 groups of 8 and decode deterministically") {
  WmConfig cfg;
  CHECK(cfg.code_groups == 4);
  CHECK(cfg.code_classes == 8);
  int combos = 1;
  for (int g = 0; g < cfg.code_groups; ++g) combos *= cfg.code_classes;
  CHECK(combos == 4096);

  WorldModel wm(cfg, 10);
  Rng rng(26);
  Vec h(128);
  for (int i = 0; i < 128; ++i) h[i] = static_cast<float>(rng.uniform(-1, 1));
  SubgoalCode code = wm.encode_goal(h);
  for (int g = 0; g < 4; ++g) {
    CHECK(code.cls[g] >= 0);
    CHECK(code.cls[g] < 8);
  }
  Vec g1 = wm.decode_goal(code);
  Vec g2 = wm.decode_goal(code);
  CHECK(g1.size() == 128);
  CHECK(same(g1, g2));

  SubgoalCode other = code;
  other.cls[0] = (code.cls[0] + 1) % 8;
  CHECK_FALSE(same(wm.decode_goal(other), g1));

  Mat onehot = wm.code_to_onehot(code);
  for (int g = 0; g < 4; ++g) CHECK(onehot.middleCols(g * 8, 8).sum() == 1.0f);
  CHECK(same(wm.decode_codes(onehot).row(0), g1.transpose()));
}

TEST_CASE("codec training reduces reconstruction without touching the rssm") {
  WorldModel wm(WmConfig{}, 12);
  Rng rng(27);
  Mat h(16, 128);
  for (int r = 0; r < h.rows(); ++r)
    for (int c = 0; c < h.cols(); ++c) h(r, c) = static_cast<float>(rng.uniform(-1, 1));

  std::vector<float> rssm_before = wm.rssm_store().flatten();
  Rng cr(28);
  double first = wm.train_codec(h, cr);
  double last = first;
  for (int i = 0; i < 250; ++i) last = wm.train_codec(h, cr);
  CHECK(last < first);
  CHECK(wm.rssm_store().flatten() == rssm_before);
}

TEST_CASE("observation vectors flatten grid then proprio") {
  sim::WorldState s;
  s.base = {2.5, 2.5, 0.3};
  s.joints = {0.5, -0.5, 1.0};
  s.goal_x = 4.0;
  s.goal_y = 4.0;
  s.obstacles.push_back(sim::Box{1.0, 1.0, 1.5, 1.5});
  sim::Observation obs = sim::render_observation(s);
  Vec v = observation_to_vec(obs);
  REQUIRE(v.size() == 3080);
  for (int i = 0; i < sim::Observation::kGridCells; ++i) CHECK(v[i] == float(obs.grid[i]));
  for (int i = 0; i < 8; ++i)
    CHECK(v[sim::Observation::kGridCells + i] == doctest::Approx(obs.proprio[i]));
}
