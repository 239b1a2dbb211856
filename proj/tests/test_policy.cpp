#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <string>
#include <vector>

#include "core/policy/policy.hpp"

using namespace mmr;
using namespace mmr::policy;
using num::Mat;
using num::Vec;

namespace {

// Small nets so the regression tests converge quickly.
PolicyConfig small_cfg() {
  PolicyConfig cfg;
  cfg.feature_dim = 8;
  cfg.goal_dim = 4;
  cfg.hidden = 32;
  cfg.actor_lr = 1e-2f;
  cfg.critic_lr = 1e-2f;
  cfg.frozen_sync = 10;
  return cfg;
}

Mat random_rows(Rng& rng, int rows, int cols) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(rng.uniform(-1, 1));
  return m;
}

Mat replicate_row(const Vec& row, int rows) {
  Mat m(rows, row.size());
  for (int r = 0; r < rows; ++r) m.row(r) = row.transpose();
  return m;
}

std::vector<Mat> snapshot(num::ParamStore& store, const std::string& prefix) {
  std::vector<Mat> out;
  for (num::Param* p : store.all())
    if (p->name.rfind(prefix, 0) == 0) out.push_back(p->value);
  REQUIRE(!out.empty());
  return out;
}

bool params_equal(num::ParamStore& store, const std::string& prefix,
                  const std::vector<Mat>& before) {
  std::vector<Mat> now = snapshot(store, prefix);
  REQUIRE(now.size() == before.size());
  for (size_t i = 0; i < now.size(); ++i)
    if ((now[i] - before[i]).cwiseAbs().maxCoeff() != 0.0f) return false;
  return true;
}

double entropy_of(const Vec& p) {
  double h = 0;
  for (int i = 0; i < p.size(); ++i)
    if (p[i] > 0) h -= p[i] * std::log(static_cast<double>(p[i]));
  return h;
}

}  // namespace

TEST_CASE("lambda returns match the hand-worked case") {
  std::vector<double> rewards{1.0, 0.0};
  std::vector<double> values{0.5, 0.4, 0.3};
  std::vector<double> out = lambda_returns(rewards, values, 0.99, 0.95);
  REQUIRE(out.size() == 2);
  CHECK(out[1] == doctest::Approx(0.297).epsilon(1e-12));
  CHECK(out[0] == doctest::Approx(1.2991285).epsilon(1e-12));
}

TEST_CASE("lambda return limits") {
  Rng rng(3);
  std::vector<double> rewards(6), values(7);
  for (double& r : rewards) r = rng.uniform(-1, 1);
  for (double& v : values) v = rng.uniform(-1, 1);

  std::vector<double> td = lambda_returns(rewards, values, 0.9, 0.0);
  for (size_t t = 0; t < rewards.size(); ++t)
    CHECK(td[t] == doctest::Approx(rewards[t] + 0.9 * values[t + 1]).epsilon(1e-12));

  std::vector<double> mc = lambda_returns(rewards, values, 0.9, 1.0);
  double acc = values.back();
  for (int t = static_cast<int>(rewards.size()) - 1; t >= 0; --t) {
    acc = rewards[t] + 0.9 * acc;
    CHECK(mc[t] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("lambda returns satisfy their recursion") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    int T = 1 + rng.uniform_int(8);
    double gamma = rng.uniform(0.5, 1.0);
    double lambda = rng.uniform(0.0, 1.0);
    std::vector<double> rewards(T), values(T + 1);
    for (double& r : rewards) r = rng.uniform(-2, 2);
    for (double& v : values) v = rng.uniform(-2, 2);
    std::vector<double> out = lambda_returns(rewards, values, gamma, lambda);
    for (int t = 0; t < T; ++t) {
      double next = (t + 1 < T) ? out[t + 1] : values[T];
      double want = rewards[t] + gamma * ((1 - lambda) * values[t + 1] + lambda * next);
      CHECK(out[t] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(lambda_returns({1.0}, {1.0}, 0.9, 0.5), ContractError);
}

TEST_CASE("mu follows the clamped reward-loss schedule") {
  PolicyConfig cfg;
  CHECK(compute_mu(0.0, cfg) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(compute_mu(0.02, cfg) == doctest::Approx(0.7).epsilon(1e-6));
  CHECK(compute_mu(0.085, cfg) == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(compute_mu(0.2, cfg) == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(compute_mu(1.0, cfg) == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(compute_mu(-0.01, cfg) == doctest::Approx(0.95).epsilon(1e-6));
}

TEST_CASE("selector targets interpolate reward and frozen value") {
  Vec reward(3), qf(3);
  reward << 1.0f, 0.0f, -1.0f;
  qf << 0.0f, 0.5f, 1.0f;

  Vec t1 = selector_targets(reward, qf, 1.0);
  Vec t0 = selector_targets(reward, qf, 0.0);
  for (int i = 0; i < 3; ++i) {
    CHECK(t1[i] == reward[i]);
    CHECK(t0[i] == qf[i]);
  }

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    double mu = rng.uniform(0, 1);
    Vec r(4), q(4);
    for (int i = 0; i < 4; ++i) {
      r[i] = static_cast<float>(rng.uniform(-2, 2));
      q[i] = static_cast<float>(rng.uniform(-2, 2));
    }
    Vec t = selector_targets(r, q, mu);
    for (int i = 0; i < 4; ++i) {
      CHECK(t[i] == doctest::Approx(mu * r[i] + (1 - mu) * q[i]).epsilon(1e-5));
      CHECK(t[i] >= std::min(r[i], q[i]) - 1e-6f);
      CHECK(t[i] <= std::max(r[i], q[i]) + 1e-6f);
    }
  }
  CHECK_THROWS_AS(selector_targets(reward, qf, 1.5), ContractError);
  Vec short_q(2);
  short_q << 0.0f, 0.0f;
  CHECK_THROWS_AS(selector_targets(reward, short_q, 0.5), ContractError);
}

TEST_CASE("cross entropy reference points") {
  Mat uniform = Mat::Zero(4, 10);
  std::vector<int> labels{0, 3, 7, 9};
  CHECK(cross_entropy(uniform, labels) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Mat two = Mat::Zero(1, 2);
  CHECK(cross_entropy(two, {1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Mat saturated = Mat::Constant(3, 5, -50.0f);
  std::vector<int> lab{1, 2, 4};
  for (int r = 0; r < 3; ++r) saturated(r, lab[r]) = 50.0f;
  CHECK(cross_entropy(saturated, lab) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(cross_entropy(uniform, {0, 1}), ContractError);
  CHECK_THROWS_AS(cross_entropy(two, {2}), ContractError);
}

TEST_CASE("progress and goal rewards are cosine sums") {
  Vec g(3);
  g << 1.0f, 0.0f, 0.0f;
  Vec same = g;
  Vec opposite = -g;
  Vec ortho(3);
  ortho << 0.0f, 2.0f, 0.0f;
  Vec zero = Vec::Zero(3);

  CHECK(goal_reward(same, g) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(goal_reward(opposite, g) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(goal_reward(ortho, g) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(goal_reward(zero, g) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(goal_reward(2.0f * same, g) == doctest::Approx(1.0).epsilon(1e-6));

  std::vector<Vec> states{same, opposite, ortho, zero};
  CHECK(progress_reward(states, g) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(progress_reward({same, same, same}, g) == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(progress_reward({}, g) == doctest::Approx(0.0).epsilon(1e-12));

  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec> a, b, both;
    for (int i = 0; i < 3; ++i) {
      Vec v = random_rows(rng, 1, 3).row(0).transpose();
      a.push_back(v);
      both.push_back(v);
    }
    for (int i = 0; i < 2; ++i) {
      Vec v = random_rows(rng, 1, 3).row(0).transpose();
      b.push_back(v);
      both.push_back(v);
    }
    CHECK(progress_reward(both, g) ==
          doctest::Approx(progress_reward(a, g) + progress_reward(b, g)).epsilon(1e-5));
  }
}

TEST_CASE("selector exploration is uniform and actions stay binary") {
  PolicyConfig cfg = small_cfg();
  Selector sel(cfg, 17);
  Rng rng(8);
  Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
  Vec s1 = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();
  Vec s2 = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();

  int arm = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    int m = sel.select(feat, s1, s2, 1.0, rng);
    REQUIRE((m == kMaskBase || m == kMaskArm));
    arm += m;
  }
  CHECK(std::abs(arm / static_cast<double>(draws) - 0.5) < 0.03);

  for (int i = 0; i < 200; ++i) {
    int m = sel.select(feat, s1, s2, 0.0, rng);
    REQUIRE((m == kMaskBase || m == kMaskArm));
  }

  Mat p = sel.probs(replicate_row(feat, 3), replicate_row(s1, 3), replicate_row(s2, 3));
  REQUIRE(p.rows() == 3);
  for (int r = 0; r < 3; ++r) {
    CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(p.row(r).minCoeff() > 0.0f);
  }
}

TEST_CASE("selector is deterministic under fixed seeds") {
  PolicyConfig cfg = small_cfg();
  Selector a(cfg, 33), b(cfg, 33);
  Rng rng(2);
  Mat feats = random_rows(rng, 5, cfg.feature_dim);
  Mat s1 = random_rows(rng, 5, cfg.goal_dim);
  Mat s2 = random_rows(rng, 5, cfg.goal_dim);

  CHECK((a.probs(feats, s1, s2) - b.probs(feats, s1, s2)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((a.q(feats, s1, s2) - b.q(feats, s1, s2)).cwiseAbs().maxCoeff() == 0.0f);

  Rng ra(7), rb(7);
  CHECK(a.select_batch(feats, s1, s2, 0.3, ra) == b.select_batch(feats, s1, s2, 0.3, rb));
}

TEST_CASE("selector input width matches features plus both stage goals") {
  PolicyConfig cfg;
  Selector sel(cfg, 1);
  bool found = false;
  for (num::Param* p : sel.actor_store().all()) {
    if (p->name == "sel.actor.w0") {
      CHECK(p->value.rows() == 160 + 128 + 128);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("frozen critic snaps to the live critic on schedule") {
  PolicyConfig cfg = small_cfg();
  Selector sel(cfg, 9);
  Rng rng(10);
  Mat feats = random_rows(rng, 6, cfg.feature_dim);
  Mat s1 = random_rows(rng, 6, cfg.goal_dim);
  Mat s2 = random_rows(rng, 6, cfg.goal_dim);

  CHECK((sel.q(feats, s1, s2) - sel.q_frozen(feats, s1, s2)).cwiseAbs().maxCoeff() == 0.0f);

  Selector::Batch batch;
  batch.feats = feats;
  batch.stg1 = s1;
  batch.stg2 = s2;
  batch.mask = {0, 1, 0, 1, 0, 1};
  batch.reward = Vec::Ones(6);

  for (int i = 0; i < cfg.frozen_sync - 1; ++i) {
    UpdateReport rep = sel.update(batch, 0.9, rng);
    REQUIRE(rep.applied);
  }
  CHECK((sel.q(feats, s1, s2) - sel.q_frozen(feats, s1, s2)).cwiseAbs().maxCoeff() > 0.0f);

  sel.update(batch, 0.9, rng);
  CHECK(sel.updates() == cfg.frozen_sync);
  CHECK((sel.q(feats, s1, s2) - sel.q_frozen(feats, s1, s2)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("selector learns to pick the rewarded embodiment") {
  PolicyConfig cfg = small_cfg();
  Selector sel(cfg, 21);
  Rng rng(22);
  Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
  Vec s1 = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();
  Vec s2 = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();
  const int B = 16;
  Mat feats = replicate_row(feat, B);
  Mat stg1 = replicate_row(s1, B);
  Mat stg2 = replicate_row(s2, B);

  for (int it = 0; it < 200; ++it) {
    Selector::Batch batch;
    batch.feats = feats;
    batch.stg1 = stg1;
    batch.stg2 = stg2;
    batch.mask = sel.select_batch(feats, stg1, stg2, 0.2, rng);
    batch.reward = Vec::Zero(B);
    for (int b = 0; b < B; ++b) batch.reward[b] = batch.mask[b] == kMaskArm ? 1.0f : 0.0f;
    UpdateReport rep = sel.update(batch, 0.9, rng);
    REQUIRE(rep.applied);
  }

  Mat p = sel.probs(feats.topRows(1), stg1.topRows(1), stg2.topRows(1));
  CHECK(p(0, kMaskArm) > 0.9f);

  Mat q = sel.q(feats.topRows(1), stg1.topRows(1), stg2.topRows(1));
  CHECK(q(0, kMaskArm) == doctest::Approx(1.0).epsilon(0.25));
  CHECK(q(0, kMaskBase) < 0.5f);
}

TEST_CASE("entropy regularisation keeps the selector softer") {
  PolicyConfig plain = small_cfg();
  plain.eta = 0.0f;
  PolicyConfig soft = small_cfg();
  soft.eta = 0.5f;
  Selector a(plain, 40), b(soft, 40);
  Rng rng(41);
  Vec feat = random_rows(rng, 1, plain.feature_dim).row(0).transpose();
  Vec s1 = random_rows(rng, 1, plain.goal_dim).row(0).transpose();
  Vec s2 = random_rows(rng, 1, plain.goal_dim).row(0).transpose();
  const int B = 8;
  Mat feats = replicate_row(feat, B);
  Mat stg1 = replicate_row(s1, B);
  Mat stg2 = replicate_row(s2, B);

  Selector::Batch batch;
  batch.feats = feats;
  batch.stg1 = stg1;
  batch.stg2 = stg2;
  batch.mask.assign(B, kMaskArm);
  batch.reward = Vec::Ones(B);
  for (int b2 = 0; b2 < B; b2 += 2) {
    batch.mask[b2] = kMaskBase;
    batch.reward[b2] = 0.0f;
  }

  for (int it = 0; it < 150; ++it) {
    a.update(batch, 0.9, rng);
    b.update(batch, 0.9, rng);
  }
  Vec pa = a.probs(feats.topRows(1), stg1.topRows(1), stg2.topRows(1)).row(0).transpose();
  Vec pb = b.probs(feats.topRows(1), stg1.topRows(1), stg2.topRows(1)).row(0).transpose();
  CHECK(entropy_of(pb) > entropy_of(pa));
  CHECK(pa[kMaskArm] > pb[kMaskArm]);
}

TEST_CASE("manager codes are valid and near uniform at init") {
  PolicyConfig cfg = small_cfg();
  Manager mgr(cfg, 50);
  Rng rng(51);
  Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
  Vec goal = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();

  std::vector<std::vector<int>> counts(cfg.code_groups,
                                       std::vector<int>(cfg.code_classes, 0));
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) {
    wm::SubgoalCode code = mgr.sample(feat, goal, i % 2, rng);
    for (int g = 0; g < cfg.code_groups; ++g) {
      REQUIRE(code.cls[g] >= 0);
      REQUIRE(code.cls[g] < cfg.code_classes);
      ++counts[g][code.cls[g]];
    }
  }
  for (int g = 0; g < cfg.code_groups; ++g)
    for (int c = 0; c < cfg.code_classes; ++c)
      CHECK(std::abs(counts[g][c] / static_cast<double>(draws) - 0.125) < 0.03);

  Mat rows = mgr.sample_batch(replicate_row(feat, 5), replicate_row(goal, 5),
                              {0, 1, 0, 1, 0}, rng);
  REQUIRE(rows.rows() == 5);
  REQUIRE(rows.cols() == cfg.code_dim());
  for (int r = 0; r < rows.rows(); ++r) {
    CHECK(rows.row(r).sum() == doctest::Approx(cfg.code_groups).epsilon(1e-6));
    for (int g = 0; g < cfg.code_groups; ++g) {
      float s = rows.row(r).segment(g * cfg.code_classes, cfg.code_classes).sum();
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (int c = 0; c < rows.cols(); ++c) CHECK((rows(r, c) == 0.0f || rows(r, c) == 1.0f));
  }
}

namespace {

Manager::Batch constant_manager_batch(const PolicyConfig& cfg, Rng& rng, int B, int S,
                                      float r_task) {
  Manager::Batch batch;
  batch.batch = B;
  batch.steps = S;
  Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
  Vec goal = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();
  batch.feats = replicate_row(feat, B * (S + 1));
  batch.goals = replicate_row(goal, B * (S + 1));
  batch.codes = Mat::Zero(B * S, cfg.code_dim());
  for (int r = 0; r < B * S; ++r)
    for (int g = 0; g < cfg.code_groups; ++g)
      batch.codes(r, g * cfg.code_classes + (r + g) % cfg.code_classes) = 1.0f;
  batch.r_task = Vec::Constant(B * S, r_task);
  batch.r_collision = Vec::Zero(B * S);
  batch.r_progress = Vec::Zero(B * S);
  batch.embodiment.assign(B, 0);
  for (int b = 1; b < B; b += 2) batch.embodiment[b] = 1;
  return batch;
}

}  // namespace

TEST_CASE("manager task critic finds the discounted fixed point") {
  PolicyConfig cfg = small_cfg();
  cfg.gamma = 0.9f;
  Manager mgr(cfg, 60);
  Rng rng(61);
  Manager::Batch batch = constant_manager_batch(cfg, rng, 4, 5, 1.0f);

  for (int it = 0; it < 900; ++it) {
    UpdateReport rep = mgr.update(batch, nullptr, rng);
    REQUIRE(rep.applied);
  }

  Mat one_feat = batch.feats.topRows(2);
  Mat one_goal = batch.goals.topRows(2);
  Vec v_task = mgr.channel_value(0, one_feat, one_goal, {0, 1});
  Vec v_col = mgr.channel_value(1, one_feat, one_goal, {0, 1});
  Vec v_prog = mgr.channel_value(2, one_feat, one_goal, {0, 1});
  for (int r = 0; r < 2; ++r) {
    CHECK(v_task[r] == doctest::Approx(10.0).epsilon(0.1));
    CHECK(std::abs(v_col[r]) < 0.5f);
    CHECK(std::abs(v_prog[r]) < 0.5f);
  }
}

TEST_CASE("manager updates are deterministic") {
  PolicyConfig cfg = small_cfg();
  Manager a(cfg, 70), b(cfg, 70);
  Rng rng(71);
  Manager::Batch batch = constant_manager_batch(cfg, rng, 3, 4, 0.5f);
  Rng ra(1), rb(1);
  for (int it = 0; it < 5; ++it) {
    UpdateReport rep_a = a.update(batch, nullptr, ra);
    UpdateReport rep_b = b.update(batch, nullptr, rb);
    CHECK(rep_a.actor_loss == rep_b.actor_loss);
    CHECK(rep_a.critic_loss == rep_b.critic_loss);
    CHECK(rep_a.entropy == rep_b.entropy);
  }
  Rng sa(2), sb(2);
  Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
  Vec goal = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();
  wm::SubgoalCode ca = a.sample(feat, goal, 1, sa);
  wm::SubgoalCode cb = b.sample(feat, goal, 1, sb);
  CHECK(ca.cls == cb.cls);
}

TEST_CASE("manager imitation drives codes toward the demonstrations") {
  PolicyConfig cfg = small_cfg();
  cfg.imitation_weight = 1.0f;
  Manager mgr(cfg, 80);
  Rng rng(81);

  const int N = 8;
  Manager::Imitation imit;
  imit.feats = random_rows(rng, N, cfg.feature_dim);
  imit.goals = random_rows(rng, N, cfg.goal_dim);
  imit.codes = Mat::Zero(N, cfg.code_dim());
  for (int r = 0; r < N; ++r)
    for (int g = 0; g < cfg.code_groups; ++g)
      imit.codes(r, g * cfg.code_classes + rng.uniform_int(cfg.code_classes)) = 1.0f;
  imit.embodiment.assign(N, 1);

  Manager::Batch batch = constant_manager_batch(cfg, rng, 2, 3, 0.0f);

  double first = -1, last = -1;
  for (int it = 0; it < 300; ++it) {
    UpdateReport rep = mgr.update(batch, &imit, rng);
    REQUIRE(rep.applied);
    if (it == 0) first = rep.imitation;
    last = rep.imitation;
  }
  CHECK(first > 1.0);
  CHECK(last < 0.5 * first);
}

TEST_CASE("separate embodiment copies only learn from their own rows") {
  PolicyConfig cfg = small_cfg();
  cfg.modified = true;
  Manager mgr(cfg, 90);
  Rng rng(91);

  std::vector<Mat> a0 = snapshot(mgr.actor_store(), "mgr.actor0");
  std::vector<Mat> a1 = snapshot(mgr.actor_store(), "mgr.actor1");
  std::vector<Mat> c1 = snapshot(mgr.critic_store(), "mgr.task1");

  Manager::Batch batch = constant_manager_batch(cfg, rng, 4, 3, 1.0f);
  batch.embodiment.assign(4, 0);
  REQUIRE(mgr.update(batch, nullptr, rng).applied);

  CHECK_FALSE(params_equal(mgr.actor_store(), "mgr.actor0", a0));
  CHECK(params_equal(mgr.actor_store(), "mgr.actor1", a1));
  CHECK(params_equal(mgr.critic_store(), "mgr.task1", c1));

  std::vector<Mat> a1_now = snapshot(mgr.actor_store(), "mgr.actor1");
  batch.embodiment.assign(4, 1);
  REQUIRE(mgr.update(batch, nullptr, rng).applied);
  CHECK_FALSE(params_equal(mgr.actor_store(), "mgr.actor1", a1_now));
}

TEST_CASE("modified nets drop the mask input") {
  PolicyConfig cfg;
  cfg.modified = true;
  Worker w(cfg, 100);
  Manager m(cfg, 100);
  bool saw_worker = false, saw_manager = false;
  for (num::Param* p : w.actor_store().all())
    if (p->name == "wkr.actor0.w0") {
      CHECK(p->value.rows() == 160 + 128);
      saw_worker = true;
    }
  for (num::Param* p : m.actor_store().all())
    if (p->name == "mgr.actor1.w0") {
      CHECK(p->value.rows() == 160 + 128);
      saw_manager = true;
    }
  CHECK(saw_worker);
  CHECK(saw_manager);

  PolicyConfig shared;
  Worker ws(shared, 100);
  for (num::Param* p : ws.actor_store().all())
    if (p->name == "wkr.actor0.w0") CHECK(p->value.rows() == 160 + 128 + 2);
}

TEST_CASE("worker actions always respect the embodiment mask") {
  PolicyConfig cfg = small_cfg();
  Worker w(cfg, 110);
  Rng rng(111);
  for (int i = 0; i < 500; ++i) {
    Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
    Vec sg = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();
    double eps = (i % 3) * 0.5;
    int base_action = w.act(feat, sg, kMaskBase, eps, rng);
    CHECK(base_action >= 0);
    CHECK(base_action < sim::kNumBaseActions);
    int arm_action = w.act(feat, sg, kMaskArm, eps, rng);
    CHECK(arm_action >= sim::kNumBaseActions);
    CHECK(arm_action < sim::kNumActions);
  }

  Mat feats = random_rows(rng, 6, cfg.feature_dim);
  Mat sgs = random_rows(rng, 6, cfg.goal_dim);
  std::vector<int> mask{0, 1, 1, 0, 1, 0};
  std::vector<int> idx;
  Mat onehot = w.act_batch(feats, sgs, mask, 0.5, rng, &idx);
  REQUIRE(static_cast<int>(idx.size()) == 6);
  for (int r = 0; r < 6; ++r) {
    CHECK(onehot.row(r).sum() == 1.0f);
    CHECK(onehot(r, idx[r]) == 1.0f);
    CHECK(sim::is_arm_action(idx[r]) == (mask[r] == kMaskArm));
  }
}

TEST_CASE("worker exploration is uniform over the permitted subset") {
  PolicyConfig cfg = small_cfg();
  Worker w(cfg, 120);
  Rng rng(121);
  Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
  Vec sg = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();

  const int draws = 12000;
  std::vector<int> base_counts(sim::kNumActions, 0), arm_counts(sim::kNumActions, 0);
  for (int i = 0; i < draws; ++i) {
    ++base_counts[w.act(feat, sg, kMaskBase, 1.0, rng)];
    ++arm_counts[w.act(feat, sg, kMaskArm, 1.0, rng)];
  }
  for (int a = 0; a < sim::kNumBaseActions; ++a) {
    CHECK(std::abs(base_counts[a] / static_cast<double>(draws) - 0.25) < 0.02);
    CHECK(arm_counts[a] == 0);
  }
  const double arm_p = 1.0 / (sim::kNumActions - sim::kNumBaseActions);
  for (int a = sim::kNumBaseActions; a < sim::kNumActions; ++a) {
    CHECK(std::abs(arm_counts[a] / static_cast<double>(draws) - arm_p) < 0.02);
    CHECK(base_counts[a] == 0);
  }
}

TEST_CASE("worker single and batch sampling agree") {
  PolicyConfig cfg = small_cfg();
  Worker w(cfg, 130);
  Rng rng(131);
  Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
  Vec sg = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();

  for (int trial = 0; trial < 30; ++trial) {
    Rng ra(1000 + trial), rb(1000 + trial);
    int single = w.act(feat, sg, trial % 2, 0.3, ra);
    std::vector<int> idx;
    w.act_batch(replicate_row(feat, 1), replicate_row(sg, 1), {trial % 2}, 0.3, rb, &idx);
    CHECK(single == idx.at(0));
  }
}

namespace {

Worker::Batch constant_worker_batch(const PolicyConfig& cfg, Rng& rng, int B, int S) {
  Worker::Batch batch;
  batch.batch = B;
  batch.steps = S;
  Vec feat = random_rows(rng, 1, cfg.feature_dim).row(0).transpose();
  Vec sg = random_rows(rng, 1, cfg.goal_dim).row(0).transpose();
  batch.feats = replicate_row(feat, B * (S + 1));
  batch.subgoals = replicate_row(sg, B * (S + 1));
  batch.embodiment.assign(B, 1);
  batch.actions.assign(B * S, 5);
  batch.reward = Vec::Ones(B * S);
  return batch;
}

}  // namespace

TEST_CASE("worker critic finds the discounted fixed point") {
  PolicyConfig cfg = small_cfg();
  cfg.gamma = 0.9f;
  Worker w(cfg, 140);
  Rng rng(141);
  Worker::Batch batch = constant_worker_batch(cfg, rng, 4, 5);

  for (int it = 0; it < 900; ++it) {
    UpdateReport rep = w.update(batch, nullptr, rng);
    REQUIRE(rep.applied);
  }
  Vec v = w.value(batch.feats.topRows(1), batch.subgoals.topRows(1), {1});
  CHECK(v[0] == doctest::Approx(10.0).epsilon(0.1));
}

TEST_CASE("worker actor shifts toward rewarded actions") {
  PolicyConfig cfg = small_cfg();
  Worker w(cfg, 150);
  Rng rng(151);

  const int B = 8, S = 5;
  Worker::Batch batch = constant_worker_batch(cfg, rng, B, S);
  for (int b = 0; b < B; ++b) {
    bool good = b < B / 2;
    for (int t = 0; t < S; ++t) {
      batch.actions[t * B + b] = good ? 5 : 7;
      batch.reward[t * B + b] = good ? 1.0f : 0.0f;
    }
  }

  for (int it = 0; it < 150; ++it) REQUIRE(w.update(batch, nullptr, rng).applied);

  Vec feat = batch.feats.row(0).transpose();
  Vec sg = batch.subgoals.row(0).transpose();
  int picked5 = 0, picked7 = 0;
  for (int i = 0; i < 400; ++i) {
    int a = w.act(feat, sg, kMaskArm, 0.0, rng);
    if (a == 5) ++picked5;
    if (a == 7) ++picked7;
  }
  CHECK(picked5 > 240);
  CHECK(picked5 > picked7);
}

TEST_CASE("worker imitation reproduces demo actions") {
  PolicyConfig cfg = small_cfg();
  cfg.imitation_weight = 1.0f;
  Worker w(cfg, 160);
  Rng rng(161);

  const int N = 10;
  Worker::Imitation imit;
  imit.feats = random_rows(rng, N, cfg.feature_dim);
  imit.subgoals = random_rows(rng, N, cfg.goal_dim);
  imit.embodiment.assign(N, 0);
  imit.actions.assign(N, 0);
  for (int r = 0; r < N; ++r) imit.actions[r] = rng.uniform_int(sim::kNumBaseActions);

  Worker::Batch batch = constant_worker_batch(cfg, rng, 2, 3);

  double first = -1, last = -1;
  for (int it = 0; it < 300; ++it) {
    UpdateReport rep = w.update(batch, &imit, rng);
    REQUIRE(rep.applied);
    if (it == 0) first = rep.imitation;
    last = rep.imitation;
  }
  CHECK(first > 0.5);
  CHECK(last < 0.5 * first);
}

TEST_CASE("worker copies stay isolated in the modified variant") {
  PolicyConfig cfg = small_cfg();
  cfg.modified = true;
  Worker w(cfg, 170);
  Rng rng(171);

  std::vector<Mat> actor1 = snapshot(w.actor_store(), "wkr.actor1");
  std::vector<Mat> critic1 = snapshot(w.critic_store(), "wkr.critic1");

  Worker::Batch batch = constant_worker_batch(cfg, rng, 4, 3);
  batch.embodiment.assign(4, 0);
  for (int i = 0; i < static_cast<int>(batch.actions.size()); ++i) batch.actions[i] = i % 4;
  REQUIRE(w.update(batch, nullptr, rng).applied);

  CHECK(params_equal(w.actor_store(), "wkr.actor1", actor1));
  CHECK(params_equal(w.critic_store(), "wkr.critic1", critic1));

  batch.embodiment.assign(4, 1);
  for (int i = 0; i < static_cast<int>(batch.actions.size()); ++i) batch.actions[i] = 4 + i % 6;
  REQUIRE(w.update(batch, nullptr, rng).applied);
  CHECK_FALSE(params_equal(w.actor_store(), "wkr.actor1", actor1));
}

TEST_CASE("update rejects malformed batches") {
  PolicyConfig cfg = small_cfg();
  Rng rng(180);

  Worker w(cfg, 181);
  Worker::Batch bad = constant_worker_batch(cfg, rng, 2, 3);
  bad.actions.pop_back();
  CHECK_THROWS_AS(w.update(bad, nullptr, rng), ContractError);

  Worker::Batch wrong_rows = constant_worker_batch(cfg, rng, 2, 3);
  wrong_rows.feats = wrong_rows.feats.topRows(4).eval();
  wrong_rows.subgoals = wrong_rows.subgoals.topRows(4).eval();
  CHECK_THROWS_AS(w.update(wrong_rows, nullptr, rng), ContractError);

  Manager m(cfg, 182);
  Manager::Batch mb = constant_manager_batch(cfg, rng, 2, 3, 0.0f);
  mb.r_task = Vec::Zero(3);
  CHECK_THROWS_AS(m.update(mb, nullptr, rng), ContractError);
}
