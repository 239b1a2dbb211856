#include "core/num/tape.hpp"

#include <cmath>

namespace mmr::num {

Var Tape::push(Mat v, bool needs_grad, std::function<void()> back) {
  Node n;
  n.val = std::move(v);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accum(int id, const Mat& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (!n.grad_set) {
    n.grad = g;
    n.grad_set = true;
  } else {
    n.grad += g;
  }
}

Var Tape::constant(Mat v) { return push(std::move(v), false); }

Var Tape::leaf(Mat v) { return push(std::move(v), true); }

Var Tape::param(Param& p) {
  auto it = param_cache_.find(&p);
  if (it != param_cache_.end()) return Var{it->second};
  Var v = push(p.value, true);
  nodes_[v.id].bound = &p;
  param_cache_.emplace(&p, v.id);
  return v;
}

const Mat& Tape::val(Var v) const {
  check(v);
  return nodes_[v.id].val;
}

const Mat& Tape::grad(Var v) const {
  check(v);
  MMR_REQUIRE(nodes_[v.id].grad_set, "Tape: gradient not computed for this node");
  return nodes_[v.id].grad;
}

Var Tape::matmul(Var a, Var b) {
  check(a); check(b);
  const Mat& A = nodes_[a.id].val;
  const Mat& B = nodes_[b.id].val;
  MMR_REQUIRE(A.cols() == B.rows(), "matmul: inner dimension mismatch");
  bool ng = needs(a) || needs(b);
  Var out = push(A * B, ng);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].back = [this, ai, bi, oi] {
      const Mat& G = nodes_[oi].grad;
      if (nodes_[ai].needs_grad) accum(ai, G * nodes_[bi].val.transpose());
      if (nodes_[bi].needs_grad) accum(bi, nodes_[ai].val.transpose() * G);
    };
  }
  return out;
}

Var Tape::add_bias(Var x, Var bias) {
  check(x); check(bias);
  const Mat& X = nodes_[x.id].val;
  const Mat& B = nodes_[bias.id].val;
  MMR_REQUIRE(B.rows() == 1 && B.cols() == X.cols(), "add_bias: bias must be [1 x cols]");
  bool ng = needs(x) || needs(bias);
  Var out = push(X.rowwise() + B.row(0), ng);
  if (ng) {
    int xi = x.id, bi = bias.id, oi = out.id;
    nodes_[oi].back = [this, xi, bi, oi] {
      const Mat& G = nodes_[oi].grad;
      accum(xi, G);
      if (nodes_[bi].needs_grad) accum(bi, G.colwise().sum());
    };
  }
  return out;
}

namespace {
void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  MMR_REQUIRE(a.rows() == b.rows() && a.cols() == b.cols(),
              std::string(op) + ": shape mismatch");
}
}  // namespace

Var Tape::add(Var a, Var b) {
  check(a); check(b);
  require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "add");
  bool ng = needs(a) || needs(b);
  Var out = push(nodes_[a.id].val + nodes_[b.id].val, ng);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].back = [this, ai, bi, oi] {
      accum(ai, nodes_[oi].grad);
      accum(bi, nodes_[oi].grad);
    };
  }
  return out;
}

Var Tape::sub(Var a, Var b) {
  check(a); check(b);
  require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "sub");
  bool ng = needs(a) || needs(b);
  Var out = push(nodes_[a.id].val - nodes_[b.id].val, ng);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].back = [this, ai, bi, oi] {
      accum(ai, nodes_[oi].grad);
      accum(bi, -nodes_[oi].grad);
    };
  }
  return out;
}

Var Tape::mul(Var a, Var b) {
  check(a); check(b);
  require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "mul");
  bool ng = needs(a) || needs(b);
  Var out = push(nodes_[a.id].val.cwiseProduct(nodes_[b.id].val), ng);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].back = [this, ai, bi, oi] {
      const Mat& G = nodes_[oi].grad;
      if (nodes_[ai].needs_grad) accum(ai, G.cwiseProduct(nodes_[bi].val));
      if (nodes_[bi].needs_grad) accum(bi, G.cwiseProduct(nodes_[ai].val));
    };
  }
  return out;
}

Var Tape::div(Var a, Var b) {
  check(a); check(b);
  require_same_shape(nodes_[a.id].val, nodes_[b.id].val, "div");
  bool ng = needs(a) || needs(b);
  Var out = push(nodes_[a.id].val.cwiseQuotient(nodes_[b.id].val), ng);
  if (ng) {
    int ai = a.id, bi = b.id, oi = out.id;
    nodes_[oi].back = [this, ai, bi, oi] {
      const Mat& G = nodes_[oi].grad;
      const Mat& B = nodes_[bi].val;
      if (nodes_[ai].needs_grad) accum(ai, G.cwiseQuotient(B));
      if (nodes_[bi].needs_grad)
        accum(bi, -G.cwiseProduct(nodes_[oi].val).cwiseQuotient(B));
    };
  }
  return out;
}

Var Tape::scale(Var x, float c) {
  check(x);
  bool ng = needs(x);
  Var out = push(nodes_[x.id].val * c, ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi, c] { accum(xi, nodes_[oi].grad * c); };
  }
  return out;
}

Var Tape::add_const(Var x, float c) {
  check(x);
  bool ng = needs(x);
  Var out = push(nodes_[x.id].val.array() + c, ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] { accum(xi, nodes_[oi].grad); };
  }
  return out;
}

Var Tape::cmul(Var x, const Mat& m) {
  check(x);
  require_same_shape(nodes_[x.id].val, m, "cmul");
  bool ng = needs(x);
  Var out = push(nodes_[x.id].val.cwiseProduct(m), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    Mat mc = m;
    nodes_[oi].back = [this, xi, oi, mc = std::move(mc)] {
      accum(xi, nodes_[oi].grad.cwiseProduct(mc));
    };
  }
  return out;
}

Var Tape::square(Var x) {
  check(x);
  bool ng = needs(x);
  Var out = push(nodes_[x.id].val.array().square(), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      accum(xi, (2.0f * nodes_[oi].grad.array() * nodes_[xi].val.array()).matrix());
    };
  }
  return out;
}

Var Tape::log(Var x) {
  check(x);
  bool ng = needs(x);
  Var out = push(nodes_[x.id].val.array().log(), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      accum(xi, nodes_[oi].grad.cwiseQuotient(nodes_[xi].val));
    };
  }
  return out;
}

Var Tape::elu(Var x) {
  check(x);
  const Mat& X = nodes_[x.id].val;
  Mat y = X.unaryExpr([](float v) { return v > 0.0f ? v : std::expm1(v); });
  bool ng = needs(x);
  Var out = push(std::move(y), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      const Mat& X2 = nodes_[xi].val;
      const Mat& Y = nodes_[oi].val;
      Mat d = X2.binaryExpr(Y, [](float xv, float yv) { return xv > 0.0f ? 1.0f : yv + 1.0f; });
      accum(xi, nodes_[oi].grad.cwiseProduct(d));
    };
  }
  return out;
}

Var Tape::tanh(Var x) {
  check(x);
  bool ng = needs(x);
  Var out = push(nodes_[x.id].val.array().tanh(), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      const Mat& Y = nodes_[oi].val;
      accum(xi, nodes_[oi].grad.cwiseProduct((1.0f - Y.array().square()).matrix()));
    };
  }
  return out;
}

Var Tape::sigmoid(Var x) {
  check(x);
  Mat y = nodes_[x.id].val.unaryExpr([](float v) {
    return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
  });
  bool ng = needs(x);
  Var out = push(std::move(y), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      const Mat& Y = nodes_[oi].val;
      accum(xi, nodes_[oi].grad.cwiseProduct((Y.array() * (1.0f - Y.array())).matrix()));
    };
  }
  return out;
}

Var Tape::softplus(Var x) {
  check(x);
  Mat y = nodes_[x.id].val.unaryExpr([](float v) {
    if (v > 20.0f) return v;
    if (v < -20.0f) return std::exp(v);
    return std::log1p(std::exp(v));
  });
  bool ng = needs(x);
  Var out = push(std::move(y), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      Mat d = nodes_[xi].val.unaryExpr([](float v) {
        return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
      });
      accum(xi, nodes_[oi].grad.cwiseProduct(d));
    };
  }
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  MMR_REQUIRE(!xs.empty(), "concat_cols: empty");
  long rows = nodes_[xs[0].id].val.rows();
  long cols = 0;
  bool ng = false;
  for (Var v : xs) {
    check(v);
    MMR_REQUIRE(nodes_[v.id].val.rows() == rows, "concat_cols: row mismatch");
    cols += nodes_[v.id].val.cols();
    ng = ng || needs(v);
  }
  Mat y(rows, cols);
  long off = 0;
  for (Var v : xs) {
    const Mat& X = nodes_[v.id].val;
    y.middleCols(off, X.cols()) = X;
    off += X.cols();
  }
  Var out = push(std::move(y), ng);
  if (ng) {
    std::vector<int> ids;
    for (Var v : xs) ids.push_back(v.id);
    int oi = out.id;
    nodes_[oi].back = [this, ids, oi] {
      const Mat& G = nodes_[oi].grad;
      long o = 0;
      for (int id : ids) {
        long c = nodes_[id].val.cols();
        accum(id, G.middleCols(o, c));
        o += c;
      }
    };
  }
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& xs) {
  MMR_REQUIRE(!xs.empty(), "concat_rows: empty");
  long cols = nodes_[xs[0].id].val.cols();
  long rows = 0;
  bool ng = false;
  for (Var v : xs) {
    check(v);
    MMR_REQUIRE(nodes_[v.id].val.cols() == cols, "concat_rows: col mismatch");
    rows += nodes_[v.id].val.rows();
    ng = ng || needs(v);
  }
  Mat y(rows, cols);
  long off = 0;
  for (Var v : xs) {
    const Mat& X = nodes_[v.id].val;
    y.middleRows(off, X.rows()) = X;
    off += X.rows();
  }
  Var out = push(std::move(y), ng);
  if (ng) {
    std::vector<int> ids;
    for (Var v : xs) ids.push_back(v.id);
    int oi = out.id;
    nodes_[oi].back = [this, ids, oi] {
      const Mat& G = nodes_[oi].grad;
      long o = 0;
      for (int id : ids) {
        long r = nodes_[id].val.rows();
        accum(id, G.middleRows(o, r));
        o += r;
      }
    };
  }
  return out;
}

Var Tape::slice_cols(Var x, int start, int len) {
  check(x);
  const Mat& X = nodes_[x.id].val;
  MMR_REQUIRE(start >= 0 && len > 0 && start + len <= X.cols(), "slice_cols: out of range");
  bool ng = needs(x);
  Var out = push(X.middleCols(start, len), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi, start, len] {
      Mat g = Mat::Zero(nodes_[xi].val.rows(), nodes_[xi].val.cols());
      g.middleCols(start, len) = nodes_[oi].grad;
      accum(xi, g);
    };
  }
  return out;
}

Var Tape::slice_rows(Var x, int start, int len) {
  check(x);
  const Mat& X = nodes_[x.id].val;
  MMR_REQUIRE(start >= 0 && len > 0 && start + len <= X.rows(), "slice_rows: out of range");
  bool ng = needs(x);
  Var out = push(X.middleRows(start, len), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi, start, len] {
      Mat g = Mat::Zero(nodes_[xi].val.rows(), nodes_[xi].val.cols());
      g.middleRows(start, len) = nodes_[oi].grad;
      accum(xi, g);
    };
  }
  return out;
}

Var Tape::sum_all(Var x) {
  check(x);
  bool ng = needs(x);
  Mat y(1, 1);
  y(0, 0) = nodes_[x.id].val.sum();
  Var out = push(std::move(y), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      float g = nodes_[oi].grad(0, 0);
      accum(xi, Mat::Constant(nodes_[xi].val.rows(), nodes_[xi].val.cols(), g));
    };
  }
  return out;
}

Var Tape::mean_all(Var x) {
  check(x);
  float inv = 1.0f / static_cast<float>(nodes_[x.id].val.size());
  return scale(sum_all(x), inv);
}

Var Tape::rowsum(Var x) {
  check(x);
  bool ng = needs(x);
  Var out = push(nodes_[x.id].val.rowwise().sum(), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      accum(xi, nodes_[oi].grad * Mat::Ones(1, nodes_[xi].val.cols()));
    };
  }
  return out;
}

Var Tape::spread_rows(Var x, int cols) {
  check(x);
  MMR_REQUIRE(nodes_[x.id].val.cols() == 1, "spread_rows: input must be [Bx1]");
  bool ng = needs(x);
  Var out = push(nodes_[x.id].val * Mat::Ones(1, cols), ng);
  if (ng) {
    int xi = x.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] { accum(xi, nodes_[oi].grad.rowwise().sum()); };
  }
  return out;
}

namespace {
Mat stable_softmax(const Mat& logits) {
  Mat y(logits.rows(), logits.cols());
  for (long r = 0; r < logits.rows(); ++r) {
    float m = logits.row(r).maxCoeff();
    Eigen::ArrayXf e = (logits.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return y;
}
}  // namespace

Var Tape::softmax(Var logits) {
  check(logits);
  bool ng = needs(logits);
  Var out = push(stable_softmax(nodes_[logits.id].val), ng);
  if (ng) {
    int xi = logits.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      const Mat& P = nodes_[oi].val;
      const Mat& G = nodes_[oi].grad;
      Mat gp = G.cwiseProduct(P);
      Vec dot = gp.rowwise().sum();
      Mat gx = gp - P.cwiseProduct(dot * Mat::Ones(1, P.cols()));
      accum(xi, gx);
    };
  }
  return out;
}

Var Tape::log_softmax(Var logits) {
  check(logits);
  const Mat& X = nodes_[logits.id].val;
  Mat y(X.rows(), X.cols());
  for (long r = 0; r < X.rows(); ++r) {
    float m = X.row(r).maxCoeff();
    float lse = std::log((X.row(r).array() - m).exp().sum()) + m;
    y.row(r) = X.row(r).array() - lse;
  }
  bool ng = needs(logits);
  Var out = push(std::move(y), ng);
  if (ng) {
    int xi = logits.id, oi = out.id;
    nodes_[oi].back = [this, xi, oi] {
      const Mat& Y = nodes_[oi].val;
      const Mat& G = nodes_[oi].grad;
      Mat p = Y.array().exp();
      Vec gs = G.rowwise().sum();
      accum(xi, G - p.cwiseProduct(gs * Mat::Ones(1, Y.cols())));
    };
  }
  return out;
}

Var Tape::entropy(Var logits) {
  Var lp = log_softmax(logits);
  Var p = softmax(logits);
  return scale(rowsum(mul(p, lp)), -1.0f);
}

Var Tape::st_onehot(Var logits, Rng& rng, float temperature) {
  check(logits);
  MMR_REQUIRE(temperature > 0.0f, "st_onehot: temperature must be positive");
  MMR_REQUIRE(nodes_[logits.id].val.cols() >= 2, "st_onehot: needs at least 2 classes");
  const Mat scaled = nodes_[logits.id].val / temperature;
  Mat p = stable_softmax(scaled);
  Mat onehot = Mat::Zero(p.rows(), p.cols());
  for (long r = 0; r < p.rows(); ++r) {
    double u = rng.uniform();
    double acc = 0.0;
    int pick = static_cast<int>(p.cols()) - 1;
    for (long c = 0; c < p.cols(); ++c) {
      acc += static_cast<double>(p(r, c));
      if (u < acc) {
        pick = static_cast<int>(c);
        break;
      }
    }
    onehot(r, pick) = 1.0f;
  }
  bool ng = needs(logits);
  Var out = push(std::move(onehot), ng);
  if (ng) {
    int xi = logits.id, oi = out.id;
    float invt = 1.0f / temperature;
    Mat pc = std::move(p);
    nodes_[oi].back = [this, xi, oi, invt, pc = std::move(pc)] {
      const Mat& G = nodes_[oi].grad;
      Mat gp = G.cwiseProduct(pc);
      Vec dot = gp.rowwise().sum();
      Mat gx = (gp - pc.cwiseProduct(dot * Mat::Ones(1, pc.cols()))) * invt;
      accum(xi, gx);
    };
  }
  return out;
}

Var Tape::gaussian_reparam(Var mean, Var std, Rng& rng) {
  check(mean); check(std);
  const Mat& M = nodes_[mean.id].val;
  require_same_shape(M, nodes_[std.id].val, "gaussian_reparam");
  Mat eps(M.rows(), M.cols());
  for (long r = 0; r < eps.rows(); ++r)
    for (long c = 0; c < eps.cols(); ++c) eps(r, c) = static_cast<float>(rng.normal());
  return add(mean, cmul(std, eps));
}

Var Tape::kl_diag_gaussian(Var mean_p, Var std_p, Var mean_q, Var std_q) {
  // ln(sq/sp) + (sp^2 + (mp-mq)^2) / (2 sq^2) - 1/2, summed over dims.
  Var lr = sub(log(std_q), log(std_p));
  Var var_p = square(std_p);
  Var dmean = square(sub(mean_p, mean_q));
  Var denom = scale(square(std_q), 2.0f);
  Var frac = div(add(var_p, dmean), denom);
  Var inner = add_const(add(lr, frac), -0.5f);
  return rowsum(inner);
}

Var Tape::stop_gradient(Var x) {
  check(x);
  return constant(nodes_[x.id].val);
}

void Tape::backward(Var loss) {
  check(loss);
  Node& l = nodes_[loss.id];
  MMR_REQUIRE(l.val.rows() == 1 && l.val.cols() == 1, "backward: loss must be scalar");
  MMR_REQUIRE(l.needs_grad, "backward: loss does not depend on any tracked variable");
  l.grad = Mat::Ones(1, 1);
  l.grad_set = true;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.grad_set) continue;
    if (n.back) n.back();
    if (n.bound) n.bound->grad += n.grad;
  }
}

// ----- plain utilities -----

double kl_gaussian(const DiagonalGaussian& p, const DiagonalGaussian& q) {
  MMR_REQUIRE(p.mean.size() == p.std.size() && q.mean.size() == q.std.size() &&
                  p.mean.size() == q.mean.size(),
              "kl_gaussian: dimension mismatch");
  MMR_REQUIRE((p.std.array() > 0.0f).all() && (q.std.array() > 0.0f).all(),
              "kl_gaussian: stddev must be positive");
  double kl = 0.0;
  for (long i = 0; i < p.mean.size(); ++i) {
    double sp = p.std[i], sq = q.std[i];
    double dm = static_cast<double>(p.mean[i]) - q.mean[i];
    kl += std::log(sq / sp) + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5;
  }
  return kl;
}

double cosine_similarity(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
  MMR_REQUIRE(a.size() == b.size(), "cosine_similarity: dimension mismatch");
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  double c = a.cast<double>().dot(b.cast<double>()) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

Vec softmax_vec(const Vec& logits) {
  float m = logits.maxCoeff();
  Eigen::ArrayXf e = (logits.array() - m).exp();
  return (e / e.sum()).matrix();
}

int sample_categorical(const Vec& logits, Rng& rng) {
  Vec p = softmax_vec(logits);
  double u = rng.uniform();
  double acc = 0.0;
  for (long i = 0; i < p.size(); ++i) {
    acc += static_cast<double>(p[i]);
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

int sample_categorical_masked(const Vec& logits, const std::vector<int>& allowed, Rng& rng) {
  MMR_REQUIRE(!allowed.empty(), "sample_categorical_masked: empty mask");
  Vec sub(static_cast<long>(allowed.size()));
  for (size_t i = 0; i < allowed.size(); ++i) sub[static_cast<long>(i)] = logits[allowed[i]];
  int k = sample_categorical(sub, rng);
  return allowed[static_cast<size_t>(k)];
}

}  // namespace mmr::num
