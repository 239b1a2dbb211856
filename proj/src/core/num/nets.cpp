#include "core/num/nets.hpp"

#include <cmath>

namespace mmr::num {

namespace {

void fill_uniform(Mat& m, float bound, Rng& rng) {
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c)
      m(r, c) = static_cast<float>(rng.uniform(-bound, bound));
}

// Glorot-uniform; works fine for the small ELU stacks used here.
void init_linear(Param& w, Rng& rng, float scale) {
  float bound = scale * std::sqrt(6.0f / static_cast<float>(w.value.rows() + w.value.cols()));
  fill_uniform(w.value, bound, rng);
}

}  // namespace

Mlp::Mlp(ParamStore& store, const std::string& prefix, std::vector<int> sizes,
         Rng& rng, float final_scale)
    : sizes_(std::move(sizes)) {
  MMR_REQUIRE(sizes_.size() >= 2, "Mlp: need at least input and output sizes");
  Rng r = rng.stream(prefix);
  for (size_t i = 0; i + 1 < sizes_.size(); ++i) {
    Param& w = store.create(prefix + ".w" + std::to_string(i), sizes_[i], sizes_[i + 1]);
    Param& b = store.create(prefix + ".b" + std::to_string(i), 1, sizes_[i + 1]);
    bool last = (i + 2 == sizes_.size());
    init_linear(w, r, last ? final_scale : 1.0f);
    ws_.push_back(&w);
    bs_.push_back(&b);
  }
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, std::vector<int> sizes)
    : sizes_(std::move(sizes)) {
  MMR_REQUIRE(sizes_.size() >= 2, "Mlp: need at least input and output sizes");
  for (size_t i = 0; i + 1 < sizes_.size(); ++i) {
    Param& w = store.get(prefix + ".w" + std::to_string(i));
    Param& b = store.get(prefix + ".b" + std::to_string(i));
    MMR_REQUIRE(w.value.rows() == sizes_[i] && w.value.cols() == sizes_[i + 1],
                "Mlp: stored shape mismatch for " + prefix);
    ws_.push_back(&w);
    bs_.push_back(&b);
  }
}

Var Mlp::forward(Tape& tape, Var x) const {
  MMR_REQUIRE(tape.val(x).cols() == sizes_.front(), "Mlp: input dim mismatch");
  Var h = x;
  for (size_t i = 0; i < ws_.size(); ++i) {
    h = tape.add_bias(tape.matmul(h, tape.param(*ws_[i])), tape.param(*bs_[i]));
    if (i + 1 < ws_.size()) h = tape.elu(h);
  }
  return h;
}

Mat Mlp::forward_raw(const Mat& x) const {
  MMR_REQUIRE(x.cols() == sizes_.front(), "Mlp: input dim mismatch");
  Mat h = x;
  for (size_t i = 0; i < ws_.size(); ++i) {
    Mat y = h * ws_[i]->value;
    y.rowwise() += bs_[i]->value.row(0);
    if (i + 1 < ws_.size())
      y = y.unaryExpr([](float v) { return v > 0.0f ? v : std::expm1(v); });
    h = std::move(y);
  }
  return h;
}

GruCell::GruCell(ParamStore& store, const std::string& prefix, int in_dim, int hidden_dim,
                 Rng& rng)
    : in_dim_(in_dim), hidden_dim_(hidden_dim) {
  Rng r = rng.stream(prefix);
  auto mk = [&](const char* n, int rows, int cols) -> Param* {
    Param& p = store.create(prefix + "." + n, rows, cols);
    if (rows > 1) init_linear(p, r, 1.0f);
    return &p;
  };
  wu_ = mk("wu", in_dim, hidden_dim);
  uu_ = mk("uu", hidden_dim, hidden_dim);
  bu_ = mk("bu", 1, hidden_dim);
  wr_ = mk("wr", in_dim, hidden_dim);
  ur_ = mk("ur", hidden_dim, hidden_dim);
  br_ = mk("br", 1, hidden_dim);
  wn_ = mk("wn", in_dim, hidden_dim);
  un_ = mk("un", hidden_dim, hidden_dim);
  bn_ = mk("bn", 1, hidden_dim);
  // Bias the update gate toward carrying state early in training.
  bu_->value.setConstant(-1.0f);
}

GruCell::GruCell(ParamStore& store, const std::string& prefix, int in_dim, int hidden_dim)
    : in_dim_(in_dim), hidden_dim_(hidden_dim) {
  auto gk = [&](const char* n) { return &store.get(prefix + "." + n); };
  wu_ = gk("wu"); uu_ = gk("uu"); bu_ = gk("bu");
  wr_ = gk("wr"); ur_ = gk("ur"); br_ = gk("br");
  wn_ = gk("wn"); un_ = gk("un"); bn_ = gk("bn");
  MMR_REQUIRE(wu_->value.rows() == in_dim && wu_->value.cols() == hidden_dim,
              "GruCell: stored shape mismatch for " + prefix);
}

Var GruCell::forward(Tape& tape, Var x, Var h) const {
  MMR_REQUIRE(tape.val(x).cols() == in_dim_, "GruCell: input dim mismatch");
  MMR_REQUIRE(tape.val(h).cols() == hidden_dim_, "GruCell: hidden dim mismatch");
  Var u = tape.sigmoid(tape.add_bias(
      tape.add(tape.matmul(x, tape.param(*wu_)), tape.matmul(h, tape.param(*uu_))),
      tape.param(*bu_)));
  Var r = tape.sigmoid(tape.add_bias(
      tape.add(tape.matmul(x, tape.param(*wr_)), tape.matmul(h, tape.param(*ur_))),
      tape.param(*br_)));
  Var n = tape.tanh(tape.add_bias(
      tape.add(tape.matmul(x, tape.param(*wn_)), tape.matmul(tape.mul(r, h), tape.param(*un_))),
      tape.param(*bn_)));
  // h' = n + u o (h - n)
  return tape.add(n, tape.mul(u, tape.sub(h, n)));
}

Mat GruCell::forward_raw(const Mat& x, const Mat& h) const {
  MMR_REQUIRE(x.cols() == in_dim_ && h.cols() == hidden_dim_, "GruCell: dim mismatch");
  auto sig = [](float v) {
    return v >= 0.0f ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v));
  };
  Mat u = ((x * wu_->value + h * uu_->value).rowwise() + bu_->value.row(0)).unaryExpr(sig);
  Mat r = ((x * wr_->value + h * ur_->value).rowwise() + br_->value.row(0)).unaryExpr(sig);
  Mat n = ((x * wn_->value + r.cwiseProduct(h) * un_->value).rowwise() + bn_->value.row(0))
              .array().tanh().matrix();
  return n + u.cwiseProduct(h - n);
}

}  // namespace mmr::num
