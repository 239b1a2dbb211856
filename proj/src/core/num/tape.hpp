#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "core/num/params.hpp"

namespace mmr::num {

// Handle into a Tape's node list.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over float matrices. Rows are batch entries, columns
// are features. A Tape is built forward by the ops below and consumed by one
// backward() call; parameter gradients are accumulated into Param::grad.
//
// Scope is deliberately small: exactly the primitives needed by the models
// here (dense layers, GRU cell, diagonal-Gaussian reparameterization,
// categorical straight-through sampling, the loss heads).
class Tape {
 public:
  Tape() { nodes_.reserve(1024); }

  // Leaves.
  Var constant(Mat v);              // no gradient tracked
  Var leaf(Mat v);                  // gradient tracked (inputs under test)
  Var param(Param& p);              // gradient accumulated into p.grad

  // Linear algebra.
  Var matmul(Var a, Var b);         // [BxI]*[IxO]
  Var add_bias(Var x, Var bias);    // bias [1xD] broadcast over rows

  // Elementwise.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var scale(Var x, float c);
  Var add_const(Var x, float c);
  Var cmul(Var x, const Mat& m);    // elementwise by a constant matrix
  Var square(Var x);
  Var log(Var x);
  Var elu(Var x);
  Var tanh(Var x);
  Var sigmoid(Var x);
  Var softplus(Var x);

  // Shape.
  Var concat_cols(const std::vector<Var>& xs);
  Var concat_rows(const std::vector<Var>& xs);
  Var slice_cols(Var x, int start, int len);
  Var slice_rows(Var x, int start, int len);

  // Reductions.
  Var sum_all(Var x);               // [1x1]
  Var mean_all(Var x);              // [1x1]
  Var rowsum(Var x);                // [Bx1]
  Var spread_rows(Var x, int cols); // [Bx1] -> [BxD] replicated

  // Softmax family (rowwise).
  Var softmax(Var logits);
  Var log_softmax(Var logits);
  // Entropy of softmax(logits) per row: [Bx1].
  Var entropy(Var logits);

  // Forward: exact one-hot categorical sample per row at the given
  // temperature. Backward: gradient of the sample w.r.t. logits is taken to
  // be the gradient through the softmax probabilities (straight-through).
  Var st_onehot(Var logits, Rng& rng, float temperature = 1.0f);

  // z = mean + std * eps with eps ~ N(0, I); backward flows into mean/std.
  Var gaussian_reparam(Var mean, Var std, Rng& rng);

  // Sum over dims of the closed-form KL between diagonal Gaussians, [Bx1].
  Var kl_diag_gaussian(Var mean_p, Var std_p, Var mean_q, Var std_q);

  Var stop_gradient(Var x);

  const Mat& val(Var v) const;
  const Mat& grad(Var v) const;     // valid after backward()

  // Seeds the backward pass from a scalar loss node.
  void backward(Var loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void()> back;     // empty for leaves/constants
    Param* bound = nullptr;         // parameter leaves
    bool needs_grad = false;
    bool grad_set = false;
  };

  Var push(Mat v, bool needs, std::function<void()> back = {});
  void accum(int id, const Mat& g);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  void check(Var v) const { MMR_REQUIRE(v.valid() && v.id < (int)nodes_.size(), "Tape: bad Var"); }

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> param_cache_;
};

// ----- plain (non-tape) distribution utilities -----

// Diagonal Gaussian over a feature vector; stddev strictly positive.
struct DiagonalGaussian {
  Vec mean;
  Vec std;
};

// Closed-form KL(p || q) for diagonal Gaussians, summed over dimensions.
double kl_gaussian(const DiagonalGaussian& p, const DiagonalGaussian& q);

// a.b / (|a||b|); returns 0 if either vector is zero.
double cosine_similarity(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b);

// Softmax of a logits vector (stable).
Vec softmax_vec(const Vec& logits);

// Categorical sample from logits (optionally restricted by a 0/1 mask over
// classes; masked-out classes get zero probability).
int sample_categorical(const Vec& logits, Rng& rng);
int sample_categorical_masked(const Vec& logits, const std::vector<int>& allowed, Rng& rng);

}  // namespace mmr::num
