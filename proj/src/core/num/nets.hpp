#pragma once

#include <string>
#include <vector>

#include "core/num/tape.hpp"

namespace mmr::num {

// Dense network: linear layers with ELU between them, linear output.
// Parameters live in a ParamStore under "<prefix>.w<i>" / "<prefix>.b<i>".
class Mlp {
 public:
  // sizes = {in, hidden..., out}. final_scale shrinks the last layer's
  // initial weights (near-zero heads for value/policy outputs).
  Mlp(ParamStore& store, const std::string& prefix, std::vector<int> sizes,
      Rng& rng, float final_scale = 1.0f);

  // Attach to parameters previously created in the store with this prefix.
  Mlp(ParamStore& store, const std::string& prefix, std::vector<int> sizes);

  Var forward(Tape& tape, Var x) const;

  // Tape-free forward for rollouts that do not need gradients.
  Mat forward_raw(const Mat& x) const;

  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }

 private:
  std::vector<int> sizes_;
  std::vector<Param*> ws_;
  std::vector<Param*> bs_;
};

// Standard GRU cell.
//   u = sigmoid(x Wu + h Uu + bu)         (update gate)
//   r = sigmoid(x Wr + h Ur + br)         (reset gate)
//   n = tanh(x Wn + (r o h) Un + bn)      (candidate)
//   h' = (1 - u) o n + u o h
class GruCell {
 public:
  GruCell(ParamStore& store, const std::string& prefix, int in_dim, int hidden_dim, Rng& rng);
  GruCell(ParamStore& store, const std::string& prefix, int in_dim, int hidden_dim);

  Var forward(Tape& tape, Var x, Var h) const;
  Mat forward_raw(const Mat& x, const Mat& h) const;

  int in_dim() const { return in_dim_; }
  int hidden_dim() const { return hidden_dim_; }

 private:
  int in_dim_, hidden_dim_;
  Param *wu_, *uu_, *bu_;
  Param *wr_, *ur_, *br_;
  Param *wn_, *un_, *bn_;
};

}  // namespace mmr::num
