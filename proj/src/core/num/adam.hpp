#pragma once

#include <vector>

#include "core/num/params.hpp"

namespace mmr::num {

// Bias-corrected Adam over a ParamStore, with global gradient-norm clipping.
// A step with any non-finite gradient entry is skipped and counted instead of
// applied.
class Adam {
 public:
  Adam(ParamStore& store, float lr, float clip_norm = 100.0f,
       float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);

  // Applies one update from the accumulated grads, then zeroes them.
  // Returns false (and still zeroes grads) when the step was skipped.
  bool step();

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }
  long steps_taken() const { return t_; }
  long steps_skipped() const { return skipped_; }
  // Global gradient norm observed on the most recent step() call.
  double last_grad_norm() const { return last_norm_; }

 private:
  ParamStore& store_;
  float lr_, clip_norm_, beta1_, beta2_, eps_;
  long t_ = 0;
  long skipped_ = 0;
  double last_norm_ = 0.0;
  std::vector<Mat> m_, v_;
};

}  // namespace mmr::num
