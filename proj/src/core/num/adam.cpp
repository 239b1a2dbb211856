#include "core/num/adam.hpp"

#include <cmath>
#include <limits>

namespace mmr::num {

Adam::Adam(ParamStore& store, float lr, float clip_norm, float beta1, float beta2, float eps)
    : store_(store), lr_(lr), clip_norm_(clip_norm), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Param* p : store_.all()) {
    m_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

bool Adam::step() {
  auto params = store_.all();
  MMR_REQUIRE(params.size() == m_.size(), "Adam: store changed size after construction");

  double sq = 0.0;
  bool finite = true;
  for (Param* p : params) {
    if (!p->grad.allFinite()) { finite = false; break; }
    sq += static_cast<double>(p->grad.squaredNorm());
  }
  if (!finite) {
    ++skipped_;
    last_norm_ = std::numeric_limits<double>::quiet_NaN();
    store_.zero_grads();
    return false;
  }
  last_norm_ = std::sqrt(sq);
  float scale = 1.0f;
  if (last_norm_ > clip_norm_ && last_norm_ > 0.0)
    scale = static_cast<float>(clip_norm_ / last_norm_);

  ++t_;
  float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Mat g = params[i]->grad * scale;
    m_[i] = beta1_ * m_[i] + (1.0f - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0f - beta2_) * g.cwiseProduct(g);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    params[i]->value -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
  }
  store_.zero_grads();
  return true;
}

}  // namespace mmr::num
