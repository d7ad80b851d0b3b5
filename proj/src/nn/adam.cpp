#include "fsdiff/nn/adam.hpp"

#include <cmath>

#include "fsdiff/common.hpp"

namespace fsdiff::nn {

AdamState AdamState::zeros_for(const ParamSet& params) {
  AdamState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

bool adam_step(ParamSet& params, const std::vector<Mat>& grads, AdamState& state, double lr, const AdamConfig& config) {
  const std::size_t n = static_cast<std::size_t>(params.size());
  if (grads.size() != n) throw ValidationError("adam_step: gradient count mismatch");
  if (state.m.empty() && state.v.empty() && state.step == 0) state = AdamState::zeros_for(params);
  if (state.m.size() != n || state.v.size() != n) throw ValidationError("adam_step: state size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const Mat& p = params.value(static_cast<int>(i));
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() || state.m[i].rows() != p.rows() ||
        state.m[i].cols() != p.cols()) {
      throw ValidationError("adam_step: shape mismatch for " + params.name(static_cast<int>(i)));
    }
    if (!grads[i].allFinite()) return false;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    Mat& p = params.value(static_cast<int>(i));
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i].cwiseAbs2();
    p.array() -= lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + config.eps);
  }
  return true;
}

}  // namespace fsdiff::nn
