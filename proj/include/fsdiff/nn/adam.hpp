#pragma once

#include <cstdint>
#include <vector>

#include "fsdiff/nn/tape.hpp"

namespace fsdiff::nn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::int64_t step = 0;

  static AdamState zeros_for(const ParamSet& params);
};

/// Bias-corrected adaptive-moment update. Returns false and leaves everything
/// untouched when any gradient entry is non-finite. Throws ValidationError on
/// shape mismatches.
bool adam_step(ParamSet& params, const std::vector<Mat>& grads, AdamState& state, double lr,
               const AdamConfig& config = {});

}  // namespace fsdiff::nn
