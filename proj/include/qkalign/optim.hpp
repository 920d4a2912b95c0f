#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qkalign/tensor.hpp"

namespace qkalign {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-10;
};

// First/second moments per parameter, flattened like the parameter data.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static AdamState for_params(std::span<const Tensor> params);
};

// One bias-corrected Adam update. A parameter without a materialized
// gradient is treated as having a zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& config);

void zero_grads(std::span<Tensor> params);

}  // namespace qkalign
