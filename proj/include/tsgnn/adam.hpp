#pragma once

#include <cstddef>
#include <vector>

#include "tsgnn/tensor.hpp"

namespace tsgnn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Holds one first/second moment buffer per
// parameter; step() consumes and clears the parameters' gradients.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  // Throws ContractViolation if any parameter has no gradient.
  void step();

  std::size_t steps() const { return step_count_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_count_ = 0;
};

}  // namespace tsgnn
