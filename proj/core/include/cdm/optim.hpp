#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cdm/tensor.hpp"

namespace cdm {

// Trainable parameter with a stable name (used in error messages and
// checkpoint manifests).
struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list; updates apply in place to
// each parameter's storage.
class Adam {
public:
    Adam(std::vector<NamedTensor> params, AdamConfig config);

    // One update from the gradients currently held by the parameters.
    // Throws NonFiniteError naming the parameter on a non-finite gradient
    // or a non-finite updated value.
    void step();

    void zero_grads();

    void set_lr(double lr) { config_.lr = lr; }
    double lr() const { return config_.lr; }
    std::size_t steps() const { return step_count_; }

    const std::vector<NamedTensor>& params() const { return params_; }

private:
    std::vector<NamedTensor> params_;
    AdamConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_count_ = 0;
};

// Zeroes the grad buffers of every parameter in the list.
void zero_grads(std::vector<NamedTensor>& params);

}  // namespace cdm
