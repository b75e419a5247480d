#include "cdm/optim.hpp"

#include <cmath>

#include "cdm/errors.hpp"

namespace cdm {

Adam::Adam(std::vector<NamedTensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const NamedTensor& p : params_) {
        if (!p.tensor.requires_grad()) {
            throw DomainError("Adam: parameter '" + p.name + "' does not require gradients");
        }
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        NamedTensor& param = params_[p];
        const std::vector<double>& g = param.tensor.grad();
        std::vector<double>& theta = param.tensor.mutable_values();
        std::vector<double>& m = m_[p];
        std::vector<double>& v = v_[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            if (!std::isfinite(g[i])) {
                throw NonFiniteError("Adam: non-finite gradient in parameter '" + param.name +
                                     "' at index " + std::to_string(i));
            }
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            theta[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
            if (!std::isfinite(theta[i])) {
                throw NonFiniteError("Adam: parameter '" + param.name +
                                     "' became non-finite at index " + std::to_string(i));
            }
        }
    }
}

void Adam::zero_grads() {
    for (NamedTensor& p : params_) p.tensor.zero_grad();
}

void zero_grads(std::vector<NamedTensor>& params) {
    for (NamedTensor& p : params) p.tensor.zero_grad();
}

}  // namespace cdm
