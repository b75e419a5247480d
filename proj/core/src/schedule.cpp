#include "cdm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cdm/errors.hpp"

namespace cdm {

void NoiseSchedule::check_t(std::size_t t) const {
    if (t < 1 || t > T) {
        throw DomainError("timestep " + std::to_string(t) + " outside [1," + std::to_string(T) +
                          "]");
    }
}

double NoiseSchedule::beta_at(std::size_t t) const {
    check_t(t);
    return beta[t - 1];
}

double NoiseSchedule::alpha_bar_at(std::size_t t) const {
    if (t == 0) return 1.0;
    check_t(t);
    return alpha_bar[t - 1];
}

NoiseSchedule linear_beta_schedule(std::size_t T, double beta_1, double beta_T) {
    if (T < 1) throw ConfigError("linear_beta_schedule: T must be >= 1");
    if (!(0.0 < beta_1 && beta_1 <= beta_T && beta_T < 1.0)) {
        throw ConfigError("linear_beta_schedule: need 0 < beta_1 <= beta_T < 1, got beta_1=" +
                          std::to_string(beta_1) + " beta_T=" + std::to_string(beta_T));
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.posterior_var.resize(T);
    s.log_beta.resize(T);
    s.log_posterior_var_clipped.resize(T);

    double running = 1.0;
    for (std::size_t i = 0; i < T; ++i) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
        s.beta[i] = beta_1 + (beta_T - beta_1) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        const double prev_bar = running;
        running *= s.alpha[i];
        s.alpha_bar[i] = running;
        s.posterior_var[i] = s.beta[i] * (1.0 - prev_bar) / (1.0 - s.alpha_bar[i]);
        s.log_beta[i] = std::log(s.beta[i]);
    }
    const double floor_var = T >= 2 ? s.posterior_var[1] : s.beta[0];
    for (std::size_t i = 0; i < T; ++i) {
        s.log_posterior_var_clipped[i] = std::log(i == 0 ? floor_var : s.posterior_var[i]);
    }
    return s;
}

void SamplerConfig::validate(std::size_t T) const {
    if (steps < 1 || steps > T) {
        throw ConfigError("sampler: steps=" + std::to_string(steps) + " outside [1," +
                          std::to_string(T) + "]");
    }
    if (eta < 0.0 || eta > 1.0) throw ConfigError("sampler: eta outside [0,1]");
    if (s_cfg < 0.0) throw ConfigError("sampler: s_cfg must be >= 0");
}

std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t steps) {
    if (steps < 1 || steps > T) {
        throw ConfigError("ddim_timesteps: steps=" + std::to_string(steps) + " outside [1," +
                          std::to_string(T) + "]");
    }
    const std::size_t stride = T / steps;
    std::vector<std::size_t> ts(steps);
    for (std::size_t i = 0; i < steps; ++i) ts[i] = 1 + i * stride;
    std::reverse(ts.begin(), ts.end());
    return ts;
}

}  // namespace cdm
