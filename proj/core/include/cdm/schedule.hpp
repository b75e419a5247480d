#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cdm {

// Forward-process constants for a T-step diffusion chain. Arrays are indexed
// by t-1 (entry 0 holds the t=1 value).
struct NoiseSchedule {
    std::size_t T = 0;
    std::vector<double> beta;                // β_t
    std::vector<double> alpha;               // 1 − β_t
    std::vector<double> alpha_bar;           // ∏_{s≤t} α_s
    std::vector<double> posterior_var;       // β̃_t = β_t(1−ᾱ_{t−1})/(1−ᾱ_t); β̃_1 = 0
    std::vector<double> log_beta;
    // log β̃ with the t=1 entry replaced by the t=2 value so it is usable
    // inside logs and interpolation.
    std::vector<double> log_posterior_var_clipped;

    double beta_at(std::size_t t) const;       // DomainError unless 1 ≤ t ≤ T
    double alpha_bar_at(std::size_t t) const;  // ᾱ_t, with ᾱ_0 = 1
    void check_t(std::size_t t) const;
};

// β interpolated linearly from β_1 to β_T inclusive.
// ConfigError unless 0 < β_1 ≤ β_T < 1 and T ≥ 1.
NoiseSchedule linear_beta_schedule(std::size_t T, double beta_1, double beta_T);

struct SamplerConfig {
    std::size_t steps = 25;   // DDIM step count
    double eta = 0.0;         // stochasticity; 0 = deterministic
    double s_cfg = 1.5;       // classifier-free guidance scale
    std::uint64_t seed = 0;

    void validate(std::size_t T) const;  // ConfigError on violated bounds
};

// The timesteps a DDIM run visits, in visiting (descending) order:
// evenly spaced by ⌊T/steps⌋ and always ending at t = 1.
std::vector<std::size_t> ddim_timesteps(std::size_t T, std::size_t steps);

}  // namespace cdm
