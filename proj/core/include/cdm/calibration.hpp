#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cdm/nets.hpp"
#include "cdm/rng.hpp"
#include "cdm/schedule.hpp"
#include "cdm/tensor.hpp"

namespace cdm {

// Diagonal Gaussian fitted to one seen class's features.
struct ClassStats {
    std::size_t class_id = 0;
    std::vector<double> mu;
    std::vector<double> var;
    std::size_t n = 0;
};

struct SeenBank {
    std::map<std::size_t, ClassStats> by_class;

    const ClassStats& at(std::size_t class_id) const;  // MissingClassError
    std::size_t size() const { return by_class.size(); }
    std::size_t dim() const;  // feature dimension (0 for an empty bank)
};

// Per-class mean and unbiased per-dimension variance of the features.
// Classes with fewer than 2 items raise InsufficientSamplesError unless
// substitute_bankwide_variance is set, in which case their variance becomes
// the mean variance of the adequately-sampled classes.
SeenBank compute_seen_stats(const std::vector<std::vector<double>>& features,
                            const std::vector<std::size_t>& labels,
                            bool substitute_bankwide_variance = false);

// Arithmetic mean of the K support features. EmptySupportError when K = 0.
std::vector<double> support_mean(const std::vector<std::vector<double>>& supports);

// Ids of the `count` seen classes whose means are nearest (Euclidean) to
// mu_c; ties broken by ascending class id.
std::vector<std::size_t> nearest_seen_classes(const SeenBank& bank,
                                              const std::vector<double>& mu_c,
                                              std::size_t count);

// Elementwise mean of the neighbors' variances.
std::vector<double> calibrate_variance(const SeenBank& bank,
                                       const std::vector<std::size_t>& neighbors);

enum class StatsProvenance { calibrated, inverted };

std::string provenance_name(StatsProvenance p);
StatsProvenance provenance_from_name(const std::string& name);  // ConfigError on unknown

// Unseen-class conditional distribution, parameterized by log variance so
// optimization keeps σ² positive.
struct UnseenDistribution {
    std::size_t class_id = 0;
    std::vector<double> mu;
    std::vector<double> log_var;
    StatsProvenance provenance = StatsProvenance::calibrated;
    std::vector<std::size_t> neighbors;

    std::vector<double> variance() const;
    std::vector<double> sigma() const;
};

// class_mean ranks neighbors against the Eq. 4 support mean; per_support ranks
// them against each support feature separately and pools the union.
enum class NeighborMode { class_mean, per_support };

// Support mean + neighbor-calibrated variance in one step.
UnseenDistribution calibrate_unseen(const SeenBank& bank, std::size_t class_id,
                                    const std::vector<std::vector<double>>& support_features,
                                    std::size_t neighbor_count,
                                    NeighborMode mode = NeighborMode::class_mean);

// f = μ + σ ⊙ ε with ε ~ N(0, I).
std::vector<double> sample_conditional(const UnseenDistribution& dist, Rng& rng);
// Differentiable reparameterized draw for fixed noise rows eps [n, d]:
// f = μ + exp(0.5·log σ²) ⊙ ε, recorded on the active tape.
Tensor sample_conditional(const Tensor& mu, const Tensor& log_var, const Tensor& eps);

struct InversionConfig {
    std::size_t steps = 2000;
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;  // ConfigError when lr <= 0
};

// Per step and per support: encode z, draw a fresh t and fresh noises, noise
// z to z_t, reparameterize f^c, and descend the noise-prediction error into
// μ^c and log σ² only; denoiser and autoencoder stay frozen.
UnseenDistribution invert_optimize(const UnseenDistribution& dist,
                                   const std::vector<std::vector<double>>& supports,
                                   const Denoiser& denoiser, const Autoencoder& ae,
                                   const NoiseSchedule& sched, const InversionConfig& cfg);

// Draw f^c ~ N(μ^c, σ²c), run the guided sampler from z_T ~ N(0, I), decode.
// Returns `count` data-space samples.
std::vector<std::vector<double>> generate_unseen(const UnseenDistribution& dist,
                                                 std::size_t count, const Denoiser& denoiser,
                                                 const NoiseSchedule& sched,
                                                 const Autoencoder& ae,
                                                 const SamplerConfig& sampler);

}  // namespace cdm
