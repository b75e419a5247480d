#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cdm/data.hpp"
#include "cdm/nets.hpp"

namespace cdm {

enum class CovMode { diagonal, full };

struct GaussianFit {
    std::vector<double> mean;
    // Diagonal mode: d entries; full mode: d*d row-major symmetric matrix.
    std::vector<double> cov;
    CovMode mode = CovMode::diagonal;
    std::size_t n = 0;

    std::size_t dim() const { return mean.size(); }
};

// Sample mean and unbiased covariance. InsufficientSamplesError below 2 rows.
GaussianFit fit_gaussian(const std::vector<std::vector<double>>& features,
                         CovMode mode = CovMode::diagonal);

// ‖μ_a−μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2}). Diagonal fits reduce to
// Σ_i (√v_a − √v_b)²; full fits go through a symmetric eigendecomposition
// with eigenvalues clamped at 0.
double frechet_distance(const GaussianFit& a, const GaussianFit& b);

// Mean over classes of the mean pairwise Euclidean distance within the class.
double diversity_score(const std::vector<std::vector<std::vector<double>>>& per_class_features);

// Produces `count` data-space samples of an unseen class from its supports.
using SampleGenerator = std::function<std::vector<std::vector<double>>(
    std::size_t class_id, const std::vector<std::vector<double>>& support_x, std::size_t count,
    std::uint64_t seed)>;

struct FewShotConfig {
    std::size_t n_way = 2;
    std::size_t shots = 3;
    std::size_t episodes = 10;
    std::size_t fakes_per_class = 64;  // 0 runs the real-only baseline
    std::size_t head_steps = 200;      // linear-head training steps (full batch)
    double head_lr = 0.05;
    std::uint64_t seed = 0;
};

// Episode protocol: freeze the extractor, per way sample shots supports,
// generate fakes from them, train a linear head on features of the
// support+fake pool, and score the remaining real items. Returns mean
// accuracy over episodes.
double few_shot_classification(const Dataset& data, const SplitSpec& split,
                               const FeatureExtractor& extractor,
                               const SampleGenerator& generator, const FewShotConfig& cfg);

struct MetricRow {
    std::string name;  // class id, or "aggregate"
    double frechet = 0.0;
    double diversity = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> per_class;
    MetricRow aggregate;  // mean over per_class rows
    std::optional<double> few_shot_accuracy;
    std::string config_hash;
    std::uint64_t seed = 0;
};

// Builds per-class rows plus the aggregate row (mean of the per-class values).
MetricReport make_report(const std::vector<std::pair<std::size_t, std::pair<double, double>>>&
                             per_class_frechet_diversity,
                         std::optional<double> few_shot_accuracy,
                         const std::string& config_hash, std::uint64_t seed);

// Stable CSV (leading format-version line, one row per class, aggregate last)
// and a human-readable text block.
std::string report_csv(const MetricReport& report);
std::string report_text(const MetricReport& report);

}  // namespace cdm
