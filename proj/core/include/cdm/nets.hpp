#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "cdm/optim.hpp"
#include "cdm/rng.hpp"
#include "cdm/tensor.hpp"

namespace cdm {

// Sinusoidal embedding of an integer timestep: cos half then sin half,
// frequencies log-spaced with base period 10000.
std::vector<double> time_embedding(std::size_t t, std::size_t d_t);
// Constant [n, d_t] tensor with one embedding row per timestep.
Tensor time_embedding_rows(const std::vector<std::size_t>& ts, std::size_t d_t);

// MLP classifier; the penultimate activation is the conditional feature f.
class FeatureExtractor {
public:
    FeatureExtractor(std::size_t d_x, std::size_t hidden, std::size_t d_f,
                     std::size_t n_classes, Rng& rng);

    // x is [n, d_x]; differentiable when on a tape.
    Tensor features(const Tensor& x) const;                 // [n, d_f]
    Tensor logits_from_features(const Tensor& f) const;     // [n, n_classes]
    Tensor logits(const Tensor& x) const;

    // Tape-free single-item feature.
    std::vector<double> extract(const std::vector<double>& x) const;

    std::vector<NamedTensor> params() const;
    std::size_t d_x() const { return d_x_; }
    std::size_t d_f() const { return d_f_; }
    std::size_t hidden() const { return hidden_; }
    std::size_t n_classes() const { return n_classes_; }

private:
    std::size_t d_x_, hidden_, d_f_, n_classes_;
    Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

enum class AeMode { identity, linear };

// Latent autoencoder E/D. Identity mode is the default desk configuration
// (d_z = d_x, no parameters); linear mode learns a rank-d_z bottleneck.
class Autoencoder {
public:
    Autoencoder(AeMode mode, std::size_t d_x, std::size_t d_z, Rng* rng = nullptr);

    Tensor encode(const Tensor& x) const;  // [n, d_z]
    Tensor decode(const Tensor& z) const;  // [n, d_x]
    std::vector<double> encode_one(const std::vector<double>& x) const;
    std::vector<double> decode_one(const std::vector<double>& z) const;

    std::vector<NamedTensor> params() const;  // empty in identity mode
    AeMode mode() const { return mode_; }
    std::size_t d_x() const { return d_x_; }
    std::size_t d_z() const { return d_z_; }

private:
    AeMode mode_;
    std::size_t d_x_, d_z_;
    Tensor we_, be_, wd_, bd_;
};

struct DenoiserDims {
    std::size_t d_z = 16;
    std::size_t d_f = 8;
    std::size_t d_t = 32;   // time embedding width
    std::size_t d_c = 16;   // conditioning embedding width
    std::size_t hidden = 64;
};

// Conditional noise predictor; input is concat(z_t, time-embed, cond-embed)
// and the output splits into (ε̂, v). The null conditional is a learned
// embedding u_∅ substituted for the projected feature. The feature embedding
// is bounded — tanh of an affine map of f/f_scale — standing in for the
// normalization plus convex attention weights of the full-scale conditioning
// pathway; without the bound, inversion can run the conditional off the
// trained feature range indefinitely.
class Denoiser {
public:
    Denoiser(DenoiserDims dims, std::size_t t_max, Rng& rng);

    // Typical per-dimension feature magnitude; set once from the seen bank
    // before training (input normalization for the conditioning pathway).
    void set_f_scale(double scale);
    double f_scale() const { return f_scale_; }

    Tensor condition(const Tensor& f) const;            // [n, d_f] -> [n, d_c]
    Tensor null_condition(std::size_t n) const;         // [n, d_c]
    // Per-row blend: rows with null_mask[i] != 0 use u_∅, others the
    // projected feature. Gradients flow only into the chosen branch per row.
    Tensor mixed_condition(const Tensor& f, const std::vector<std::uint8_t>& null_mask) const;

    // z_t [n, d_z], per-row timesteps, cond [n, d_c] -> (ε̂ [n, d_z], v [n, d_z]).
    std::pair<Tensor, Tensor> forward(const Tensor& z_t, const std::vector<std::size_t>& ts,
                                      const Tensor& cond) const;

    // Tape-free single-item prediction; std::nullopt selects the null token.
    std::pair<std::vector<double>, std::vector<double>> denoise_one(
        const std::vector<double>& z_t, std::size_t t,
        const std::optional<std::vector<double>>& f) const;

    std::vector<NamedTensor> params() const;
    const DenoiserDims& dims() const { return dims_; }
    std::size_t t_max() const { return t_max_; }

private:
    DenoiserDims dims_;
    std::size_t t_max_;
    double f_scale_ = 1.0;
    Tensor wc_, bc_, u_null_;
    Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

struct ExtractorTrainConfig {
    std::size_t epochs = 40;
    std::size_t batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct AeTrainConfig {
    std::size_t epochs = 60;
    std::size_t batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct DenoiserTrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 32;
    double lr_target = 2e-4;      // warmup goes linearly 0 -> lr_target
    std::size_t warmup_steps = 500;
    double p_uncond = 0.1;        // CFG conditional dropout
    double lambda_vlb = 1e-3;
    std::uint64_t seed = 0;
};

// Cross-entropy training of the classifier on dense labels 0..n_classes-1.
// Returns the per-epoch mean loss. ConfigError when fewer than 2 distinct
// labels are present.
std::vector<double> train_extractor(FeatureExtractor& net,
                                    const std::vector<std::vector<double>>& xs,
                                    const std::vector<std::size_t>& labels,
                                    const ExtractorTrainConfig& cfg);

// Batch feature extraction with frozen parameters.
std::vector<std::vector<double>> extract_features(const FeatureExtractor& net,
                                                  const std::vector<std::vector<double>>& xs);
std::vector<double> extract_feature(const FeatureExtractor& net, const std::vector<double>& x);

// Reconstruction (MSE) training; ModeError in identity mode.
// Returns the per-epoch mean loss.
std::vector<double> train_autoencoder(Autoencoder& ae,
                                      const std::vector<std::vector<double>>& xs,
                                      const AeTrainConfig& cfg);

}  // namespace cdm
