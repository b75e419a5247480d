#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdm/calibration.hpp"
#include "cdm/config.hpp"
#include "cdm/data.hpp"
#include "cdm/metrics.hpp"
#include "cdm/nets.hpp"
#include "cdm/schedule.hpp"

namespace cdm {

// All run settings resolved from a Config, with defaults documented in
// configs/default.cfg. Unknown keys are rejected so typos fail loudly.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "out";

    SyntheticSpec data;  // data.seed is derived from the global seed

    double seen_fraction = 5.0 / 6.0;
    std::vector<std::size_t> explicit_seen;   // both empty -> fraction split
    std::vector<std::size_t> explicit_unseen;

    std::size_t extractor_hidden = 32;
    std::size_t d_f = 8;
    ExtractorTrainConfig extractor_train;

    AeMode ae_mode = AeMode::identity;
    std::size_t d_z = 16;
    AeTrainConfig ae_train;

    bool substitute_bankwide_variance = false;

    std::size_t T = 100;
    double beta_1 = 0.002;
    double beta_T = 0.2;

    DenoiserDims denoiser;  // d_z/d_f mirror the fields above
    DenoiserTrainConfig ldm_train;

    std::size_t k_shot = 3;
    std::size_t neighbors = 2;
    NeighborMode neighbor_mode = NeighborMode::class_mean;

    InversionConfig inversion;

    SamplerConfig sampler;
    std::size_t generate_count = 128;

    CovMode eval_cov = CovMode::diagonal;
    bool eval_few_shot = false;
    FewShotConfig few_shot;
    std::size_t eval_invert_steps = 400;  // inversion depth inside the few-shot generator

    static RunConfig from(const Config& cfg);  // ConfigError on bad/unknown keys

    SplitSpec split() const;
    NoiseSchedule schedule() const;
};

// Sequential driver for the pipeline stages. Every stage reads its upstream
// artifacts from disk, computes deterministically from config + seed, and
// writes its artifact plus a .prov provenance record next to it. Artifacts
// are named <stage>-<confighash>.<ext> so incompatible runs never mix.
class Pipeline {
public:
    explicit Pipeline(Config cfg);

    const RunConfig& run() const { return run_; }
    const Config& config() const { return cfg_; }
    const std::string& config_hash() const { return hash_; }

    std::string artifact_path(const std::string& stage, const std::string& ext) const;

    // Stages, in pipeline order. Each returns the path of the artifact written.
    std::string cmd_synth_data();
    std::string cmd_train_extractor();
    std::string cmd_train_ae();
    std::string cmd_stats();
    std::string cmd_train_ldm();
    std::string cmd_calibrate();
    std::string cmd_invert();
    std::string cmd_generate(bool use_inverted = true);
    MetricReport cmd_evaluate(bool use_inverted = true);

    // All stages end-to-end; returns the final (with-inversion) report.
    MetricReport cmd_run_experiment();
    // Shared stages once, then generation + evaluation with and without the
    // inversion stage; seeds are identical across the two arms.
    // Returns (without, with).
    std::pair<MetricReport, MetricReport> cmd_ablate_inversion();

    // Artifact loaders, shared with tests. Each raises DependencyError naming
    // the stage to run when its artifact is missing.
    Dataset load_data() const;
    FeatureExtractor load_extractor() const;
    Autoencoder load_ae() const;
    SeenBank load_stats() const;
    Denoiser load_ldm() const;
    std::vector<UnseenDistribution> load_distributions(bool inverted) const;
    // Support/query item indices chosen by cmd_calibrate, one per unseen class.
    std::vector<Episode> load_episodes() const;

    // Self-contained calibrate -> invert -> sample chain over the trained
    // artifacts; the returned closure owns copies of everything it needs.
    SampleGenerator sample_generator() const;

    std::uint64_t stage_seed(const std::string& label) const;

private:
    std::string require_artifact(const std::string& stage, const std::string& ext) const;
    void write_provenance(const std::string& artifact, const std::string& stage,
                          std::uint64_t stage_seed_value,
                          const std::vector<std::string>& inputs) const;
    std::string save_distributions(const std::vector<UnseenDistribution>& dists,
                                   const std::vector<Episode>& episodes,
                                   const std::string& stage) const;
    std::vector<UnseenDistribution> load_distribution_file(const std::string& stage) const;
    MetricReport evaluate_generated(const std::string& generated_stage,
                                    const std::string& report_stage);

    Config cfg_;
    RunConfig run_;
    std::string hash_;
};

}  // namespace cdm
