#include "cdm/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "cdm/checkpoint.hpp"
#include "cdm/diffusion.hpp"
#include "cdm/errors.hpp"
#include "cdm/rng.hpp"

namespace cdm {

namespace {

std::string hex16(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash_hex(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("provenance: cannot hash missing file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex16(fnv1a64(ss.str()));
}

std::string stage_command(const std::string& stage) {
    if (stage == "data") return "cmd_synth_data";
    if (stage == "extractor") return "cmd_train_extractor";
    if (stage == "ae") return "cmd_train_ae";
    if (stage == "stats") return "cmd_stats";
    if (stage == "ldm") return "cmd_train_ldm";
    if (stage == "calib") return "cmd_calibrate";
    if (stage == "inverted") return "cmd_invert";
    if (stage == "generated") return "cmd_generate";
    if (stage == "generated-noinv") return "cmd_generate without inversion";
    return stage;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "format.version", "seed", "out.dir",
        "data.classes", "data.dx", "data.per_class", "data.nonlinearity",
        "data.anchor_spread", "data.anchor_dim", "data.scale_min", "data.scale_max", "data.identity_mixing",
        "split.seen_fraction", "split.seen", "split.unseen",
        "extractor.hidden", "extractor.d_f", "extractor.epochs", "extractor.batch",
        "extractor.lr",
        "ae.mode", "ae.d_z", "ae.epochs", "ae.batch", "ae.lr",
        "stats.substitute_bankwide_variance",
        "schedule.T", "schedule.beta_1", "schedule.beta_T",
        "ldm.d_t", "ldm.d_c", "ldm.hidden", "ldm.epochs", "ldm.batch", "ldm.lr",
        "ldm.warmup_steps", "ldm.p_uncond", "ldm.lambda_vlb",
        "calib.k_shot", "calib.neighbors", "calib.per_support_neighbors",
        "invert.steps", "invert.lr",
        "sampler.steps", "sampler.eta", "sampler.s_cfg",
        "generate.count",
        "eval.cov", "eval.few_shot", "eval.n_way", "eval.episodes", "eval.fakes",
        "eval.head_steps", "eval.head_lr", "eval.invert_steps",
    };
    return keys;
}

}  // namespace

RunConfig RunConfig::from(const Config& cfg) {
    for (const auto& [k, v] : cfg.entries()) {
        (void)v;
        if (!known_keys().count(k)) throw ConfigError("config: unknown key '" + k + "'");
    }

    RunConfig r;
    r.seed = cfg.get_u64("seed", 42);
    r.out_dir = cfg.get_str("out.dir", "out");

    r.data.n_classes = cfg.get_size("data.classes", 12);
    r.data.d_x = cfg.get_size("data.dx", 16);
    r.data.n_per_class = cfg.get_size("data.per_class", 256);
    r.data.nonlinearity = nonlinearity_from_name(cfg.get_str("data.nonlinearity", "tanh"));
    r.data.anchor_spread = cfg.get_double("data.anchor_spread", 0.7);
    r.data.anchor_dim = cfg.get_size("data.anchor_dim", 3);
    r.data.scale_min = cfg.get_double("data.scale_min", 0.25);
    r.data.scale_max = cfg.get_double("data.scale_max", 0.4);
    r.data.identity_mixing = cfg.get_bool("data.identity_mixing", false);
    r.data.seed = derive_seed(r.seed, "data");
    r.data.validate();

    r.seen_fraction = cfg.get_double("split.seen_fraction", 5.0 / 6.0);
    r.explicit_seen = cfg.get_id_list("split.seen");
    r.explicit_unseen = cfg.get_id_list("split.unseen");
    if (r.explicit_seen.empty() != r.explicit_unseen.empty()) {
        throw ConfigError("config: split.seen and split.unseen must be given together");
    }

    r.extractor_hidden = cfg.get_size("extractor.hidden", 32);
    r.d_f = cfg.get_size("extractor.d_f", 8);
    r.extractor_train.epochs = cfg.get_size("extractor.epochs", 8);
    r.extractor_train.batch = cfg.get_size("extractor.batch", 32);
    r.extractor_train.lr = cfg.get_double("extractor.lr", 1e-3);
    r.extractor_train.seed = derive_seed(r.seed, "extractor");

    const std::string mode = cfg.get_str("ae.mode", "identity");
    if (mode == "identity") {
        r.ae_mode = AeMode::identity;
    } else if (mode == "linear") {
        r.ae_mode = AeMode::linear;
    } else {
        throw ConfigError("config: ae.mode must be identity or linear, got '" + mode + "'");
    }
    r.d_z = cfg.get_size("ae.d_z", r.data.d_x);
    if (r.ae_mode == AeMode::identity && r.d_z != r.data.d_x) {
        throw ConfigError("config: identity ae.mode requires ae.d_z == data.dx");
    }
    r.ae_train.epochs = cfg.get_size("ae.epochs", 60);
    r.ae_train.batch = cfg.get_size("ae.batch", 32);
    r.ae_train.lr = cfg.get_double("ae.lr", 1e-3);
    r.ae_train.seed = derive_seed(r.seed, "ae");

    r.substitute_bankwide_variance =
        cfg.get_bool("stats.substitute_bankwide_variance", false);

    r.T = cfg.get_size("schedule.T", 100);
    r.beta_1 = cfg.get_double("schedule.beta_1", 0.002);
    r.beta_T = cfg.get_double("schedule.beta_T", 0.2);

    r.denoiser.d_z = r.d_z;
    r.denoiser.d_f = r.d_f;
    r.denoiser.d_t = cfg.get_size("ldm.d_t", 32);
    r.denoiser.d_c = cfg.get_size("ldm.d_c", 16);
    r.denoiser.hidden = cfg.get_size("ldm.hidden", 256);
    r.ldm_train.epochs = cfg.get_size("ldm.epochs", 150);
    r.ldm_train.batch = cfg.get_size("ldm.batch", 32);
    r.ldm_train.lr_target = cfg.get_double("ldm.lr", 2e-4);
    r.ldm_train.warmup_steps = cfg.get_size("ldm.warmup_steps", 500);
    r.ldm_train.p_uncond = cfg.get_double("ldm.p_uncond", 0.1);
    r.ldm_train.lambda_vlb = cfg.get_double("ldm.lambda_vlb", 1e-3);
    r.ldm_train.seed = derive_seed(r.seed, "ldm");

    r.k_shot = cfg.get_size("calib.k_shot", 3);
    r.neighbors = cfg.get_size("calib.neighbors", 2);
    r.neighbor_mode = cfg.get_bool("calib.per_support_neighbors", false)
                          ? NeighborMode::per_support
                          : NeighborMode::class_mean;
    if (r.k_shot == 0) throw ConfigError("config: calib.k_shot must be >= 1");
    if (r.neighbors == 0) throw ConfigError("config: calib.neighbors must be >= 1");

    r.inversion.steps = cfg.get_size("invert.steps", 8000);
    r.inversion.lr = cfg.get_double("invert.lr", 2e-4);
    r.inversion.validate();

    r.sampler.steps = cfg.get_size("sampler.steps", 25);
    r.sampler.eta = cfg.get_double("sampler.eta", 0.0);
    r.sampler.s_cfg = cfg.get_double("sampler.s_cfg", 1.5);

    r.generate_count = cfg.get_size("generate.count", 128);
    if (r.generate_count < 2) throw ConfigError("config: generate.count must be >= 2");

    const std::string cov = cfg.get_str("eval.cov", "diagonal");
    if (cov == "diagonal") {
        r.eval_cov = CovMode::diagonal;
    } else if (cov == "full") {
        r.eval_cov = CovMode::full;
    } else {
        throw ConfigError("config: eval.cov must be diagonal or full, got '" + cov + "'");
    }
    r.eval_few_shot = cfg.get_bool("eval.few_shot", false);
    r.few_shot.n_way = cfg.get_size("eval.n_way", 2);
    r.few_shot.shots = r.k_shot;
    r.few_shot.episodes = cfg.get_size("eval.episodes", 10);
    r.few_shot.fakes_per_class = cfg.get_size("eval.fakes", 64);
    r.few_shot.head_steps = cfg.get_size("eval.head_steps", 200);
    r.few_shot.head_lr = cfg.get_double("eval.head_lr", 0.05);
    r.few_shot.seed = derive_seed(r.seed, "fewshot");
    r.eval_invert_steps = cfg.get_size("eval.invert_steps", 8000);

    r.split().validate(r.data.n_classes);
    r.schedule();               // ConfigError on bad betas
    r.sampler.validate(r.T);
    return r;
}

SplitSpec RunConfig::split() const {
    if (!explicit_seen.empty() || !explicit_unseen.empty()) {
        return split_classes(explicit_seen, explicit_unseen, data.n_classes);
    }
    return split_classes(data.n_classes, seen_fraction, seed);
}

NoiseSchedule RunConfig::schedule() const { return linear_beta_schedule(T, beta_1, beta_T); }

Pipeline::Pipeline(Config cfg)
    : cfg_(std::move(cfg)), run_(RunConfig::from(cfg_)), hash_(cfg_.hash_hex()) {
    std::filesystem::create_directories(run_.out_dir);
}

std::string Pipeline::artifact_path(const std::string& stage, const std::string& ext) const {
    return run_.out_dir + "/" + stage + "-" + hash_ + ext;
}

std::uint64_t Pipeline::stage_seed(const std::string& label) const {
    return derive_seed(run_.seed, label);
}

std::string Pipeline::require_artifact(const std::string& stage, const std::string& ext) const {
    const std::string path = artifact_path(stage, ext);
    if (!std::filesystem::exists(path)) {
        throw DependencyError("missing artifact for stage '" + stage + "' (" + path +
                              "); run " + stage_command(stage) + " first");
    }
    return path;
}

void Pipeline::write_provenance(const std::string& artifact, const std::string& stage,
                                std::uint64_t stage_seed_value,
                                const std::vector<std::string>& inputs) const {
    std::ofstream out(artifact + ".prov");
    if (!out) throw DependencyError("provenance: cannot open " + artifact + ".prov");
    out << "cdm.provenance.v1\n";
    out << "stage " << stage << "\n";
    out << "config " << hash_ << "\n";
    out << "seed " << run_.seed << "\n";
    out << "stage_seed " << stage_seed_value << "\n";
    for (const auto& in : inputs) {
        out << "input " << std::filesystem::path(in).filename().string() << " "
            << file_hash_hex(in) << "\n";
    }
    out << "end\n";
}

std::string Pipeline::cmd_synth_data() {
    GeneratedDataset gen = generate_dataset(run_.data);
    const std::string path = artifact_path("data", ".bin");
    save_dataset(path, gen.data);
    write_provenance(path, "data", run_.data.seed, {});
    return path;
}

std::string Pipeline::cmd_train_extractor() {
    const std::string data_path = require_artifact("data", ".bin");
    const Dataset data = load_dataset(data_path);
    SplitSpec split = run_.split();
    std::vector<std::size_t> seen = split.seen;
    std::sort(seen.begin(), seen.end());

    std::map<std::size_t, std::size_t> dense;
    for (std::size_t i = 0; i < seen.size(); ++i) dense[seen[i]] = i;
    std::vector<std::vector<double>> xs;
    std::vector<std::size_t> ys;
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto it = dense.find(data.labels[i]);
        if (it == dense.end()) continue;
        xs.push_back(data.items[i]);
        ys.push_back(it->second);
    }

    Rng init(stage_seed("extractor-init"));
    FeatureExtractor net(data.d_x, run_.extractor_hidden, run_.d_f, seen.size(), init);
    train_extractor(net, xs, ys, run_.extractor_train);

    Checkpoint ckpt = checkpoint_from_params("extractor", net.params());
    ckpt.meta["d_x"] = std::to_string(data.d_x);
    ckpt.meta["hidden"] = std::to_string(run_.extractor_hidden);
    ckpt.meta["d_f"] = std::to_string(run_.d_f);
    ckpt.meta["n_classes"] = std::to_string(seen.size());
    ckpt.meta["classes"] = join_ids(seen);
    const std::string path = artifact_path("extractor", ".ckpt");
    save_checkpoint(path, ckpt);
    write_provenance(path, "extractor", run_.extractor_train.seed, {data_path});
    return path;
}

std::string Pipeline::cmd_train_ae() {
    std::vector<std::string> inputs;
    Checkpoint ckpt;
    ckpt.module = "ae";
    ckpt.meta["mode"] = run_.ae_mode == AeMode::identity ? "identity" : "linear";
    ckpt.meta["d_x"] = std::to_string(run_.data.d_x);
    ckpt.meta["d_z"] = std::to_string(run_.d_z);
    if (run_.ae_mode == AeMode::linear) {
        const std::string data_path = require_artifact("data", ".bin");
        inputs.push_back(data_path);
        const Dataset data = load_dataset(data_path);
        const SplitSpec split = run_.split();
        std::vector<std::vector<double>> xs;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (split.is_seen(data.labels[i])) xs.push_back(data.items[i]);
        }
        Rng init(stage_seed("ae-init"));
        Autoencoder ae(AeMode::linear, data.d_x, run_.d_z, &init);
        train_autoencoder(ae, xs, run_.ae_train);
        Checkpoint trained = checkpoint_from_params("ae", ae.params());
        ckpt.tensors = std::move(trained.tensors);
    }
    const std::string path = artifact_path("ae", ".ckpt");
    save_checkpoint(path, ckpt);
    write_provenance(path, "ae", run_.ae_train.seed, inputs);
    return path;
}

std::string Pipeline::cmd_stats() {
    const std::string data_path = require_artifact("data", ".bin");
    const std::string ex_path = require_artifact("extractor", ".ckpt");
    const Dataset data = load_dataset(data_path);
    const FeatureExtractor net = load_extractor();
    const SplitSpec split = run_.split();

    std::vector<std::vector<double>> features;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!split.is_seen(data.labels[i])) continue;
        features.push_back(net.extract(data.items[i]));
        labels.push_back(data.labels[i]);
    }
    const SeenBank bank = compute_seen_stats(features, labels, run_.substitute_bankwide_variance);

    Checkpoint ckpt;
    ckpt.module = "stats";
    ckpt.meta["d_f"] = std::to_string(bank.dim());
    std::vector<std::size_t> ids;
    for (const auto& [id, st] : bank.by_class) {
        ids.push_back(id);
        ckpt.meta["n." + std::to_string(id)] = std::to_string(st.n);
        ckpt.tensors.push_back({"mu." + std::to_string(id), {st.mu.size()}, st.mu});
        ckpt.tensors.push_back({"var." + std::to_string(id), {st.var.size()}, st.var});
    }
    ckpt.meta["classes"] = join_ids(ids);
    const std::string path = artifact_path("stats", ".ckpt");
    save_checkpoint(path, ckpt);
    write_provenance(path, "stats", stage_seed("stats"), {data_path, ex_path});
    return path;
}

std::string Pipeline::cmd_train_ldm() {
    const std::string data_path = require_artifact("data", ".bin");
    const std::string ae_path = require_artifact("ae", ".ckpt");
    const std::string stats_path = require_artifact("stats", ".ckpt");
    const Dataset data = load_dataset(data_path);
    const Autoencoder ae = load_ae();
    const SeenBank bank = load_stats();
    const NoiseSchedule sched = run_.schedule();
    const SplitSpec split = run_.split();

    std::vector<std::size_t> seen_items;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (split.is_seen(data.labels[i])) seen_items.push_back(i);
    }

    Rng init(stage_seed("ldm-init"));
    Denoiser den(run_.denoiser, run_.T, init);
    train_ldm(den, data, seen_items, bank, ae, sched, run_.ldm_train);

    Checkpoint ckpt = checkpoint_from_params("ldm", den.params());
    ckpt.meta["d_z"] = std::to_string(run_.denoiser.d_z);
    ckpt.meta["d_f"] = std::to_string(run_.denoiser.d_f);
    ckpt.meta["d_t"] = std::to_string(run_.denoiser.d_t);
    ckpt.meta["d_c"] = std::to_string(run_.denoiser.d_c);
    ckpt.meta["hidden"] = std::to_string(run_.denoiser.hidden);
    ckpt.meta["T"] = std::to_string(run_.T);
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", den.f_scale());
    ckpt.meta["f_scale"] = buf;
    const std::string path = artifact_path("ldm", ".ckpt");
    save_checkpoint(path, ckpt);
    write_provenance(path, "ldm", run_.ldm_train.seed, {data_path, ae_path, stats_path});
    return path;
}

std::string Pipeline::save_distributions(const std::vector<UnseenDistribution>& dists,
                                         const std::vector<Episode>& episodes,
                                         const std::string& stage) const {
    Checkpoint ckpt;
    ckpt.module = stage;
    ckpt.meta["k_shot"] = std::to_string(run_.k_shot);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < dists.size(); ++i) {
        const UnseenDistribution& d = dists[i];
        const std::string id = std::to_string(d.class_id);
        ids.push_back(d.class_id);
        ckpt.meta["neighbors." + id] = join_ids(d.neighbors);
        ckpt.meta["provenance." + id] = provenance_name(d.provenance);
        ckpt.meta["support." + id] = join_ids(episodes[i].support);
        ckpt.tensors.push_back({"mu." + id, {d.mu.size()}, d.mu});
        ckpt.tensors.push_back({"log_var." + id, {d.log_var.size()}, d.log_var});
    }
    ckpt.meta["classes"] = join_ids(ids);
    const std::string path = artifact_path(stage, ".ckpt");
    save_checkpoint(path, ckpt);
    return path;
}

std::string Pipeline::cmd_calibrate() {
    const std::string data_path = require_artifact("data", ".bin");
    const std::string ex_path = require_artifact("extractor", ".ckpt");
    const std::string stats_path = require_artifact("stats", ".ckpt");
    const Dataset data = load_dataset(data_path);
    const FeatureExtractor net = load_extractor();
    const SeenBank bank = load_stats();
    const SplitSpec split = run_.split();

    std::vector<std::size_t> unseen = split.unseen;
    std::sort(unseen.begin(), unseen.end());

    std::vector<UnseenDistribution> dists;
    std::vector<Episode> episodes;
    for (std::size_t c : unseen) {
        Episode ep = sample_episode(data, split, c, run_.k_shot, run_.seed);
        std::vector<std::vector<double>> support_features;
        for (std::size_t idx : ep.support) support_features.push_back(net.extract(data.items[idx]));
        dists.push_back(
            calibrate_unseen(bank, c, support_features, run_.neighbors, run_.neighbor_mode));
        episodes.push_back(std::move(ep));
    }

    const std::string path = save_distributions(dists, episodes, "calib");
    write_provenance(path, "calib", run_.seed, {data_path, ex_path, stats_path});
    return path;
}

std::string Pipeline::cmd_invert() {
    const std::string calib_path = require_artifact("calib", ".ckpt");
    const std::string ldm_path = require_artifact("ldm", ".ckpt");
    const std::string ae_path = require_artifact("ae", ".ckpt");
    const std::string data_path = require_artifact("data", ".bin");
    const Dataset data = load_dataset(data_path);
    const std::vector<UnseenDistribution> dists = load_distribution_file("calib");
    const std::vector<Episode> episodes = load_episodes();
    const Denoiser den = load_ldm();
    const Autoencoder ae = load_ae();
    const NoiseSchedule sched = run_.schedule();

    std::vector<UnseenDistribution> inverted;
    for (std::size_t i = 0; i < dists.size(); ++i) {
        std::vector<std::vector<double>> supports;
        for (std::size_t idx : episodes[i].support) supports.push_back(data.items[idx]);
        InversionConfig ic = run_.inversion;
        ic.seed = stage_seed("invert-" + std::to_string(dists[i].class_id));
        inverted.push_back(invert_optimize(dists[i], supports, den, ae, sched, ic));
    }

    const std::string path = save_distributions(inverted, episodes, "inverted");
    write_provenance(path, "inverted", stage_seed("invert"),
                     {calib_path, ldm_path, ae_path, data_path});
    return path;
}

std::string Pipeline::cmd_generate(bool use_inverted) {
    const std::string dist_stage = use_inverted ? "inverted" : "calib";
    const std::string dist_path = require_artifact(dist_stage, ".ckpt");
    const std::string ldm_path = require_artifact("ldm", ".ckpt");
    const std::string ae_path = require_artifact("ae", ".ckpt");
    const std::vector<UnseenDistribution> dists = load_distribution_file(dist_stage);
    const Denoiser den = load_ldm();
    const Autoencoder ae = load_ae();
    const NoiseSchedule sched = run_.schedule();

    Dataset out;
    out.d_x = run_.data.d_x;
    out.n_classes = run_.data.n_classes;
    for (const UnseenDistribution& d : dists) {
        SamplerConfig sc = run_.sampler;
        sc.seed = stage_seed("generate-" + std::to_string(d.class_id));
        std::vector<std::vector<double>> samples =
            generate_unseen(d, run_.generate_count, den, sched, ae, sc);
        for (auto& x : samples) {
            out.items.push_back(std::move(x));
            out.labels.push_back(d.class_id);
        }
    }

    const std::string stage = use_inverted ? "generated" : "generated-noinv";
    const std::string path = artifact_path(stage, ".bin");
    save_dataset(path, out);
    write_provenance(path, stage, stage_seed("generate"), {dist_path, ldm_path, ae_path});
    return path;
}

MetricReport Pipeline::evaluate_generated(const std::string& generated_stage,
                                          const std::string& report_stage) {
    const std::string data_path = require_artifact("data", ".bin");
    const std::string ex_path = require_artifact("extractor", ".ckpt");
    const std::string calib_path = require_artifact("calib", ".ckpt");
    const std::string gen_path = require_artifact(generated_stage, ".bin");
    const Dataset data = load_dataset(data_path);
    const FeatureExtractor net = load_extractor();
    const std::vector<Episode> episodes = load_episodes();
    const Dataset fakes = load_dataset(gen_path);

    std::vector<std::pair<std::size_t, std::pair<double, double>>> rows;
    for (const Episode& ep : episodes) {
        std::vector<std::vector<double>> real_f;
        for (std::size_t idx : ep.query) real_f.push_back(net.extract(data.items[idx]));
        std::vector<std::vector<double>> fake_f;
        for (std::size_t i = 0; i < fakes.size(); ++i) {
            if (fakes.labels[i] == ep.class_id) fake_f.push_back(net.extract(fakes.items[i]));
        }
        const GaussianFit real_fit = fit_gaussian(real_f, run_.eval_cov);
        const GaussianFit fake_fit = fit_gaussian(fake_f, run_.eval_cov);
        const double fd = frechet_distance(real_fit, fake_fit);
        const double div = diversity_score({fake_f});
        rows.push_back({ep.class_id, {fd, div}});
    }

    std::optional<double> acc;
    if (run_.eval_few_shot) {
        acc = few_shot_classification(data, run_.split(), net, sample_generator(),
                                      run_.few_shot);
    }

    const MetricReport report = make_report(rows, acc, hash_, run_.seed);
    const std::string csv_path = artifact_path(report_stage, ".csv");
    {
        std::ofstream out(csv_path);
        if (!out) throw DependencyError("report: cannot open " + csv_path);
        out << report_csv(report);
    }
    {
        std::ofstream out(artifact_path(report_stage, ".txt"));
        out << report_text(report);
    }
    write_provenance(csv_path, report_stage, run_.few_shot.seed,
                     {data_path, ex_path, calib_path, gen_path});
    return report;
}

MetricReport Pipeline::cmd_evaluate(bool use_inverted) {
    return evaluate_generated(use_inverted ? "generated" : "generated-noinv",
                              use_inverted ? "report" : "report-noinv");
}

MetricReport Pipeline::cmd_run_experiment() {
    cmd_synth_data();
    cmd_train_extractor();
    cmd_train_ae();
    cmd_stats();
    cmd_train_ldm();
    cmd_calibrate();
    cmd_invert();
    cmd_generate(true);
    return cmd_evaluate(true);
}

std::pair<MetricReport, MetricReport> Pipeline::cmd_ablate_inversion() {
    cmd_synth_data();
    cmd_train_extractor();
    cmd_train_ae();
    cmd_stats();
    cmd_train_ldm();
    cmd_calibrate();
    cmd_generate(false);
    MetricReport without = cmd_evaluate(false);
    cmd_invert();
    cmd_generate(true);
    MetricReport with = cmd_evaluate(true);
    return {without, with};
}

Dataset Pipeline::load_data() const { return load_dataset(require_artifact("data", ".bin")); }

FeatureExtractor Pipeline::load_extractor() const {
    const Checkpoint ckpt = load_checkpoint(require_artifact("extractor", ".ckpt"));
    if (ckpt.module != "extractor") {
        throw ConfigError("checkpoint: expected module extractor, got '" + ckpt.module + "'");
    }
    Rng scratch(0);
    FeatureExtractor net(ckpt.meta_size("d_x"), ckpt.meta_size("hidden"), ckpt.meta_size("d_f"),
                         ckpt.meta_size("n_classes"), scratch);
    load_into_params(ckpt, net.params());
    return net;
}

Autoencoder Pipeline::load_ae() const {
    const Checkpoint ckpt = load_checkpoint(require_artifact("ae", ".ckpt"));
    if (ckpt.module != "ae") {
        throw ConfigError("checkpoint: expected module ae, got '" + ckpt.module + "'");
    }
    const std::string mode = ckpt.meta_value("mode");
    const std::size_t d_x = ckpt.meta_size("d_x");
    const std::size_t d_z = ckpt.meta_size("d_z");
    if (mode == "identity") return Autoencoder(AeMode::identity, d_x, d_z);
    Rng scratch(0);
    Autoencoder ae(AeMode::linear, d_x, d_z, &scratch);
    load_into_params(ckpt, ae.params());
    return ae;
}

SeenBank Pipeline::load_stats() const {
    const Checkpoint ckpt = load_checkpoint(require_artifact("stats", ".ckpt"));
    if (ckpt.module != "stats") {
        throw ConfigError("checkpoint: expected module stats, got '" + ckpt.module + "'");
    }
    SeenBank bank;
    for (std::size_t id : ckpt.meta_id_list("classes")) {
        const std::string key = std::to_string(id);
        ClassStats st;
        st.class_id = id;
        st.mu = ckpt.tensor("mu." + key).values;
        st.var = ckpt.tensor("var." + key).values;
        st.n = ckpt.meta_size("n." + key);
        bank.by_class[id] = std::move(st);
    }
    return bank;
}

Denoiser Pipeline::load_ldm() const {
    const Checkpoint ckpt = load_checkpoint(require_artifact("ldm", ".ckpt"));
    if (ckpt.module != "ldm") {
        throw ConfigError("checkpoint: expected module ldm, got '" + ckpt.module + "'");
    }
    DenoiserDims dims;
    dims.d_z = ckpt.meta_size("d_z");
    dims.d_f = ckpt.meta_size("d_f");
    dims.d_t = ckpt.meta_size("d_t");
    dims.d_c = ckpt.meta_size("d_c");
    dims.hidden = ckpt.meta_size("hidden");
    Rng scratch(0);
    Denoiser den(dims, ckpt.meta_size("T"), scratch);
    den.set_f_scale(ckpt.meta_double("f_scale"));
    load_into_params(ckpt, den.params());
    return den;
}

std::vector<UnseenDistribution> Pipeline::load_distribution_file(const std::string& stage) const {
    const Checkpoint ckpt = load_checkpoint(require_artifact(stage, ".ckpt"));
    if (ckpt.module != stage) {
        throw ConfigError("checkpoint: expected module " + stage + ", got '" + ckpt.module + "'");
    }
    std::vector<UnseenDistribution> dists;
    for (std::size_t id : ckpt.meta_id_list("classes")) {
        const std::string key = std::to_string(id);
        UnseenDistribution d;
        d.class_id = id;
        d.mu = ckpt.tensor("mu." + key).values;
        d.log_var = ckpt.tensor("log_var." + key).values;
        d.provenance = provenance_from_name(ckpt.meta_value("provenance." + key));
        d.neighbors = ckpt.meta_id_list("neighbors." + key);
        dists.push_back(std::move(d));
    }
    return dists;
}

std::vector<UnseenDistribution> Pipeline::load_distributions(bool inverted) const {
    return load_distribution_file(inverted ? "inverted" : "calib");
}

SampleGenerator Pipeline::sample_generator() const {
    auto net = std::make_shared<FeatureExtractor>(load_extractor());
    auto bank = std::make_shared<SeenBank>(load_stats());
    auto den = std::make_shared<Denoiser>(load_ldm());
    auto ae = std::make_shared<Autoencoder>(load_ae());
    auto sched = std::make_shared<NoiseSchedule>(run_.schedule());
    const std::size_t neighbors = run_.neighbors;
    const NeighborMode nmode = run_.neighbor_mode;
    InversionConfig ic = run_.inversion;
    ic.steps = run_.eval_invert_steps;
    SamplerConfig sc = run_.sampler;
    return [=](std::size_t class_id, const std::vector<std::vector<double>>& support_x,
               std::size_t count, std::uint64_t seed) {
        std::vector<std::vector<double>> support_features;
        for (const auto& x : support_x) support_features.push_back(net->extract(x));
        UnseenDistribution dist =
            calibrate_unseen(*bank, class_id, support_features, neighbors, nmode);
        InversionConfig inv = ic;
        inv.seed = derive_seed(seed, "invert");
        dist = invert_optimize(dist, support_x, *den, *ae, *sched, inv);
        SamplerConfig sampler = sc;
        sampler.seed = derive_seed(seed, "sample");
        return generate_unseen(dist, count, *den, *sched, *ae, sampler);
    };
}

std::vector<Episode> Pipeline::load_episodes() const {
    const Checkpoint ckpt = load_checkpoint(require_artifact("calib", ".ckpt"));
    const Dataset data = load_data();
    std::vector<Episode> episodes;
    for (std::size_t id : ckpt.meta_id_list("classes")) {
        Episode ep;
        ep.class_id = id;
        ep.seed = run_.seed;
        ep.support = ckpt.meta_id_list("support." + std::to_string(id));
        std::set<std::size_t> in_support(ep.support.begin(), ep.support.end());
        for (std::size_t idx : data.indices_of(id)) {
            if (!in_support.count(idx)) ep.query.push_back(idx);
        }
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

}  // namespace cdm
