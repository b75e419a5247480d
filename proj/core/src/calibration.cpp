#include "cdm/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "cdm/diffusion.hpp"
#include "cdm/errors.hpp"

namespace cdm {

namespace {

constexpr double kVarFloor = 1e-12;  // keeps log σ² finite for degenerate banks

void check_dim(const std::vector<double>& v, std::size_t d, const char* what) {
    if (v.size() != d) {
        throw ShapeError(std::string(what) + ": dimension " + std::to_string(v.size()) +
                         " does not match " + std::to_string(d));
    }
}

}  // namespace

const ClassStats& SeenBank::at(std::size_t class_id) const {
    auto it = by_class.find(class_id);
    if (it == by_class.end()) {
        throw MissingClassError("stats bank has no class " + std::to_string(class_id));
    }
    return it->second;
}

std::size_t SeenBank::dim() const {
    return by_class.empty() ? 0 : by_class.begin()->second.mu.size();
}

SeenBank compute_seen_stats(const std::vector<std::vector<double>>& features,
                            const std::vector<std::size_t>& labels,
                            bool substitute_bankwide_variance) {
    if (features.size() != labels.size() || features.empty()) {
        throw ShapeError("compute_seen_stats: " + std::to_string(features.size()) +
                         " features vs " + std::to_string(labels.size()) + " labels");
    }
    const std::size_t d = features[0].size();
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        check_dim(features[i], d, "compute_seen_stats");
        groups[labels[i]].push_back(i);
    }

    SeenBank bank;
    std::vector<std::size_t> starved;
    for (const auto& [cls, idx] : groups) {
        ClassStats st;
        st.class_id = cls;
        st.n = idx.size();
        st.mu.assign(d, 0.0);
        st.var.assign(d, 0.0);
        for (std::size_t i : idx) {
            for (std::size_t j = 0; j < d; ++j) st.mu[j] += features[i][j];
        }
        for (double& m : st.mu) m /= static_cast<double>(idx.size());
        if (idx.size() < 2) {
            if (!substitute_bankwide_variance) {
                throw InsufficientSamplesError("compute_seen_stats: class " +
                                               std::to_string(cls) + " has " +
                                               std::to_string(idx.size()) +
                                               " items; variance needs >= 2");
            }
            starved.push_back(cls);
        } else {
            for (std::size_t i : idx) {
                for (std::size_t j = 0; j < d; ++j) {
                    const double dlt = features[i][j] - st.mu[j];
                    st.var[j] += dlt * dlt;
                }
            }
            for (double& v : st.var) v /= static_cast<double>(idx.size() - 1);
        }
        bank.by_class.emplace(cls, std::move(st));
    }

    if (!starved.empty()) {
        std::vector<double> bankwide(d, 0.0);
        std::size_t contributors = 0;
        for (const auto& [cls, st] : bank.by_class) {
            if (st.n >= 2) {
                for (std::size_t j = 0; j < d; ++j) bankwide[j] += st.var[j];
                ++contributors;
            }
        }
        if (contributors == 0) {
            throw InsufficientSamplesError(
                "compute_seen_stats: no class has >= 2 items to substitute variance from");
        }
        for (double& v : bankwide) v /= static_cast<double>(contributors);
        for (std::size_t cls : starved) bank.by_class.at(cls).var = bankwide;
    }
    return bank;
}

std::vector<double> support_mean(const std::vector<std::vector<double>>& supports) {
    if (supports.empty()) throw EmptySupportError("support_mean: no support features");
    const std::size_t d = supports[0].size();
    std::vector<double> mu(d, 0.0);
    for (const auto& f : supports) {
        check_dim(f, d, "support_mean");
        for (std::size_t j = 0; j < d; ++j) mu[j] += f[j];
    }
    for (double& m : mu) m /= static_cast<double>(supports.size());
    return mu;
}

std::vector<std::size_t> nearest_seen_classes(const SeenBank& bank,
                                              const std::vector<double>& mu_c,
                                              std::size_t count) {
    if (bank.by_class.empty()) {
        throw MissingClassError("nearest_seen_classes: empty stats bank");
    }
    if (count < 1 || count > bank.size()) {
        throw DomainError("nearest_seen_classes: count " + std::to_string(count) +
                          " outside [1," + std::to_string(bank.size()) + "]");
    }
    check_dim(mu_c, bank.dim(), "nearest_seen_classes");
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(bank.size());
    for (const auto& [cls, st] : bank.by_class) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < mu_c.size(); ++j) {
            const double d = st.mu[j] - mu_c[j];
            d2 += d * d;
        }
        ranked.emplace_back(d2, cls);
    }
    std::sort(ranked.begin(), ranked.end());  // ties fall back to ascending id
    std::vector<std::size_t> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = ranked[i].second;
    return out;
}

std::vector<double> calibrate_variance(const SeenBank& bank,
                                       const std::vector<std::size_t>& neighbors) {
    if (neighbors.empty()) throw DomainError("calibrate_variance: empty neighbor set");
    const std::size_t d = bank.dim();
    std::vector<double> var(d, 0.0);
    for (std::size_t cls : neighbors) {
        const ClassStats& st = bank.at(cls);
        for (std::size_t j = 0; j < d; ++j) var[j] += st.var[j];
    }
    for (double& v : var) v /= static_cast<double>(neighbors.size());
    return var;
}

std::string provenance_name(StatsProvenance p) {
    return p == StatsProvenance::calibrated ? "calibrated" : "inverted";
}

StatsProvenance provenance_from_name(const std::string& name) {
    if (name == "calibrated") return StatsProvenance::calibrated;
    if (name == "inverted") return StatsProvenance::inverted;
    throw ConfigError("unknown provenance '" + name + "'");
}

std::vector<double> UnseenDistribution::variance() const {
    std::vector<double> v(log_var.size());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = std::exp(log_var[j]);
    return v;
}

std::vector<double> UnseenDistribution::sigma() const {
    std::vector<double> s(log_var.size());
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = std::exp(0.5 * log_var[j]);
    return s;
}

UnseenDistribution calibrate_unseen(const SeenBank& bank, std::size_t class_id,
                                    const std::vector<std::vector<double>>& support_features,
                                    std::size_t neighbor_count, NeighborMode mode) {
    UnseenDistribution dist;
    dist.class_id = class_id;
    dist.mu = support_mean(support_features);
    if (mode == NeighborMode::per_support) {
        std::set<std::size_t> pooled;
        for (const auto& f : support_features) {
            for (std::size_t cls : nearest_seen_classes(bank, f, neighbor_count)) {
                pooled.insert(cls);
            }
        }
        dist.neighbors.assign(pooled.begin(), pooled.end());
    } else {
        dist.neighbors = nearest_seen_classes(bank, dist.mu, neighbor_count);
    }
    const auto var = calibrate_variance(bank, dist.neighbors);
    dist.log_var.resize(var.size());
    for (std::size_t j = 0; j < var.size(); ++j) {
        dist.log_var[j] = std::log(std::max(var[j], kVarFloor));
    }
    dist.provenance = StatsProvenance::calibrated;
    return dist;
}

std::vector<double> sample_conditional(const UnseenDistribution& dist, Rng& rng) {
    const auto sig = dist.sigma();
    std::vector<double> f(dist.mu.size());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = dist.mu[j] + sig[j] * rng.normal();
    return f;
}

Tensor sample_conditional(const Tensor& mu, const Tensor& log_var, const Tensor& eps) {
    if (mu.rank() != 1 || log_var.rank() != 1 || mu.shape() != log_var.shape()) {
        throw ShapeError("sample_conditional: mu " + shape_str(mu.shape()) + " vs log_var " +
                         shape_str(log_var.shape()));
    }
    if (eps.rank() != 2 || eps.shape()[1] != mu.shape()[0]) {
        throw ShapeError("sample_conditional: eps " + shape_str(eps.shape()) +
                         " does not match dim " + std::to_string(mu.shape()[0]));
    }
    const std::size_t n = eps.shape()[0];
    Tensor sigma = exp(mul(log_var, 0.5));
    return add(repeat_rows(mu, n), mul(repeat_rows(sigma, n), eps));
}

void InversionConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("inversion: lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("inversion: betas must lie in [0,1)");
    }
    if (eps_adam <= 0.0) throw ConfigError("inversion: eps_adam must be > 0");
}

UnseenDistribution invert_optimize(const UnseenDistribution& dist,
                                   const std::vector<std::vector<double>>& supports,
                                   const Denoiser& denoiser, const Autoencoder& ae,
                                   const NoiseSchedule& sched, const InversionConfig& cfg) {
    cfg.validate();
    if (supports.empty()) throw EmptySupportError("invert_optimize: no support samples");
    const std::size_t d_f = denoiser.dims().d_f;
    const std::size_t d_z = denoiser.dims().d_z;
    check_dim(dist.mu, d_f, "invert_optimize");
    check_dim(dist.log_var, d_f, "invert_optimize");
    if (sched.T != denoiser.t_max()) {
        throw ConfigError("invert_optimize: schedule T=" + std::to_string(sched.T) +
                          " does not match denoiser t_max=" + std::to_string(denoiser.t_max()));
    }

    // Frozen encodings of the supports.
    std::vector<std::vector<double>> z0(supports.size());
    for (std::size_t k = 0; k < supports.size(); ++k) z0[k] = ae.encode_one(supports[k]);

    Tensor mu = Tensor::from_values({d_f}, dist.mu, true);
    Tensor log_var = Tensor::from_values({d_f}, dist.log_var, true);
    Adam opt({{"mu", mu}, {"log_var", log_var}}, {cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_adam});
    auto frozen = denoiser.params();

    Rng rng(cfg.seed);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t k = 0; k < supports.size(); ++k) {
            const std::size_t t = 1 + rng.below(sched.T);
            std::vector<double> eps_z(d_z), eps_f(d_f);
            for (double& e : eps_z) e = rng.normal();
            for (double& e : eps_f) e = rng.normal();
            Tensor z0_row = Tensor::from_values({1, d_z}, z0[k]);
            Tensor eps = Tensor::from_values({1, d_z}, eps_z);
            Tensor noise_f = Tensor::from_values({1, d_f}, eps_f);

            Tape tape;
            TapeScope scope(tape);
            Tensor f = sample_conditional(mu, log_var, noise_f);
            Tensor cond = denoiser.condition(f);
            Tensor loss = loss_simple(sched, denoiser, z0_row, {t}, cond, eps);
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw NonFiniteError("invert_optimize: non-finite loss at step " +
                                     std::to_string(step));
            }
            opt.zero_grads();
            for (auto& p : frozen) p.tensor.zero_grad();
            tape.backward(loss);
            opt.step();
        }
    }

    UnseenDistribution out;
    out.class_id = dist.class_id;
    out.mu = mu.values();
    out.log_var = log_var.values();
    out.provenance = StatsProvenance::inverted;
    out.neighbors = dist.neighbors;
    return out;
}

std::vector<std::vector<double>> generate_unseen(const UnseenDistribution& dist,
                                                 std::size_t count, const Denoiser& denoiser,
                                                 const NoiseSchedule& sched,
                                                 const Autoencoder& ae,
                                                 const SamplerConfig& sampler) {
    if (count < 1) throw ConfigError("generate_unseen: count must be >= 1");
    sampler.validate(sched.T);
    check_dim(dist.mu, denoiser.dims().d_f, "generate_unseen");

    Rng rng(sampler.seed);
    std::vector<std::vector<double>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto f = sample_conditional(dist, rng);
        const auto z0_hat = ddim_sample(denoiser, sched, f, sampler, rng);
        out.push_back(ae.decode_one(z0_hat));
    }
    return out;
}

}  // namespace cdm
