#include "cdm/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cdm/errors.hpp"

namespace cdm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Constant [n, d] tensor whose row i is filled with values[i].
Tensor tile_rows(const std::vector<double>& values, std::size_t d) {
    std::vector<double> flat(values.size() * d);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::fill(flat.begin() + i * d, flat.begin() + (i + 1) * d, values[i]);
    }
    return Tensor::from_values({values.size(), d}, std::move(flat));
}

std::vector<std::size_t> rows_with(const std::vector<std::size_t>& ts, bool want_t1) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        if ((ts[i] == 1) == want_t1) idx.push_back(i);
    }
    return idx;
}

// KL / NLL elementwise terms for one subset of rows; returns the summed term.
Tensor vlb_subset(const NoiseSchedule& sched, const Tensor& z0, const Tensor& z_t,
                  const std::vector<std::size_t>& ts, const Tensor& eps_hat_blocked,
                  const Tensor& v, const std::vector<std::size_t>& idx, bool t1_rows) {
    const std::size_t d = z0.shape()[1];
    Tensor z0_s = gather_rows(z0, idx);
    Tensor zt_s = gather_rows(z_t, idx);
    Tensor eh_s = gather_rows(eps_hat_blocked, idx);
    Tensor v_s = gather_rows(v, idx);

    std::vector<double> logb(idx.size()), logbt(idx.size()), c1(idx.size()), c2(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t t = ts[idx[i]];
        logb[i] = sched.log_beta[t - 1];
        logbt[i] = sched.log_posterior_var_clipped[t - 1];
        c1[i] = 1.0 / std::sqrt(sched.alpha[t - 1]);
        c2[i] = sched.beta[t - 1] / std::sqrt(1.0 - sched.alpha_bar[t - 1]);
    }
    Tensor logvar_p = add(mul(v_s, tile_rows(logb, d)), mul(sub(1.0, v_s), tile_rows(logbt, d)));
    Tensor mu_p = mul(sub(zt_s, mul(eh_s, tile_rows(c2, d))), tile_rows(c1, d));
    Tensor inv_var_p = exp(mul(logvar_p, -1.0));

    if (t1_rows) {
        // -log N(z_0; μ_θ, σ²_p) per dimension.
        Tensor sq = square(sub(z0_s, mu_p));
        return mul(sum(add(add(logvar_p, kLog2Pi), mul(sq, inv_var_p))), 0.5);
    }

    std::vector<double> q0(idx.size()), qt(idx.size()), q_logvar(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t t = ts[idx[i]];
        const double ab = sched.alpha_bar[t - 1];
        const double ab_prev = sched.alpha_bar_at(t - 1);
        q0[i] = std::sqrt(ab_prev) * sched.beta[t - 1] / (1.0 - ab);
        qt[i] = std::sqrt(sched.alpha[t - 1]) * (1.0 - ab_prev) / (1.0 - ab);
        q_logvar[i] = std::log(sched.posterior_var[t - 1]);
    }
    Tensor mu_q = add(mul(z0_s, tile_rows(q0, d)), mul(zt_s, tile_rows(qt, d)));
    Tensor logvar_q = tile_rows(q_logvar, d);
    // KL(q‖p) = ½(logσ²_p − logσ²_q + exp(logσ²_q − logσ²_p) + (μ_q−μ_p)²/σ²_p − 1)
    Tensor diff_log = sub(logvar_p, logvar_q);
    Tensor ratio = exp(mul(diff_log, -1.0));
    Tensor sq = square(sub(mu_q, mu_p));
    return mul(sum(add(add(diff_log, ratio), sub(mul(sq, inv_var_p), 1.0))), 0.5);
}

Tensor vlb_from_forward(const NoiseSchedule& sched, const Tensor& z0, const Tensor& z_t,
                        const std::vector<std::size_t>& ts, const Tensor& eps_hat,
                        const Tensor& v) {
    Tensor eps_blocked = detach(eps_hat);
    const auto idx_nll = rows_with(ts, true);
    const auto idx_kl = rows_with(ts, false);
    Tensor total = Tensor::scalar(0.0);
    if (!idx_kl.empty()) {
        total = add(total, vlb_subset(sched, z0, z_t, ts, eps_blocked, v, idx_kl, false));
    }
    if (!idx_nll.empty()) {
        total = add(total, vlb_subset(sched, z0, z_t, ts, eps_blocked, v, idx_nll, true));
    }
    return div(total, static_cast<double>(ts.size()));
}

void check_batch(const Tensor& z0, const std::vector<std::size_t>& ts, const Tensor& eps,
                 const char* op) {
    if (z0.rank() != 2 || eps.rank() != 2 || z0.shape() != eps.shape()) {
        throw ShapeError(std::string(op) + ": z0 " + shape_str(z0.shape()) + " vs eps " +
                         shape_str(eps.shape()));
    }
    if (ts.size() != z0.shape()[0]) {
        throw ShapeError(std::string(op) + ": " + std::to_string(ts.size()) +
                         " timesteps for batch " + std::to_string(z0.shape()[0]));
    }
}

}  // namespace

Tensor q_sample(const NoiseSchedule& sched, const Tensor& z0, std::size_t t, const Tensor& eps) {
    sched.check_t(t);
    if (z0.shape() != eps.shape()) {
        throw ShapeError("q_sample: z0 " + shape_str(z0.shape()) + " vs eps " +
                         shape_str(eps.shape()));
    }
    const double ab = sched.alpha_bar[t - 1];
    return add(mul(z0, std::sqrt(ab)), mul(eps, std::sqrt(1.0 - ab)));
}

Tensor q_sample_rows(const NoiseSchedule& sched, const Tensor& z0,
                     const std::vector<std::size_t>& ts, const Tensor& eps) {
    check_batch(z0, ts, eps, "q_sample_rows");
    const std::size_t d = z0.shape()[1];
    std::vector<double> a(ts.size()), b(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        sched.check_t(ts[i]);
        const double ab = sched.alpha_bar[ts[i] - 1];
        a[i] = std::sqrt(ab);
        b[i] = std::sqrt(1.0 - ab);
    }
    return add(mul(z0, tile_rows(a, d)), mul(eps, tile_rows(b, d)));
}

std::vector<double> iterated_noising(const NoiseSchedule& sched, const std::vector<double>& z0,
                                     std::size_t t, Rng& rng) {
    sched.check_t(t);
    std::vector<double> x = z0;
    for (std::size_t s = 1; s <= t; ++s) {
        const double keep = std::sqrt(1.0 - sched.beta[s - 1]);
        const double noise = std::sqrt(sched.beta[s - 1]);
        for (double& v : x) v = keep * v + noise * rng.normal();
    }
    return x;
}

Tensor loss_simple(const NoiseSchedule& sched, const Denoiser& den, const Tensor& z0,
                   const std::vector<std::size_t>& ts, const Tensor& cond, const Tensor& eps) {
    check_batch(z0, ts, eps, "loss_simple");
    Tensor z_t = q_sample_rows(sched, z0, ts, eps);
    auto [eps_hat, v] = den.forward(z_t, ts, cond);
    (void)v;
    return div(sum(square(sub(eps, eps_hat))), static_cast<double>(ts.size()));
}

Tensor loss_vlb(const NoiseSchedule& sched, const Denoiser& den, const Tensor& z0,
                const std::vector<std::size_t>& ts, const Tensor& cond, const Tensor& eps) {
    check_batch(z0, ts, eps, "loss_vlb");
    Tensor z_t = q_sample_rows(sched, z0, ts, eps);
    auto [eps_hat, v] = den.forward(z_t, ts, cond);
    return vlb_from_forward(sched, z0, z_t, ts, eps_hat, v);
}

DiffusionLosses loss_total(const NoiseSchedule& sched, const Denoiser& den, const Tensor& z0,
                           const std::vector<std::size_t>& ts, const Tensor& cond,
                           const Tensor& eps, double lambda) {
    check_batch(z0, ts, eps, "loss_total");
    if (lambda < 0.0) throw ConfigError("loss_total: lambda must be >= 0");
    Tensor z_t = q_sample_rows(sched, z0, ts, eps);
    auto [eps_hat, v] = den.forward(z_t, ts, cond);
    DiffusionLosses out;
    out.simple = div(sum(square(sub(eps, eps_hat))), static_cast<double>(ts.size()));
    out.vlb = vlb_from_forward(sched, z0, z_t, ts, eps_hat, v);
    out.total = add(out.simple, mul(out.vlb, lambda));
    return out;
}

double gaussian_kl(double mu_q, double var_q, double mu_p, double var_p) {
    return 0.5 * (std::log(var_p / var_q) + (var_q + (mu_q - mu_p) * (mu_q - mu_p)) / var_p -
                  1.0);
}

std::vector<double> train_ldm(Denoiser& den, const Dataset& data,
                              const std::vector<std::size_t>& seen_items, const SeenBank& bank,
                              const Autoencoder& ae, const NoiseSchedule& sched,
                              const DenoiserTrainConfig& cfg) {
    if (seen_items.empty()) throw ConfigError("train_ldm: no training items");
    if (sched.T != den.t_max()) {
        throw ConfigError("train_ldm: schedule T=" + std::to_string(sched.T) +
                          " does not match denoiser t_max=" + std::to_string(den.t_max()));
    }
    for (std::size_t idx : seen_items) {
        if (bank.by_class.find(data.labels[idx]) == bank.by_class.end()) {
            throw MissingClassError("train_ldm: class " + std::to_string(data.labels[idx]) +
                                    " has no stats entry");
        }
    }
    const std::size_t d_z = den.dims().d_z;
    const std::size_t d_f = den.dims().d_f;
    if (bank.dim() != d_f) {
        throw ShapeError("train_ldm: bank dim " + std::to_string(bank.dim()) +
                         " does not match d_f=" + std::to_string(d_f));
    }

    // Frozen encodings, computed once.
    std::vector<std::vector<double>> z0_all(seen_items.size());
    for (std::size_t i = 0; i < seen_items.size(); ++i) {
        z0_all[i] = ae.encode_one(data.items[seen_items[i]]);
    }

    // Per-dimension RMS of the conditioning draws, for the bounded embedding.
    double second_moment = 0.0;
    for (const auto& [id, st] : bank.by_class) {
        for (std::size_t j = 0; j < d_f; ++j) second_moment += st.mu[j] * st.mu[j] + st.var[j];
    }
    den.set_f_scale(std::max(std::sqrt(second_moment / double(bank.size() * d_f)), 1e-9));

    Rng rng(cfg.seed);
    Adam opt(den.params(), {0.0, 0.9, 0.999, 1e-8});
    std::vector<std::size_t> order(seen_items.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> losses;
    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t b = std::min(cfg.batch, order.size() - start);
            std::vector<double> z0_flat(b * d_z), eps_flat(b * d_z), f_flat(b * d_f);
            std::vector<std::size_t> ts(b);
            std::vector<std::uint8_t> null_mask(b);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t item = order[start + i];
                const auto& z0 = z0_all[item];
                std::copy(z0.begin(), z0.end(), z0_flat.begin() + i * d_z);
                ts[i] = 1 + rng.below(sched.T);
                for (std::size_t j = 0; j < d_z; ++j) eps_flat[i * d_z + j] = rng.normal();
                const ClassStats& st = bank.at(data.labels[seen_items[item]]);
                for (std::size_t j = 0; j < d_f; ++j) {
                    f_flat[i * d_f + j] = st.mu[j] + std::sqrt(st.var[j]) * rng.normal();
                }
                null_mask[i] = rng.uniform() < cfg.p_uncond ? 1 : 0;
            }
            Tensor z0 = Tensor::from_values({b, d_z}, std::move(z0_flat));
            Tensor eps = Tensor::from_values({b, d_z}, std::move(eps_flat));
            Tensor f = Tensor::from_values({b, d_f}, std::move(f_flat));

            Tape tape;
            TapeScope scope(tape);
            Tensor cond = den.mixed_condition(f, null_mask);
            DiffusionLosses loss = loss_total(sched, den, z0, ts, cond, eps, cfg.lambda_vlb);
            const double lv = loss.total.item();
            if (!std::isfinite(lv)) {
                throw NonFiniteError("train_ldm: non-finite loss at step " +
                                     std::to_string(global_step));
            }
            opt.zero_grads();
            tape.backward(loss.total);
            const double warm = cfg.warmup_steps == 0
                                    ? 1.0
                                    : std::min(1.0, static_cast<double>(global_step) /
                                                        static_cast<double>(cfg.warmup_steps));
            opt.set_lr(cfg.lr_target * warm);
            opt.step();
            losses.push_back(lv);
            ++global_step;
        }
    }
    return losses;
}

std::vector<double> cfg_predict(const Denoiser& den, const std::vector<double>& z_t,
                                std::size_t t, const std::vector<double>& f, double s_cfg) {
    if (s_cfg == 1.0) return den.denoise_one(z_t, t, f).first;
    auto uncond = den.denoise_one(z_t, t, std::nullopt).first;
    if (s_cfg == 0.0) return uncond;
    const auto cond = den.denoise_one(z_t, t, f).first;
    for (std::size_t i = 0; i < uncond.size(); ++i) {
        uncond[i] += s_cfg * (cond[i] - uncond[i]);
    }
    return uncond;
}

std::vector<double> GuidedDenoiser::predict(const std::vector<double>& z_t, std::size_t t) const {
    return cfg_predict(*den_, z_t, t, f_, s_cfg_);
}

std::vector<double> ddim_sample(const EpsModel& model, const NoiseSchedule& sched,
                                const SamplerConfig& cfg, std::size_t d_z, Rng& rng) {
    cfg.validate(sched.T);
    const auto ts = ddim_timesteps(sched.T, cfg.steps);
    std::vector<double> z = rng.normal_vec(d_z);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const std::size_t t = ts[i];
        const std::size_t t_next = i + 1 < ts.size() ? ts[i + 1] : 0;
        const double ab = sched.alpha_bar_at(t);
        const double ab_next = sched.alpha_bar_at(t_next);
        const std::vector<double> eps_hat = model.predict(z, t);
        if (eps_hat.size() != d_z) {
            throw ShapeError("ddim_sample: model returned " + std::to_string(eps_hat.size()) +
                             " dims, expected " + std::to_string(d_z));
        }
        double sigma = 0.0;
        if (cfg.eta > 0.0 && t_next > 0) {
            sigma = cfg.eta * std::sqrt((1.0 - ab_next) / (1.0 - ab)) *
                    std::sqrt(1.0 - ab / ab_next);
        }
        const double dir = std::sqrt(std::max(0.0, 1.0 - ab_next - sigma * sigma));
        for (std::size_t j = 0; j < d_z; ++j) {
            const double x0 = (z[j] - std::sqrt(1.0 - ab) * eps_hat[j]) / std::sqrt(ab);
            z[j] = std::sqrt(ab_next) * x0 + dir * eps_hat[j];
        }
        if (sigma > 0.0) {
            for (std::size_t j = 0; j < d_z; ++j) z[j] += sigma * rng.normal();
        }
    }
    return z;
}

std::vector<double> ddim_sample(const Denoiser& den, const NoiseSchedule& sched,
                                const std::vector<double>& f, const SamplerConfig& cfg,
                                Rng& rng) {
    GuidedDenoiser guided(den, f, cfg.s_cfg);
    return ddim_sample(guided, sched, cfg, den.dims().d_z, rng);
}

}  // namespace cdm
