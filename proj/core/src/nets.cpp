#include "cdm/nets.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "cdm/errors.hpp"

namespace cdm {

namespace {

Tensor he_weight(std::size_t rows, std::size_t cols, Rng& rng) {
    std::vector<double> v(rows * cols);
    const double sd = std::sqrt(2.0 / static_cast<double>(rows));
    for (double& x : v) x = rng.normal() * sd;
    return Tensor::from_values({rows, cols}, std::move(v), true);
}

Tensor zero_param(Shape shape) {
    return Tensor::zeros(std::move(shape), true);
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows, std::size_t width,
                   const char* what) {
    std::vector<double> flat;
    flat.reserve(rows.size() * width);
    for (const auto& r : rows) {
        if (r.size() != width) {
            throw ShapeError(std::string(what) + ": row of length " + std::to_string(r.size()) +
                             " does not match width " + std::to_string(width));
        }
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor::from_values({rows.size(), width}, std::move(flat));
}

}  // namespace

std::vector<double> time_embedding(std::size_t t, std::size_t d_t) {
    if (d_t < 2 || d_t % 2 != 0) {
        throw ConfigError("time_embedding: d_t must be even and >= 2");
    }
    const std::size_t half = d_t / 2;
    std::vector<double> emb(d_t);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        const double arg = static_cast<double>(t) * freq;
        emb[i] = std::cos(arg);
        emb[half + i] = std::sin(arg);
    }
    return emb;
}

Tensor time_embedding_rows(const std::vector<std::size_t>& ts, std::size_t d_t) {
    std::vector<double> flat;
    flat.reserve(ts.size() * d_t);
    for (std::size_t t : ts) {
        const auto emb = time_embedding(t, d_t);
        flat.insert(flat.end(), emb.begin(), emb.end());
    }
    return Tensor::from_values({ts.size(), d_t}, std::move(flat));
}

// ---- FeatureExtractor -------------------------------------------------------

FeatureExtractor::FeatureExtractor(std::size_t d_x, std::size_t hidden, std::size_t d_f,
                                   std::size_t n_classes, Rng& rng)
    : d_x_(d_x), hidden_(hidden), d_f_(d_f), n_classes_(n_classes) {
    w1_ = he_weight(d_x, hidden, rng);
    b1_ = zero_param({hidden});
    w2_ = he_weight(hidden, d_f, rng);
    b2_ = zero_param({d_f});
    // Zero head: untrained logits are exactly 0, so CE starts at ln(n_classes).
    w3_ = zero_param({d_f, n_classes});
    b3_ = zero_param({n_classes});
}

Tensor FeatureExtractor::features(const Tensor& x) const {
    if (x.rank() != 2 || x.shape()[1] != d_x_) {
        throw ShapeError("extractor: input " + shape_str(x.shape()) + " does not match d_x=" +
                         std::to_string(d_x_));
    }
    Tensor h1 = silu(affine(x, w1_, b1_));
    return silu(affine(h1, w2_, b2_));
}

Tensor FeatureExtractor::logits_from_features(const Tensor& f) const {
    return affine(f, w3_, b3_);
}

Tensor FeatureExtractor::logits(const Tensor& x) const {
    return logits_from_features(features(x));
}

std::vector<double> FeatureExtractor::extract(const std::vector<double>& x) const {
    if (x.size() != d_x_) {
        throw ShapeError("extractor: input of length " + std::to_string(x.size()) +
                         " does not match d_x=" + std::to_string(d_x_));
    }
    Tensor row = Tensor::from_values({1, d_x_}, x);
    return features(row).values();
}

std::vector<NamedTensor> FeatureExtractor::params() const {
    return {{"extractor.w1", w1_}, {"extractor.b1", b1_}, {"extractor.w2", w2_},
            {"extractor.b2", b2_}, {"extractor.w3", w3_}, {"extractor.b3", b3_}};
}

// ---- Autoencoder ------------------------------------------------------------

Autoencoder::Autoencoder(AeMode mode, std::size_t d_x, std::size_t d_z, Rng* rng)
    : mode_(mode), d_x_(d_x), d_z_(d_z) {
    if (mode_ == AeMode::identity) {
        if (d_z != d_x) {
            throw ConfigError("autoencoder: identity mode requires d_z == d_x, got d_z=" +
                              std::to_string(d_z) + " d_x=" + std::to_string(d_x));
        }
        return;
    }
    if (!rng) throw ConfigError("autoencoder: linear mode needs an rng for initialization");
    we_ = he_weight(d_x, d_z, *rng);
    be_ = zero_param({d_z});
    wd_ = he_weight(d_z, d_x, *rng);
    bd_ = zero_param({d_x});
}

Tensor Autoencoder::encode(const Tensor& x) const {
    if (x.rank() != 2 || x.shape()[1] != d_x_) {
        throw ShapeError("encode: input " + shape_str(x.shape()) + " does not match d_x=" +
                         std::to_string(d_x_));
    }
    if (mode_ == AeMode::identity) return x;
    return affine(x, we_, be_);
}

Tensor Autoencoder::decode(const Tensor& z) const {
    if (z.rank() != 2 || z.shape()[1] != d_z_) {
        throw ShapeError("decode: input " + shape_str(z.shape()) + " does not match d_z=" +
                         std::to_string(d_z_));
    }
    if (mode_ == AeMode::identity) return z;
    return affine(z, wd_, bd_);
}

std::vector<double> Autoencoder::encode_one(const std::vector<double>& x) const {
    return encode(Tensor::from_values({1, d_x_}, x)).values();
}

std::vector<double> Autoencoder::decode_one(const std::vector<double>& z) const {
    return decode(Tensor::from_values({1, d_z_}, z)).values();
}

std::vector<NamedTensor> Autoencoder::params() const {
    if (mode_ == AeMode::identity) return {};
    return {{"ae.we", we_}, {"ae.be", be_}, {"ae.wd", wd_}, {"ae.bd", bd_}};
}

// ---- Denoiser ---------------------------------------------------------------

Denoiser::Denoiser(DenoiserDims dims, std::size_t t_max, Rng& rng)
    : dims_(dims), t_max_(t_max) {
    if (t_max_ < 1) throw ConfigError("denoiser: t_max must be >= 1");
    wc_ = he_weight(dims_.d_f, dims_.d_c, rng);
    bc_ = zero_param({dims_.d_c});
    std::vector<double> u(dims_.d_c);
    for (double& x : u) x = rng.normal() * 0.02;
    u_null_ = Tensor::from_values({dims_.d_c}, std::move(u), true);

    const std::size_t d_in = dims_.d_z + dims_.d_t + dims_.d_c;
    w1_ = he_weight(d_in, dims_.hidden, rng);
    b1_ = zero_param({dims_.hidden});
    w2_ = he_weight(dims_.hidden, dims_.hidden, rng);
    b2_ = zero_param({dims_.hidden});
    // Zero head: ε̂ = 0 and v = 0 at init, so the starting model variance is β̃.
    w3_ = zero_param({dims_.hidden, 2 * dims_.d_z});
    b3_ = zero_param({2 * dims_.d_z});
}

void Denoiser::set_f_scale(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw ConfigError("denoiser: f_scale must be positive and finite");
    }
    f_scale_ = scale;
}

Tensor Denoiser::condition(const Tensor& f) const {
    if (f.rank() != 2 || f.shape()[1] != dims_.d_f) {
        throw ShapeError("condition: input " + shape_str(f.shape()) + " does not match d_f=" +
                         std::to_string(dims_.d_f));
    }
    return tanh(affine(mul(f, 1.0 / f_scale_), wc_, bc_));
}

Tensor Denoiser::null_condition(std::size_t n) const {
    return repeat_rows(u_null_, n);
}

Tensor Denoiser::mixed_condition(const Tensor& f, const std::vector<std::uint8_t>& null_mask) const {
    const std::size_t n = f.shape()[0];
    if (null_mask.size() != n) {
        throw ShapeError("mixed_condition: mask length " + std::to_string(null_mask.size()) +
                         " does not match batch " + std::to_string(n));
    }
    const bool any_null = std::any_of(null_mask.begin(), null_mask.end(),
                                      [](std::uint8_t m) { return m != 0; });
    if (!any_null) return condition(f);
    const bool all_null = std::all_of(null_mask.begin(), null_mask.end(),
                                      [](std::uint8_t m) { return m != 0; });
    if (all_null) return null_condition(n);

    std::vector<double> keep(n * dims_.d_c), drop(n * dims_.d_c);
    for (std::size_t i = 0; i < n; ++i) {
        const double k = null_mask[i] ? 0.0 : 1.0;
        std::fill(keep.begin() + i * dims_.d_c, keep.begin() + (i + 1) * dims_.d_c, k);
        std::fill(drop.begin() + i * dims_.d_c, drop.begin() + (i + 1) * dims_.d_c, 1.0 - k);
    }
    Tensor keep_m = Tensor::from_values({n, dims_.d_c}, std::move(keep));
    Tensor drop_m = Tensor::from_values({n, dims_.d_c}, std::move(drop));
    return add(mul(condition(f), keep_m), mul(null_condition(n), drop_m));
}

std::pair<Tensor, Tensor> Denoiser::forward(const Tensor& z_t, const std::vector<std::size_t>& ts,
                                            const Tensor& cond) const {
    if (z_t.rank() != 2 || z_t.shape()[1] != dims_.d_z) {
        throw ShapeError("denoiser: z_t " + shape_str(z_t.shape()) + " does not match d_z=" +
                         std::to_string(dims_.d_z));
    }
    const std::size_t n = z_t.shape()[0];
    if (ts.size() != n) {
        throw ShapeError("denoiser: " + std::to_string(ts.size()) + " timesteps for batch " +
                         std::to_string(n));
    }
    for (std::size_t t : ts) {
        if (t < 1 || t > t_max_) {
            throw DomainError("denoiser: timestep " + std::to_string(t) + " outside [1," +
                              std::to_string(t_max_) + "]");
        }
    }
    if (cond.rank() != 2 || cond.shape()[0] != n || cond.shape()[1] != dims_.d_c) {
        throw ShapeError("denoiser: cond " + shape_str(cond.shape()) + " does not match [" +
                         std::to_string(n) + "," + std::to_string(dims_.d_c) + "]");
    }
    Tensor in = concat({z_t, time_embedding_rows(ts, dims_.d_t), cond}, 1);
    Tensor h1 = silu(affine(in, w1_, b1_));
    Tensor h2 = silu(affine(h1, w2_, b2_));
    Tensor out = affine(h2, w3_, b3_);
    return {slice(out, 1, 0, dims_.d_z), slice(out, 1, dims_.d_z, dims_.d_z)};
}

std::pair<std::vector<double>, std::vector<double>> Denoiser::denoise_one(
    const std::vector<double>& z_t, std::size_t t,
    const std::optional<std::vector<double>>& f) const {
    Tensor z = Tensor::from_values({1, dims_.d_z}, z_t);
    Tensor cond = f ? condition(Tensor::from_values({1, dims_.d_f}, *f)) : null_condition(1);
    auto [eps, v] = forward(z, {t}, cond);
    return {eps.values(), v.values()};
}

std::vector<NamedTensor> Denoiser::params() const {
    return {{"denoiser.wc", wc_}, {"denoiser.bc", bc_}, {"denoiser.u_null", u_null_},
            {"denoiser.w1", w1_}, {"denoiser.b1", b1_}, {"denoiser.w2", w2_},
            {"denoiser.b2", b2_}, {"denoiser.w3", w3_}, {"denoiser.b3", b3_}};
}

// ---- training loops ----------------------------------------------------------

std::vector<double> train_extractor(FeatureExtractor& net,
                                    const std::vector<std::vector<double>>& xs,
                                    const std::vector<std::size_t>& labels,
                                    const ExtractorTrainConfig& cfg) {
    if (xs.size() != labels.size() || xs.empty()) {
        throw ShapeError("train_extractor: " + std::to_string(xs.size()) + " items vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::set<std::size_t> distinct(labels.begin(), labels.end());
    if (distinct.size() < 2) {
        throw ConfigError("train_extractor: need at least 2 classes, got " +
                          std::to_string(distinct.size()));
    }
    for (std::size_t y : labels) {
        if (y >= net.n_classes()) {
            throw DomainError("train_extractor: label " + std::to_string(y) +
                              " outside [0," + std::to_string(net.n_classes()) + ")");
        }
    }

    Rng rng(cfg.seed);
    Adam opt(net.params(), {cfg.lr, 0.9, 0.999, 1e-8});
    const std::size_t n = xs.size(), c = net.n_classes();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> epoch_losses;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t b = std::min(cfg.batch, n - start);
            std::vector<double> xflat(b * net.d_x());
            std::vector<double> onehot(b * c, 0.0);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t idx = order[start + i];
                std::copy(xs[idx].begin(), xs[idx].end(), xflat.begin() + i * net.d_x());
                onehot[i * c + labels[idx]] = 1.0;
            }
            Tensor x = Tensor::from_values({b, net.d_x()}, std::move(xflat));
            Tensor y = Tensor::from_values({b, c}, std::move(onehot));

            Tape tape;
            TapeScope scope(tape);
            Tensor loss = mul(div(sum(mul(log_softmax(net.logits(x)), y)),
                                  static_cast<double>(b)),
                              -1.0);
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw NonFiniteError("train_extractor: non-finite loss at epoch " +
                                     std::to_string(epoch));
            }
            opt.zero_grads();
            tape.backward(loss);
            opt.step();
            total += lv;
            ++batches;
        }
        epoch_losses.push_back(total / static_cast<double>(batches));
    }
    return epoch_losses;
}

std::vector<std::vector<double>> extract_features(const FeatureExtractor& net,
                                                  const std::vector<std::vector<double>>& xs) {
    Tensor f = net.features(rows_tensor(xs, net.d_x(), "extract_features"));
    std::vector<std::vector<double>> out(xs.size());
    const auto& fv = f.values();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out[i].assign(fv.begin() + i * net.d_f(), fv.begin() + (i + 1) * net.d_f());
    }
    return out;
}

std::vector<double> extract_feature(const FeatureExtractor& net, const std::vector<double>& x) {
    return net.extract(x);
}

std::vector<double> train_autoencoder(Autoencoder& ae,
                                      const std::vector<std::vector<double>>& xs,
                                      const AeTrainConfig& cfg) {
    if (ae.mode() == AeMode::identity) {
        throw ModeError("train_autoencoder: identity mode has no trainable parameters");
    }
    if (xs.empty()) throw ShapeError("train_autoencoder: empty dataset");

    Rng rng(cfg.seed);
    Adam opt(ae.params(), {cfg.lr, 0.9, 0.999, 1e-8});
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> epoch_losses;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch) {
            const std::size_t b = std::min(cfg.batch, n - start);
            std::vector<double> xflat(b * ae.d_x());
            for (std::size_t i = 0; i < b; ++i) {
                std::copy(xs[order[start + i]].begin(), xs[order[start + i]].end(),
                          xflat.begin() + i * ae.d_x());
            }
            Tensor x = Tensor::from_values({b, ae.d_x()}, std::move(xflat));

            Tape tape;
            TapeScope scope(tape);
            Tensor loss = mean(square(sub(ae.decode(ae.encode(x)), x)));
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw NonFiniteError("train_autoencoder: non-finite loss at epoch " +
                                     std::to_string(epoch));
            }
            opt.zero_grads();
            tape.backward(loss);
            opt.step();
            total += lv;
            ++batches;
        }
        epoch_losses.push_back(total / static_cast<double>(batches));
    }
    return epoch_losses;
}

}  // namespace cdm
