#include "cdm/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cdm/errors.hpp"
#include "cdm/optim.hpp"
#include "cdm/rng.hpp"
#include "cdm/tensor.hpp"

namespace cdm {

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

Eigen::MatrixXd to_matrix(const std::vector<double>& cov, std::size_t d) {
    Eigen::MatrixXd m(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i),
                                              static_cast<Eigen::Index>(j)) = cov[i * d + j];
    return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

GaussianFit fit_gaussian(const std::vector<std::vector<double>>& features, CovMode mode) {
    if (features.size() < 2) {
        throw InsufficientSamplesError("fit_gaussian: need >= 2 samples, got " +
                                       std::to_string(features.size()));
    }
    const std::size_t n = features.size(), d = features[0].size();
    GaussianFit fit;
    fit.mode = mode;
    fit.n = n;
    fit.mean.assign(d, 0.0);
    for (const auto& f : features) {
        if (f.size() != d) throw ShapeError("fit_gaussian: ragged feature rows");
        for (std::size_t j = 0; j < d; ++j) fit.mean[j] += f[j];
    }
    for (double& m : fit.mean) m /= static_cast<double>(n);

    if (mode == CovMode::diagonal) {
        fit.cov.assign(d, 0.0);
        for (const auto& f : features) {
            for (std::size_t j = 0; j < d; ++j) {
                const double dv = f[j] - fit.mean[j];
                fit.cov[j] += dv * dv;
            }
        }
        for (double& v : fit.cov) v /= static_cast<double>(n - 1);
    } else {
        fit.cov.assign(d * d, 0.0);
        for (const auto& f : features) {
            for (std::size_t i = 0; i < d; ++i) {
                const double di = f[i] - fit.mean[i];
                for (std::size_t j = i; j < d; ++j) {
                    fit.cov[i * d + j] += di * (f[j] - fit.mean[j]);
                }
            }
        }
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = i; j < d; ++j) {
                fit.cov[i * d + j] /= static_cast<double>(n - 1);
                fit.cov[j * d + i] = fit.cov[i * d + j];
            }
        }
    }
    return fit;
}

double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    if (a.mode != b.mode) throw ModeError("frechet_distance: mixed covariance modes");
    if (a.dim() != b.dim()) {
        throw ShapeError("frechet_distance: dimension " + std::to_string(a.dim()) + " vs " +
                         std::to_string(b.dim()));
    }
    const std::size_t d = a.dim();
    double mean_term = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double dm = a.mean[j] - b.mean[j];
        mean_term += dm * dm;
    }
    if (a.mode == CovMode::diagonal) {
        double cov_term = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double ds = std::sqrt(std::max(0.0, a.cov[j])) -
                              std::sqrt(std::max(0.0, b.cov[j]));
            cov_term += ds * ds;
        }
        return mean_term + cov_term;
    }
    const Eigen::MatrixXd ma = to_matrix(a.cov, d);
    const Eigen::MatrixXd mb = to_matrix(b.cov, d);
    const Eigen::MatrixXd sa = psd_sqrt(ma);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sa * mb * sa);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    return std::max(0.0, mean_term + ma.trace() + mb.trace() - 2.0 * tr_sqrt);
}

double diversity_score(const std::vector<std::vector<std::vector<double>>>& per_class_features) {
    if (per_class_features.empty()) {
        throw InsufficientSamplesError("diversity_score: no classes");
    }
    double total = 0.0;
    for (const auto& cls : per_class_features) {
        if (cls.size() < 2) {
            throw InsufficientSamplesError("diversity_score: class with " +
                                           std::to_string(cls.size()) + " items; need >= 2");
        }
        double pair_sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < cls.size(); ++i) {
            for (std::size_t j = i + 1; j < cls.size(); ++j) {
                double d2 = 0.0;
                for (std::size_t k = 0; k < cls[i].size(); ++k) {
                    const double dv = cls[i][k] - cls[j][k];
                    d2 += dv * dv;
                }
                pair_sum += std::sqrt(d2);
                ++pairs;
            }
        }
        total += pair_sum / static_cast<double>(pairs);
    }
    return total / static_cast<double>(per_class_features.size());
}

namespace {

// Zero-init logistic-regression head trained full-batch on frozen features.
double head_accuracy(const std::vector<std::vector<double>>& train_feats,
                     const std::vector<std::size_t>& train_labels,
                     const std::vector<std::vector<double>>& query_feats,
                     const std::vector<std::size_t>& query_labels, std::size_t n_way,
                     std::size_t steps, double lr) {
    const std::size_t d = train_feats[0].size();
    const std::size_t n = train_feats.size();
    std::vector<double> xflat, onehot(n * n_way, 0.0);
    xflat.reserve(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        xflat.insert(xflat.end(), train_feats[i].begin(), train_feats[i].end());
        onehot[i * n_way + train_labels[i]] = 1.0;
    }
    Tensor x = Tensor::from_values({n, d}, std::move(xflat));
    Tensor y = Tensor::from_values({n, n_way}, std::move(onehot));
    Tensor w = Tensor::zeros({d, n_way}, true);
    Tensor b = Tensor::zeros({n_way}, true);
    Adam opt({{"head.w", w}, {"head.b", b}}, {lr, 0.9, 0.999, 1e-8});
    for (std::size_t s = 0; s < steps; ++s) {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = mul(div(sum(mul(log_softmax(affine(x, w, b)), y)),
                              static_cast<double>(n)),
                          -1.0);
        opt.zero_grads();
        tape.backward(loss);
        opt.step();
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < query_feats.size(); ++i) {
        Tensor q = Tensor::from_values({1, d}, query_feats[i]);
        const auto logits = affine(q, w, b).values();
        const std::size_t pred = static_cast<std::size_t>(
            std::max_element(logits.begin(), logits.end()) - logits.begin());
        if (pred == query_labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(query_feats.size());
}

}  // namespace

double few_shot_classification(const Dataset& data, const SplitSpec& split,
                               const FeatureExtractor& extractor,
                               const SampleGenerator& generator, const FewShotConfig& cfg) {
    if (split.unseen.size() < cfg.n_way) {
        throw ConfigError("few_shot: n_way=" + std::to_string(cfg.n_way) + " with only " +
                          std::to_string(split.unseen.size()) + " unseen classes");
    }
    if (cfg.episodes < 1) throw ConfigError("few_shot: episodes must be >= 1");

    double acc_sum = 0.0;
    for (std::size_t e = 0; e < cfg.episodes; ++e) {
        const std::uint64_t ep_seed = derive_seed(cfg.seed, "fewshot-episode-" +
                                                                std::to_string(e));
        std::vector<std::size_t> ways = split.unseen;
        Rng way_rng(derive_seed(ep_seed, "ways"));
        way_rng.shuffle(ways);
        ways.resize(cfg.n_way);
        std::sort(ways.begin(), ways.end());

        std::vector<std::vector<double>> train_feats, query_feats;
        std::vector<std::size_t> train_labels, query_labels;
        for (std::size_t w = 0; w < ways.size(); ++w) {
            const std::size_t c = ways[w];
            const Episode ep = sample_episode(data, split, c, cfg.shots, ep_seed);
            std::vector<std::vector<double>> support_x;
            for (std::size_t idx : ep.support) support_x.push_back(data.items[idx]);
            for (const auto& x : support_x) {
                train_feats.push_back(extractor.extract(x));
                train_labels.push_back(w);
            }
            if (cfg.fakes_per_class > 0) {
                const auto fakes = generator(c, support_x, cfg.fakes_per_class,
                                             derive_seed(ep_seed, "gen-" + std::to_string(c)));
                for (const auto& x : fakes) {
                    train_feats.push_back(extractor.extract(x));
                    train_labels.push_back(w);
                }
            }
            for (std::size_t idx : ep.query) {
                query_feats.push_back(extractor.extract(data.items[idx]));
                query_labels.push_back(w);
            }
        }
        acc_sum += head_accuracy(train_feats, train_labels, query_feats, query_labels,
                                 cfg.n_way, cfg.head_steps, cfg.head_lr);
    }
    return acc_sum / static_cast<double>(cfg.episodes);
}

MetricReport make_report(const std::vector<std::pair<std::size_t, std::pair<double, double>>>&
                             per_class_frechet_diversity,
                         std::optional<double> few_shot_accuracy,
                         const std::string& config_hash, std::uint64_t seed) {
    if (per_class_frechet_diversity.empty()) {
        throw DomainError("make_report: no per-class entries");
    }
    MetricReport report;
    report.config_hash = config_hash;
    report.seed = seed;
    report.few_shot_accuracy = few_shot_accuracy;
    double fsum = 0.0, dsum = 0.0;
    for (const auto& [cls, fd] : per_class_frechet_diversity) {
        report.per_class.push_back({std::to_string(cls), fd.first, fd.second});
        fsum += fd.first;
        dsum += fd.second;
    }
    const double n = static_cast<double>(per_class_frechet_diversity.size());
    report.aggregate = {"aggregate", fsum / n, dsum / n};
    return report;
}

std::string report_csv(const MetricReport& report) {
    std::ostringstream out;
    out << "cdm.metrics.v1\n";
    out << "seed," << report.seed << "\n";
    out << "config," << report.config_hash << "\n";
    out << "class,frechet,diversity\n";
    for (const auto& row : report.per_class) {
        out << row.name << "," << fmt17(row.frechet) << "," << fmt17(row.diversity) << "\n";
    }
    out << report.aggregate.name << "," << fmt17(report.aggregate.frechet) << ","
        << fmt17(report.aggregate.diversity) << "\n";
    if (report.few_shot_accuracy) {
        out << "few_shot_accuracy," << fmt17(*report.few_shot_accuracy) << ",\n";
    }
    return out.str();
}

std::string report_text(const MetricReport& report) {
    std::ostringstream out;
    out << "metric report (config " << report.config_hash << ", seed " << report.seed << ")\n";
    for (const auto& row : report.per_class) {
        out << "  class " << row.name << ": frechet=" << fmt17(row.frechet)
            << " diversity=" << fmt17(row.diversity) << "\n";
    }
    out << "  aggregate: frechet=" << fmt17(report.aggregate.frechet)
        << " diversity=" << fmt17(report.aggregate.diversity) << "\n";
    if (report.few_shot_accuracy) {
        out << "  few-shot accuracy: " << fmt17(*report.few_shot_accuracy) << "\n";
    }
    return out.str();
}

}  // namespace cdm
