#include "cdm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cdm/errors.hpp"
#include "cdm/rng.hpp"

namespace cdm {

namespace {

double apply_nl(Nonlinearity nl, double v) {
    switch (nl) {
        case Nonlinearity::identity: return v;
        case Nonlinearity::tanh_warp: return std::tanh(v);
        case Nonlinearity::cubic: return v * v * v;
    }
    throw ConfigError("unknown nonlinearity tag");
}

// `rows` orthonormal d-vectors via Gram-Schmidt on Gaussian draws.
std::vector<double> orthonormal_rows(std::size_t rows, std::size_t d, Rng& rng) {
    std::vector<double> m(rows * d);
    for (double& x : m) x = rng.normal();
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = &m[r * d];
        for (std::size_t p = 0; p < r; ++p) {
            const double* prev = &m[p * d];
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += row[j] * prev[j];
            for (std::size_t j = 0; j < d; ++j) row[j] -= dot * prev[j];
        }
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += row[j] * row[j];
        norm = std::sqrt(norm);
        if (norm < 1e-9) throw NonFiniteError("orthonormal_rows: degenerate basis draw");
        for (std::size_t j = 0; j < d; ++j) row[j] /= norm;
    }
    return m;
}

}  // namespace

Nonlinearity nonlinearity_from_name(const std::string& name) {
    if (name == "identity") return Nonlinearity::identity;
    if (name == "tanh") return Nonlinearity::tanh_warp;
    if (name == "cubic") return Nonlinearity::cubic;
    throw ConfigError("unknown nonlinearity '" + name + "' (identity|tanh|cubic)");
}

std::string nonlinearity_name(Nonlinearity nl) {
    switch (nl) {
        case Nonlinearity::identity: return "identity";
        case Nonlinearity::tanh_warp: return "tanh";
        case Nonlinearity::cubic: return "cubic";
    }
    return "?";
}

void SyntheticSpec::validate() const {
    if (n_classes < 4) throw ConfigError("synthetic: n_classes must be >= 4");
    if (n_per_class < 8) throw ConfigError("synthetic: n_per_class must be >= 8");
    if (d_x < 1) throw ConfigError("synthetic: d_x must be >= 1");
    if (!(scale_min >= 0.0 && scale_min <= scale_max)) {
        throw ConfigError("synthetic: need 0 <= scale_min <= scale_max");
    }
    if (anchor_dim > d_x) throw ConfigError("synthetic: anchor_dim must be <= d_x");
    auto check_rows = [&](const std::vector<std::vector<double>>& rows, const char* what) {
        if (rows.empty()) return;
        if (rows.size() != n_classes) {
            throw ConfigError(std::string("synthetic: explicit ") + what + " count " +
                              std::to_string(rows.size()) + " != n_classes");
        }
        for (const auto& r : rows) {
            if (r.size() != d_x) {
                throw ConfigError(std::string("synthetic: explicit ") + what +
                                  " entry does not match d_x");
            }
        }
    };
    check_rows(anchors, "anchors");
    check_rows(scales, "scales");
    if (!anchors.empty()) {
        for (std::size_t a = 0; a < anchors.size(); ++a) {
            for (std::size_t b = a + 1; b < anchors.size(); ++b) {
                if (anchors[a] == anchors[b]) {
                    throw ConfigError("synthetic: anchors " + std::to_string(a) + " and " +
                                      std::to_string(b) + " coincide");
                }
            }
        }
    }
}

std::vector<std::size_t> Dataset::indices_of(std::size_t class_id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == class_id) out.push_back(i);
    }
    return out;
}

GeneratedDataset generate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t c = spec.n_classes, d = spec.d_x;

    GroundTruth truth;
    truth.nonlinearity = spec.nonlinearity;

    if (!spec.anchors.empty()) {
        truth.anchors = spec.anchors;
    } else {
        Rng rng(derive_seed(spec.seed, "anchors"));
        const std::size_t da = spec.anchor_dim == 0 ? d : spec.anchor_dim;
        std::vector<double> basis;
        if (da < d) basis = orthonormal_rows(da, d, rng);
        truth.anchors.resize(c);
        for (auto& a : truth.anchors) {
            a.assign(d, 0.0);
            if (da == d) {
                for (double& v : a) v = rng.normal() * spec.anchor_spread;
            } else {
                for (std::size_t r = 0; r < da; ++r) {
                    double u = rng.normal() * spec.anchor_spread;
                    for (std::size_t j = 0; j < d; ++j) a[j] += u * basis[r * d + j];
                }
            }
        }
    }
    if (!spec.scales.empty()) {
        truth.scales = spec.scales;
    } else {
        Rng rng(derive_seed(spec.seed, "scales"));
        truth.scales.resize(c);
        for (auto& s : truth.scales) {
            s.resize(d);
            for (double& v : s) v = spec.scale_min + (spec.scale_max - spec.scale_min) *
                                                         rng.uniform();
        }
    }
    if (spec.identity_mixing) {
        truth.mixing.assign(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) truth.mixing[i * d + i] = 1.0;
    } else {
        Rng rng(derive_seed(spec.seed, "mixing"));
        truth.mixing = orthonormal_rows(d, d, rng);
    }

    Dataset data;
    data.d_x = d;
    data.n_classes = c;
    data.items.reserve(c * spec.n_per_class);
    data.labels.reserve(c * spec.n_per_class);

    std::vector<double> latent(d);
    for (std::size_t y = 0; y < c; ++y) {
        Rng rng(derive_seed(spec.seed, "items-" + std::to_string(y)));
        for (std::size_t i = 0; i < spec.n_per_class; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                latent[j] = truth.anchors[y][j] + truth.scales[y][j] * rng.normal();
            }
            std::vector<double> x(d, 0.0);
            for (std::size_t r = 0; r < d; ++r) {
                const double* mrow = &truth.mixing[r * d];
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += mrow[j] * latent[j];
                x[r] = apply_nl(spec.nonlinearity, acc);
            }
            data.items.push_back(std::move(x));
            data.labels.push_back(y);
        }
    }
    return {std::move(data), std::move(truth)};
}

bool SplitSpec::is_seen(std::size_t class_id) const {
    return std::find(seen.begin(), seen.end(), class_id) != seen.end();
}

bool SplitSpec::is_unseen(std::size_t class_id) const {
    return std::find(unseen.begin(), unseen.end(), class_id) != unseen.end();
}

void SplitSpec::validate(std::size_t n_classes) const {
    if (seen.size() < 2) throw ConfigError("split: need at least 2 seen classes");
    if (unseen.empty()) throw ConfigError("split: need at least 1 unseen class");
    std::vector<bool> used(n_classes, false);
    auto mark = [&](const std::vector<std::size_t>& ids, const char* side) {
        for (std::size_t id : ids) {
            if (id >= n_classes) {
                throw ConfigError("split: " + std::string(side) + " id " + std::to_string(id) +
                                  " outside [0," + std::to_string(n_classes) + ")");
            }
            if (used[id]) {
                throw ConfigError("split: class " + std::to_string(id) +
                                  " appears more than once");
            }
            used[id] = true;
        }
    };
    mark(seen, "seen");
    mark(unseen, "unseen");
    for (std::size_t id = 0; id < n_classes; ++id) {
        if (!used[id]) {
            throw ConfigError("split: class " + std::to_string(id) + " is in neither side");
        }
    }
}

SplitSpec split_classes(std::size_t n_classes, double seen_fraction, std::uint64_t seed) {
    const std::size_t n_seen =
        static_cast<std::size_t>(std::llround(seen_fraction * static_cast<double>(n_classes)));
    if (n_seen < 2 || n_seen >= n_classes) {
        throw ConfigError("split: seen_fraction " + std::to_string(seen_fraction) +
                          " leaves an invalid split of " + std::to_string(n_classes) +
                          " classes");
    }
    std::vector<std::size_t> ids(n_classes);
    for (std::size_t i = 0; i < n_classes; ++i) ids[i] = i;
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(ids);
    SplitSpec split;
    split.seen.assign(ids.begin(), ids.begin() + n_seen);
    split.unseen.assign(ids.begin() + n_seen, ids.end());
    std::sort(split.seen.begin(), split.seen.end());
    std::sort(split.unseen.begin(), split.unseen.end());
    split.validate(n_classes);
    return split;
}

SplitSpec split_classes(std::vector<std::size_t> seen, std::vector<std::size_t> unseen,
                        std::size_t n_classes) {
    SplitSpec split{std::move(seen), std::move(unseen)};
    split.validate(n_classes);
    return split;
}

Episode sample_episode(const Dataset& data, const SplitSpec& split, std::size_t c, std::size_t k,
                       std::uint64_t seed) {
    if (!split.is_unseen(c)) {
        throw DomainError("episode: class " + std::to_string(c) + " is not an unseen class");
    }
    std::vector<std::size_t> idx = data.indices_of(c);
    if (k == 0 || k >= idx.size()) {
        throw ConfigError("episode: k=" + std::to_string(k) + " with " +
                          std::to_string(idx.size()) + " items of class " + std::to_string(c));
    }
    Rng rng(derive_seed(seed, "episode-" + std::to_string(c)));
    rng.shuffle(idx);
    Episode ep;
    ep.class_id = c;
    ep.seed = seed;
    ep.support.assign(idx.begin(), idx.begin() + k);
    ep.query.assign(idx.begin() + k, idx.end());
    std::sort(ep.support.begin(), ep.support.end());
    std::sort(ep.query.begin(), ep.query.end());
    return ep;
}

void save_dataset(const std::string& path, const Dataset& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DependencyError("save_dataset: cannot open " + path);
    out << "cdm.dataset.v1\n"
        << "rows " << data.size() << "\n"
        << "dx " << data.d_x << "\n"
        << "classes " << data.n_classes << "\n"
        << "label_column 0\n"
        << "payload f64le\n"
        << "end\n";
    std::vector<double> row(1 + data.d_x);
    for (std::size_t i = 0; i < data.size(); ++i) {
        row[0] = static_cast<double>(data.labels[i]);
        std::copy(data.items[i].begin(), data.items[i].end(), row.begin() + 1);
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(double)));
    }
    if (!out) throw DependencyError("save_dataset: short write to " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("load_dataset: missing file " + path);
    std::string line;
    if (!std::getline(in, line) || line != "cdm.dataset.v1") {
        throw ConfigError("load_dataset: " + path + " is not a cdm.dataset.v1 file");
    }
    std::size_t rows = 0, dx = 0, classes = 0;
    bool saw_end = false;
    while (std::getline(in, line)) {
        if (line == "end") {
            saw_end = true;
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "rows") ls >> rows;
        else if (key == "dx") ls >> dx;
        else if (key == "classes") ls >> classes;
        else if (key == "label_column" || key == "payload") { /* fixed layout */ }
        else throw ConfigError("load_dataset: unknown header key '" + key + "' in " + path);
        if (!ls) throw ConfigError("load_dataset: bad header line '" + line + "' in " + path);
    }
    if (!saw_end || dx == 0 || classes == 0) {
        throw ConfigError("load_dataset: incomplete header in " + path);
    }
    Dataset data;
    data.d_x = dx;
    data.n_classes = classes;
    data.items.reserve(rows);
    data.labels.reserve(rows);
    std::vector<double> row(1 + dx);
    for (std::size_t i = 0; i < rows; ++i) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(double)));
        if (!in) throw ConfigError("load_dataset: truncated payload in " + path);
        const double lab = row[0];
        if (lab < 0.0 || lab != std::floor(lab) || lab >= static_cast<double>(classes)) {
            throw ConfigError("load_dataset: bad label in row " + std::to_string(i) + " of " +
                              path);
        }
        data.labels.push_back(static_cast<std::size_t>(lab));
        data.items.emplace_back(row.begin() + 1, row.end());
    }
    return data;
}

}  // namespace cdm
