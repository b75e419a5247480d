#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cdm {

enum class Nonlinearity { identity, tanh_warp, cubic };

Nonlinearity nonlinearity_from_name(const std::string& name);  // ConfigError on unknown
std::string nonlinearity_name(Nonlinearity nl);

// Generator recipe for the synthetic class datasets. Anchors, scales, and the
// shared mixing matrix are derived from the seed unless given explicitly.
struct SyntheticSpec {
    std::size_t n_classes = 12;
    std::size_t d_x = 16;
    std::size_t n_per_class = 256;
    Nonlinearity nonlinearity = Nonlinearity::tanh_warp;
    double anchor_spread = 1.0;   // anchors ~ N(0, spread^2 I)
    std::size_t anchor_dim = 0;   // 0 = d_x; lower values draw the anchors
                                  // inside a random anchor_dim-subspace
    double scale_min = 0.25;      // per-dimension scales ~ U[min, max]
    double scale_max = 0.4;
    bool identity_mixing = false;
    std::uint64_t seed = 0;

    // Explicit overrides; when non-empty they must have n_classes entries.
    std::vector<std::vector<double>> anchors;
    std::vector<std::vector<double>> scales;

    void validate() const;  // ConfigError on violated invariants
};

struct Dataset {
    std::size_t d_x = 0;
    std::size_t n_classes = 0;
    std::vector<std::vector<double>> items;
    std::vector<std::size_t> labels;

    std::size_t size() const { return items.size(); }
    std::vector<std::size_t> indices_of(std::size_t class_id) const;
};

// The generating parameters, kept so tests can compare against ground truth.
struct GroundTruth {
    std::vector<std::vector<double>> anchors;
    std::vector<std::vector<double>> scales;
    std::vector<double> mixing;  // d_x x d_x row-major, shared across classes
    Nonlinearity nonlinearity = Nonlinearity::identity;
};

struct GeneratedDataset {
    Dataset data;
    GroundTruth truth;
};

// Each item is nonlinearity(M · (anchor_y + scale_y ⊙ ε)), ε ~ N(0, I).
GeneratedDataset generate_dataset(const SyntheticSpec& spec);

struct SplitSpec {
    std::vector<std::size_t> seen;
    std::vector<std::size_t> unseen;

    bool is_seen(std::size_t class_id) const;
    bool is_unseen(std::size_t class_id) const;
    void validate(std::size_t n_classes) const;  // ConfigError on overlap/gap
};

// Seed-shuffled split keeping round(n_classes · seen_fraction) classes seen.
SplitSpec split_classes(std::size_t n_classes, double seen_fraction, std::uint64_t seed);
// Explicit ids, validated against n_classes.
SplitSpec split_classes(std::vector<std::size_t> seen, std::vector<std::size_t> unseen,
                        std::size_t n_classes);

struct Episode {
    std::size_t class_id = 0;
    std::vector<std::size_t> support;  // item indices into the dataset
    std::vector<std::size_t> query;    // the remaining items of the class
    std::uint64_t seed = 0;
};

// K supports drawn uniformly without replacement from class c (must be
// unseen); every other item of c becomes a query.
Episode sample_episode(const Dataset& data, const SplitSpec& split, std::size_t c, std::size_t k,
                       std::uint64_t seed);

// Flat binary table: text header, then rows of little-endian float64 with the
// label in column 0.
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

}  // namespace cdm
