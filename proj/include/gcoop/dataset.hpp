#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcoop/matrix.hpp"

namespace gcoop {

struct DatasetMeta {
    std::vector<std::string> class_names;
    std::vector<std::string> attr_names;
    std::vector<std::string> class_templates;  // "{class}" placeholder
    std::vector<std::string> group_templates;  // "{class}" and "{attribute}"
    std::string provenance;
};

// Cached joint-space features with class labels and optional attribute
// labels. Features are stored as 32-bit in the GCFS file and upcast to
// 64-bit on load; they are read-only during training.
struct GroupedDataset {
    Matrix features;  // n x dim
    std::vector<std::uint32_t> class_labels;
    std::vector<std::int32_t> attr_labels;  // -1 when unknown
    std::uint32_t n_classes = 0;
    std::uint32_t n_attrs = 0;
    DatasetMeta meta;
    std::string split_tag;  // train | val | test

    std::size_t n() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
    std::size_t n_groups() const { return static_cast<std::size_t>(n_classes) * n_attrs; }

    bool has_attr_labels() const;

    // y * n_attrs + a; raises UnknownAttributes when the attribute is unknown.
    std::uint32_t group_label(std::size_t i) const;

    // Group ids for every sample (requires attribute labels).
    std::vector<std::uint32_t> group_labels() const;
};

// Defaults are the calibrated desk-scale experiment config: beta > alpha
// makes the spurious direction the salient one, which is what breaks ERM on
// minority groups.
struct SyntheticSpec {
    std::size_t n_train = 6000;
    std::size_t n_val = 400;
    std::size_t n_test = 800;
    std::uint32_t n_classes = 2;
    std::uint32_t n_attrs = 2;
    std::size_t dim = 16;
    double rho = 0.95;    // P(attribute == correlated attribute of the class)
    double alpha = 1.0;   // class direction strength
    double beta = 1.5;    // attribute direction strength
    double sigma = 0.4;   // isotropic noise
    std::uint64_t seed = 0;
};

struct SyntheticData {
    GroupedDataset train, val, test;
};

// Orthonormal class/attribute directions via seeded Gram-Schmidt; train/val
// drawn with the spurious correlation rho, test group-balanced. Features are
// alpha*u_y + beta*v_a + sigma*eps, L2-normalized.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// GCFS binary feature store, little-endian, plus a JSON metadata sidecar at
// <path>.meta.json.
void save_store(const GroupedDataset& ds, const std::string& path);
GroupedDataset load_store(const std::string& path);

struct GroupStats {
    std::vector<std::size_t> counts;       // indexed by group id
    std::vector<double> proportions;       // sums to 1
};

GroupStats group_stats(const GroupedDataset& ds);

// New dataset holding the listed rows (in the given order), metadata shared.
GroupedDataset take_rows(const GroupedDataset& ds, const std::vector<std::size_t>& rows);

// Keeps max(1, round(fraction * n_g)) samples per group, without replacement.
GroupedDataset subsample(const GroupedDataset& ds, double fraction, std::uint64_t seed);

}  // namespace gcoop
