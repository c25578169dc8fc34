#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcoop/dataset.hpp"
#include "gcoop/encoder.hpp"
#include "gcoop/linear.hpp"
#include "gcoop/tokenizer.hpp"

namespace gcoop {

// Linear spurious-attribute classifier s(.), trained on image features.
using AttributeClassifier = LinearClassifier;

struct PseudoLabelAssignment {
    std::size_t index = 0;
    std::uint32_t a_pseudo = 0;
    std::uint32_t g_pseudo = 0;
    double confidence = 0.0;
    bool accepted = false;
};

struct PseudoLabelSet {
    std::vector<PseudoLabelAssignment> samples;
    double tau = 0.0;
    bool tau_meaningful = false;  // confidence labeler only
    std::string labeler;          // confidence | zs | kmeans
    std::uint64_t seed = 0;
    double split_ratio = 0.0;
    std::string config_digest;
    std::string config_echo;  // effective config as JSON text, may be empty

    std::vector<std::uint32_t> group_labels() const;
};

struct ValSplit {
    GroupedDataset classifier_split;  // D_s
    GroupedDataset threshold_split;   // D_tau
};

// Group-stratified split of the group-labeled validation set; D_s takes
// ceil(ratio * n_g) of each group. Every group must land >= 1 sample on each
// side, which requires >= 2 samples per group.
ValSplit split_val(const GroupedDataset& val, double ratio, std::uint64_t seed);

// Full-batch softmax-CE descent on attribute labels.
AttributeClassifier train_attr_classifier(const GroupedDataset& classifier_split, std::size_t epochs,
                                          double lr, std::uint64_t seed);

struct ThresholdChoice {
    double tau = 0.0;
    std::size_t objective = 0;
};

// Maximizes #{conf > tau, prediction correct} + #{conf <= tau, prediction
// wrong} over candidates {0, 1} and the distinct confidences of D_tau; ties
// resolve to the smallest tau.
ThresholdChoice select_threshold(const AttributeClassifier& clf, const GroupedDataset& threshold_split);

// conf > tau: keep argmax s(h(x)); otherwise draw an attribute uniformly.
// g_pseudo composes the sample's true class with the pseudo attribute.
std::vector<PseudoLabelAssignment> assign_pseudo_labels(const AttributeClassifier& clf, double tau,
                                                        const GroupedDataset& train, std::uint64_t seed);

// The full confidence-based chain: split, train s(.), pick tau, assign.
struct PseudoChainConfig {
    double split_ratio = 0.5;
    std::size_t attr_epochs = 500;
    double attr_lr = 0.1;
};

PseudoLabelSet pseudo_label_confidence(const GroupedDataset& train, const GroupedDataset& val,
                                       const PseudoChainConfig& cfg, std::uint64_t seed);

// Alternative labelers.
// zs: within each class, attribute 0 when the zero-shot class prediction is
// correct, else 1 (requires exactly two attributes).
PseudoLabelSet pseudo_label_zs(const GroupedDataset& train, const TextEncoder& encoder,
                               const Vocabulary& vocab, const TokenEmbeddingTable& table);

// kmeans: per class, seeded k-means (K = n_attrs, 50 iterations, k-means++
// init) on image features; cluster ids canonicalized by ascending
// cluster-mean first coordinate.
PseudoLabelSet pseudo_label_kmeans(const GroupedDataset& train, std::uint64_t seed);

// Seeded k-means labels for a point set, with the canonical id order above.
std::vector<std::uint32_t> kmeans_cluster(const Matrix& points, std::size_t k, std::size_t iterations,
                                          std::uint64_t seed);

void save_pseudo_labels(const PseudoLabelSet& set, const std::string& path);
PseudoLabelSet load_pseudo_labels(const std::string& path);

}  // namespace gcoop
