#include "gcoop/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace gcoop {

std::vector<std::uint32_t> PseudoLabelSet::group_labels() const {
    std::vector<std::uint32_t> g(samples.size(), 0);
    std::vector<bool> seen(samples.size(), false);
    for (const auto& s : samples) {
        if (s.index >= samples.size() || seen[s.index])
            raise(ErrorCode::CountMismatch, "pseudo labels do not cover 0..n-1 exactly once");
        seen[s.index] = true;
        g[s.index] = s.g_pseudo;
    }
    return g;
}

ValSplit split_val(const GroupedDataset& val, double ratio, std::uint64_t seed) {
    if (!val.has_attr_labels()) raise(ErrorCode::MissingGroupLabels, "validation set lacks group labels");
    if (ratio < 0.0 || ratio > 1.0) raise(ErrorCode::ConfigInvalid, "split ratio must be in [0, 1]");

    std::vector<std::vector<std::size_t>> by_group(val.n_groups());
    for (std::size_t i = 0; i < val.n(); ++i) by_group[val.group_label(i)].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> s_rows, tau_rows;
    for (std::size_t g = 0; g < by_group.size(); ++g) {
        auto& idx = by_group[g];
        for (std::size_t i = idx.size(); i > 1; --i) {
            const std::size_t j = rng.uniform_index(i);
            std::swap(idx[i - 1], idx[j]);
        }
        const auto take = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(idx.size())));
        if (take < 1 || idx.size() - take < 1)
            raise(ErrorCode::InsufficientGroupSamples,
                  "group " + std::to_string(g) + " cannot place a sample on both sides of the split");
        s_rows.insert(s_rows.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
        tau_rows.insert(tau_rows.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
    }
    std::sort(s_rows.begin(), s_rows.end());
    std::sort(tau_rows.begin(), tau_rows.end());
    return {take_rows(val, s_rows), take_rows(val, tau_rows)};
}

AttributeClassifier train_attr_classifier(const GroupedDataset& classifier_split, std::size_t epochs,
                                          double lr, std::uint64_t seed) {
    if (classifier_split.n_attrs < 2) raise(ErrorCode::SingleAttribute, "need at least two attributes");
    if (!classifier_split.has_attr_labels())
        raise(ErrorCode::UnknownAttributes, "attribute classifier needs attribute labels");
    std::vector<std::uint32_t> labels(classifier_split.n());
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = static_cast<std::uint32_t>(classifier_split.attr_labels[i]);
    return train_linear_fullbatch(classifier_split.features, labels, classifier_split.n_attrs, epochs,
                                  lr, seed);
}

ThresholdChoice select_threshold(const AttributeClassifier& clf, const GroupedDataset& threshold_split) {
    if (threshold_split.n() == 0) raise(ErrorCode::EmptySet, "threshold split is empty");
    if (!threshold_split.has_attr_labels())
        raise(ErrorCode::UnknownAttributes, "threshold split needs attribute labels");

    const std::size_t n = threshold_split.n();
    std::vector<std::pair<double, bool>> by_conf(n);  // (confidence, correct)
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = threshold_split.features.row(i);
        by_conf[i] = {clf.confidence(x),
                      clf.predict(x) == static_cast<std::size_t>(threshold_split.attr_labels[i])};
    }
    std::sort(by_conf.begin(), by_conf.end());
    // prefix_wrong[i]: wrong predictions among the i lowest-confidence samples
    std::vector<std::size_t> prefix_wrong(n + 1, 0), prefix_right(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        prefix_wrong[i + 1] = prefix_wrong[i] + (by_conf[i].second ? 0 : 1);
        prefix_right[i + 1] = prefix_right[i] + (by_conf[i].second ? 1 : 0);
    }

    std::vector<double> candidates{0.0, 1.0};
    for (const auto& [c, correct] : by_conf) candidates.push_back(c);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    ThresholdChoice best{0.0, 0};
    bool have = false;
    for (const double tau : candidates) {
        // samples with conf <= tau form the rejected prefix
        const auto cut = static_cast<std::size_t>(
            std::upper_bound(by_conf.begin(), by_conf.end(), tau,
                             [](double t, const auto& p) { return t < p.first; }) -
            by_conf.begin());
        const std::size_t objective = prefix_wrong[cut] + (prefix_right[n] - prefix_right[cut]);
        if (!have || objective > best.objective) {  // ties keep the smaller tau
            best = {tau, objective};
            have = true;
        }
    }
    return best;
}

std::vector<PseudoLabelAssignment> assign_pseudo_labels(const AttributeClassifier& clf, double tau,
                                                        const GroupedDataset& train, std::uint64_t seed) {
    if (clf.n_out() != train.n_attrs)
        raise(ErrorCode::DimensionMismatch, "classifier outputs != n_attrs");
    Rng rng(seed);
    std::vector<PseudoLabelAssignment> out(train.n());
    for (std::size_t i = 0; i < train.n(); ++i) {
        auto& s = out[i];
        s.index = i;
        const auto x = train.features.row(i);
        s.confidence = clf.confidence(x);
        s.accepted = s.confidence > tau;
        s.a_pseudo = s.accepted ? static_cast<std::uint32_t>(clf.predict(x))
                                : static_cast<std::uint32_t>(rng.uniform_index(train.n_attrs));
        s.g_pseudo = train.class_labels[i] * train.n_attrs + s.a_pseudo;
    }
    return out;
}

PseudoLabelSet pseudo_label_confidence(const GroupedDataset& train, const GroupedDataset& val,
                                       const PseudoChainConfig& cfg, std::uint64_t seed) {
    const ValSplit split = split_val(val, cfg.split_ratio, seed);
    const AttributeClassifier clf =
        train_attr_classifier(split.classifier_split, cfg.attr_epochs, cfg.attr_lr, seed);
    const ThresholdChoice choice = select_threshold(clf, split.threshold_split);
    PseudoLabelSet set;
    set.samples = assign_pseudo_labels(clf, choice.tau, train, seed);
    set.tau = choice.tau;
    set.tau_meaningful = true;
    set.labeler = "confidence";
    set.seed = seed;
    set.split_ratio = cfg.split_ratio;
    return set;
}

PseudoLabelSet pseudo_label_zs(const GroupedDataset& train, const TextEncoder& encoder,
                               const Vocabulary& vocab, const TokenEmbeddingTable& table) {
    if (train.n_attrs != 2)
        raise(ErrorCode::UnsupportedAttrCount, "zs correctness labeling needs exactly 2 attributes");
    if (train.meta.class_templates.empty())
        raise(ErrorCode::MissingTemplates, "zs labeling needs a class prompt template");

    Matrix class_emb(train.n_classes, encoder.d_joint());
    for (std::uint32_t c = 0; c < train.n_classes; ++c) {
        const std::string prompt =
            instantiate_template(train.meta.class_templates.front(), train.meta.class_names[c], "");
        const auto e = encoder.encode(embed_text(prompt, vocab, table));
        std::copy(e.begin(), e.end(), class_emb.row(c).begin());
    }

    PseudoLabelSet set;
    set.labeler = "zs";
    set.samples.resize(train.n());
    for (std::size_t i = 0; i < train.n(); ++i) {
        std::size_t pred = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < train.n_classes; ++c) {
            const double s = cosine_sim(class_emb.row(c), train.features.row(i));
            if (s > best) {
                best = s;
                pred = c;
            }
        }
        auto& s = set.samples[i];
        s.index = i;
        s.a_pseudo = (pred == train.class_labels[i]) ? 0u : 1u;
        s.g_pseudo = train.class_labels[i] * train.n_attrs + s.a_pseudo;
        s.confidence = 1.0;
        s.accepted = true;
    }
    return set;
}

std::vector<std::uint32_t> kmeans_cluster(const Matrix& points, std::size_t k, std::size_t iterations,
                                          std::uint64_t seed) {
    if (points.rows() == 0) raise(ErrorCode::EmptySet, "k-means on empty point set");
    if (k == 0) raise(ErrorCode::ConfigInvalid, "k must be >= 1");
    const std::size_t n = points.rows();
    const std::size_t dim = points.cols();
    Rng rng(seed);

    auto sq_dist = [&](std::span<const double> a, std::span<const double> b) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return s;
    };

    // k-means++ seeding
    Matrix centers(k, dim);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    {
        const std::size_t first = rng.uniform_index(n);
        std::copy(points.row(first).begin(), points.row(first).end(), centers.row(0).begin());
        for (std::size_t c = 1; c < k; ++c) {
            double total = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                d2[i] = std::min(d2[i], sq_dist(points.row(i), centers.row(c - 1)));
                total += d2[i];
            }
            std::size_t pick;
            if (total <= 0.0) {
                pick = rng.uniform_index(n);
            } else {
                const double r = rng.uniform() * total;
                double acc = 0.0;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += d2[i];
                    if (acc >= r) {
                        pick = i;
                        break;
                    }
                }
            }
            std::copy(points.row(pick).begin(), points.row(pick).end(), centers.row(c).begin());
        }
    }

    std::vector<std::uint32_t> assign(n, 0);
    for (std::size_t it = 0; it < iterations; ++it) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = sq_dist(points.row(i), centers.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double d = sq_dist(points.row(i), centers.row(c));
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = static_cast<std::uint32_t>(best);
                changed = true;
            }
        }
        Matrix sums(k, dim);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            counts[assign[i]] += 1;
            for (std::size_t j = 0; j < dim; ++j) sums(assign[i], j) += points(i, j);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its center
            for (std::size_t j = 0; j < dim; ++j)
                centers(c, j) = sums(c, j) / static_cast<double>(counts[c]);
        }
        if (!changed && it > 0) break;
    }

    // canonical ids: non-empty clusters ordered by mean first coordinate,
    // empty clusters after them in original order
    std::vector<double> mean_first(k, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        counts[assign[i]] += 1;
        mean_first[assign[i]] += points(i, 0);
    }
    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] > 0) {
            mean_first[c] /= static_cast<double>(counts[c]);
            order.push_back(c);
        }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return mean_first[a] < mean_first[b]; });
    for (std::size_t c = 0; c < k; ++c)
        if (counts[c] == 0) order.push_back(c);
    std::vector<std::uint32_t> remap(k, 0);
    for (std::size_t rank = 0; rank < order.size(); ++rank)
        remap[order[rank]] = static_cast<std::uint32_t>(rank);
    for (auto& a : assign) a = remap[a];
    return assign;
}

PseudoLabelSet pseudo_label_kmeans(const GroupedDataset& train, std::uint64_t seed) {
    PseudoLabelSet set;
    set.labeler = "kmeans";
    set.seed = seed;
    set.samples.resize(train.n());
    for (std::uint32_t y = 0; y < train.n_classes; ++y) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < train.n(); ++i)
            if (train.class_labels[i] == y) rows.push_back(i);
        if (rows.empty()) continue;
        Matrix pts(rows.size(), train.dim());
        for (std::size_t r = 0; r < rows.size(); ++r)
            std::copy(train.features.row(rows[r]).begin(), train.features.row(rows[r]).end(),
                      pts.row(r).begin());
        const auto labels = kmeans_cluster(pts, train.n_attrs, 50, seed ^ (0x9E3779B97F4A7C15ull * (y + 1)));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto& s = set.samples[rows[r]];
            s.index = rows[r];
            s.a_pseudo = labels[r];
            s.g_pseudo = y * train.n_attrs + s.a_pseudo;
            s.confidence = 1.0;
            s.accepted = true;
        }
    }
    return set;
}

void save_pseudo_labels(const PseudoLabelSet& set, const std::string& path) {
    nlohmann::json header{
        {"labeler", set.labeler},
        {"seed", set.seed},
        {"split_ratio", set.split_ratio},
    };
    if (set.tau_meaningful)
        header["tau"] = set.tau;
    else
        header["tau"] = nullptr;
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : set.samples) {
        samples.push_back({{"index", s.index},
                           {"a_pseudo", s.a_pseudo},
                           {"g_pseudo", s.g_pseudo},
                           {"confidence", s.confidence},
                           {"accepted", s.accepted}});
    }
    nlohmann::json doc{{"artifact_version", kArtifactVersion},
                       {"config_digest", set.config_digest},
                       {"header", header},
                       {"samples", samples}};
    doc["config"] = set.config_echo.empty() ? nlohmann::json::object()
                                            : nlohmann::json::parse(set.config_echo);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
}

PseudoLabelSet load_pseudo_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::IoError, "bad pseudo label file: " + std::string(e.what()));
    }
    PseudoLabelSet set;
    try {
        set.config_digest = doc.value("config_digest", "");
        if (doc.contains("config")) set.config_echo = doc["config"].dump();
        const auto& header = doc.at("header");
        set.labeler = header.at("labeler").get<std::string>();
        set.seed = header.at("seed").get<std::uint64_t>();
        set.split_ratio = header.at("split_ratio").get<double>();
        if (!header.at("tau").is_null()) {
            set.tau = header.at("tau").get<double>();
            set.tau_meaningful = true;
        }
        for (const auto& js : doc.at("samples")) {
            PseudoLabelAssignment s;
            s.index = js.at("index").get<std::size_t>();
            s.a_pseudo = js.at("a_pseudo").get<std::uint32_t>();
            s.g_pseudo = js.at("g_pseudo").get<std::uint32_t>();
            s.confidence = js.at("confidence").get<double>();
            s.accepted = js.at("accepted").get<bool>();
            set.samples.push_back(s);
        }
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::CountMismatch, "pseudo label file missing fields: " + std::string(e.what()));
    }
    return set;
}

}  // namespace gcoop
