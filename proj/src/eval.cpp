#include "gcoop/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "gcoop/linear.hpp"
#include "gcoop/model_io.hpp"

namespace gcoop {

EvalReport evaluate(const std::vector<std::uint32_t>& preds, const GroupedDataset& test,
                    const std::vector<double>& train_props) {
    if (preds.size() != test.n()) raise(ErrorCode::CountMismatch, "prediction count != test size");
    if (!test.has_attr_labels()) raise(ErrorCode::MissingGroupLabels, "test set lacks group labels");
    const std::size_t n_groups = test.n_groups();
    if (train_props.size() != n_groups) raise(ErrorCode::CountMismatch, "train proportion count");
    const double prop_sum = std::accumulate(train_props.begin(), train_props.end(), 0.0);
    if (std::abs(prop_sum - 1.0) > 1e-9) raise(ErrorCode::ConfigInvalid, "train proportions must sum to 1");

    EvalReport r;
    r.n_per_group.assign(n_groups, 0);
    std::vector<std::size_t> correct(n_groups, 0);
    for (std::size_t i = 0; i < test.n(); ++i) {
        const std::uint32_t g = test.group_label(i);
        r.n_per_group[g] += 1;
        if (preds[i] == test.class_labels[i]) correct[g] += 1;
    }
    r.per_group_acc.resize(n_groups);
    r.worst = std::numeric_limits<double>::infinity();
    r.indist = 0.0;
    for (std::size_t g = 0; g < n_groups; ++g) {
        if (r.n_per_group[g] == 0)
            raise(ErrorCode::EmptyGroup, "group " + std::to_string(g) + " has no test samples");
        r.per_group_acc[g] = static_cast<double>(correct[g]) / static_cast<double>(r.n_per_group[g]);
        r.worst = std::min(r.worst, r.per_group_acc[g]);
        r.indist += train_props[g] * r.per_group_acc[g];
    }
    return r;
}

namespace {

std::vector<double> train_proportions(const GroupedDataset& train) {
    return group_stats(train).proportions;
}

std::vector<std::uint32_t> resolve_group_labels(const BaselineSpec& spec, const GroupedDataset& train,
                                                const GroupedDataset& val, std::uint64_t seed) {
    if (spec.label_source == "gt") {
        if (!train.has_attr_labels())
            raise(ErrorCode::MissingLabels, "gt label source needs train attribute labels");
        return train.group_labels();
    }
    if (spec.label_source == "pseudo")
        return pseudo_label_confidence(train, val, spec.pseudo, seed).group_labels();
    if (spec.label_source == "file") {
        if (spec.label_override.size() != train.n())
            raise(ErrorCode::CountMismatch, "label file size != train size");
        return spec.label_override;
    }
    raise(ErrorCode::MissingLabels, "method needs a group label source (gt or pseudo)");
}

// Embeddings of the instantiated zero-shot class templates, one row per class.
Matrix zs_class_embeddings(const GroupedDataset& ds, const TextStack& stack) {
    if (ds.meta.class_templates.empty())
        raise(ErrorCode::MissingTemplates, "zero-shot needs a class template");
    Matrix emb(ds.n_classes, stack.encoder->d_joint());
    for (std::uint32_t c = 0; c < ds.n_classes; ++c) {
        const auto prompt =
            instantiate_template(ds.meta.class_templates.front(), ds.meta.class_names[c], "");
        const auto e = stack.encoder->encode(embed_text(prompt, stack.vocab, stack.table));
        std::copy(e.begin(), e.end(), emb.row(c).begin());
    }
    return emb;
}

Matrix zs_group_embeddings(const GroupedDataset& ds, const TextStack& stack) {
    if (ds.meta.group_templates.empty())
        raise(ErrorCode::MissingTemplates, "zero-shot needs a group template");
    const GroupIndexing idx{ds.n_classes, ds.n_attrs};
    Matrix emb(idx.n_groups(), stack.encoder->d_joint());
    for (std::size_t g = 0; g < idx.n_groups(); ++g) {
        const auto prompt = instantiate_template(ds.meta.group_templates.front(),
                                                 ds.meta.class_names[idx.class_of(g)],
                                                 ds.meta.attr_names[idx.attr_of(g)]);
        const auto e = stack.encoder->encode(embed_text(prompt, stack.vocab, stack.table));
        std::copy(e.begin(), e.end(), emb.row(g).begin());
    }
    return emb;
}

std::size_t argmax_cosine(const Matrix& emb, std::span<const double> x) {
    std::size_t best = 0;
    double bs = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < emb.rows(); ++r) {
        const double s = cosine_sim(emb.row(r), x);
        if (s > bs) {
            bs = s;
            best = r;
        }
    }
    return best;
}

std::vector<std::uint32_t> knn_predict(const GroupedDataset& train, const GroupedDataset& test,
                                       std::size_t k) {
    if (k < 1) raise(ErrorCode::ConfigInvalid, "knn needs k >= 1");
    k = std::min(k, train.n());
    std::vector<std::uint32_t> preds(test.n());
    std::vector<std::pair<double, std::size_t>> sims(train.n());
    for (std::size_t i = 0; i < test.n(); ++i) {
        for (std::size_t j = 0; j < train.n(); ++j)
            sims[j] = {cosine_sim(train.features.row(j), test.features.row(i)), j};
        std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                          [](const auto& a, const auto& b) {
                              return a.first > b.first || (a.first == b.first && a.second < b.second);
                          });
        std::vector<std::size_t> votes(train.n_classes, 0);
        for (std::size_t j = 0; j < k; ++j) votes[train.class_labels[sims[j].second]] += 1;
        std::uint32_t best = 0;
        for (std::uint32_t c = 1; c < train.n_classes; ++c)
            if (votes[c] > votes[best]) best = c;  // ties -> lowest class id
        preds[i] = best;
    }
    return preds;
}

// Shuffled sequential minibatches, reshuffling each pass.
class UnbalancedBatcher {
public:
    UnbalancedBatcher(std::size_t n, std::size_t batch_size, std::uint64_t seed)
        : order_(n), batch_size_(std::min(batch_size, n)), rng_(seed) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        shuffle();
    }

    std::vector<std::size_t> operator()() {
        std::vector<std::size_t> batch;
        batch.reserve(batch_size_);
        for (std::size_t i = 0; i < batch_size_; ++i) {
            if (pos_ == order_.size()) {
                shuffle();
                pos_ = 0;
            }
            batch.push_back(order_[pos_++]);
        }
        return batch;
    }

private:
    void shuffle() {
        for (std::size_t i = order_.size(); i > 1; --i)
            std::swap(order_[i - 1], order_[rng_.uniform_index(i)]);
    }

    std::vector<std::size_t> order_;
    std::size_t batch_size_;
    std::size_t pos_ = 0;
    Rng rng_;
};

std::vector<std::uint32_t> linear_class_preds(const LinearClassifier& clf, const GroupedDataset& test) {
    std::vector<std::uint32_t> preds(test.n());
    for (std::size_t i = 0; i < test.n(); ++i)
        preds[i] = static_cast<std::uint32_t>(clf.predict(test.features.row(i)));
    return preds;
}

}  // namespace

EvalReport run_baseline(BaselineSpec spec, const GroupedDataset& train, const GroupedDataset& val,
                        const GroupedDataset& test, std::uint64_t seed) {
    spec.train.seed = seed;
    const GroupIndexing indexing{train.n_classes, train.n_attrs};
    const std::size_t steps_per_epoch = (train.n() + spec.train.batch_size - 1) / spec.train.batch_size;

    std::vector<std::uint32_t> preds;
    if (spec.method == "zs_class") {
        const TextStack stack = make_text_stack(train.meta, spec.encoder);
        const Matrix emb = zs_class_embeddings(train, stack);
        preds.resize(test.n());
        for (std::size_t i = 0; i < test.n(); ++i)
            preds[i] = static_cast<std::uint32_t>(argmax_cosine(emb, test.features.row(i)));
    } else if (spec.method == "zs_group") {
        const TextStack stack = make_text_stack(train.meta, spec.encoder);
        const Matrix emb = zs_group_embeddings(train, stack);
        preds.resize(test.n());
        for (std::size_t i = 0; i < test.n(); ++i) {
            const std::size_t g = argmax_cosine(emb, test.features.row(i));
            preds[i] = static_cast<std::uint32_t>(indexing.class_of(g));
        }
    } else if (spec.method == "knn") {
        preds = knn_predict(train, test, spec.knn_k);
    } else if (spec.method == "erm_linear") {
        UnbalancedBatcher batcher(train.n(), spec.train.batch_size, seed);
        OptimizerState opt = spec.train.optimizer == OptKind::Adam
                                 ? OptimizerState::adam(spec.train.learning_rate)
                                 : OptimizerState::sgd(spec.train.learning_rate);
        const auto clf = train_linear_minibatch(train.features, train.class_labels, train.n_classes,
                                                spec.train.epochs, steps_per_epoch, opt, seed,
                                                [&batcher]() { return batcher(); });
        preds = linear_class_preds(clf, test);
    } else if (spec.method == "group_linear") {
        const auto group_labels = resolve_group_labels(spec, train, val, seed);
        BalancedBatcher batcher(group_labels, indexing.n_groups(), spec.train.batch_size, seed);
        OptimizerState opt = spec.train.optimizer == OptKind::Adam
                                 ? OptimizerState::adam(spec.train.learning_rate)
                                 : OptimizerState::sgd(spec.train.learning_rate);
        const auto clf = train_linear_minibatch(
            train.features, group_labels, indexing.n_groups(), spec.train.epochs, steps_per_epoch, opt,
            seed, [&batcher]() { return batcher.next_batch(); });
        preds.resize(test.n());
        for (std::size_t i = 0; i < test.n(); ++i)
            preds[i] = static_cast<std::uint32_t>(indexing.class_of(clf.predict(test.features.row(i))));
    } else if (spec.method == "coop_unified" || spec.method == "coop_csc" || spec.method == "groupcoop") {
        const bool groupwise = spec.method == "groupcoop";
        const bool shared = spec.method == "coop_unified";
        const GroupIndexing bank_indexing =
            groupwise ? indexing : GroupIndexing{train.n_classes, 1};
        std::vector<std::uint32_t> labels;
        if (groupwise) {
            labels = resolve_group_labels(spec, train, val, seed);
        } else {
            labels = train.class_labels;  // class-wise CE: one "group" per class
        }
        const TextStack stack = make_text_stack(train.meta, spec.encoder);
        GroupPromptBank bank = make_prompt_bank(bank_indexing, train.meta.class_names, stack.vocab,
                                                stack.table, spec.train, shared);
        auto result = train_group_prompts(train, labels, *stack.encoder, std::move(bank), spec.train);
        const Matrix emb = prompt_embeddings(result.bank, *stack.encoder);
        preds.resize(test.n());
        for (std::size_t i = 0; i < test.n(); ++i) {
            const auto r = infer_cached(bank_indexing, emb, result.bank.sim_scale, test.features.row(i));
            preds[i] = static_cast<std::uint32_t>(r.class_id);
        }
    } else {
        raise(ErrorCode::ConfigInvalid, "unknown baseline method '" + spec.method + "'");
    }

    EvalReport report = evaluate(preds, test, train_proportions(train));
    report.method = spec.method;
    report.seed = seed;
    return report;
}

ExperimentSummary run_experiment(std::vector<BaselineSpec> specs, const GroupedDataset& train,
                                 const GroupedDataset& val, const GroupedDataset& test,
                                 std::vector<std::uint64_t> seeds) {
    if (seeds.empty()) raise(ErrorCode::ConfigInvalid, "run_experiment needs at least one seed");
    std::sort(seeds.begin(), seeds.end());
    std::sort(specs.begin(), specs.end(),
              [](const BaselineSpec& a, const BaselineSpec& b) { return a.method < b.method; });

    ExperimentSummary summary;
    summary.seeds = seeds;
    for (const auto& spec : specs) {
        MethodSummary ms;
        ms.method = spec.method;
        for (const auto seed : seeds) {
            try {
                ms.per_seed.push_back(run_baseline(spec, train, val, test, seed));
            } catch (const Error& e) {
                raise(e.code(), spec.method + " seed " + std::to_string(seed) + ": " + e.what());
            }
        }
        auto mean_std = [&](auto pick) {
            double mean = 0.0;
            for (const auto& r : ms.per_seed) mean += pick(r);
            mean /= static_cast<double>(ms.per_seed.size());
            double var = 0.0;
            for (const auto& r : ms.per_seed) var += (pick(r) - mean) * (pick(r) - mean);
            var /= static_cast<double>(ms.per_seed.size());  // population std
            return std::pair{mean, std::sqrt(std::max(0.0, var))};
        };
        std::tie(ms.worst_mean, ms.worst_std) = mean_std([](const EvalReport& r) { return r.worst; });
        std::tie(ms.indist_mean, ms.indist_std) = mean_std([](const EvalReport& r) { return r.indist; });
        summary.methods.push_back(std::move(ms));
    }
    return summary;
}

void export_embeddings(const GroupPromptBank& bank, const TextEncoder& encoder, const Vocabulary& vocab,
                       const TokenEmbeddingTable& table, const GroupedDataset& ds,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot open '" + path + "' for writing");

    const std::size_t d = encoder.d_joint();
    out << "kind,group,class";
    for (std::size_t j = 0; j < d; ++j) out << ",x" << j;
    out << "\n";

    char buf[40];
    auto write_row = [&](const char* kind, long group, long cls, std::span<const double> coords) {
        out << kind << "," << group << "," << cls;
        for (double x : coords) {
            std::snprintf(buf, sizeof buf, "%.17g", x);
            out << "," << buf;
        }
        out << "\n";
    };

    for (std::size_t i = 0; i < ds.n(); ++i) {
        const long g = ds.attr_labels[i] >= 0 ? static_cast<long>(ds.group_label(i)) : -1;
        write_row("image", g, static_cast<long>(ds.class_labels[i]), ds.features.row(i));
    }
    for (std::size_t g = 0; g < bank.indexing.n_groups(); ++g) {
        const auto e = encoder.encode(assemble_prompt(bank, g));
        write_row("group_prompt", static_cast<long>(g), static_cast<long>(bank.indexing.class_of(g)), e);
    }
    if (ds.meta.class_templates.empty())
        raise(ErrorCode::MissingTemplates, "embedding export needs a class template");
    for (std::uint32_t c = 0; c < ds.n_classes; ++c) {
        const auto prompt =
            instantiate_template(ds.meta.class_templates.front(), ds.meta.class_names[c], "");
        const auto e = encoder.encode(embed_text(prompt, vocab, table));
        write_row("zs_prompt", -1, static_cast<long>(c), e);
    }
    if (!out) raise(ErrorCode::IoError, "short write to '" + path + "'");
}

namespace {

nlohmann::json report_to_json_obj(const EvalReport& r) {
    nlohmann::json doc{{"artifact_version", kArtifactVersion},
                       {"config_digest", r.config_digest},
                       {"method", r.method},
                       {"seed", r.seed},
                       {"per_group_acc", r.per_group_acc},
                       {"n_per_group", r.n_per_group},
                       {"worst", r.worst},
                       {"indist", r.indist}};
    doc["config"] =
        r.config_echo.empty() ? nlohmann::json::object() : nlohmann::json::parse(r.config_echo);
    return doc;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report) { return report_to_json_obj(report).dump(2); }

void save_eval_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    out << eval_report_to_json(report) << "\n";
}

EvalReport load_eval_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::IoError, "bad report file: " + std::string(e.what()));
    }
    EvalReport r;
    try {
        r.config_digest = doc.at("config_digest").get<std::string>();
        if (doc.contains("config")) r.config_echo = doc["config"].dump();
        r.method = doc.at("method").get<std::string>();
        r.seed = doc.at("seed").get<std::uint64_t>();
        r.per_group_acc = doc.at("per_group_acc").get<std::vector<double>>();
        r.n_per_group = doc.at("n_per_group").get<std::vector<std::size_t>>();
        r.worst = doc.at("worst").get<double>();
        r.indist = doc.at("indist").get<double>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::CountMismatch, "report file missing fields: " + std::string(e.what()));
    }
    return r;
}

std::string experiment_summary_to_json(const ExperimentSummary& summary) {
    nlohmann::json methods = nlohmann::json::array();
    for (const auto& m : summary.methods) {
        nlohmann::json per_seed = nlohmann::json::array();
        for (const auto& r : m.per_seed) per_seed.push_back(report_to_json_obj(r));
        methods.push_back({{"method", m.method},
                           {"worst_mean", m.worst_mean},
                           {"worst_std", m.worst_std},
                           {"indist_mean", m.indist_mean},
                           {"indist_std", m.indist_std},
                           {"per_seed", std::move(per_seed)}});
    }
    nlohmann::json doc{{"artifact_version", kArtifactVersion},
                       {"std_kind", "population"},
                       {"seeds", summary.seeds},
                       {"methods", std::move(methods)}};
    return doc.dump(2);
}

}  // namespace gcoop
