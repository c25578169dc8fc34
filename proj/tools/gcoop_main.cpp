// gcoop: synthetic data generation, pseudo group labeling, group-prompt
// training, evaluation, baselines, and report assembly in one binary.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "gcoop/eval.hpp"
#include "gcoop/grad_check.hpp"
#include "gcoop/model_io.hpp"
#include "gcoop/pseudo_label.hpp"

using namespace gcoop;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// config file: sections data/labels/model/train/eval, unknown keys rejected

const std::map<std::string, std::vector<std::string>> kConfigSchema{
    {"data",
     {"classes", "attrs", "rho", "n_train", "n_val", "n_test", "dim", "alpha", "beta", "sigma",
      "seed"}},
    {"labels", {"source", "labeler", "split_ratio", "attr_epochs", "attr_lr", "seed"}},
    {"model",
     {"encoder", "seed", "d_word", "d_joint", "n_layers", "n_heads", "ffn_width", "m_ctx",
      "sim_scale"}},
    {"train", {"epochs", "lr", "optimizer", "batch_size", "seed"}},
    {"eval", {"knn_k"}},
};

struct FileConfig {
    json doc = json::object();

    static FileConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) raise(ErrorCode::ConfigInvalid, "cannot open config file '" + path + "'");
        FileConfig cfg;
        try {
            in >> cfg.doc;
        } catch (const json::exception& e) {
            raise(ErrorCode::ConfigInvalid, "config parse failure: " + std::string(e.what()));
        }
        if (!cfg.doc.is_object()) raise(ErrorCode::ConfigInvalid, "config root must be an object");
        for (const auto& [section, body] : cfg.doc.items()) {
            const auto it = kConfigSchema.find(section);
            if (it == kConfigSchema.end())
                raise(ErrorCode::ConfigInvalid, "unknown config section '" + section + "'");
            if (!body.is_object())
                raise(ErrorCode::ConfigInvalid, "config section '" + section + "' must be an object");
            for (const auto& [key, value] : body.items()) {
                (void)value;
                const auto& allowed = it->second;
                if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
                    raise(ErrorCode::ConfigInvalid,
                          "unknown config key '" + section + "." + key + "'");
            }
        }
        return cfg;
    }

    template <typename T>
    void merge(T& value, const CLI::Option* opt, const char* section, const char* key) const {
        if (opt != nullptr && opt->count() > 0) return;  // flags beat the config file
        if (!doc.contains(section)) return;
        const auto& body = doc[section];
        if (!body.contains(key)) return;
        try {
            value = body[key].get<T>();
        } catch (const json::exception& e) {
            raise(ErrorCode::ConfigInvalid,
                  std::string("config value ") + section + "." + key + ": " + e.what());
        }
    }
};

std::uint64_t env_seed_fallback(std::uint64_t fallback) {
    const char* env = std::getenv("GCOOP_SEED");
    if (env == nullptr || *env == '\0') return fallback;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == nullptr || *end != '\0')
        raise(ErrorCode::ConfigInvalid, "GCOOP_SEED must be an unsigned integer");
    return static_cast<std::uint64_t>(v);
}

std::string hex_digest(const json& effective) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(effective.dump())));
    return buf;
}

// shared flag bundles -------------------------------------------------------

struct ModelFlags {
    std::string encoder = "meanpool";
    std::uint64_t seed = 0;
    std::size_t d_word = 16;
    std::size_t d_joint = 0;  // 0: match the feature dimension
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t ffn_width = 32;
    std::size_t m_ctx = 4;
    double sim_scale = 100.0;

    CLI::Option* seed_opt = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--encoder", encoder, "text encoder variant (meanpool|toytf)")
            ->check(CLI::IsMember({"meanpool", "toytf"}));
        seed_opt = cmd->add_option("--model-seed", seed, "seed for frozen weights");
        cmd->add_option("--d-word", d_word, "word embedding dimension");
        cmd->add_option("--d-joint", d_joint, "joint embedding dimension (default: feature dim)");
        cmd->add_option("--n-layers", n_layers, "toytf layer count");
        cmd->add_option("--n-heads", n_heads, "toytf head count");
        cmd->add_option("--ffn-width", ffn_width, "toytf feed-forward width");
        cmd->add_option("--m-ctx", m_ctx, "learnable context vectors per prompt");
        cmd->add_option("--sim-scale", sim_scale, "cosine logit scale");
    }

    void merge(const FileConfig& cfg, CLI::App* cmd) {
        cfg.merge(encoder, cmd->get_option("--encoder"), "model", "encoder");
        cfg.merge(seed, seed_opt, "model", "seed");
        cfg.merge(d_word, cmd->get_option("--d-word"), "model", "d_word");
        cfg.merge(d_joint, cmd->get_option("--d-joint"), "model", "d_joint");
        cfg.merge(n_layers, cmd->get_option("--n-layers"), "model", "n_layers");
        cfg.merge(n_heads, cmd->get_option("--n-heads"), "model", "n_heads");
        cfg.merge(ffn_width, cmd->get_option("--ffn-width"), "model", "ffn_width");
        cfg.merge(m_ctx, cmd->get_option("--m-ctx"), "model", "m_ctx");
        cfg.merge(sim_scale, cmd->get_option("--sim-scale"), "model", "sim_scale");
    }

    EncoderSpec encoder_spec(std::size_t feature_dim) const {
        EncoderSpec e;
        e.variant = encoder;
        e.seed = seed;
        e.d_word = d_word;
        e.d_joint = d_joint == 0 ? feature_dim : d_joint;
        e.n_layers = n_layers;
        e.n_heads = n_heads;
        e.ffn_width = ffn_width;
        if (e.d_joint != feature_dim)
            raise(ErrorCode::DimensionMismatch, "encoder d_joint must equal the feature dimension");
        return e;
    }

    json effective(std::size_t feature_dim) const {
        return {{"encoder", encoder},   {"seed", seed},           {"d_word", d_word},
                {"d_joint", d_joint == 0 ? feature_dim : d_joint}, {"n_layers", n_layers},
                {"n_heads", n_heads},   {"ffn_width", ffn_width}, {"m_ctx", m_ctx},
                {"sim_scale", sim_scale}};
    }
};

struct TrainFlags {
    std::size_t epochs = 100;
    double lr = 0.002;
    std::string optimizer = "adam";
    std::size_t batch_size = 256;
    std::uint64_t seed = 0;

    CLI::Option* seed_opt = nullptr;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--optimizer", optimizer, "optimizer (sgd|adam)")
            ->check(CLI::IsMember({"sgd", "adam"}));
        cmd->add_option("--batch-size", batch_size, "minibatch size");
        seed_opt = cmd->add_option("--seed", seed, "training seed");
    }

    void merge(const FileConfig& cfg, CLI::App* cmd) {
        cfg.merge(epochs, cmd->get_option("--epochs"), "train", "epochs");
        cfg.merge(lr, cmd->get_option("--lr"), "train", "lr");
        cfg.merge(optimizer, cmd->get_option("--optimizer"), "train", "optimizer");
        cfg.merge(batch_size, cmd->get_option("--batch-size"), "train", "batch_size");
        cfg.merge(seed, seed_opt, "train", "seed");
        if (seed_opt->count() == 0 && !(cfg.doc.contains("train") && cfg.doc["train"].contains("seed")))
            seed = env_seed_fallback(seed);
    }

    TrainConfig train_config(const ModelFlags& model) const {
        TrainConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.learning_rate = lr;
        t.optimizer = opt_kind_from_string(optimizer);
        t.m_ctx = model.m_ctx;
        t.sim_scale = model.sim_scale;
        t.seed = seed;
        t.validate();
        return t;
    }

    json effective() const {
        return {{"epochs", epochs},
                {"lr", lr},
                {"optimizer", optimizer},
                {"batch_size", batch_size},
                {"seed", seed}};
    }
};

std::vector<std::uint32_t> labels_from_file(const std::string& path, const GroupedDataset& train) {
    const PseudoLabelSet set = load_pseudo_labels(path);
    if (set.samples.size() != train.n())
        raise(ErrorCode::CountMismatch, "pseudo label count != train sample count");
    auto labels = set.group_labels();
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= train.n_groups())
            raise(ErrorCode::CountMismatch, "pseudo group id out of range");
    return labels;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    out << text;
    if (!out) raise(ErrorCode::IoError, "short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// subcommand bodies

struct GenDataCmd {
    std::string out_dir;
    std::string config_path;
    SyntheticSpec spec;
    CLI::Option* seed_opt = nullptr;
    CLI::App* cmd = nullptr;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("gen-data", "generate a synthetic spurious-correlation dataset");
        cmd->add_option("--out", out_dir, "output directory")->required();
        cmd->add_option("--config", config_path, "JSON run config");
        cmd->add_option("--classes", spec.n_classes, "number of classes");
        cmd->add_option("--attrs", spec.n_attrs, "number of spurious attributes");
        cmd->add_option("--rho", spec.rho, "correlated-attribute probability");
        cmd->add_option("--n-train", spec.n_train, "train sample count");
        cmd->add_option("--n-val", spec.n_val, "validation sample count");
        cmd->add_option("--n-test", spec.n_test, "test sample count");
        cmd->add_option("--dim", spec.dim, "feature dimension");
        cmd->add_option("--alpha", spec.alpha, "class direction strength");
        cmd->add_option("--beta", spec.beta, "attribute direction strength");
        cmd->add_option("--sigma", spec.sigma, "noise level");
        seed_opt = cmd->add_option("--seed", spec.seed, "generator seed");
        cmd->callback([this] { run(); });
    }

    void run() {
        FileConfig cfg;
        if (!config_path.empty()) cfg = FileConfig::load(config_path);
        cfg.merge(spec.n_classes, cmd->get_option("--classes"), "data", "classes");
        cfg.merge(spec.n_attrs, cmd->get_option("--attrs"), "data", "attrs");
        cfg.merge(spec.rho, cmd->get_option("--rho"), "data", "rho");
        cfg.merge(spec.n_train, cmd->get_option("--n-train"), "data", "n_train");
        cfg.merge(spec.n_val, cmd->get_option("--n-val"), "data", "n_val");
        cfg.merge(spec.n_test, cmd->get_option("--n-test"), "data", "n_test");
        cfg.merge(spec.dim, cmd->get_option("--dim"), "data", "dim");
        cfg.merge(spec.alpha, cmd->get_option("--alpha"), "data", "alpha");
        cfg.merge(spec.beta, cmd->get_option("--beta"), "data", "beta");
        cfg.merge(spec.sigma, cmd->get_option("--sigma"), "data", "sigma");
        cfg.merge(spec.seed, seed_opt, "data", "seed");
        if (seed_opt->count() == 0 && !(cfg.doc.contains("data") && cfg.doc["data"].contains("seed")))
            spec.seed = env_seed_fallback(spec.seed);

        const json effective{{"data",
                              {{"classes", spec.n_classes},
                               {"attrs", spec.n_attrs},
                               {"rho", spec.rho},
                               {"n_train", spec.n_train},
                               {"n_val", spec.n_val},
                               {"n_test", spec.n_test},
                               {"dim", spec.dim},
                               {"alpha", spec.alpha},
                               {"beta", spec.beta},
                               {"sigma", spec.sigma},
                               {"seed", spec.seed}}}};
        const std::string digest = hex_digest(effective);

        auto data = generate_synthetic(spec);
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        for (auto* split : {&data.train, &data.val, &data.test}) {
            split->meta.provenance += " config=" + digest + " version=" + kArtifactVersion;
            save_store(*split, (fs::path(out_dir) / (split->split_tag + ".gcfs")).string());
        }
        std::cout << "wrote " << out_dir << "/{train,val,test}.gcfs  config=" << digest << "\n";
    }
};

struct PseudoLabelCmd {
    std::string train_path, val_path, out_path, labeler = "confidence", config_path;
    double split_ratio = 0.5;
    std::size_t attr_epochs = 500;
    double attr_lr = 0.1;
    std::uint64_t seed = 0;
    ModelFlags model;  // encoder settings for the zs labeler
    CLI::Option* seed_opt = nullptr;
    CLI::App* cmd = nullptr;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("pseudo-label", "assign pseudo group labels to the training set");
        cmd->add_option("--train", train_path, "training feature store")->required();
        cmd->add_option("--val", val_path, "group-labeled validation feature store");
        cmd->add_option("--out", out_path, "output pseudo label file")->required();
        cmd->add_option("--config", config_path, "JSON run config");
        cmd->add_option("--labeler", labeler, "labeler (confidence|zs|kmeans)")
            ->check(CLI::IsMember({"confidence", "zs", "kmeans"}));
        cmd->add_option("--split-ratio", split_ratio, "validation split ratio for D_s");
        cmd->add_option("--attr-epochs", attr_epochs, "attribute classifier epochs");
        cmd->add_option("--attr-lr", attr_lr, "attribute classifier learning rate");
        seed_opt = cmd->add_option("--seed", seed, "labeling seed");
        model.attach(cmd);
        cmd->callback([this] { run(); });
    }

    void run() {
        FileConfig cfg;
        if (!config_path.empty()) cfg = FileConfig::load(config_path);
        cfg.merge(labeler, cmd->get_option("--labeler"), "labels", "labeler");
        cfg.merge(split_ratio, cmd->get_option("--split-ratio"), "labels", "split_ratio");
        cfg.merge(attr_epochs, cmd->get_option("--attr-epochs"), "labels", "attr_epochs");
        cfg.merge(attr_lr, cmd->get_option("--attr-lr"), "labels", "attr_lr");
        cfg.merge(seed, seed_opt, "labels", "seed");
        if (seed_opt->count() == 0 && !(cfg.doc.contains("labels") && cfg.doc["labels"].contains("seed")))
            seed = env_seed_fallback(seed);
        model.merge(cfg, cmd);

        const GroupedDataset train = load_store(train_path);

        PseudoLabelSet set;
        if (labeler == "confidence") {
            if (val_path.empty())
                raise(ErrorCode::BadUsage, "confidence labeler needs --val");
            const GroupedDataset val = load_store(val_path);
            PseudoChainConfig chain;
            chain.split_ratio = split_ratio;
            chain.attr_epochs = attr_epochs;
            chain.attr_lr = attr_lr;
            set = pseudo_label_confidence(train, val, chain, seed);
        } else if (labeler == "zs") {
            const TextStack stack = make_text_stack(train.meta, model.encoder_spec(train.dim()));
            set = pseudo_label_zs(train, *stack.encoder, stack.vocab, stack.table);
            set.seed = seed;
        } else {
            set = pseudo_label_kmeans(train, seed);
        }

        const json effective{{"labels",
                              {{"labeler", labeler},
                               {"split_ratio", split_ratio},
                               {"attr_epochs", attr_epochs},
                               {"attr_lr", attr_lr},
                               {"seed", seed}}},
                             {"model", model.effective(train.dim())}};
        set.config_digest = hex_digest(effective);
        set.config_echo = effective.dump();
        save_pseudo_labels(set, out_path);
        std::cout << "wrote " << out_path << "  tau="
                  << (set.tau_meaningful ? std::to_string(set.tau) : std::string("n/a"))
                  << "  config=" << set.config_digest << "\n";
    }
};

struct TrainCmd {
    std::string train_path, val_path, labels = "gt", out_path, config_path;
    ModelFlags model;
    TrainFlags train;
    CLI::App* cmd = nullptr;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("train", "train per-group prompt contexts");
        cmd->add_option("--train", train_path, "training feature store")->required();
        cmd->add_option("--val", val_path, "validation feature store (dimension check only)");
        cmd->add_option("--labels", labels, "gt or a pseudo label file");
        cmd->add_option("--out", out_path, "output model file")->required();
        cmd->add_option("--config", config_path, "JSON run config");
        model.attach(cmd);
        train.attach(cmd);
        cmd->callback([this] { run(); });
    }

    void run() {
        FileConfig cfg;
        if (!config_path.empty()) cfg = FileConfig::load(config_path);
        cfg.merge(labels, cmd->get_option("--labels"), "labels", "source");
        model.merge(cfg, cmd);
        train.merge(cfg, cmd);

        const GroupedDataset train_ds = load_store(train_path);
        if (!val_path.empty()) {
            const GroupedDataset val_ds = load_store(val_path);
            if (val_ds.dim() != train_ds.dim())
                raise(ErrorCode::DimensionMismatch, "val feature dim != train feature dim");
        }

        std::vector<std::uint32_t> group_labels;
        json label_cfg;
        if (labels == "gt") {
            if (!train_ds.has_attr_labels())
                raise(ErrorCode::MissingLabels, "train store has no attribute labels; pass a label file");
            group_labels = train_ds.group_labels();
            label_cfg = {{"source", "gt"}};
        } else {
            group_labels = labels_from_file(labels, train_ds);
            // chain the label file's digest instead of its (volatile) path
            label_cfg = {{"source", "file"},
                         {"labels_digest", load_pseudo_labels(labels).config_digest}};
        }

        const EncoderSpec espec = model.encoder_spec(train_ds.dim());
        const TrainConfig tcfg = train.train_config(model);
        const json effective{{"labels", label_cfg},
                             {"model", model.effective(train_ds.dim())},
                             {"train", train.effective()}};

        const TextStack stack = make_text_stack(train_ds.meta, espec);
        const GroupIndexing indexing{train_ds.n_classes, train_ds.n_attrs};
        GroupPromptBank bank = make_prompt_bank(indexing, train_ds.meta.class_names, stack.vocab,
                                                stack.table, tcfg);
        auto result = train_group_prompts(train_ds, group_labels, *stack.encoder, std::move(bank), tcfg);

        TrainedModel m;
        m.encoder_spec = espec;
        m.table_seed = stack.table.seed;
        m.vocab = stack.vocab;
        m.bank = std::move(result.bank);
        m.epoch_losses = std::move(result.epoch_losses);
        m.train_seed = tcfg.seed;
        m.config_digest = hex_digest(effective);
        m.config_echo = effective.dump();
        save_model(m, out_path);
        std::cout << "wrote " << out_path << "  final_ce="
                  << (m.epoch_losses.empty() ? 0.0 : m.epoch_losses.back())
                  << "  config=" << m.config_digest << "\n";
    }
};

struct EvalCmd {
    std::string model_path, test_path, train_path, report_path;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("eval", "evaluate a trained model on a test store");
        cmd->add_option("--model", model_path, "model file")->required();
        cmd->add_option("--test", test_path, "test feature store")->required();
        cmd->add_option("--train", train_path, "train store (for InDist weights)")->required();
        cmd->add_option("--report", report_path, "output report file")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        const TrainedModel m = load_model(model_path);
        const GroupedDataset test = load_store(test_path);
        const GroupedDataset train = load_store(train_path);
        const auto encoder = rebuild_encoder(m);
        if (encoder->d_joint() != test.dim())
            raise(ErrorCode::DimensionMismatch, "model d_joint != test feature dim");

        const Matrix emb = prompt_embeddings(m.bank, *encoder);
        std::vector<std::uint32_t> preds(test.n());
        for (std::size_t i = 0; i < test.n(); ++i)
            preds[i] = static_cast<std::uint32_t>(
                infer_cached(m.bank.indexing, emb, m.bank.sim_scale, test.features.row(i)).class_id);

        EvalReport report = evaluate(preds, test, group_stats(train).proportions);
        report.method = "groupcoop";
        report.seed = m.train_seed;
        report.config_digest = m.config_digest;
        report.config_echo = m.config_echo;
        save_eval_report(report, report_path);
        std::cout << "wrote " << report_path << "  worst=" << report.worst
                  << "  indist=" << report.indist << "\n";
    }
};

struct BaselineCmd {
    std::string method, train_path, val_path, test_path, labels = "none", report_path, config_path;
    std::size_t knn_k = 5;
    double split_ratio = 0.5;
    std::size_t attr_epochs = 500;
    double attr_lr = 0.1;
    ModelFlags model;
    TrainFlags train;
    CLI::App* cmd = nullptr;

    void attach(CLI::App& app) {
        cmd = app.add_subcommand("baseline", "run one baseline method");
        cmd->add_option("--method", method, "method name")
            ->required()
            ->check(CLI::IsMember({"zs_class", "zs_group", "erm_linear", "group_linear",
                                   "coop_unified", "coop_csc", "knn", "groupcoop"}));
        cmd->add_option("--train", train_path, "training feature store")->required();
        cmd->add_option("--val", val_path, "validation feature store");
        cmd->add_option("--test", test_path, "test feature store")->required();
        cmd->add_option("--labels", labels, "gt, pseudo, or a pseudo label file");
        cmd->add_option("--report", report_path, "output report file")->required();
        cmd->add_option("--config", config_path, "JSON run config");
        cmd->add_option("--knn-k", knn_k, "neighbor count for knn");
        cmd->add_option("--split-ratio", split_ratio, "pseudo-label validation split ratio");
        cmd->add_option("--attr-epochs", attr_epochs, "pseudo-label attribute classifier epochs");
        cmd->add_option("--attr-lr", attr_lr, "pseudo-label attribute classifier learning rate");
        model.attach(cmd);
        train.attach(cmd);
        cmd->callback([this] { run(); });
    }

    void run() {
        FileConfig cfg;
        if (!config_path.empty()) cfg = FileConfig::load(config_path);
        cfg.merge(knn_k, cmd->get_option("--knn-k"), "eval", "knn_k");
        cfg.merge(labels, cmd->get_option("--labels"), "labels", "source");
        cfg.merge(split_ratio, cmd->get_option("--split-ratio"), "labels", "split_ratio");
        cfg.merge(attr_epochs, cmd->get_option("--attr-epochs"), "labels", "attr_epochs");
        cfg.merge(attr_lr, cmd->get_option("--attr-lr"), "labels", "attr_lr");
        model.merge(cfg, cmd);
        train.merge(cfg, cmd);

        const GroupedDataset train_ds = load_store(train_path);
        const GroupedDataset test_ds = load_store(test_path);
        GroupedDataset val_ds;
        if (!val_path.empty())
            val_ds = load_store(val_path);
        else if (labels == "pseudo")
            raise(ErrorCode::BadUsage, "pseudo labels need --val");

        BaselineSpec spec;
        spec.method = method;
        spec.knn_k = knn_k;
        spec.encoder = model.encoder_spec(train_ds.dim());
        spec.train = train.train_config(model);
        spec.pseudo.split_ratio = split_ratio;
        spec.pseudo.attr_epochs = attr_epochs;
        spec.pseudo.attr_lr = attr_lr;
        json label_cfg{{"source", labels}, {"split_ratio", split_ratio}};
        if (labels == "gt" || labels == "pseudo" || labels == "none") {
            spec.label_source = labels;
        } else {
            spec.label_source = "file";
            spec.label_override = labels_from_file(labels, train_ds);
            label_cfg = {{"source", "file"},
                         {"labels_digest", load_pseudo_labels(labels).config_digest},
                         {"split_ratio", split_ratio}};
        }

        const json effective{{"eval", {{"method", method}, {"knn_k", knn_k}}},
                             {"labels", label_cfg},
                             {"model", model.effective(train_ds.dim())},
                             {"train", train.effective()}};

        EvalReport report = run_baseline(spec, train_ds, val_ds, test_ds, spec.train.seed);
        report.config_digest = hex_digest(effective);
        report.config_echo = effective.dump();
        save_eval_report(report, report_path);
        std::cout << "wrote " << report_path << "  method=" << method << "  worst=" << report.worst
                  << "  indist=" << report.indist << "\n";
    }
};

struct ReportCmd {
    std::vector<std::string> inputs;
    std::string out_path;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("report", "aggregate eval reports into a table");
        cmd->add_option("--inputs", inputs, "eval report files")->required()->expected(-1);
        cmd->add_option("--out", out_path, "output CSV table")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        std::map<std::string, std::vector<EvalReport>> by_method;
        for (const auto& path : inputs) {
            EvalReport r = load_eval_report(path);
            by_method[r.method].push_back(std::move(r));
        }
        if (by_method.empty()) raise(ErrorCode::EmptySet, "no reports given");

        auto mean_std = [](const std::vector<EvalReport>& rs, auto pick) {
            double mean = 0.0;
            for (const auto& r : rs) mean += pick(r);
            mean /= static_cast<double>(rs.size());
            double var = 0.0;
            for (const auto& r : rs) var += (pick(r) - mean) * (pick(r) - mean);
            var /= static_cast<double>(rs.size());
            return std::pair{mean, std::sqrt(std::max(0.0, var))};
        };

        std::string csv = "method,n_runs,worst_mean,worst_std,indist_mean,indist_std\n";
        std::string table = "method            runs  worst(mean+-std)     indist(mean+-std)\n";
        char line[160];
        for (auto& [method, rs] : by_method) {
            std::sort(rs.begin(), rs.end(),
                      [](const EvalReport& a, const EvalReport& b) { return a.seed < b.seed; });
            const auto [wm, ws] = mean_std(rs, [](const EvalReport& r) { return r.worst; });
            const auto [im, is] = mean_std(rs, [](const EvalReport& r) { return r.indist; });
            std::snprintf(line, sizeof line, "%s,%zu,%.17g,%.17g,%.17g,%.17g\n", method.c_str(),
                          rs.size(), wm, ws, im, is);
            csv += line;
            std::snprintf(line, sizeof line, "%-16s %5zu  %7.4f +- %6.4f    %7.4f +- %6.4f\n",
                          method.c_str(), rs.size(), wm, ws, im, is);
            table += line;
        }
        write_text(out_path, csv);
        std::cout << table;
    }
};

struct ExportCmd {
    std::string model_path, data_path, out_path;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("export-embeddings",
                                       "dump image/prompt embeddings as CSV for external plotting");
        cmd->add_option("--model", model_path, "model file")->required();
        cmd->add_option("--data", data_path, "feature store to export")->required();
        cmd->add_option("--out", out_path, "output CSV")->required();
        cmd->callback([this] { run(); });
    }

    void run() {
        const TrainedModel m = load_model(model_path);
        const GroupedDataset ds = load_store(data_path);
        const auto encoder = rebuild_encoder(m);
        const TokenEmbeddingTable table(m.vocab.vocab_size + m.vocab.oov_buckets,
                                        m.encoder_spec.d_word, m.table_seed);
        export_embeddings(m.bank, *encoder, m.vocab, table, ds, out_path);
        std::cout << "wrote " << out_path << "\n";
    }
};

// selfcheck ------------------------------------------------------------------

struct SelfcheckCmd {
    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("selfcheck", "gradient and file-format sanity checks");
        cmd->callback([this] { run(); });
    }

    static Matrix random_seq(std::size_t n, std::size_t d, std::uint64_t seed) {
        Matrix m(n, d);
        Rng rng(seed);
        for (auto& x : m.values()) x = rng.normal();
        return m;
    }

    static void check(bool ok, const char* name, ErrorCode code) {
        if (!ok) raise(code, std::string("selfcheck failed: ") + name);
        std::cout << "[ok] " << name << "\n";
    }

    void run() {
        // encoder vjp vs central differences
        for (const char* variant : {"meanpool", "toytf"}) {
            EncoderSpec espec;
            espec.variant = variant;
            espec.seed = 101;
            espec.d_word = 10;
            espec.d_joint = 12;
            espec.n_layers = 2;
            espec.n_heads = 2;
            espec.ffn_width = 16;
            const auto enc = make_encoder(espec);
            double worst = 0.0;
            Rng rng(55);
            for (int t = 0; t < 5; ++t) {
                const Matrix seq = random_seq(1 + t % 3, 10, 200 + t);
                std::vector<double> up(12);
                for (auto& x : up) x = rng.normal();
                const Matrix analytic = enc->input_vjp(seq, up);
                const ScalarFn f = [&](std::span<const double> flat) {
                    Matrix probe(seq.rows(), seq.cols());
                    std::copy(flat.begin(), flat.end(), probe.values().begin());
                    const auto out = enc->encode(probe);
                    double acc = 0.0;
                    for (std::size_t j = 0; j < up.size(); ++j) acc += up[j] * out[j];
                    return acc;
                };
                worst = std::max(worst, rel_error(analytic.flat(), finite_diff_grad(f, seq.flat(), 1e-5)));
            }
            check(worst < 1e-5, (std::string("input vjp (") + variant + ")").c_str(),
                  ErrorCode::GradientCheckFailed);
        }

        // context gradient through the cosine head
        SyntheticSpec dspec;
        dspec.n_train = 64;
        dspec.n_val = 64;
        dspec.n_test = 16;
        dspec.dim = 12;
        dspec.rho = 0.7;  // keep every validation group populated
        dspec.seed = 3;
        const auto data = generate_synthetic(dspec);
        EncoderSpec espec;
        espec.variant = "meanpool";
        espec.seed = 5;
        espec.d_word = 8;
        espec.d_joint = 12;
        const TextStack stack = make_text_stack(data.train.meta, espec);
        TrainConfig tcfg;
        tcfg.m_ctx = 2;
        tcfg.sim_scale = 40.0;
        tcfg.batch_size = 16;
        tcfg.seed = 7;
        const auto bank = make_prompt_bank({2, 2}, data.train.meta.class_names, stack.vocab,
                                           stack.table, tcfg);
        const auto labels = data.train.group_labels();
        std::vector<std::size_t> batch{0, 1, 2, 3, 4, 5, 6, 7};
        const auto analytic = context_loss_grad(data.train, batch, labels, *stack.encoder, bank);
        const ScalarFn f = [&](std::span<const double> flat) {
            GroupPromptBank probe = bank;
            std::copy(flat.begin(), flat.end(), probe.context.values().begin());
            double loss = 0.0;
            context_loss_grad(data.train, batch, labels, *stack.encoder, probe, &loss);
            return loss;
        };
        const auto fd = finite_diff_grad(f, bank.context.flat(), 1e-5);
        check(rel_error(analytic, fd) < 1e-5, "context gradient", ErrorCode::GradientCheckFailed);

        // file format round trips in a scratch directory
        const fs::path dir = fs::temp_directory_path() / "gcoop_selfcheck";
        fs::remove_all(dir);
        fs::create_directories(dir);
        auto bytes_of = [](const std::string& p) {
            std::ifstream in(p, std::ios::binary);
            return std::string{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
        };

        const std::string s1 = (dir / "a.gcfs").string();
        const std::string s2 = (dir / "b.gcfs").string();
        save_store(data.train, s1);
        save_store(load_store(s1), s2);
        check(bytes_of(s1) == bytes_of(s2), "gcfs round trip", ErrorCode::CountMismatch);

        bool bad_magic_raised = false;
        {
            std::string broken = bytes_of(s1);
            broken[0] = 'X';
            write_text((dir / "broken.gcfs").string(), broken);
            try {
                load_store((dir / "broken.gcfs").string());
            } catch (const Error& e) {
                bad_magic_raised = e.code() == ErrorCode::BadMagic;
            }
        }
        check(bad_magic_raised, "gcfs magic validation", ErrorCode::BadMagic);

        TrainConfig tiny = tcfg;
        tiny.epochs = 2;
        auto trained = train_group_prompts(data.train, labels, *stack.encoder,
                                           make_prompt_bank({2, 2}, data.train.meta.class_names,
                                                            stack.vocab, stack.table, tiny),
                                           tiny);
        TrainedModel m;
        m.encoder_spec = espec;
        m.table_seed = stack.table.seed;
        m.vocab = stack.vocab;
        m.bank = std::move(trained.bank);
        m.epoch_losses = std::move(trained.epoch_losses);
        m.train_seed = tiny.seed;
        m.config_digest = "selfcheck";
        const std::string m1 = (dir / "a.model.json").string();
        const std::string m2 = (dir / "b.model.json").string();
        save_model(m, m1);
        save_model(load_model(m1), m2);
        check(bytes_of(m1) == bytes_of(m2), "model round trip", ErrorCode::CountMismatch);

        auto set = pseudo_label_confidence(data.train, data.val, PseudoChainConfig{}, 9);
        const std::string p1 = (dir / "a.labels.json").string();
        const std::string p2 = (dir / "b.labels.json").string();
        save_pseudo_labels(set, p1);
        save_pseudo_labels(load_pseudo_labels(p1), p2);
        check(bytes_of(p1) == bytes_of(p2), "pseudo label round trip", ErrorCode::CountMismatch);

        fs::remove_all(dir);
        std::cout << "selfcheck passed\n";
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"group-prompt tuning toolkit"};
    app.require_subcommand(1);

    GenDataCmd gen_data;
    PseudoLabelCmd pseudo_label;
    TrainCmd train;
    EvalCmd eval;
    BaselineCmd baseline;
    ReportCmd report;
    ExportCmd export_emb;
    SelfcheckCmd selfcheck;

    gen_data.attach(app);
    pseudo_label.attach(app);
    train.attach(app);
    eval.attach(app);
    baseline.attach(app);
    report.attach(app);
    export_emb.attach(app);
    selfcheck.attach(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "BadUsage: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "InternalError: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
