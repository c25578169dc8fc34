#include "gcoop/model_io.hpp"

#include <fstream>

#include <json.hpp>

namespace gcoop {

TextStack make_text_stack(const DatasetMeta& meta, const EncoderSpec& espec) {
    std::vector<std::string> corpus;
    corpus.insert(corpus.end(), meta.class_names.begin(), meta.class_names.end());
    corpus.insert(corpus.end(), meta.attr_names.begin(), meta.attr_names.end());
    for (const auto& t : meta.class_templates)
        for (const auto& c : meta.class_names) corpus.push_back(instantiate_template(t, c, ""));
    for (const auto& t : meta.group_templates)
        for (const auto& c : meta.class_names)
            for (const auto& a : meta.attr_names) corpus.push_back(instantiate_template(t, c, a));

    TextStack stack;
    stack.vocab = Vocabulary::from_texts(corpus);
    stack.table = TokenEmbeddingTable(stack.vocab.vocab_size + stack.vocab.oov_buckets, espec.d_word,
                                      derive_seed(espec.seed, "token_table"));
    stack.encoder = make_encoder(espec);
    return stack;
}

namespace {

nlohmann::json encoder_spec_to_json(const EncoderSpec& e) {
    return {{"variant", e.variant}, {"seed", e.seed},       {"d_word", e.d_word},
            {"d_joint", e.d_joint}, {"n_layers", e.n_layers}, {"n_heads", e.n_heads},
            {"ffn_width", e.ffn_width}};
}

EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
    EncoderSpec e;
    e.variant = j.at("variant").get<std::string>();
    e.seed = j.at("seed").get<std::uint64_t>();
    e.d_word = j.at("d_word").get<std::size_t>();
    e.d_joint = j.at("d_joint").get<std::size_t>();
    e.n_layers = j.at("n_layers").get<std::size_t>();
    e.n_heads = j.at("n_heads").get<std::size_t>();
    e.ffn_width = j.at("ffn_width").get<std::size_t>();
    return e;
}

}  // namespace

void save_model(const TrainedModel& model, const std::string& path) {
    nlohmann::json context = nlohmann::json::array();
    for (std::size_t r = 0; r < model.bank.context.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (double x : model.bank.context.row(r)) row.push_back(x);
        context.push_back(std::move(row));
    }
    nlohmann::json doc{
        {"artifact_version", kArtifactVersion},
        {"config_digest", model.config_digest},
        {"train_seed", model.train_seed},
        {"encoder", encoder_spec_to_json(model.encoder_spec)},
        {"table_seed", model.table_seed},
        {"vocab",
         {{"words", model.vocab.words_in_order()},
          {"oov_buckets", model.vocab.oov_buckets},
          {"seed", model.vocab.seed}}},
        {"bank",
         {{"n_classes", model.bank.indexing.n_classes},
          {"n_attrs", model.bank.indexing.n_attrs},
          {"m_ctx", model.bank.m_ctx},
          {"shared_context", model.bank.shared_context},
          {"sim_scale", model.bank.sim_scale},
          {"class_names", model.bank.class_names},
          {"context", std::move(context)}}},
        {"epoch_losses", model.epoch_losses},
    };
    doc["config"] = model.config_echo.empty() ? nlohmann::json::object()
                                              : nlohmann::json::parse(model.config_echo);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot open '" + path + "' for writing");
    out << doc.dump(2) << "\n";
}

TrainedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::IoError, "cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::IoError, "bad model file: " + std::string(e.what()));
    }

    TrainedModel m;
    try {
        m.config_digest = doc.at("config_digest").get<std::string>();
        if (doc.contains("config")) m.config_echo = doc["config"].dump();
        m.train_seed = doc.at("train_seed").get<std::uint64_t>();
        m.encoder_spec = encoder_spec_from_json(doc.at("encoder"));
        m.table_seed = doc.at("table_seed").get<std::uint64_t>();

        const auto& jv = doc.at("vocab");
        const auto words = jv.at("words").get<std::vector<std::string>>();
        m.vocab.oov_buckets = jv.at("oov_buckets").get<std::uint32_t>();
        m.vocab.seed = jv.at("seed").get<std::uint64_t>();
        for (std::uint32_t i = 0; i < words.size(); ++i) m.vocab.word_to_id.emplace(words[i], i);
        m.vocab.vocab_size = static_cast<std::uint32_t>(words.size());

        const auto& jb = doc.at("bank");
        m.bank.indexing.n_classes = jb.at("n_classes").get<std::size_t>();
        m.bank.indexing.n_attrs = jb.at("n_attrs").get<std::size_t>();
        m.bank.m_ctx = jb.at("m_ctx").get<std::size_t>();
        m.bank.shared_context = jb.at("shared_context").get<bool>();
        m.bank.sim_scale = jb.at("sim_scale").get<double>();
        m.bank.class_names = jb.at("class_names").get<std::vector<std::string>>();
        const auto& jc = jb.at("context");
        if (jc.size() != m.bank.context_rows())
            raise(ErrorCode::CountMismatch, "context row count does not match bank shape");
        m.bank.context = Matrix(jc.size(), m.encoder_spec.d_word);
        for (std::size_t r = 0; r < jc.size(); ++r) {
            const auto row = jc[r].get<std::vector<double>>();
            if (row.size() != m.encoder_spec.d_word)
                raise(ErrorCode::CountMismatch, "context row width does not match d_word");
            std::copy(row.begin(), row.end(), m.bank.context.row(r).begin());
        }
        m.epoch_losses = doc.at("epoch_losses").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::CountMismatch, "model file missing fields: " + std::string(e.what()));
    }

    if (m.bank.class_names.size() != m.bank.indexing.n_classes)
        raise(ErrorCode::CountMismatch, "class name count != n_classes");
    TokenEmbeddingTable table(m.vocab.vocab_size + m.vocab.oov_buckets, m.encoder_spec.d_word,
                              m.table_seed);
    for (const auto& name : m.bank.class_names)
        m.bank.class_token_seqs.push_back(embed_text(name, m.vocab, table));
    return m;
}

std::unique_ptr<TextEncoder> rebuild_encoder(const TrainedModel& model) {
    return make_encoder(model.encoder_spec);
}

}  // namespace gcoop
