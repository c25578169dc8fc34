#include "gcoop/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace gcoop {

std::vector<std::string> split_lower(std::string_view text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                words.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

Vocabulary Vocabulary::from_texts(const std::vector<std::string>& texts, std::uint32_t oov_buckets,
                                  std::uint64_t seed) {
    std::set<std::string> unique;
    for (const auto& t : texts)
        for (auto& w : split_lower(t)) unique.insert(std::move(w));
    Vocabulary v;
    v.oov_buckets = oov_buckets;
    v.seed = seed;
    std::uint32_t next = 0;
    for (const auto& w : unique) v.word_to_id.emplace(w, next++);
    v.vocab_size = next;
    return v;
}

std::vector<std::string> Vocabulary::words_in_order() const {
    std::vector<std::string> out(vocab_size);
    for (const auto& [w, id] : word_to_id) out[id] = w;
    return out;
}

std::vector<std::uint32_t> tokenize(std::string_view text, const Vocabulary& vocab) {
    const auto words = split_lower(text);
    if (words.empty()) raise(ErrorCode::EmptyText, "tokenize of empty text");
    if (vocab.oov_buckets == 0) raise(ErrorCode::ConfigInvalid, "vocabulary needs oov_buckets >= 1");
    std::vector<std::uint32_t> ids;
    ids.reserve(words.size());
    for (const auto& w : words) {
        auto it = vocab.word_to_id.find(w);
        if (it != vocab.word_to_id.end()) {
            ids.push_back(it->second);
        } else {
            const std::uint64_t h = fnv1a64(w, vocab.seed);
            ids.push_back(vocab.vocab_size + static_cast<std::uint32_t>(h % vocab.oov_buckets));
        }
    }
    return ids;
}

TokenEmbeddingTable::TokenEmbeddingTable(std::size_t n_tokens, std::size_t d_word, std::uint64_t seed)
    : table(n_tokens, d_word), seed(seed) {
    Rng rng(seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_word));
    for (double& x : table.values()) x = rng.uniform(-scale, scale);
}

std::span<const double> TokenEmbeddingTable::embed(std::uint32_t token_id) const {
    if (token_id >= table.rows()) raise(ErrorCode::IndexOutOfRange, "token id outside embedding table");
    return table.row(token_id);
}

Matrix embed_tokens(const std::vector<std::uint32_t>& ids, const TokenEmbeddingTable& table) {
    Matrix seq(ids.size(), table.d_word());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto r = table.embed(ids[i]);
        std::copy(r.begin(), r.end(), seq.row(i).begin());
    }
    return seq;
}

Matrix embed_text(std::string_view text, const Vocabulary& vocab, const TokenEmbeddingTable& table) {
    return embed_tokens(tokenize(text, vocab), table);
}

std::string instantiate_template(std::string_view tmpl, std::string_view class_name,
                                 std::string_view attr_name) {
    std::string out(tmpl);
    auto replace_all = [&out](std::string_view key, std::string_view value) {
        std::size_t pos = 0;
        while ((pos = out.find(key, pos)) != std::string::npos) {
            out.replace(pos, key.size(), value);
            pos += value.size();
        }
    };
    replace_all("{class}", class_name);
    replace_all("{attribute}", attr_name);
    return out;
}

}  // namespace gcoop
