#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gcoop/common.hpp"
#include "gcoop/matrix.hpp"

namespace gcoop {

// Lowercase whitespace tokenizer with hashed OOV buckets. Known words map to
// ids below vocab_size; unknown words land in [vocab_size, vocab_size + oov_buckets).
struct Vocabulary {
    std::map<std::string, std::uint32_t> word_to_id;  // ordered for stable serialization
    std::uint32_t vocab_size = 0;
    std::uint32_t oov_buckets = 64;
    std::uint64_t seed = 0;

    // Builds the vocabulary from the unique words of `texts`, ids assigned in
    // sorted word order.
    static Vocabulary from_texts(const std::vector<std::string>& texts,
                                 std::uint32_t oov_buckets = 64, std::uint64_t seed = 0);

    std::vector<std::string> words_in_order() const;
};

std::vector<std::string> split_lower(std::string_view text);

std::vector<std::uint32_t> tokenize(std::string_view text, const Vocabulary& vocab);

// Frozen per-token embeddings, seeded uniform in [-1/sqrt(d), 1/sqrt(d)].
struct TokenEmbeddingTable {
    Matrix table;  // (vocab_size + oov_buckets) x d_word
    std::uint64_t seed = 0;

    TokenEmbeddingTable() = default;
    TokenEmbeddingTable(std::size_t n_tokens, std::size_t d_word, std::uint64_t seed);

    std::size_t d_word() const { return table.cols(); }
    std::span<const double> embed(std::uint32_t token_id) const;
};

// Token-id sequence -> (n_tokens x d_word) row matrix.
Matrix embed_tokens(const std::vector<std::uint32_t>& ids, const TokenEmbeddingTable& table);

Matrix embed_text(std::string_view text, const Vocabulary& vocab, const TokenEmbeddingTable& table);

// Replaces "{class}" and "{attribute}" placeholders.
std::string instantiate_template(std::string_view tmpl, std::string_view class_name,
                                 std::string_view attr_name);

}  // namespace gcoop
