#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcoop/dataset.hpp"
#include "gcoop/encoder.hpp"
#include "gcoop/matrix.hpp"
#include "gcoop/optim.hpp"
#include "gcoop/tokenizer.hpp"

namespace gcoop {

// Bijection between group ids and (class, attribute) pairs: g = y * n_attrs + a.
struct GroupIndexing {
    std::size_t n_classes = 0;
    std::size_t n_attrs = 0;

    std::size_t n_groups() const { return n_classes * n_attrs; }
    std::size_t group_of(std::size_t y, std::size_t a) const { return y * n_attrs + a; }
    std::size_t class_of(std::size_t g) const { return g / n_attrs; }
    std::size_t attr_of(std::size_t g) const { return g % n_attrs; }
};

// Per-group learnable context vectors plus frozen class-name token sequences.
// Only `context` changes during training. When `shared_context` is set the
// bank keeps a single M-row context used by every group (the unified-prompt
// baseline); otherwise row g*M+m holds context vector m of group g.
struct GroupPromptBank {
    GroupIndexing indexing;
    std::size_t m_ctx = 4;
    bool shared_context = false;
    Matrix context;                       // (n_groups*M or M) x d_word
    std::vector<Matrix> class_token_seqs; // per class, frozen
    std::vector<std::string> class_names;
    double sim_scale = 100.0;

    std::size_t context_rows() const { return shared_context ? m_ctx : indexing.n_groups() * m_ctx; }
    std::size_t context_base_row(std::size_t g) const { return shared_context ? 0 : g * m_ctx; }
};

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 256;
    double learning_rate = 0.002;
    OptKind optimizer = OptKind::Adam;
    std::size_t m_ctx = 4;
    double sim_scale = 100.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// Seeded Normal(0, 0.02^2) context plus frozen class token sequences from the
// vocabulary and embedding table.
GroupPromptBank make_prompt_bank(const GroupIndexing& indexing, const std::vector<std::string>& class_names,
                                 const Vocabulary& vocab, const TokenEmbeddingTable& table,
                                 const TrainConfig& cfg, bool shared_context = false);

// Context vectors of group g followed by the class-name token embeddings of
// class(g).
Matrix assemble_prompt(const GroupPromptBank& bank, std::size_t g);

// One joint-space embedding per group, rows in group-id order.
Matrix prompt_embeddings(const GroupPromptBank& bank, const TextEncoder& encoder);

// logit[g] = sim_scale * cos(f(t_g), x_feat)
std::vector<double> group_logits(std::span<const double> x_feat, const GroupPromptBank& bank,
                                 const TextEncoder& encoder);
std::vector<double> group_logits_cached(std::span<const double> x_feat, const Matrix& embeddings,
                                        double sim_scale);

// Group-balanced minibatch index stream: floor(B/|G|) per group drawn with
// replacement, remainder round-robin from group 0 upward.
class BalancedBatcher {
public:
    BalancedBatcher(const std::vector<std::uint32_t>& group_labels, std::size_t n_groups,
                    std::size_t batch_size, std::uint64_t seed);

    std::vector<std::size_t> next_batch();
    std::size_t batch_size() const { return batch_size_; }

private:
    std::vector<std::vector<std::size_t>> by_group_;
    std::size_t batch_size_;
    Rng rng_;
};

struct InferResult {
    std::size_t group = 0;
    std::size_t class_id = 0;
    std::vector<double> posterior;
};

InferResult infer(const GroupPromptBank& bank, const TextEncoder& encoder, std::span<const double> x_feat);
InferResult infer_cached(const GroupIndexing& indexing, const Matrix& embeddings, double sim_scale,
                         std::span<const double> x_feat);

std::size_t param_count(const GroupPromptBank& bank);

struct TrainResult {
    GroupPromptBank bank;
    std::vector<double> epoch_losses;  // mean batch CE per epoch
};

// Minimizes mean group cross-entropy over balanced minibatches. Gradients
// reach the context rows through the cosine head and the encoder input-VJP;
// class-token positions are computed but discarded (frozen CLS).
TrainResult train_group_prompts(const GroupedDataset& ds, const std::vector<std::uint32_t>& group_labels,
                                const TextEncoder& encoder, GroupPromptBank bank, const TrainConfig& cfg);

// Analytic gradient of the mean-batch CE loss with respect to the flattened
// context matrix; exposed for gradient checking.
std::vector<double> context_loss_grad(const GroupedDataset& ds, const std::vector<std::size_t>& batch,
                                      const std::vector<std::uint32_t>& group_labels,
                                      const TextEncoder& encoder, const GroupPromptBank& bank,
                                      double* loss_out = nullptr);

}  // namespace gcoop
