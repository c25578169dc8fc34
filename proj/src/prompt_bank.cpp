#include "gcoop/prompt_bank.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gcoop {

void TrainConfig::validate() const {
    if (m_ctx < 1) raise(ErrorCode::ConfigInvalid, "m_ctx must be >= 1");
    if (epochs > 1000000) raise(ErrorCode::ConfigInvalid, "epochs unreasonably large");
    if (batch_size == 0) raise(ErrorCode::ConfigInvalid, "batch_size must be >= 1");
    if (learning_rate <= 0.0) raise(ErrorCode::ConfigInvalid, "learning_rate must be > 0");
    if (sim_scale <= 0.0) raise(ErrorCode::ConfigInvalid, "sim_scale must be > 0");
}

GroupPromptBank make_prompt_bank(const GroupIndexing& indexing, const std::vector<std::string>& class_names,
                                 const Vocabulary& vocab, const TokenEmbeddingTable& table,
                                 const TrainConfig& cfg, bool shared_context) {
    cfg.validate();
    if (class_names.size() != indexing.n_classes)
        raise(ErrorCode::CountMismatch, "class name count != n_classes");
    GroupPromptBank bank;
    bank.indexing = indexing;
    bank.m_ctx = cfg.m_ctx;
    bank.shared_context = shared_context;
    bank.sim_scale = cfg.sim_scale;
    bank.class_names = class_names;
    bank.context = Matrix(bank.context_rows(), table.d_word());
    Rng rng(cfg.seed);
    for (double& x : bank.context.values()) x = 0.02 * rng.normal();
    bank.class_token_seqs.reserve(class_names.size());
    for (const auto& name : class_names) bank.class_token_seqs.push_back(embed_text(name, vocab, table));
    return bank;
}

Matrix assemble_prompt(const GroupPromptBank& bank, std::size_t g) {
    if (g >= bank.indexing.n_groups()) raise(ErrorCode::IndexOutOfRange, "group id out of range");
    const Matrix& cls = bank.class_token_seqs[bank.indexing.class_of(g)];
    Matrix seq(bank.m_ctx + cls.rows(), bank.context.cols());
    const std::size_t base = bank.context_base_row(g);
    for (std::size_t m = 0; m < bank.m_ctx; ++m)
        std::copy(bank.context.row(base + m).begin(), bank.context.row(base + m).end(), seq.row(m).begin());
    for (std::size_t r = 0; r < cls.rows(); ++r)
        std::copy(cls.row(r).begin(), cls.row(r).end(), seq.row(bank.m_ctx + r).begin());
    return seq;
}

Matrix prompt_embeddings(const GroupPromptBank& bank, const TextEncoder& encoder) {
    Matrix embs(bank.indexing.n_groups(), encoder.d_joint());
    for (std::size_t g = 0; g < bank.indexing.n_groups(); ++g) {
        const auto e = encoder.encode(assemble_prompt(bank, g));
        std::copy(e.begin(), e.end(), embs.row(g).begin());
    }
    return embs;
}

std::vector<double> group_logits_cached(std::span<const double> x_feat, const Matrix& embeddings,
                                        double sim_scale) {
    std::vector<double> logits(embeddings.rows());
    for (std::size_t g = 0; g < embeddings.rows(); ++g)
        logits[g] = sim_scale * cosine_sim(embeddings.row(g), x_feat);
    return logits;
}

std::vector<double> group_logits(std::span<const double> x_feat, const GroupPromptBank& bank,
                                 const TextEncoder& encoder) {
    return group_logits_cached(x_feat, prompt_embeddings(bank, encoder), bank.sim_scale);
}

BalancedBatcher::BalancedBatcher(const std::vector<std::uint32_t>& group_labels, std::size_t n_groups,
                                 std::size_t batch_size, std::uint64_t seed)
    : by_group_(n_groups), batch_size_(batch_size), rng_(seed) {
    if (batch_size < n_groups)
        raise(ErrorCode::ConfigInvalid, "batch_size must be >= the number of groups");
    for (std::size_t i = 0; i < group_labels.size(); ++i) {
        if (group_labels[i] >= n_groups) raise(ErrorCode::IndexOutOfRange, "group label out of range");
        by_group_[group_labels[i]].push_back(i);
    }
    for (std::size_t g = 0; g < n_groups; ++g)
        if (by_group_[g].empty())
            raise(ErrorCode::EmptyGroup, "group " + std::to_string(g) + " has no training samples");
}

std::vector<std::size_t> BalancedBatcher::next_batch() {
    const std::size_t n_groups = by_group_.size();
    const std::size_t per_group = batch_size_ / n_groups;
    const std::size_t remainder = batch_size_ % n_groups;
    std::vector<std::size_t> batch;
    batch.reserve(batch_size_);
    for (std::size_t g = 0; g < n_groups; ++g) {
        const std::size_t count = per_group + (g < remainder ? 1 : 0);
        const auto& pool = by_group_[g];
        for (std::size_t j = 0; j < count; ++j) batch.push_back(pool[rng_.uniform_index(pool.size())]);
    }
    return batch;
}

InferResult infer_cached(const GroupIndexing& indexing, const Matrix& embeddings, double sim_scale,
                         std::span<const double> x_feat) {
    const auto logits = group_logits_cached(x_feat, embeddings, sim_scale);
    InferResult r;
    r.posterior = softmax(logits);
    r.group = 0;
    for (std::size_t g = 1; g < r.posterior.size(); ++g)
        if (r.posterior[g] > r.posterior[r.group]) r.group = g;  // ties keep the lowest id
    r.class_id = indexing.class_of(r.group);
    return r;
}

InferResult infer(const GroupPromptBank& bank, const TextEncoder& encoder, std::span<const double> x_feat) {
    return infer_cached(bank.indexing, prompt_embeddings(bank, encoder), bank.sim_scale, x_feat);
}

std::size_t param_count(const GroupPromptBank& bank) {
    // n_groups * M * d_word for a per-group bank; M * d_word when shared
    return bank.context.size();
}

std::vector<double> context_loss_grad(const GroupedDataset& ds, const std::vector<std::size_t>& batch,
                                      const std::vector<std::uint32_t>& group_labels,
                                      const TextEncoder& encoder, const GroupPromptBank& bank,
                                      double* loss_out) {
    const std::size_t n_groups = bank.indexing.n_groups();
    std::vector<Matrix> prompts(n_groups);
    Matrix embs(n_groups, encoder.d_joint());
    for (std::size_t g = 0; g < n_groups; ++g) {
        prompts[g] = assemble_prompt(bank, g);
        const auto e = encoder.encode(prompts[g]);
        std::copy(e.begin(), e.end(), embs.row(g).begin());
    }

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    Matrix upstream(n_groups, encoder.d_joint());
    double loss = 0.0;
    for (const std::size_t i : batch) {
        const auto logits = group_logits_cached(ds.features.row(i), embs, bank.sim_scale);
        const auto ce = softmax_ce(logits, group_labels[i]);
        loss += ce.loss * inv_b;
        for (std::size_t g = 0; g < n_groups; ++g) {
            const double coeff = ce.dlogits[g] * inv_b * bank.sim_scale;
            if (coeff == 0.0) continue;
            const auto dcos = cosine_sim_grad_u(embs.row(g), ds.features.row(i));
            for (std::size_t j = 0; j < dcos.size(); ++j) upstream(g, j) += coeff * dcos[j];
        }
    }

    std::vector<double> grad(bank.context.size(), 0.0);
    const std::size_t d_word = bank.context.cols();
    for (std::size_t g = 0; g < n_groups; ++g) {
        const Matrix gseq = encoder.input_vjp(prompts[g], upstream.row(g));
        const std::size_t base = bank.context_base_row(g);
        // class-token rows of gseq carry gradient too; they are frozen and dropped.
        for (std::size_t m = 0; m < bank.m_ctx; ++m)
            for (std::size_t j = 0; j < d_word; ++j) grad[(base + m) * d_word + j] += gseq(m, j);
    }
    if (loss_out) *loss_out = loss;
    return grad;
}

TrainResult train_group_prompts(const GroupedDataset& ds, const std::vector<std::uint32_t>& group_labels,
                                const TextEncoder& encoder, GroupPromptBank bank, const TrainConfig& cfg) {
    cfg.validate();
    if (group_labels.size() != ds.n()) raise(ErrorCode::CountMismatch, "label count != sample count");
    if (encoder.d_joint() != ds.dim()) raise(ErrorCode::DimensionMismatch, "encoder d_joint != feature dim");

    TrainResult result;
    result.epoch_losses.reserve(cfg.epochs);

    BalancedBatcher batcher(group_labels, bank.indexing.n_groups(), cfg.batch_size, cfg.seed);
    OptimizerState opt = cfg.optimizer == OptKind::Adam ? OptimizerState::adam(cfg.learning_rate)
                                                        : OptimizerState::sgd(cfg.learning_rate);
    const std::size_t steps_per_epoch = (ds.n() + cfg.batch_size - 1) / cfg.batch_size;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            const auto batch = batcher.next_batch();
            double loss = 0.0;
            const auto grad = context_loss_grad(ds, batch, group_labels, encoder, bank, &loss);
            if (!std::isfinite(loss))
                raise(ErrorCode::NonFiniteLoss, "training diverged at epoch " + std::to_string(epoch));
            epoch_loss += loss;
            optimizer_step(opt, bank.context.flat(), grad);
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(steps_per_epoch));
    }
    result.bank = std::move(bank);
    return result;
}

}  // namespace gcoop
