#pragma once

#include <memory>
#include <string>

#include "gcoop/dataset.hpp"
#include "gcoop/encoder.hpp"
#include "gcoop/prompt_bank.hpp"
#include "gcoop/tokenizer.hpp"

namespace gcoop {

// Tokenizer + frozen token table + frozen encoder, derived deterministically
// from dataset metadata and an encoder spec.
struct TextStack {
    Vocabulary vocab;
    TokenEmbeddingTable table;
    std::unique_ptr<TextEncoder> encoder;
};

TextStack make_text_stack(const DatasetMeta& meta, const EncoderSpec& espec);

// Everything evaluation needs to reconstruct the identical frozen pipeline:
// encoder spec and seeds, vocabulary, context matrix at full precision.
struct TrainedModel {
    EncoderSpec encoder_spec;
    std::uint64_t table_seed = 0;
    Vocabulary vocab;
    GroupPromptBank bank;
    std::vector<double> epoch_losses;
    std::uint64_t train_seed = 0;
    std::string config_digest;
    std::string config_echo;  // effective config as JSON text, may be empty
};

void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

std::unique_ptr<TextEncoder> rebuild_encoder(const TrainedModel& model);

}  // namespace gcoop
