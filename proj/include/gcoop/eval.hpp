#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcoop/dataset.hpp"
#include "gcoop/encoder.hpp"
#include "gcoop/prompt_bank.hpp"
#include "gcoop/pseudo_label.hpp"

namespace gcoop {

struct EvalReport {
    std::vector<double> per_group_acc;
    double worst = 0.0;
    double indist = 0.0;  // weighted by the train split's group proportions
    std::vector<std::size_t> n_per_group;
    std::string method;
    std::uint64_t seed = 0;
    std::string config_digest;
    std::string config_echo;  // effective config as JSON text, may be empty
};

// Per-group accuracy of class predictions on a group-labeled test set; worst
// is the minimum, indist the train-proportion-weighted mean.
EvalReport evaluate(const std::vector<std::uint32_t>& preds, const GroupedDataset& test,
                    const std::vector<double>& train_props);

struct BaselineSpec {
    std::string method;                // zs_class zs_group erm_linear group_linear coop_unified
                                       // coop_csc knn groupcoop
    std::string label_source = "none"; // gt | pseudo | file | none
    std::size_t knn_k = 5;
    TrainConfig train;
    EncoderSpec encoder;
    PseudoChainConfig pseudo;
    std::vector<std::uint32_t> label_override;  // used when label_source == "file"
};

EvalReport run_baseline(BaselineSpec spec, const GroupedDataset& train, const GroupedDataset& val,
                        const GroupedDataset& test, std::uint64_t seed);

struct MethodSummary {
    std::string method;
    double worst_mean = 0.0;
    double worst_std = 0.0;   // population std
    double indist_mean = 0.0;
    double indist_std = 0.0;
    std::vector<EvalReport> per_seed;
};

struct ExperimentSummary {
    std::vector<MethodSummary> methods;  // sorted by method name
    std::vector<std::uint64_t> seeds;    // ascending
};

ExperimentSummary run_experiment(std::vector<BaselineSpec> specs, const GroupedDataset& train,
                                 const GroupedDataset& val, const GroupedDataset& test,
                                 std::vector<std::uint64_t> seeds);

// CSV rows: kind in {image, group_prompt, zs_prompt}, group id (-1 when not
// applicable), class id, then d_joint coordinates.
void export_embeddings(const GroupPromptBank& bank, const TextEncoder& encoder, const Vocabulary& vocab,
                       const TokenEmbeddingTable& table, const GroupedDataset& ds,
                       const std::string& path);

std::string eval_report_to_json(const EvalReport& report);
void save_eval_report(const EvalReport& report, const std::string& path);
EvalReport load_eval_report(const std::string& path);

std::string experiment_summary_to_json(const ExperimentSummary& summary);

}  // namespace gcoop
