#pragma once

#include <cstdint>
#include <filesystem>

#include "json.hpp"
#include "tvp/bench.hpp"
#include "tvp/evaluator.hpp"
#include "tvp/model.hpp"
#include "tvp/prompting.hpp"
#include "tvp/synthgen.hpp"
#include "tvp/trainer.hpp"

namespace tvp {

inline constexpr int kRunConfigVersion = 1;

/// Everything one experiment needs, loaded from a single versioned JSON file.
struct RunConfig {
    int version = kRunConfigVersion;
    std::uint64_t seed = 0;  // model init, prompt init and shuffling
    int threads = 1;
    PipelineConfig pipeline;
    ModelConfig model;  // n_sam, canvas and n_tp are filled from pipeline/prompt
    PromptConfig prompt;
    LossConfig loss;
    TrainConfig base = TrainConfig::desk_defaults(Stage::base);
    TrainConfig prompt_stage = TrainConfig::desk_defaults(Stage::prompt);
    TrainConfig finetune = TrainConfig::desk_defaults(Stage::finetune);
    EvalOptions eval;
    SyntheticSpec data;
    BenchConfig bench;

    static RunConfig desk();
    /// Pushes shared fields (sizes, seed, loss, threads) into the sub-configs.
    void sync();
    /// Cross-field checks; throws std::invalid_argument.
    void validate() const;
    TrainConfig train_config(Stage s) const;
};

nlohmann::json to_json(const RunConfig& c);
/// Unknown keys and version mismatches throw std::invalid_argument.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
nlohmann::json to_json(const PromptConfig& c);
PromptConfig prompt_config_from_json(const nlohmann::json& j, PromptConfig base = {});
nlohmann::json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const nlohmann::json& j, LossConfig base = {});

}  // namespace tvp
