#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvp/dataset.hpp"
#include "tvp/evaluator.hpp"
#include "tvp/model.hpp"
#include "tvp/prompting.hpp"

namespace tvp {

enum class Stage { base, prompt, finetune };

std::string to_string(Stage s);
/// Throws std::invalid_argument for names other than base/prompt/finetune.
Stage stage_from_string(const std::string& s);

struct TrainConfig {
    Stage stage = Stage::base;
    int epochs = 12;
    int batch_size = 16;
    double peak_lr = 1e-3;
    double warmup_fraction = 0.1;
    double weight_decay = 0.01;  // ignored for prompt tensors
    std::uint64_t seed = 0;
    LossConfig loss;
    int threads = 1;
    long max_steps = 0;         // > 0 stops early after this many updates
    bool eval_each_epoch = true;  // held-out metrics in the per-epoch log
    std::vector<double> thresholds{0.3, 0.5, 0.7};

    /// Full-scale schedule: prompt lr 1e-1, finetune lr 5e-7, 12 epochs.
    static TrainConfig paper_defaults(Stage s);
    /// Desk-scale schedule for random-init training on synthetic data.
    static TrainConfig desk_defaults(Stage s);
    void validate() const;
};

/// Linear warmup over ceil(warmup_fraction * total) steps, then linear decay to 0 at total.
double lr_at(long step, long total, double peak, double warmup_fraction);

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One decoupled-weight-decay adaptive-moment update in place; `t` is the
/// 1-based update count used for bias correction.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, double lr, double weight_decay, long t,
                  const AdamHyper& hyper = {});

/// First and second moments for whichever tensors a stage trains.
struct OptimizerState {
    long t = 0;
    ModelParams m, v;  // empty tensors when the model is frozen
    std::vector<double> visual_m, visual_v, text_m, text_v;
    bool operator==(const OptimizerState&) const = default;
};

/// Everything a checkpoint carries.
struct TrainState {
    ModelConfig model;
    PromptConfig prompt_cfg;  // sizes used when the prompt stage creates prompts
    ModelParams params;
    PromptBundle prompts;
    OptimizerState opt;
    Stage stage = Stage::base;
    long step = 0;
    std::string rng_state;      // shuffle generator state after the last epoch
    nlohmann::json config_echo;  // run configuration, kept verbatim

    /// Fresh base-stage state: seeded params, identity prompts.
    static TrainState fresh(const ModelConfig& model, const PromptConfig& prompt_cfg,
                            std::uint64_t seed);
};

struct EpochMetrics {
    int epoch = 0;
    long step = 0;
    double lr = 0.0;
    double train_loss = 0.0;      // mean training objective over the epoch
    double min_sample_loss = 0.0;  // smallest per-sample objective seen in the epoch
    bool has_val = false;
    double val_loss = 0.0;
    EvalReport val;
};

nlohmann::json to_json(const EpochMetrics& m);

struct TrainResult {
    TrainState state;
    std::vector<EpochMetrics> log;
    double min_sample_loss = 0.0;  // smallest per-sample objective over the whole run
};

/// Raised when a loss or gradient turns non-finite; what() holds the diagnostic dump.
class TrainingDiverged : public std::runtime_error {
public:
    explicit TrainingDiverged(const std::string& dump) : std::runtime_error(dump) {}
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Gradient of the training objective for one sample under the stage's
/// trainable set. Returns the per-sample loss breakdown.
struct SampleGrad {
    LossBreakdown loss;
    double objective = 0.0;
    TimeInterval pred;
    ModelParams params;              // filled for base/finetune
    std::vector<double> visual;      // filled for prompt stage
    std::vector<double> text;
};
SampleGrad sample_gradient(const TrainState& state, const LoadedSample& sample,
                           const TrainConfig& cfg, std::uint64_t dropout_seed);

struct StepStats {
    LossBreakdown mean;           // batch mean of each loss component
    double objective = 0.0;       // batch mean of the training objective
    double min_objective = 0.0;   // smallest per-sample objective in the batch
};

/// Applies one optimizer step on the mean gradient of `batch`; frozen tensors are never written.
StepStats train_step(TrainState& state, std::span<const LoadedSample* const> batch,
                         const TrainConfig& cfg, long total_steps);

/// Prepares a state for `stage`: creates prompts for the prompt stage, resets optimizer moments.
TrainState begin_stage(TrainState from, Stage stage, std::uint64_t prompt_seed);

/// Runs cfg.stage over `train`; `val` feeds the per-epoch held-out metrics.
TrainResult train(TrainState init, std::span<const LoadedSample> train,
                  std::span<const LoadedSample> val, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace tvp
