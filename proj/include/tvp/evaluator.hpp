#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvp/dataset.hpp"
#include "tvp/model.hpp"

namespace tvp {

struct EvalOptions {
    std::vector<double> thresholds{0.3, 0.5, 0.7};
    bool strict = true;  // count tIoU > m; false counts tIoU >= m
    int threads = 1;

    /// Throws std::invalid_argument unless every threshold lies in (0, 1).
    void validate() const;
};

struct SamplePrediction {
    std::string id;
    TimeInterval pred;
    TimeInterval gt;
    double tiou = 0.0;
};

struct EvalReport {
    std::vector<double> thresholds;
    std::vector<double> accuracy;  // Acc(R@1, IoU=m), parallel to thresholds
    double mean_tiou = 0.0;
    std::size_t n_samples = 0;
    bool strict = true;
    std::vector<SamplePrediction> samples;  // sorted by id

    double accuracy_at(double m) const;
};

/// Metric over precomputed predictions; order of `preds` does not matter.
/// Throws std::invalid_argument on an empty set.
EvalReport summarize(std::vector<SamplePrediction> preds, const EvalOptions& opts);

/// Runs the model with one universal prompt set over every sample.
EvalReport evaluate(const ModelConfig& cfg, const ModelParams& params, const PromptBundle& prompts,
                    std::span<const LoadedSample> samples, const EvalOptions& opts);

/// Mean training objective of the model over the samples.
double mean_loss(const ModelConfig& cfg, const ModelParams& params, const PromptBundle& prompts,
                 std::span<const LoadedSample> samples, const LossConfig& loss, int threads = 1);

nlohmann::json to_json(const EvalReport& r);
/// Header: id,pred_start,pred_end,gt_start,gt_end,tiou
std::string to_csv(const EvalReport& r);

/// Splits "0.3,0.5,0.7"; throws std::invalid_argument on malformed entries.
std::vector<double> parse_thresholds(const std::string& text);

}  // namespace tvp
