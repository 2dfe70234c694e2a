#include "tvp/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "tvp/parallel.hpp"

namespace tvp {

void EvalOptions::validate() const {
    if (thresholds.empty()) {
        throw std::invalid_argument("at least one IoU threshold is required");
    }
    for (double m : thresholds) {
        if (!(m > 0.0 && m < 1.0)) {
            throw std::invalid_argument("IoU thresholds must lie in (0, 1)");
        }
    }
}

double EvalReport::accuracy_at(double m) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (thresholds[i] == m) {
            return accuracy[i];
        }
    }
    throw std::out_of_range("threshold not in report");
}

EvalReport summarize(std::vector<SamplePrediction> preds, const EvalOptions& opts) {
    opts.validate();
    if (preds.empty()) {
        throw std::invalid_argument("cannot evaluate an empty dataset");
    }
    std::sort(preds.begin(), preds.end(),
              [](const SamplePrediction& a, const SamplePrediction& b) { return a.id < b.id; });
    EvalReport r;
    r.thresholds = opts.thresholds;
    r.strict = opts.strict;
    r.n_samples = preds.size();
    double sum = 0.0;
    for (const auto& p : preds) {
        sum += p.tiou;
    }
    r.mean_tiou = sum / static_cast<double>(preds.size());
    for (double m : opts.thresholds) {
        std::size_t hits = 0;
        for (const auto& p : preds) {
            hits += opts.strict ? (p.tiou > m) : (p.tiou >= m);
        }
        r.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(preds.size()));
    }
    r.samples = std::move(preds);
    return r;
}

EvalReport evaluate(const ModelConfig& cfg, const ModelParams& params, const PromptBundle& prompts,
                    std::span<const LoadedSample> samples, const EvalOptions& opts) {
    opts.validate();
    std::vector<SamplePrediction> preds(samples.size());
    parallel_for(samples.size(), opts.threads, [&](std::size_t i) {
        const auto& s = samples[i];
        const ForwardResult fr = forward(s.clip, s.record.tokens, prompts, params, cfg);
        preds[i] = {s.record.id, fr.pred, s.record.gt, tiou(fr.pred, s.record.gt)};
    });
    return summarize(std::move(preds), opts);
}

double mean_loss(const ModelConfig& cfg, const ModelParams& params, const PromptBundle& prompts,
                 std::span<const LoadedSample> samples, const LossConfig& loss, int threads) {
    if (samples.empty()) {
        throw std::invalid_argument("cannot compute the loss of an empty dataset");
    }
    std::vector<double> values(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto& s = samples[i];
        const ForwardResult fr =
            forward(s.clip, s.record.tokens, prompts, params, cfg, &s.record.gt, loss);
        values[i] = training_objective(fr.loss, loss);
    });
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    return sum / static_cast<double>(values.size());
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json acc = nlohmann::json::object();
    for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
        char key[32];
        std::snprintf(key, sizeof key, "%g", r.thresholds[i]);
        acc[key] = r.accuracy[i];
    }
    return {{"accuracy", acc},
            {"mean_tiou", r.mean_tiou},
            {"n_samples", r.n_samples},
            {"strict_iou", r.strict}};
}

std::string to_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "id,pred_start,pred_end,gt_start,gt_end,tiou\n";
    char buf[256];
    for (const auto& p : r.samples) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", p.id.c_str(),
                      p.pred.start, p.pred.end, p.gt.start, p.gt.end, p.tiou);
        out << buf;
    }
    return out.str();
}

std::vector<double> parse_thresholds(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            throw std::invalid_argument("malformed threshold '" + item + "'");
        }
        if (used != item.size() || !(v > 0.0 && v < 1.0)) {
            throw std::invalid_argument("malformed threshold '" + item + "'");
        }
        out.push_back(v);
    }
    if (out.empty() || (!text.empty() && text.back() == ',')) {
        throw std::invalid_argument("malformed threshold list '" + text + "'");
    }
    return out;
}

}  // namespace tvp
