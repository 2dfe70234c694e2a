#include "tvp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tvp/parallel.hpp"
#include "tvp/rng.hpp"

namespace tvp {

namespace {

bool trains_model(Stage s) { return s != Stage::prompt; }

void add_into(ModelParams& dst, const ModelParams& src) {
    std::vector<const Tensor*> s;
    src.visit([&](const std::string&, const Tensor& t) { s.push_back(&t); });
    std::size_t k = 0;
    dst.visit([&](const std::string&, Tensor& t) {
        const Tensor& o = *s[k++];
        for (std::size_t i = 0; i < t.size(); ++i) {
            t.data[i] += o.data[i];
        }
    });
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
    if (dst.empty()) {
        dst.assign(src.size(), 0.0);
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] += src[i];
    }
}

bool finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::string divergence_dump(const TrainState& s, const std::string& sample, const SampleGrad& g) {
    nlohmann::json d = {{"event", "training_diverged"},
                        {"stage", to_string(s.stage)},
                        {"step", s.step},
                        {"sample", sample},
                        {"pred", {g.pred.start, g.pred.end}},
                        {"loss",
                         {{"tiou", g.loss.tiou_loss},
                          {"dis", g.loss.dis_loss},
                          {"dur", g.loss.dur_loss},
                          {"total", g.loss.total}}},
                        {"params_finite", s.params.all_finite()},
                        {"prompts_finite", finite(s.prompts.visual.patterns) &&
                                               finite(s.prompts.text.vectors)}};
    // nlohmann refuses to serialise NaN as a number; dump() writes null for it.
    return d.dump();
}

}  // namespace

std::string to_string(Stage s) {
    switch (s) {
        case Stage::base:
            return "base";
        case Stage::prompt:
            return "prompt";
        case Stage::finetune:
            return "finetune";
    }
    return "base";
}

Stage stage_from_string(const std::string& s) {
    if (s == "base") return Stage::base;
    if (s == "prompt") return Stage::prompt;
    if (s == "finetune") return Stage::finetune;
    throw std::invalid_argument("unknown stage '" + s + "' (expected base, prompt or finetune)");
}

TrainConfig TrainConfig::paper_defaults(Stage s) {
    TrainConfig c;
    c.stage = s;
    c.epochs = 12;
    c.warmup_fraction = 0.1;
    c.peak_lr = s == Stage::prompt ? 1e-1 : s == Stage::finetune ? 5e-7 : 1e-4;
    return c;
}

TrainConfig TrainConfig::desk_defaults(Stage s) {
    TrainConfig c;
    c.stage = s;
    switch (s) {
        case Stage::base:
            c.epochs = 12;
            c.peak_lr = 1e-3;
            break;
        case Stage::prompt:
            c.epochs = 12;
            c.peak_lr = 1e-2;
            c.weight_decay = 0.0;
            break;
        case Stage::finetune:
            c.epochs = 12;
            c.peak_lr = 1e-4;
            break;
    }
    return c;
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1) {
        throw std::invalid_argument("train: epochs and batch_size must be >= 1");
    }
    if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) {
        throw std::invalid_argument("train: peak_lr must be finite and >= 0");
    }
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw std::invalid_argument("train: warmup_fraction must be in [0, 1)");
    }
    if (!(weight_decay >= 0.0)) {
        throw std::invalid_argument("train: weight_decay must be >= 0");
    }
    if (threads < 1) {
        throw std::invalid_argument("train: threads must be >= 1");
    }
    loss.validate();
}

double lr_at(long step, long total, double peak, double warmup_fraction) {
    if (total <= 0 || step <= 0 || step >= total) {
        return 0.0;
    }
    const auto warmup = static_cast<long>(std::ceil(warmup_fraction * static_cast<double>(total)));
    if (step < warmup) {
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    return peak * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                  std::span<double> v, double lr, double weight_decay, long t,
                  const AdamHyper& h) {
    if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
        throw std::invalid_argument("adamw_update: buffer sizes differ");
    }
    if (t < 1) {
        throw std::invalid_argument("adamw_update: step count starts at 1");
    }
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
    const double decay = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < param.size(); ++i) {
        param[i] *= decay;
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * grad[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + h.eps);
    }
}

TrainState TrainState::fresh(const ModelConfig& model, const PromptConfig& prompt_cfg,
                             std::uint64_t seed) {
    model.validate();
    TrainState s;
    s.model = model;
    s.prompt_cfg = prompt_cfg;
    s.params = ModelParams::init(model, seed);
    s.prompts = identity_prompts(model.n_sam, model.channels, model.canvas, model.hidden);
    s.opt.m = ModelParams::zeros(model);
    s.opt.v = s.opt.m;
    s.stage = Stage::base;
    return s;
}

TrainState begin_stage(TrainState s, Stage stage, std::uint64_t prompt_seed) {
    s.stage = stage;
    s.step = 0;
    s.rng_state.clear();
    s.opt = {};
    switch (stage) {
        case Stage::base:
            s.prompts = identity_prompts(s.model.n_sam, s.model.channels, s.model.canvas,
                                         s.model.hidden);
            break;
        case Stage::prompt:
            s.prompt_cfg.validate();
            if (s.prompt_cfg.text_width != s.model.hidden || s.prompt_cfg.n_sam != s.model.n_sam ||
                s.prompt_cfg.canvas != s.model.canvas || s.prompt_cfg.text_count > s.model.n_tp) {
                throw std::invalid_argument("prompt sizes do not fit the model");
            }
            s.prompts = init_prompts(s.prompt_cfg, prompt_seed);
            s.opt.visual_m.assign(s.prompts.visual.patterns.size(), 0.0);
            s.opt.visual_v = s.opt.visual_m;
            s.opt.text_m.assign(s.prompts.text.vectors.size(), 0.0);
            s.opt.text_v = s.opt.text_m;
            break;
        case Stage::finetune:
            break;
    }
    if (trains_model(stage)) {
        s.opt.m = ModelParams::zeros(s.model);
        s.opt.v = s.opt.m;
    }
    return s;
}

SampleGrad sample_gradient(const TrainState& state, const LoadedSample& sample,
                           const TrainConfig& cfg, std::uint64_t dropout_seed) {
    const ModelConfig& mc = state.model;
    const FrameBatch batch = preprocess(sample.clip, PipelineConfig{mc.n_sam, mc.canvas});
    const FrameBatch prompted = apply_visual(batch, state.prompts.visual);
    const Activations acts = forward_activations(mc, state.params, prompted, sample.record.tokens,
                                                 state.prompts.text, {true, dropout_seed});
    SampleGrad g;
    g.pred = acts.pred;
    g.loss = loss_tdiou(acts.pred, sample.record.gt, cfg.loss);
    g.objective = training_objective(g.loss, cfg.loss);
    if (!std::isfinite(g.objective)) {
        return g;
    }
    const IntervalGrad d = grad_tdiou(acts.pred, sample.record.gt, cfg.loss);
    if (trains_model(state.stage)) {
        g.params = ModelParams::zeros(mc);
        backward(mc, state.params, acts, d, {true, false}, &g.params, nullptr);
    } else {
        InputGrads ig;
        backward(mc, state.params, acts, d, {false, true}, nullptr, &ig);
        g.visual.assign(state.prompts.visual.patterns.size(), 0.0);
        if (!ig.frames.empty()) {
            accumulate_visual_grad(ig.frames, state.prompts.visual, g.visual);
        }
        g.text = std::move(ig.text_prompts);
        g.text.resize(state.prompts.text.vectors.size(), 0.0);
    }
    return g;
}

StepStats train_step(TrainState& state, std::span<const LoadedSample* const> batch,
                         const TrainConfig& cfg, long total_steps) {
    if (batch.empty()) {
        throw std::invalid_argument("train_step on an empty batch");
    }
    if (state.stage != cfg.stage) {
        throw std::invalid_argument("state is at stage " + to_string(state.stage) +
                                    " but the config trains " + to_string(cfg.stage));
    }
    std::vector<SampleGrad> grads(batch.size());
    const std::uint64_t base_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(state.step));
    parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
        grads[i] = sample_gradient(state, *batch[i], cfg, derive_seed(base_seed, i));
    });

    // Fixed-order reduction so results do not depend on the thread count.
    StepStats stats;
    stats.min_objective = std::numeric_limits<double>::infinity();
    LossBreakdown& mean = stats.mean;
    const bool model = trains_model(state.stage);
    ModelParams g_params;
    std::vector<double> g_visual;
    std::vector<double> g_text;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const SampleGrad& g = grads[i];
        if (!std::isfinite(g.objective)) {
            throw TrainingDiverged(divergence_dump(state, batch[i]->record.id, g));
        }
        stats.objective += g.objective;
        stats.min_objective = std::min(stats.min_objective, g.objective);
        mean.tiou_loss += g.loss.tiou_loss;
        mean.dis_loss += g.loss.dis_loss;
        mean.dur_loss += g.loss.dur_loss;
        mean.total += g.loss.total;
        if (model) {
            if (i == 0) {
                g_params = g.params;
            } else {
                add_into(g_params, g.params);
            }
        } else {
            add_into(g_visual, g.visual);
            add_into(g_text, g.text);
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    mean.tiou_loss *= inv;
    mean.dis_loss *= inv;
    mean.dur_loss *= inv;
    mean.total *= inv;
    stats.objective *= inv;

    const double lr = lr_at(state.step, total_steps, cfg.peak_lr, cfg.warmup_fraction);
    state.opt.t += 1;
    if (model) {
        bool ok = true;
        g_params.visit([&](const std::string&, Tensor& t) {
            for (double& x : t.data) {
                x *= inv;
                ok = ok && std::isfinite(x);
            }
        });
        if (!ok) {
            throw TrainingDiverged(divergence_dump(state, "<batch gradient>", grads.front()));
        }
        std::vector<Tensor*> gs, ms, vs;
        g_params.visit([&](const std::string&, Tensor& t) { gs.push_back(&t); });
        state.opt.m.visit([&](const std::string&, Tensor& t) { ms.push_back(&t); });
        state.opt.v.visit([&](const std::string&, Tensor& t) { vs.push_back(&t); });
        std::size_t k = 0;
        state.params.visit([&](const std::string&, Tensor& p) {
            adamw_update(p.span(), gs[k]->span(), ms[k]->span(), vs[k]->span(), lr,
                         cfg.weight_decay, state.opt.t);
            ++k;
        });
    } else {
        for (auto* v : {&g_visual, &g_text}) {
            for (double& x : *v) {
                x *= inv;
            }
            if (!finite(*v)) {
                throw TrainingDiverged(divergence_dump(state, "<batch gradient>", grads.front()));
            }
        }
        if (state.prompts.visual.width > 0 && state.prompts.visual.mode != PromptMode::remove) {
            adamw_update(state.prompts.visual.patterns, g_visual, state.opt.visual_m,
                         state.opt.visual_v, lr, 0.0, state.opt.t);
        }
        if (state.prompts.text.count > 0) {
            adamw_update(state.prompts.text.vectors, g_text, state.opt.text_m, state.opt.text_v,
                         lr, 0.0, state.opt.t);
        }
    }
    state.step += 1;
    return stats;
}

nlohmann::json to_json(const EpochMetrics& m) {
    nlohmann::json j = {{"epoch", m.epoch},
                        {"step", m.step},
                        {"lr", m.lr},
                        {"train_loss", m.train_loss},
                        {"min_sample_loss", m.min_sample_loss}};
    if (m.has_val) {
        j["val_loss"] = m.val_loss;
        j["val"] = to_json(m.val);
    }
    return j;
}

TrainResult train(TrainState init, std::span<const LoadedSample> train_set,
                  std::span<const LoadedSample> val, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) {
        throw std::invalid_argument("training set is empty");
    }
    TrainResult result;
    result.state = std::move(init);
    TrainState& state = result.state;
    if (state.stage != cfg.stage) {
        throw std::invalid_argument("state is at stage " + to_string(state.stage) +
                                    " but the config trains " + to_string(cfg.stage));
    }
    const std::size_t n = train_set.size();
    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    const long per_epoch = static_cast<long>((n + bs - 1) / bs);
    long total = per_epoch * cfg.epochs;
    if (cfg.max_steps > 0) {
        total = std::min(total, cfg.max_steps);
    }
    Rng rng(derive_seed(cfg.seed, 0x73687566666c65ULL));
    std::vector<std::size_t> order(n);
    result.min_sample_loss = std::numeric_limits<double>::infinity();
    EvalOptions eval_opts;
    eval_opts.thresholds = cfg.thresholds;
    eval_opts.threads = cfg.threads;

    for (int epoch = 0; epoch < cfg.epochs && state.step < total; ++epoch) {
        for (std::size_t i = 0; i < n; ++i) {
            order[i] = i;
        }
        for (std::size_t i = n; i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(i - 1)));
            std::swap(order[i - 1], order[j]);
        }
        EpochMetrics m;
        m.epoch = epoch + 1;
        m.min_sample_loss = std::numeric_limits<double>::infinity();
        double loss_sum = 0.0;
        std::size_t seen = 0;
        std::vector<const LoadedSample*> batch;
        for (std::size_t start = 0; start < n && state.step < total; start += bs) {
            batch.clear();
            for (std::size_t i = start; i < std::min(n, start + bs); ++i) {
                batch.push_back(&train_set[order[i]]);
            }
            m.lr = lr_at(state.step, total, cfg.peak_lr, cfg.warmup_fraction);
            const StepStats st = train_step(state, batch, cfg, total);
            loss_sum += st.objective * static_cast<double>(batch.size());
            seen += batch.size();
            m.min_sample_loss = std::min(m.min_sample_loss, st.min_objective);
        }
        m.step = state.step;
        m.train_loss = loss_sum / static_cast<double>(seen);
        result.min_sample_loss = std::min(result.min_sample_loss, m.min_sample_loss);
        if (cfg.eval_each_epoch && !val.empty()) {
            m.has_val = true;
            m.val = evaluate(state.model, state.params, state.prompts, val, eval_opts);
            m.val_loss = mean_loss(state.model, state.params, state.prompts, val, cfg.loss,
                                   cfg.threads);
        }
        if (on_epoch) {
            on_epoch(m);
        }
        result.log.push_back(std::move(m));
    }
    std::ostringstream rs;
    rs << rng;
    state.rng_state = rs.str();
    return result;
}

}  // namespace tvp
