#include "tvp/run_config.hpp"

#include <fstream>
#include <stdexcept>

namespace tvp {

namespace {

using nlohmann::json;

[[noreturn]] void unknown_key(const std::string& section, const std::string& key) {
    throw std::invalid_argument("unknown config key '" + section + key + "'");
}

const json& object_at(const json& j, const std::string& name) {
    if (!j.is_object()) {
        throw std::invalid_argument("config section '" + name + "' must be an object");
    }
    return j;
}

json to_json_train(const TrainConfig& t) {
    return {{"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"peak_lr", t.peak_lr},
            {"warmup_fraction", t.warmup_fraction},
            {"weight_decay", t.weight_decay},
            {"max_steps", t.max_steps},
            {"eval_each_epoch", t.eval_each_epoch}};
}

TrainConfig train_from_json(const json& j, TrainConfig t, const std::string& section) {
    for (const auto& [key, v] : object_at(j, section).items()) {
        if (key == "epochs") t.epochs = v.get<int>();
        else if (key == "batch_size") t.batch_size = v.get<int>();
        else if (key == "peak_lr") t.peak_lr = v.get<double>();
        else if (key == "warmup_fraction") t.warmup_fraction = v.get<double>();
        else if (key == "weight_decay") t.weight_decay = v.get<double>();
        else if (key == "max_steps") t.max_steps = v.get<long>();
        else if (key == "eval_each_epoch") t.eval_each_epoch = v.get<bool>();
        else unknown_key(section + ".", key);
    }
    return t;
}

}  // namespace

json to_json(const ModelConfig& c) {
    return {{"hidden", c.hidden},         {"channels", c.channels},
            {"canvas", c.canvas},         {"n_sam", c.n_sam},
            {"vision_widths", c.vision_widths}, {"layers", c.layers},
            {"heads", c.heads},           {"ffn_mult", c.ffn_mult},
            {"vocab", c.vocab},           {"max_text_len", c.max_text_len},
            {"n_tp", c.n_tp},             {"dropout", c.dropout},
            {"frame_tokens", c.frame_tokens}, {"post_norm", c.post_norm}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
    for (const auto& [key, v] : object_at(j, "model").items()) {
        if (key == "hidden") c.hidden = v.get<int>();
        else if (key == "channels") c.channels = v.get<int>();
        else if (key == "canvas") c.canvas = v.get<int>();
        else if (key == "n_sam") c.n_sam = v.get<int>();
        else if (key == "vision_widths") c.vision_widths = v.get<std::vector<int>>();
        else if (key == "layers") c.layers = v.get<int>();
        else if (key == "heads") c.heads = v.get<int>();
        else if (key == "ffn_mult") c.ffn_mult = v.get<int>();
        else if (key == "vocab") c.vocab = v.get<int>();
        else if (key == "max_text_len") c.max_text_len = v.get<int>();
        else if (key == "n_tp") c.n_tp = v.get<int>();
        else if (key == "dropout") c.dropout = v.get<double>();
        else if (key == "frame_tokens") c.frame_tokens = v.get<bool>();
        else if (key == "post_norm") c.post_norm = v.get<bool>();
        else unknown_key("model.", key);
    }
    return c;
}

json to_json(const PromptConfig& c) {
    return {{"n_sam", c.n_sam},
            {"channels", c.channels},
            {"canvas", c.canvas},
            {"visual_width", c.visual_width},
            {"text_count", c.text_count},
            {"text_width", c.text_width},
            {"mode", to_string(c.mode)}};
}

PromptConfig prompt_config_from_json(const json& j, PromptConfig c) {
    for (const auto& [key, v] : object_at(j, "prompt").items()) {
        if (key == "n_sam") c.n_sam = v.get<int>();
        else if (key == "channels") c.channels = v.get<int>();
        else if (key == "canvas") c.canvas = v.get<int>();
        else if (key == "visual_width") c.visual_width = v.get<int>();
        else if (key == "text_count") c.text_count = v.get<int>();
        else if (key == "text_width") c.text_width = v.get<int>();
        else if (key == "mode") c.mode = prompt_mode_from_string(v.get<std::string>());
        else unknown_key("prompt.", key);
    }
    return c;
}

json to_json(const LossConfig& c) {
    return {{"alpha1", c.alpha1},
            {"alpha2", c.alpha2},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"union", c.union_mode == UnionMode::hull ? "hull" : "set"},
            {"tiou_only", c.tiou_only}};
}

LossConfig loss_config_from_json(const json& j, LossConfig c) {
    for (const auto& [key, v] : object_at(j, "loss").items()) {
        if (key == "alpha1") c.alpha1 = v.get<double>();
        else if (key == "alpha2") c.alpha2 = v.get<double>();
        else if (key == "beta1") c.beta1 = v.get<double>();
        else if (key == "beta2") c.beta2 = v.get<double>();
        else if (key == "tiou_only") c.tiou_only = v.get<bool>();
        else if (key == "union") {
            const auto u = v.get<std::string>();
            if (u == "set") c.union_mode = UnionMode::set_measure;
            else if (u == "hull") c.union_mode = UnionMode::hull;
            else throw std::invalid_argument("loss.union must be \"set\" or \"hull\"");
        } else unknown_key("loss.", key);
    }
    return c;
}

RunConfig RunConfig::desk() {
    RunConfig c;
    c.sync();
    return c;
}

void RunConfig::sync() {
    model.n_sam = pipeline.n_sam;
    model.canvas = pipeline.canvas;
    model.n_tp = prompt.text_count;
    prompt.n_sam = pipeline.n_sam;
    prompt.canvas = pipeline.canvas;
    prompt.channels = model.channels;
    for (TrainConfig* t : {&base, &prompt_stage, &finetune}) {
        t->seed = seed;
        t->loss = loss;
        t->threads = threads;
        t->thresholds = eval.thresholds;
    }
    base.stage = Stage::base;
    prompt_stage.stage = Stage::prompt;
    finetune.stage = Stage::finetune;
    eval.threads = threads;
}

void RunConfig::validate() const {
    if (version != kRunConfigVersion) {
        throw std::invalid_argument("unsupported config version " + std::to_string(version));
    }
    if (threads < 1) {
        throw std::invalid_argument("threads must be >= 1");
    }
    model.validate();
    prompt.validate();
    loss.validate();
    base.validate();
    prompt_stage.validate();
    finetune.validate();
    eval.validate();
    data.validate();
    if (prompt.text_width != model.hidden) {
        throw std::invalid_argument("prompt.text_width (" + std::to_string(prompt.text_width) +
                                    ") must equal model.hidden (" + std::to_string(model.hidden) +
                                    ")");
    }
    if (pipeline.canvas % model.total_stride() != 0) {
        throw std::invalid_argument("pipeline.canvas must be divisible by the encoder stride " +
                                    std::to_string(model.total_stride()));
    }
    if (data.vocab > model.vocab) {
        throw std::invalid_argument("data.vocab exceeds model.vocab");
    }
    if (data.max_query > model.max_text_len) {
        throw std::invalid_argument("data.max_query exceeds model.max_text_len");
    }
    if (bench.reps < 1 || bench.warmup < 0) {
        throw std::invalid_argument("bench.reps must be >= 1 and bench.warmup >= 0");
    }
}

TrainConfig RunConfig::train_config(Stage s) const {
    switch (s) {
        case Stage::base:
            return base;
        case Stage::prompt:
            return prompt_stage;
        case Stage::finetune:
            return finetune;
    }
    return base;
}

json to_json(const RunConfig& c) {
    json model = to_json(c.model);
    for (const char* k : {"n_sam", "canvas", "n_tp", "channels"}) {
        model.erase(k);
    }
    json prompt = to_json(c.prompt);
    for (const char* k : {"n_sam", "canvas", "channels"}) {
        prompt.erase(k);
    }
    json loss = to_json(c.loss);
    return {{"version", c.version},
            {"seed", c.seed},
            {"threads", c.threads},
            {"pipeline", {{"n_sam", c.pipeline.n_sam}, {"canvas", c.pipeline.canvas}}},
            {"model", model},
            {"prompt", prompt},
            {"loss", loss},
            {"train",
             {{"base", to_json_train(c.base)},
              {"prompt", to_json_train(c.prompt_stage)},
              {"finetune", to_json_train(c.finetune)}}},
            {"eval", {{"thresholds", c.eval.thresholds}, {"strict", c.eval.strict}}},
            {"data", to_json(c.data)},
            {"bench", {{"reps", c.bench.reps}, {"warmup", c.bench.warmup}, {"seed", c.bench.seed}}}};
}

RunConfig run_config_from_json(const json& j) {
    if (!j.is_object()) {
        throw std::invalid_argument("config must be a JSON object");
    }
    if (!j.contains("version")) {
        throw std::invalid_argument("config is missing 'version'");
    }
    RunConfig c;
    for (const auto& [key, v] : j.items()) {
        if (key == "version") {
            c.version = v.get<int>();
            if (c.version != kRunConfigVersion) {
                throw std::invalid_argument("unsupported config version " +
                                            std::to_string(c.version));
            }
        } else if (key == "seed") {
            c.seed = v.get<std::uint64_t>();
        } else if (key == "threads") {
            c.threads = v.get<int>();
        } else if (key == "pipeline") {
            for (const auto& [k, x] : object_at(v, "pipeline").items()) {
                if (k == "n_sam") c.pipeline.n_sam = x.get<int>();
                else if (k == "canvas") c.pipeline.canvas = x.get<int>();
                else unknown_key("pipeline.", k);
            }
        } else if (key == "model") {
            for (const char* k : {"n_sam", "canvas", "n_tp"}) {
                if (v.contains(k)) {
                    throw std::invalid_argument(std::string("model.") + k +
                                                " is derived; set it under pipeline/prompt");
                }
            }
            c.model = model_config_from_json(v, c.model);
        } else if (key == "prompt") {
            for (const char* k : {"n_sam", "canvas", "channels"}) {
                if (v.contains(k)) {
                    throw std::invalid_argument(std::string("prompt.") + k +
                                                " is derived; set it under pipeline");
                }
            }
            c.prompt = prompt_config_from_json(v, c.prompt);
        } else if (key == "loss") {
            c.loss = loss_config_from_json(v, c.loss);
        } else if (key == "train") {
            for (const auto& [k, x] : object_at(v, "train").items()) {
                if (k == "base") c.base = train_from_json(x, c.base, "train.base");
                else if (k == "prompt") c.prompt_stage = train_from_json(x, c.prompt_stage, "train.prompt");
                else if (k == "finetune") c.finetune = train_from_json(x, c.finetune, "train.finetune");
                else unknown_key("train.", k);
            }
        } else if (key == "eval") {
            for (const auto& [k, x] : object_at(v, "eval").items()) {
                if (k == "thresholds") c.eval.thresholds = x.get<std::vector<double>>();
                else if (k == "strict") c.eval.strict = x.get<bool>();
                else unknown_key("eval.", k);
            }
        } else if (key == "data") {
            c.data = synthetic_spec_from_json(object_at(v, "data"), c.data);
        } else if (key == "bench") {
            for (const auto& [k, x] : object_at(v, "bench").items()) {
                if (k == "reps") c.bench.reps = x.get<int>();
                else if (k == "warmup") c.bench.warmup = x.get<int>();
                else if (k == "seed") c.bench.seed = x.get<std::uint64_t>();
                else unknown_key("bench.", k);
            }
        } else {
            unknown_key("", key);
        }
    }
    // text_width stays user-settable so a mismatch with model.hidden is reported, not hidden.
    if (!(j.contains("prompt") && j.at("prompt").contains("text_width"))) {
        c.prompt.text_width = c.model.hidden;
    }
    c.sync();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
    }
    try {
        return run_config_from_json(j);
    } catch (const json::type_error& e) {
        throw std::invalid_argument("config " + path.string() + ": wrong value type: " + e.what());
    }
}

}  // namespace tvp
