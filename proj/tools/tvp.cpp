// Command-line entry points: gen-data, train, eval, bench.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "tvp/bench.hpp"
#include "tvp/checkpoint.hpp"
#include "tvp/dataset.hpp"
#include "tvp/evaluator.hpp"
#include "tvp/rng.hpp"
#include "tvp/run_config.hpp"
#include "tvp/synthgen.hpp"
#include "tvp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log_line(const std::string& msg) { std::cerr << "[tvp] " << msg << '\n'; }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

int cmd_gen_data(const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed) {
    tvp::RunConfig cfg = tvp::load_run_config(config);
    if (seed) {
        cfg.data.seed = *seed;
    }
    log_line("generating " + std::to_string(cfg.data.n_samples) + " samples into " + out.string());
    const json manifest = tvp::gen_dataset(cfg.data, out);
    std::size_t n_train = manifest.at("splits").at("train").size();
    std::cout << json{{"command", "gen-data"},
                      {"samples", manifest.at("records").size()},
                      {"train", n_train},
                      {"val", manifest.at("splits").at("val").size()},
                      {"test", manifest.at("splits").at("test").size()},
                      {"spec", manifest.at("spec")}}
                     .dump(2)
              << '\n';
    return 0;
}

int cmd_train(const std::string& stage_name, const fs::path& config, const fs::path& data_dir,
              const std::optional<fs::path>& init_ckpt, const fs::path& out,
              std::optional<int> threads, std::optional<std::uint64_t> seed) {
    const tvp::Stage stage = tvp::stage_from_string(stage_name);
    tvp::RunConfig cfg = tvp::load_run_config(config);
    if (threads) {
        cfg.threads = *threads;
    }
    if (seed) {
        cfg.seed = *seed;
    }
    cfg.sync();
    cfg.validate();
    if (stage != tvp::Stage::base && !init_ckpt) {
        throw std::invalid_argument("stage '" + stage_name + "' requires --init-ckpt");
    }
    tvp::TrainState state;
    if (init_ckpt) {
        state = tvp::load_checkpoint(*init_ckpt);
        state.prompt_cfg = cfg.prompt;
        state.prompt_cfg.text_width = state.model.hidden;
        state.prompt_cfg.text_count = std::min(cfg.prompt.text_count, state.model.n_tp);
    } else {
        state = tvp::TrainState::fresh(cfg.model, cfg.prompt, cfg.seed);
    }
    if (stage == tvp::Stage::finetune && state.prompts.text.count == 0 &&
        state.prompts.visual.width == 0) {
        log_line("warning: finetuning from a checkpoint without prompts");
    }
    state = tvp::begin_stage(std::move(state), stage,
                             tvp::derive_seed(cfg.seed, 0x70726f6d7074ULL));
    state.config_echo = tvp::to_json(cfg);

    const tvp::Dataset data = tvp::Dataset::load(data_dir);
    const auto train_set = tvp::load_samples(data, "train", state.model.n_sam);
    const auto val_set = tvp::load_samples(data, "val", state.model.n_sam);
    log_line("stage " + stage_name + ": " + std::to_string(train_set.size()) + " train, " +
             std::to_string(val_set.size()) + " val samples");
    const tvp::TrainConfig tc = cfg.train_config(stage);
    json log = json::array();
    const auto result = tvp::train(std::move(state), train_set, val_set, tc,
                                   [&](const tvp::EpochMetrics& m) {
                                       const json j = tvp::to_json(m);
                                       log_line(j.dump());
                                       log.push_back(j);
                                   });
    tvp::save_checkpoint(result.state, out);
    log_line("checkpoint written to " + out.string());
    std::cout << json{{"command", "train"},
                      {"stage", stage_name},
                      {"steps", result.state.step},
                      {"min_sample_loss", result.min_sample_loss},
                      {"epochs", log}}
                     .dump(2)
              << '\n';
    return 0;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, const std::string& split,
             const std::string& thresholds, bool strict, const std::optional<fs::path>& out,
             const std::optional<fs::path>& csv, int threads) {
    tvp::EvalOptions opts;
    opts.thresholds = tvp::parse_thresholds(thresholds);
    opts.strict = strict;
    opts.threads = threads;
    const tvp::TrainState state = tvp::load_checkpoint(ckpt);
    const tvp::Dataset data = tvp::Dataset::load(data_dir);
    const auto samples = tvp::load_samples(data, split, state.model.n_sam);
    if (samples.empty()) {
        throw std::invalid_argument("split '" + split + "' has no samples");
    }
    log_line("evaluating " + std::to_string(samples.size()) + " samples from split " + split);
    const tvp::EvalReport report =
        tvp::evaluate(state.model, state.params, state.prompts, samples, opts);
    json j = tvp::to_json(report);
    j["split"] = split;
    j["stage"] = tvp::to_string(state.stage);
    j["config"] = state.config_echo;
    const std::string text = j.dump(2) + "\n";
    std::cout << text;
    if (out) {
        write_text(*out, text);
    }
    if (csv) {
        write_text(*csv, tvp::to_csv(report));
    }
    return 0;
}

int cmd_bench(const fs::path& config, std::optional<int> reps, std::optional<int> warmup) {
    tvp::RunConfig cfg = tvp::load_run_config(config);
    if (reps) {
        cfg.bench.reps = *reps;
    }
    if (warmup) {
        cfg.bench.warmup = *warmup;
    }
    cfg.validate();
    log_line("timing 2D and 3D encoders, " + std::to_string(cfg.bench.reps) + " reps");
    const tvp::BenchReport r = tvp::run_bench(cfg.model, cfg.bench);
    json j = tvp::to_json(r);
    j["config"] = tvp::to_json(cfg);
    if (r.noisy) {
        log_line("warning: timing is noisy (few reps or stddev >= 20% of mean)");
    }
    std::cout << j.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Text-visual prompting for temporal video grounding"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic grounding dataset");
    fs::path gen_config, gen_out;
    std::optional<std::uint64_t> gen_seed;
    gen->add_option("--config", gen_config, "Run configuration JSON")->required();
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "Override data.seed");

    auto* tr = app.add_subcommand("train", "Run one training stage");
    std::string stage;
    fs::path tr_config, tr_data, tr_out;
    std::optional<fs::path> init_ckpt;
    std::optional<int> tr_threads;
    std::optional<std::uint64_t> tr_seed;
    tr->add_option("--stage", stage, "base, prompt or finetune")
        ->required()
        ->check(CLI::IsMember({"base", "prompt", "finetune"}));
    tr->add_option("--config", tr_config, "Run configuration JSON")->required();
    tr->add_option("--data", tr_data, "Dataset directory")->required();
    tr->add_option("--init-ckpt", init_ckpt, "Checkpoint to start from");
    tr->add_option("--out", tr_out, "Checkpoint to write")->required();
    tr->add_option("--threads", tr_threads, "Worker threads (1 = bit-reproducible)");
    tr->add_option("--seed", tr_seed, "Override the run seed");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    fs::path ev_ckpt, ev_data;
    std::string split = "test";
    std::string thresholds = "0.3,0.5,0.7";
    bool strict = true;
    int ev_threads = 1;
    std::optional<fs::path> ev_out, ev_csv;
    ev->add_option("--ckpt", ev_ckpt, "Checkpoint")->required();
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--split", split, "train, val, test or all")->capture_default_str();
    ev->add_option("--thresholds", thresholds, "Comma-separated IoU thresholds")
        ->capture_default_str();
    ev->add_option("--strict-iou", strict, "Count tIoU > m (true) or tIoU >= m (false)")
        ->capture_default_str();
    ev->add_option("--out", ev_out, "Also write the JSON report here");
    ev->add_option("--csv", ev_csv, "Per-sample CSV output");
    ev->add_option("--threads", ev_threads, "Worker threads")->capture_default_str();

    auto* be = app.add_subcommand("bench", "Compare 2D and 3D encoder cost");
    fs::path be_config;
    std::optional<int> reps, warmup;
    be->add_option("--config", be_config, "Run configuration JSON")->required();
    be->add_option("--reps", reps, "Timed repetitions");
    be->add_option("--warmup", warmup, "Untimed warmup runs");

    CLI11_PARSE(app, argc, argv);
    try {
        if (gen->parsed()) return cmd_gen_data(gen_config, gen_out, gen_seed);
        if (tr->parsed())
            return cmd_train(stage, tr_config, tr_data, init_ckpt, tr_out, tr_threads, tr_seed);
        if (ev->parsed())
            return cmd_eval(ev_ckpt, ev_data, split, thresholds, strict, ev_out, ev_csv,
                            ev_threads);
        if (be->parsed()) return cmd_bench(be_config, reps, warmup);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
