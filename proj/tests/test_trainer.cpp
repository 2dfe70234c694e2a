#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

#include "tvp/checkpoint.hpp"
#include "tvp/synthgen.hpp"
#include "tvp/trainer.hpp"

namespace {

tvp::ModelConfig tiny_model() {
    tvp::ModelConfig cfg;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.canvas = 32;
    cfg.n_sam = 4;
    cfg.vision_widths = {4, 8};
    cfg.layers = 1;
    cfg.n_tp = 3;
    return cfg;
}

tvp::PromptConfig tiny_prompts(const tvp::ModelConfig& m) {
    tvp::PromptConfig p;
    p.n_sam = m.n_sam;
    p.canvas = m.canvas;
    p.visual_width = 4;
    p.text_count = m.n_tp;
    p.text_width = m.hidden;
    return p;
}

std::vector<tvp::LoadedSample> samples(int n, int first = 0) {
    tvp::SyntheticSpec spec;
    std::vector<tvp::LoadedSample> out;
    for (int i = first; i < first + n; ++i) {
        auto g = tvp::generate_sample(spec, i);
        out.push_back({std::move(g.record), std::move(g.video)});
    }
    return out;
}

tvp::TrainConfig quick(tvp::Stage s, int epochs = 1) {
    auto c = tvp::TrainConfig::desk_defaults(s);
    c.epochs = epochs;
    c.batch_size = 4;
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    CHECK(tvp::lr_at(0, 100, 0.1, 0.1) == 0.0);
    CHECK(tvp::lr_at(5, 100, 0.1, 0.1) == doctest::Approx(0.05));
    CHECK(tvp::lr_at(10, 100, 0.1, 0.1) == doctest::Approx(0.1));
    CHECK(tvp::lr_at(55, 100, 0.1, 0.1) == doctest::Approx(0.05));
    CHECK(tvp::lr_at(100, 100, 0.1, 0.1) == 0.0);
    // continuous and piecewise linear: midpoints average their neighbours
    for (long s = 1; s < 100; ++s) {
        const double mid = tvp::lr_at(s, 100, 0.1, 0.1);
        const double avg = 0.5 * (tvp::lr_at(s - 1, 100, 0.1, 0.1) + tvp::lr_at(s + 1, 100, 0.1, 0.1));
        if (s != 10) CHECK(mid == doctest::Approx(avg).epsilon(1e-12));
        CHECK(mid > 0.0);
        CHECK(mid <= 0.1);
    }
    CHECK(tvp::lr_at(3, 7, 1.0, 0.0) == doctest::Approx(4.0 / 7.0));
}

TEST_CASE("adaptive-moment first step in closed form") {
    // f(p) = (p - 3)^2 / 2 at p = 1: gradient -2.
    std::vector<double> p{1.0}, g{-2.0}, m{0.0}, v{0.0};
    const double lr = 0.1, wd = 0.01;
    tvp::adamw_update(p, g, m, v, lr, wd, 1);
    const double m1 = 0.1 * -2.0;
    const double v1 = 0.001 * 4.0;
    const double m_hat = m1 / (1.0 - 0.9);
    const double v_hat = v1 / (1.0 - 0.999);
    const double expected = 1.0 * (1.0 - lr * wd) - lr * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(std::abs(p[0] - expected) < 1e-12);
    CHECK(std::abs(m[0] - m1) < 1e-15);
    CHECK(std::abs(v[0] - v1) < 1e-15);

    // second step against the same recurrence
    const double g2 = p[0] - 3.0;
    std::vector<double> g2v{g2};
    const double keep = p[0];
    tvp::adamw_update(p, g2v, m, v, lr, wd, 2);
    const double m2 = 0.9 * m1 + 0.1 * g2;
    const double v2 = 0.999 * v1 + 0.001 * g2 * g2;
    const double expected2 = keep * (1.0 - lr * wd) -
                             lr * (m2 / (1.0 - 0.81)) / (std::sqrt(v2 / (1.0 - 0.999 * 0.999)) + 1e-8);
    CHECK(std::abs(p[0] - expected2) < 1e-12);

    std::vector<double> short_grad;
    CHECK_THROWS_AS(tvp::adamw_update(p, short_grad, m, v, lr, wd, 3), std::invalid_argument);
}

TEST_CASE("stage configs") {
    const auto paper_prompt = tvp::TrainConfig::paper_defaults(tvp::Stage::prompt);
    const auto paper_finetune = tvp::TrainConfig::paper_defaults(tvp::Stage::finetune);
    CHECK(paper_prompt.peak_lr == 1e-1);
    CHECK(paper_finetune.peak_lr == 5e-7);
    CHECK(paper_prompt.epochs == 12);
    CHECK(paper_prompt.warmup_fraction == 0.1);
    CHECK(tvp::TrainConfig::desk_defaults(tvp::Stage::finetune).peak_lr == 1e-4);
    CHECK(tvp::stage_from_string("finetune") == tvp::Stage::finetune);
    CHECK_THROWS_AS(tvp::stage_from_string("pretrain"), std::invalid_argument);
    auto bad = quick(tvp::Stage::base);
    bad.warmup_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("freeze discipline across the three stages") {
    const auto model = tiny_model();
    const auto train_set = samples(8);
    auto state = tvp::TrainState::fresh(model, tiny_prompts(model), 1);
    CHECK(state.prompts.text.count == 0);
    CHECK(state.prompts.visual.width == 0);

    auto base = tvp::train(state, train_set, {}, quick(tvp::Stage::base)).state;
    CHECK_FALSE(base.params == state.params);
    CHECK(base.step == 2);

    auto prompt_in = tvp::begin_stage(base, tvp::Stage::prompt, 9);
    CHECK(prompt_in.params == base.params);
    CHECK(prompt_in.opt.t == 0);
    CHECK(prompt_in.step == 0);
    CHECK(prompt_in.prompts.text.count == 3);
    const auto prompted = tvp::train(prompt_in, train_set, {}, quick(tvp::Stage::prompt)).state;
    CHECK(prompted.params == base.params);
    CHECK_FALSE(prompted.prompts.visual == prompt_in.prompts.visual);
    CHECK_FALSE(prompted.prompts.text == prompt_in.prompts.text);
    // outside the ring the patterns stay zero
    const auto& vp = prompted.prompts.visual;
    for (int k = 0; k < vp.n_sam * vp.channels; ++k) {
        for (int r = 0; r < vp.canvas; ++r) {
            for (int c = 0; c < vp.canvas; ++c) {
                if (!tvp::in_ring(r, c, vp.canvas, vp.width)) {
                    REQUIRE(vp.patterns[static_cast<std::size_t>((k * vp.canvas + r) * vp.canvas + c)] == 0.0);
                }
            }
        }
    }

    const auto ft_in = tvp::begin_stage(prompted, tvp::Stage::finetune, 0);
    const auto tuned = tvp::train(ft_in, train_set, {}, quick(tvp::Stage::finetune)).state;
    CHECK(tuned.prompts.visual == prompted.prompts.visual);
    CHECK(tuned.prompts.text == prompted.prompts.text);
    CHECK_FALSE(tuned.params == prompted.params);

    CHECK_THROWS_AS(tvp::train(base, train_set, {}, quick(tvp::Stage::prompt)), std::invalid_argument);
    CHECK_THROWS_AS(tvp::train(state, {}, {}, quick(tvp::Stage::base)), std::invalid_argument);
}

TEST_CASE("prompt stage rejects mismatched prompt sizes") {
    const auto model = tiny_model();
    auto pc = tiny_prompts(model);
    pc.text_width = 8;
    auto state = tvp::TrainState::fresh(model, pc, 1);
    CHECK_THROWS_AS(tvp::begin_stage(state, tvp::Stage::prompt, 0), std::invalid_argument);
    pc = tiny_prompts(model);
    pc.text_count = 4;
    state = tvp::TrainState::fresh(model, pc, 1);
    CHECK_THROWS_AS(tvp::begin_stage(state, tvp::Stage::prompt, 0), std::invalid_argument);
}

TEST_CASE("training is deterministic and thread-count independent") {
    const auto model = tiny_model();
    const auto train_set = samples(6);
    const auto val_set = samples(3, 100);
    auto cfg = quick(tvp::Stage::base, 2);
    const auto state = tvp::TrainState::fresh(model, tiny_prompts(model), 4);
    const auto a = tvp::train(state, train_set, val_set, cfg);
    const auto b = tvp::train(state, train_set, val_set, cfg);
    cfg.threads = 3;
    const auto c = tvp::train(state, train_set, val_set, cfg);
    CHECK(tvp::serialize_checkpoint(a.state) == tvp::serialize_checkpoint(b.state));
    CHECK(a.state.params == c.state.params);
    CHECK(a.state.opt == c.state.opt);
    REQUIRE(a.log.size() == 2);
    CHECK(a.log[1].has_val);
    CHECK(tvp::to_json(a.log[1]).dump() == tvp::to_json(c.log[1]).dump());

    cfg.threads = 1;
    cfg.seed = 5;
    const auto d = tvp::train(state, train_set, val_set, cfg);
    CHECK_FALSE(d.state.params == a.state.params);

    cfg.max_steps = 3;
    const auto e = tvp::train(state, train_set, val_set, cfg);
    CHECK(e.state.step == 3);
}

TEST_CASE("training objective respects the loss floor") {
    const auto model = tiny_model();
    const auto r = tvp::train(tvp::TrainState::fresh(model, tiny_prompts(model), 2), samples(8), {},
                              quick(tvp::Stage::base, 3));
    CHECK(r.min_sample_loss >= 0.24);
    for (const auto& m : r.log) CHECK(m.min_sample_loss >= 0.24);
}

TEST_CASE("one sample can be overfit") {
    const auto model = tvp::ModelConfig::desk();
    tvp::PromptConfig pc;
    const auto one = samples(1, 7);
    auto cfg = tvp::TrainConfig::desk_defaults(tvp::Stage::base);
    cfg.batch_size = 1;
    cfg.epochs = 200;
    cfg.eval_each_epoch = false;
    const auto r = tvp::train(tvp::TrainState::fresh(model, pc, 0), one, {}, cfg);
    REQUIRE(r.log.size() == 200);
    CAPTURE(r.log.back().train_loss);
    CHECK(r.log.back().train_loss < 0.30);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    const auto model = tiny_model();
    auto state = tvp::TrainState::fresh(model, tiny_prompts(model), 2);
    state.params.head_b2.data[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        tvp::train(state, samples(4), {}, quick(tvp::Stage::base));
        FAIL("expected divergence");
    } catch (const tvp::TrainingDiverged& e) {
        const auto dump = nlohmann::json::parse(e.what());
        CHECK(dump.contains("sample"));
        CHECK(dump.at("stage") == "base");
    }
}

TEST_CASE("checkpoint round trip") {
    const auto model = tiny_model();
    const auto train_set = samples(4);
    auto base = tvp::train(tvp::TrainState::fresh(model, tiny_prompts(model), 6), train_set, {},
                           quick(tvp::Stage::base))
                    .state;
    auto prompted = tvp::train(tvp::begin_stage(base, tvp::Stage::prompt, 1), train_set, {},
                               quick(tvp::Stage::prompt))
                        .state;
    prompted.config_echo = {{"seed", 6}};
    for (const auto* st : {&base, &prompted}) {
        const auto bytes = tvp::serialize_checkpoint(*st);
        CHECK(bytes.substr(0, 8) == "TVPCKPT1");
        const auto back = tvp::parse_checkpoint(bytes);
        CHECK(tvp::serialize_checkpoint(back) == bytes);
        const auto rounded = tvp::round_to_storage(*st);
        CHECK(back.params == rounded.params);
        CHECK(back.prompts.visual == rounded.prompts.visual);
        CHECK(back.prompts.text == rounded.prompts.text);
        CHECK(back.opt == rounded.opt);
        CHECK(back.stage == st->stage);
        CHECK(back.step == st->step);
        CHECK(back.rng_state == st->rng_state);
        CHECK(back.config_echo == st->config_echo);
        CHECK(back.model.hidden == st->model.hidden);
        CHECK(back.prompt_cfg.visual_width == st->prompt_cfg.visual_width);
    }

    const auto dir = std::filesystem::temp_directory_path() / "tvp_test_ckpt";
    std::filesystem::create_directories(dir);
    tvp::save_checkpoint(prompted, dir / "a.ckpt");
    tvp::save_checkpoint(tvp::load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
    std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
    const std::string sa{std::istreambuf_iterator<char>(fa), {}};
    const std::string sb{std::istreambuf_iterator<char>(fb), {}};
    CHECK(sa == sb);

    CHECK_THROWS_AS(tvp::parse_checkpoint("TVPCKPT0" + sa.substr(8)), std::runtime_error);
    CHECK_THROWS_AS(tvp::parse_checkpoint(sa.substr(0, sa.size() - 4)), std::runtime_error);
    CHECK_THROWS_AS(tvp::parse_checkpoint(sa.substr(0, 12)), std::runtime_error);
    CHECK_THROWS(tvp::load_checkpoint(dir / "missing.ckpt"));
    std::filesystem::remove_all(dir);
}
