#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>

#include "tvp/frame_pipeline.hpp"
#include "tvp/synthgen.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("tvp_test_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(root)) {
        out[e.path().filename().string()] = slurp(e.path());
    }
    return out;
}

}  // namespace

TEST_CASE("generation is deterministic and split 80/10/10") {
    tvp::SyntheticSpec spec;
    spec.n_samples = 100;
    spec.seed = 5;
    const auto a = scratch_dir("gen_a");
    const auto b = scratch_dir("gen_b");
    tvp::gen_dataset(spec, a);
    tvp::gen_dataset(spec, b);
    const auto ta = tree(a);
    CHECK(ta.size() == 101);
    CHECK(ta == tree(b));

    const auto data = tvp::Dataset::load(a);
    CHECK(data.records.size() == 100);
    CHECK(data.split("train").size() == 80);
    CHECK(data.split("val").size() == 10);
    CHECK(data.split("test").size() == 10);
    CHECK(data.split("all").size() == 100);
    CHECK_THROWS_AS(data.split("dev"), std::invalid_argument);

    spec.seed = 6;
    const auto c = scratch_dir("gen_c");
    tvp::gen_dataset(spec, c);
    CHECK(slurp(a / "manifest.json") != slurp(c / "manifest.json"));
    for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("sample streams depend only on seed and index") {
    tvp::SyntheticSpec small;
    small.n_samples = 10;
    tvp::SyntheticSpec large = small;
    large.n_samples = 500;
    const auto x = tvp::generate_sample(small, 7);
    const auto y = tvp::generate_sample(large, 7);
    CHECK(x.record == y.record);
    CHECK(x.video.pixels == y.video.pixels);
}

TEST_CASE("generator guarantees") {
    tvp::SyntheticSpec spec;
    spec.n_samples = 400;
    std::vector<tvp::GeneratedSample> samples;
    for (int i = 0; i < spec.n_samples; ++i) samples.push_back(tvp::generate_sample(spec, i));

    const auto check = tvp::self_check(spec, samples);
    CHECK(check.samples == 400);
    CHECK(check.intensity_failures == 0);
    CHECK(check.class_failures == 0);
    CHECK(check.duration_failures == 0);
    CHECK(check.min_intensity_gap >= 3.0 * spec.noise);

    const double threshold = tvp::oracle_threshold(spec);
    int recovered = 0;
    std::vector<int> class_counts(static_cast<std::size_t>(spec.classes), 0);
    for (const auto& s : samples) {
        const auto& r = s.record;
        recovered += tvp::tiou(tvp::intensity_oracle(s.video, threshold), r.gt) > 0.8;
        ++class_counts[static_cast<std::size_t>(r.event_class)];

        REQUIRE(r.tokens.size() >= static_cast<std::size_t>(spec.min_query));
        REQUIRE(r.tokens.size() <= static_cast<std::size_t>(spec.max_query));
        CHECK(r.tokens.front() == tvp::kBosToken);
        CHECK(r.tokens.back() == tvp::kEosToken);
        CHECK(r.tokens[1] == tvp::kReservedTokens + r.event_class);
        for (std::size_t i = 2; i + 1 < r.tokens.size(); ++i) {
            CHECK(r.tokens[i] >= tvp::kReservedTokens + spec.classes);
            CHECK(r.tokens[i] < spec.vocab);
        }
        CHECK(r.n_vid >= spec.min_frames);
        CHECK(r.n_vid <= spec.max_frames);
        CHECK(s.video.n_frames == r.n_vid);
        CHECK(tvp::is_valid(r.gt));
        CHECK(r.gt.duration() >= spec.min_duration - 1e-12);
        CHECK(std::all_of(s.video.pixels.begin(), s.video.pixels.end(),
                          [](float v) { return v >= 0.0f && v <= 1.0f; }));
    }
    CHECK(recovered >= 380);
    for (int c : class_counts) CHECK(c > 0);
}

TEST_CASE("class blocks stay inside the prompt ring") {
    tvp::SyntheticSpec spec;
    const auto table = tvp::class_table(spec);
    REQUIRE(table.size() == static_cast<std::size_t>(spec.classes));
    // A 24x32 frame scales by 2 onto the 64 canvas, so an 8-pixel ring covers 4 source pixels.
    for (const auto& p : table) {
        CHECK(p.row >= 4);
        CHECK(p.col >= 4);
        CHECK(p.row + p.rows <= spec.height - 4);
        CHECK(p.col + p.cols <= spec.width - 4);
    }
    for (std::size_t i = 0; i < table.size(); ++i) {
        for (std::size_t j = i + 1; j < table.size(); ++j) {
            const bool same = table[i].row == table[j].row && table[i].col == table[j].col &&
                              table[i].color == table[j].color;
            CHECK_FALSE(same);
        }
    }
}

TEST_CASE("spec validation and config parsing") {
    tvp::SyntheticSpec spec;
    spec.classes = 62;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = {};
    spec.height = 12;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = {};
    spec.min_frames = 50;
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);

    const auto parsed = tvp::synthetic_spec_from_json({{"n_samples", 20}, {"seed", 3}});
    CHECK(parsed.n_samples == 20);
    CHECK(parsed.seed == 3);
    CHECK(tvp::synthetic_spec_from_json(tvp::to_json(parsed)) == parsed);
    CHECK_THROWS_AS(tvp::synthetic_spec_from_json({{"n_sample", 20}}), std::invalid_argument);
}

TEST_CASE("frame files") {
    const auto dir = scratch_dir("frames");
    fs::create_directories(dir);
    auto s = tvp::generate_sample({}, 3);
    const auto path = dir / "x.frames";
    tvp::write_frames(path, s.video);
    const auto back = tvp::read_frames(path);
    CHECK(back.n_frames == s.video.n_frames);
    CHECK(back.height == s.video.height);
    CHECK(back.width == s.video.width);
    CHECK(back.pixels == s.video.pixels);

    const auto bytes = slurp(path);
    CHECK(bytes.substr(0, 8) == std::string("TVPFRM1\0", 8));
    CHECK(bytes.size() == 8 + 16 + 4 * s.video.pixels.size());

    const std::vector<int> picks{5, 0, 5};
    const auto some = tvp::read_frames(path, picks);
    CHECK(some.n_frames == 3);
    const auto fsz = s.video.frame_size();
    CHECK(std::equal(some.pixels.begin(), some.pixels.begin() + static_cast<long>(fsz),
                     s.video.pixels.begin() + static_cast<long>(5 * fsz)));

    std::ofstream(dir / "bad.frames", std::ios::binary) << "TVPFRM0";
    CHECK_THROWS(tvp::read_frames(dir / "bad.frames"));
    std::ofstream(dir / "short.frames", std::ios::binary) << bytes.substr(0, 100);
    CHECK_THROWS(tvp::read_frames(dir / "short.frames"));
    fs::remove_all(dir);
}

TEST_CASE("loaded samples keep only the sampled frames") {
    tvp::SyntheticSpec spec;
    spec.n_samples = 12;
    const auto dir = scratch_dir("load");
    tvp::gen_dataset(spec, dir);
    const auto data = tvp::Dataset::load(dir);
    const auto loaded = tvp::load_samples(data, "all", 8);
    REQUIRE(loaded.size() == 12);
    for (const auto& s : loaded) {
        CHECK(s.clip.n_frames == 8);
        const auto full = tvp::read_frames(dir / s.record.frames_file);
        CHECK(tvp::preprocess(s.clip, {8, 64}) == tvp::preprocess(full, {8, 64}));
    }
    fs::remove_all(dir);
}
