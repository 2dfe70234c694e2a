#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "oracles.hpp"
#include "tvp/frame_pipeline.hpp"
#include "tvp/rng.hpp"

namespace {

tvp::RawVideo make_video(int n, int h, int w, tvp::Rng* rng = nullptr, float fill = 0.0F) {
    tvp::RawVideo v;
    v.n_frames = n;
    v.channels = 3;
    v.height = h;
    v.width = w;
    v.pixels.assign(v.frame_size() * static_cast<std::size_t>(n), fill);
    if (rng) {
        for (float& x : v.pixels) x = static_cast<float>(tvp::uniform01(*rng));
    }
    return v;
}

}  // namespace

TEST_CASE("midpoint sampling fixtures") {
    CHECK(tvp::uniform_sample(10, 5) == std::vector<int>{1, 3, 5, 7, 9});
    CHECK(tvp::uniform_sample(4, 4) == std::vector<int>{0, 1, 2, 3});
    CHECK(tvp::uniform_sample(3, 5) == std::vector<int>{0, 0, 1, 2, 2});
    CHECK_THROWS_AS(tvp::uniform_sample(5, 0), std::invalid_argument);
}

TEST_CASE("sampling indices are in range and non-decreasing") {
    tvp::Rng rng(5);
    for (int trial = 0; trial < 2000; ++trial) {
        const int n_vid = tvp::uniform_int(rng, 1, 10000);
        const int n_sam = tvp::uniform_int(rng, 1, trial % 10 == 0 ? 10000 : 64);
        const auto idx = tvp::uniform_sample(n_vid, n_sam);
        REQUIRE(idx.size() == static_cast<std::size_t>(n_sam));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            REQUIRE(idx[i] >= 0);
            REQUIRE(idx[i] < n_vid);
            if (i > 0) REQUIRE(idx[i] >= idx[i - 1]);
        }
        if (n_sam <= 64) {
            REQUIRE(idx == oracle::midpoint_indices(n_vid, n_sam));
        }
    }
}

TEST_CASE("resize keeps aspect ratio and pads bottom/right") {
    const auto tall = tvp::resize_pad(std::vector<float>(3 * 100 * 50, 0.7F), 3, 100, 50, 64);
    CHECK(tall.valid == tvp::ValidRegion{64, 32});
    const auto wide = tvp::resize_pad(std::vector<float>(3 * 50 * 100, 0.7F), 3, 50, 100, 64);
    CHECK(wide.valid == tvp::ValidRegion{32, 64});
    for (int c = 0; c < 3; ++c) {
        for (int r = 0; r < 64; ++r) {
            for (int col = 0; col < 64; ++col) {
                const double t = tall.pixels[(c * 64 + r) * 64 + col];
                const double w = wide.pixels[(c * 64 + r) * 64 + col];
                CHECK(t == (col < 32 ? doctest::Approx(0.7) : doctest::Approx(0.0)));
                CHECK(w == (r < 32 ? doctest::Approx(0.7) : doctest::Approx(0.0)));
                if (col >= 32) REQUIRE(t == 0.0);
                if (r >= 32) REQUIRE(w == 0.0);
            }
        }
    }
}

TEST_CASE("square input at canvas size is copied exactly") {
    tvp::Rng rng(6);
    const auto v = make_video(1, 16, 16, &rng);
    const auto r = tvp::resize_pad(v.frame(0), 3, 16, 16, 16);
    CHECK(r.valid == tvp::ValidRegion{16, 16});
    for (std::size_t i = 0; i < r.pixels.size(); ++i) {
        REQUIRE(r.pixels[i] == static_cast<double>(v.pixels[i]));
    }
}

TEST_CASE("bilinear half-pixel resize matches a hand computation") {
    // 1x2 -> 2x4 upscale of one channel row [0, 1]; half-pixel centres give
    // source x = (dst + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25 (edge clamped).
    std::vector<float> src{0.0F, 1.0F, 0.0F, 1.0F, 0.0F, 1.0F};
    const auto r = tvp::resize_pad(src, 3, 1, 2, 4);
    CHECK(r.valid == tvp::ValidRegion{2, 4});
    const double want[4] = {0.0, 0.25, 0.75, 1.0};
    for (int row = 0; row < 2; ++row) {
        for (int x = 0; x < 4; ++x) {
            CHECK(r.pixels[row * 4 + x] == doctest::Approx(want[x]).epsilon(1e-12));
        }
    }
    for (int row = 2; row < 4; ++row) {
        for (int x = 0; x < 4; ++x) CHECK(r.pixels[row * 4 + x] == 0.0);
    }
}

TEST_CASE("resize preserves the pixel range") {
    tvp::Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = tvp::uniform_int(rng, 1, 40);
        const int w = tvp::uniform_int(rng, 1, 40);
        const auto v = make_video(1, h, w, &rng);
        const auto r = tvp::resize_pad(v.frame(0), 3, h, w, 32);
        for (double x : r.pixels) {
            REQUIRE(x >= 0.0);
            REQUIRE(x <= 1.0);
        }
        for (int c = 0; c < 3; ++c) {
            for (int row = 0; row < 32; ++row) {
                for (int col = 0; col < 32; ++col) {
                    if (row >= r.valid.rows || col >= r.valid.cols) {
                        REQUIRE(r.pixels[(c * 32 + row) * 32 + col] == 0.0);
                    }
                }
            }
        }
    }
}

TEST_CASE("preprocess composes sampling and resizing") {
    tvp::Rng rng(8);
    auto v = make_video(10, 20, 30, &rng);
    const auto batch = tvp::preprocess(v, {5, 32});
    REQUIRE(batch.n_sam == 5);
    const int idx[5] = {1, 3, 5, 7, 9};
    for (int i = 0; i < 5; ++i) {
        const auto r = tvp::resize_pad(v.frame(idx[i]), 3, 20, 30, 32);
        for (std::size_t k = 0; k < r.pixels.size(); ++k) {
            REQUIRE(batch.frame(i)[k] == r.pixels[k]);
        }
        CHECK(batch.valid[static_cast<std::size_t>(i)] == r.valid);
    }
    CHECK(tvp::preprocess(v, {5, 32}) == batch);

    const auto zero = make_video(7, 12, 12);
    const auto zb = tvp::preprocess(zero, {4, 16});
    for (double x : zb.pixels) REQUIRE(x == 0.0);
}

TEST_CASE("invalid videos are rejected") {
    tvp::RawVideo v = make_video(2, 4, 4);
    v.pixels.pop_back();
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
    CHECK_THROWS(tvp::preprocess(v, {2, 8}));
}
