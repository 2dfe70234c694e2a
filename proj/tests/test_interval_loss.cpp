#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <random>

#include "oracles.hpp"
#include "tvp/interval_loss.hpp"
#include "tvp/rng.hpp"

using tvp::LossConfig;
using tvp::TimeInterval;

using oracle::kink_distance;
using oracle::random_interval;
using oracle::rel_err;

TEST_CASE("tiou fixtures") {
    CHECK(tvp::tiou({0.2, 0.6}, {0.4, 0.8}) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(tvp::tiou({0.1, 0.5}, {0.1, 0.5}) == 1.0);
    CHECK(tvp::tiou({0.0, 0.2}, {0.5, 0.9}) == 0.0);
    CHECK(tvp::tiou({0.3, 0.3}, {0.3, 0.3}) == 1.0);
}

TEST_CASE("component loss fixtures") {
    const LossConfig cfg;
    CHECK(tvp::loss_tiou({0.4, 0.8}, {0.2, 0.6}) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(tvp::loss_tiou({0.2, 0.6}, {0.2, 0.6}) == 0.0);
    CHECK(tvp::loss_tiou({0.0, 0.1}, {0.5, 0.6}) == 1.0);

    CHECK(tvp::loss_dis({0.4, 0.8}, {0.2, 0.6}, cfg) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(tvp::loss_dis({0.2, 0.6}, {0.2, 0.6}, cfg) == 0.2);
    CHECK(tvp::loss_dis({0.8, 1.0}, {0.0, 0.2}, cfg) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(tvp::loss_dis({0.5, 0.5}, {0.5, 0.5}, cfg) == 0.2);

    CHECK(tvp::loss_dur({0.4, 0.8}, {0.2, 0.6}, cfg) == 0.4);
    CHECK(tvp::loss_dur({0.3, 0.5}, {0.2, 0.6}, cfg) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(tvp::loss_dur({0.3, 0.3}, {0.2, 0.6}, cfg) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("combined loss fixtures") {
    const LossConfig cfg;
    const auto same = tvp::loss_tdiou({0.2, 0.6}, {0.2, 0.6}, cfg);
    CHECK(same.total == doctest::Approx(0.24).epsilon(1e-15));
    CHECK(tvp::loss_tdiou({0.4, 0.8}, {0.2, 0.6}, cfg).total ==
          doctest::Approx(1.04).epsilon(1e-14));
    CHECK(tvp::loss_tdiou({0.8, 1.0}, {0.0, 0.2}, cfg).total ==
          doctest::Approx(3.04).epsilon(1e-14));
    const auto b = tvp::loss_tdiou({0.1, 0.35}, {0.2, 0.6}, cfg);
    CHECK(std::fabs(b.total - (b.tiou_loss + cfg.beta1 * b.dis_loss + cfg.beta2 * b.dur_loss)) <
          1e-12);
}

TEST_CASE("degenerate inputs are rejected") {
    const LossConfig cfg;
    CHECK_THROWS_AS(tvp::loss_dur({0.1, 0.2}, {0.3, 0.3}, cfg), std::domain_error);
    CHECK_THROWS_AS(tvp::validate_ground_truth({0.3, 0.30005}), std::invalid_argument);
    CHECK_NOTHROW(tvp::validate_ground_truth({0.3, 0.31}));
    CHECK_THROWS_AS(tvp::make_interval(0.6, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(tvp::make_interval(-0.1, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(tvp::make_interval(0.1, 1.5), std::invalid_argument);
    LossConfig bad;
    bad.beta1 = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = {};
    bad.alpha2 = -0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    // Zero-length predictions are legal.
    CHECK_NOTHROW(tvp::loss_tdiou({0.4, 0.4}, {0.2, 0.6}, cfg));
}

TEST_CASE("losses agree with the sweep oracle") {
    const LossConfig cfg;
    tvp::Rng rng(11);
    for (int i = 0; i < 3000; ++i) {
        const auto p = random_interval(rng);
        const auto g = random_interval(rng, 1e-3);
        const auto got = tvp::loss_tdiou(p, g, cfg);
        const auto want = oracle::tdiou(p, g, cfg.alpha1, cfg.alpha2, cfg.beta1, cfg.beta2);
        REQUIRE(std::fabs(got.tiou_loss - want.tiou) <= 1e-12);
        REQUIRE(std::fabs(got.dis_loss - want.dis) <= 1e-12);
        REQUIRE(std::fabs(got.dur_loss - want.dur) <= 1e-12);
        REQUIRE(std::fabs(got.total - want.total) <= 1e-12);
    }
}

TEST_CASE("loss invariants") {
    const LossConfig cfg;
    const double floor = cfg.beta1 * cfg.alpha1 + cfg.beta2 * cfg.alpha2;
    tvp::Rng rng(12);
    for (int i = 0; i < 2000; ++i) {
        const auto p = random_interval(rng);
        const auto g = random_interval(rng, 1e-3);
        const auto l = tvp::loss_tdiou(p, g, cfg);
        CHECK(l.tiou_loss >= 0.0);
        CHECK(l.tiou_loss <= 1.0);
        CHECK(l.dis_loss >= cfg.alpha1);
        CHECK(l.dur_loss >= cfg.alpha2);
        CHECK(l.total >= floor);
        if (!(p == g)) {
            CHECK(l.total > floor);
        }
        CHECK(tvp::tiou(p, g) == tvp::tiou(g, p));

        // power-of-two scaling is exact in floating point
        const double c = 0.5;
        const auto ls = tvp::loss_tdiou({c * p.start, c * p.end}, {c * g.start, c * g.end}, cfg);
        CHECK(ls.total == l.total);
        const double c2 = 0.3 + 0.7 * tvp::uniform01(rng);
        const auto l2 =
            tvp::loss_tdiou({c2 * p.start, c2 * p.end}, {c2 * g.start, c2 * g.end}, cfg);
        CHECK(std::fabs(l2.total - l.total) < 1e-12 * std::max(1.0, l.total));

        const double lo = std::min(p.start, g.start);
        const double hi = std::max(p.end, g.end);
        const double shift = -lo + (1.0 - (hi - lo)) * tvp::uniform01(rng);
        const auto lt = tvp::loss_tdiou({p.start + shift, p.end + shift},
                                        {g.start + shift, g.end + shift}, cfg);
        CHECK(std::fabs(lt.total - l.total) < 1e-12 * std::max(1.0, l.total));
    }
    CHECK(tvp::loss_tdiou({0.3, 0.7}, {0.3, 0.7}, cfg).total == doctest::Approx(floor));
}

TEST_CASE("hull union only changes the distance term") {
    LossConfig hull;
    hull.union_mode = tvp::UnionMode::hull;
    const LossConfig set;
    // disjoint: hull 1.0 vs set-measure 0.4
    CHECK(tvp::loss_dis({0.8, 1.0}, {0.0, 0.2}, hull) == doctest::Approx(0.8));
    CHECK(tvp::loss_dis({0.8, 1.0}, {0.0, 0.2}, set) == doctest::Approx(2.0));
    CHECK(tvp::loss_tiou({0.8, 1.0}, {0.0, 0.2}) == 1.0);
    // overlapping: hull equals the set-measure union
    CHECK(tvp::loss_dis({0.4, 0.8}, {0.2, 0.6}, hull) ==
          doctest::Approx(tvp::loss_dis({0.4, 0.8}, {0.2, 0.6}, set)));
}

TEST_CASE("analytic gradient matches central differences") {
    const LossConfig cfg;
    CHECK(rel_err(tvp::grad_tdiou({0.4, 0.8}, {0.2, 0.6}, cfg),
                  tvp::fd_grad_oracle({0.4, 0.8}, {0.2, 0.6}, cfg, 1e-6)) < 1e-6);

    tvp::Rng rng(13);
    int checked = 0;
    while (checked < 1000) {
        const auto p = random_interval(rng);
        const auto g = random_interval(rng, 1e-2);
        if (kink_distance(p, g, cfg) < 1e-4 || p.start < 2e-6 || p.end > 1.0 - 2e-6) {
            continue;
        }
        const auto a = tvp::grad_tdiou(p, g, cfg);
        const auto n = tvp::fd_grad_oracle(p, g, cfg, 1e-6);
        REQUIRE(rel_err(a, n) < 1e-6);
        ++checked;
    }
}

TEST_CASE("gradient conventions at kinks") {
    const LossConfig cfg;
    // pred == gt: clamps active, tIoU at its minimum -> zero gradient. Central
    // differences straddle the kink, so they only vanish to O(h).
    const auto g0 = tvp::grad_tdiou({0.2, 0.6}, {0.2, 0.6}, cfg);
    const auto f0 = tvp::fd_grad_oracle({0.2, 0.6}, {0.2, 0.6}, cfg, 1e-6);
    CHECK(std::fabs(g0.d_start - f0.d_start) < 1e-5);
    CHECK(std::fabs(g0.d_end - f0.d_end) < 1e-5);
    CHECK(g0.d_start == 0.0);
    CHECK(g0.d_end == 0.0);

    // Full overlap with both clamps active: only the tIoU term moves.
    const TimeInterval p{0.25, 0.55};
    const TimeInterval g{0.2, 0.6};
    const auto grad = tvp::grad_tdiou(p, g, cfg);
    LossConfig only;
    only.tiou_only = true;
    const auto tg = tvp::grad_tdiou(p, g, only);
    CHECK(tvp::loss_dis(p, g, cfg) == cfg.alpha1);
    CHECK(grad.d_start == doctest::Approx(tg.d_start));
    CHECK(grad.d_end == doctest::Approx(tg.d_end));
}

TEST_CASE("gradient scales inversely with the coordinates") {
    const LossConfig cfg;
    const TimeInterval p{0.35, 0.9};
    const TimeInterval g{0.2, 0.6};
    const double c = 0.5;
    const auto a = tvp::grad_tdiou(p, g, cfg);
    const auto b = tvp::grad_tdiou({c * p.start, c * p.end}, {c * g.start, c * g.end}, cfg);
    CHECK(b.d_start == doctest::Approx(a.d_start / c).epsilon(1e-12));
    CHECK(b.d_end == doctest::Approx(a.d_end / c).epsilon(1e-12));
}

TEST_CASE("finite differences are second-order accurate") {
    const LossConfig cfg;
    const TimeInterval p{0.35, 0.9};
    const TimeInterval g{0.2, 0.6};
    const auto a = tvp::grad_tdiou(p, g, cfg);
    const double e1 = rel_err(tvp::fd_grad_oracle(p, g, cfg, 2e-3), a);
    const double e2 = rel_err(tvp::fd_grad_oracle(p, g, cfg, 1e-3), a);
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.05));
    CHECK_THROWS_AS(tvp::fd_grad_oracle(p, g, cfg, 0.0), std::invalid_argument);
}

TEST_CASE("tIoU-only objective ignores the regularisers") {
    LossConfig cfg;
    cfg.tiou_only = true;
    const auto l = tvp::loss_tdiou({0.4, 0.8}, {0.2, 0.6}, cfg);
    CHECK(tvp::training_objective(l, cfg) == doctest::Approx(2.0 / 3.0));
    CHECK(tvp::training_objective(l, LossConfig{}) == doctest::Approx(1.04));
    CHECK(rel_err(tvp::grad_tdiou({0.35, 0.9}, {0.2, 0.6}, cfg),
                  tvp::fd_grad_oracle({0.35, 0.9}, {0.2, 0.6}, cfg, 1e-6)) < 1e-6);
}
