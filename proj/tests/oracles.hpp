#pragma once
// Independent reference implementations used only by the tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "tvp/interval_loss.hpp"
#include "tvp/rng.hpp"

namespace oracle {

// Sweep over the sorted endpoints; each elementary segment is counted by how
// many of the two intervals cover it.
struct Measures {
    double inter = 0.0;
    double uni = 0.0;
};

inline Measures sweep(const tvp::TimeInterval& a, const tvp::TimeInterval& b) {
    std::array<double, 4> pts{a.start, a.end, b.start, b.end};
    std::sort(pts.begin(), pts.end());
    Measures m;
    for (int i = 0; i < 3; ++i) {
        const double lo = pts[i];
        const double hi = pts[i + 1];
        if (hi <= lo) {
            continue;
        }
        const double mid = 0.5 * (lo + hi);
        const int cover = (a.start <= mid && mid <= a.end) + (b.start <= mid && mid <= b.end);
        if (cover == 2) {
            m.inter += hi - lo;
        }
        if (cover >= 1) {
            m.uni += hi - lo;
        }
    }
    return m;
}

inline double tiou(const tvp::TimeInterval& a, const tvp::TimeInterval& b) {
    const Measures m = sweep(a, b);
    return m.uni == 0.0 ? 1.0 : m.inter / m.uni;
}

struct Losses {
    double tiou, dis, dur, total;
};

inline Losses tdiou(const tvp::TimeInterval& p, const tvp::TimeInterval& g, double a1, double a2,
                    double b1, double b2) {
    const Measures m = sweep(p, g);
    Losses l{};
    l.tiou = 1.0 - (m.uni == 0.0 ? 1.0 : m.inter / m.uni);
    const double cg = (g.start + g.end) / 2.0;
    const double cp = (p.start + p.end) / 2.0;
    l.dis = m.uni == 0.0 ? a1 : std::max(std::fabs(cg - cp) / m.uni, a1);
    const double dg = g.end - g.start;
    const double dp = p.end - p.start;
    l.dur = std::max(std::fabs(dg - dp) / dg, a2);
    l.total = l.tiou + b1 * l.dis + b2 * l.dur;
    return l;
}

inline tvp::TimeInterval random_interval(tvp::Rng& rng, double min_len = 0.0) {
    double a = tvp::uniform01(rng);
    double b = tvp::uniform01(rng);
    if (a > b) std::swap(a, b);
    if (b - a < min_len) b = std::min(1.0, a + min_len);
    if (b - a < min_len) a = b - min_len;
    return {a, b};
}

// Distance from every non-differentiable configuration of the objective.
inline double kink_distance(const tvp::TimeInterval& p, const tvp::TimeInterval& g,
                            const tvp::LossConfig& cfg) {
    const double u = sweep(p, g).uni;
    double d = 1.0;
    for (double x : {p.start - g.start, p.end - g.end, p.start - g.end, p.end - g.start}) {
        d = std::min(d, std::fabs(x));
    }
    d = std::min(d, std::fabs(std::fabs(g.center() - p.center()) / u - cfg.alpha1));
    d = std::min(d, std::fabs(g.center() - p.center()));
    const double dur_ratio = std::fabs(g.duration() - p.duration()) / g.duration();
    d = std::min(d, std::fabs(dur_ratio - cfg.alpha2));
    d = std::min(d, std::fabs(g.duration() - p.duration()));
    d = std::min(d, p.duration());
    return d;
}

inline double rel_err(const tvp::IntervalGrad& a, const tvp::IntervalGrad& b) {
    const double num = std::hypot(a.d_start - b.d_start, a.d_end - b.d_end);
    const double den = std::max(std::hypot(b.d_start, b.d_end), 1e-8);
    return num / den;
}

// Central differences of the oracle objective under the default weights.
inline tvp::IntervalGrad fd_grad(const tvp::TimeInterval& p, const tvp::TimeInterval& g,
                                 const tvp::LossConfig& cfg, double h) {
    auto f = [&](double s, double e) {
        const Losses l = tdiou({s, e}, g, cfg.alpha1, cfg.alpha2, cfg.beta1, cfg.beta2);
        return cfg.tiou_only ? l.tiou : l.total;
    };
    return {(f(p.start + h, p.end) - f(p.start - h, p.end)) / (2.0 * h),
            (f(p.start, p.end + h) - f(p.start, p.end - h)) / (2.0 * h)};
}

// Midpoint sampling enumerated with floating arithmetic on small sizes.
inline std::vector<int> midpoint_indices(int n_vid, int n_sam) {
    std::vector<int> out;
    for (int i = 0; i < n_sam; ++i) {
        const long double x = (static_cast<long double>(i) + 0.5L) * n_vid / n_sam;
        out.push_back(std::clamp(static_cast<int>(std::floor(x)), 0, n_vid - 1));
    }
    return out;
}

}  // namespace oracle
