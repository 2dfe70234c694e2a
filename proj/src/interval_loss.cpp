#include "tvp/interval_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tvp {

namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// d max(x, y) / dx with ties split evenly.
double d_max_first(double x, double y) { return x > y ? 1.0 : (x < y ? 0.0 : 0.5); }
double d_min_first(double x, double y) { return x < y ? 1.0 : (x > y ? 0.0 : 0.5); }

struct OverlapGrad {
    double inter = 0.0;
    IntervalGrad d_inter;
    IntervalGrad d_union;
};

OverlapGrad overlap_with_grad(const TimeInterval& p, const TimeInterval& g) {
    OverlapGrad o;
    const double raw = std::min(p.end, g.end) - std::max(p.start, g.start);
    if (raw > 0.0) {
        o.inter = raw;
        o.d_inter.d_start = -d_max_first(p.start, g.start);
        o.d_inter.d_end = d_min_first(p.end, g.end);
    }
    // union = dur_p + dur_g - inter
    o.d_union.d_start = -1.0 - o.d_inter.d_start;
    o.d_union.d_end = 1.0 - o.d_inter.d_end;
    return o;
}

}  // namespace

bool is_valid(const TimeInterval& t) {
    return std::isfinite(t.start) && std::isfinite(t.end) && 0.0 <= t.start && t.start <= t.end &&
           t.end <= 1.0;
}

TimeInterval make_interval(double start, double end) {
    TimeInterval t{start, end};
    if (!is_valid(t)) {
        throw std::invalid_argument("invalid time interval (" + std::to_string(start) + ", " +
                                    std::to_string(end) + ")");
    }
    return t;
}

void validate_ground_truth(const TimeInterval& gt) {
    if (!is_valid(gt)) {
        throw std::invalid_argument("ground-truth interval out of [0,1] or reversed");
    }
    if (gt.duration() < kMinGroundTruthDuration) {
        throw std::invalid_argument("degenerate ground-truth interval (duration < 1e-4)");
    }
}

void LossConfig::validate() const {
    if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0)) {
        throw std::invalid_argument("loss clamp floors alpha1/alpha2 must be >= 0");
    }
    if (!(beta1 > 0.0) || !(beta2 > 0.0)) {
        throw std::invalid_argument("loss weights beta1/beta2 must be > 0");
    }
}

double intersection(const TimeInterval& a, const TimeInterval& b) {
    return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

double union_measure(const TimeInterval& a, const TimeInterval& b) {
    return a.duration() + b.duration() - intersection(a, b);
}

double hull_measure(const TimeInterval& a, const TimeInterval& b) {
    return std::max(a.end, b.end) - std::min(a.start, b.start);
}

double tiou(const TimeInterval& a, const TimeInterval& b) {
    const double u = union_measure(a, b);
    if (u <= 0.0) {
        return 1.0;
    }
    return intersection(a, b) / u;
}

double loss_tiou(const TimeInterval& pred, const TimeInterval& gt) { return 1.0 - tiou(pred, gt); }

double loss_dis(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg) {
    const double denom =
        cfg.union_mode == UnionMode::hull ? hull_measure(pred, gt) : union_measure(pred, gt);
    if (denom <= 0.0) {
        return cfg.alpha1;
    }
    return std::max(std::abs(gt.center() - pred.center()) / denom, cfg.alpha1);
}

double loss_dur(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg) {
    const double dg = gt.duration();
    if (!(dg > 0.0)) {
        throw std::domain_error("duration loss needs a ground truth with positive duration");
    }
    return std::max(std::abs(dg - pred.duration()) / dg, cfg.alpha2);
}

LossBreakdown loss_tdiou(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg) {
    LossBreakdown b;
    b.tiou_loss = loss_tiou(pred, gt);
    b.dis_loss = loss_dis(pred, gt, cfg);
    b.dur_loss = loss_dur(pred, gt, cfg);
    b.total = b.tiou_loss + cfg.beta1 * b.dis_loss + cfg.beta2 * b.dur_loss;
    return b;
}

double training_objective(const LossBreakdown& b, const LossConfig& cfg) {
    return cfg.tiou_only ? b.tiou_loss : b.total;
}

IntervalGrad grad_tdiou(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg) {
    const OverlapGrad o = overlap_with_grad(pred, gt);
    const double u = pred.duration() + gt.duration() - o.inter;

    IntervalGrad g;
    if (u > 0.0) {
        // loss_tiou = 1 - inter / u
        const double u2 = u * u;
        g.d_start = -(o.d_inter.d_start * u - o.inter * o.d_union.d_start) / u2;
        g.d_end = -(o.d_inter.d_end * u - o.inter * o.d_union.d_end) / u2;
    }
    if (cfg.tiou_only) {
        return g;
    }

    // distance term: max(|c_g - c_p| / denom, alpha1)
    IntervalGrad d_denom = o.d_union;
    double denom = u;
    if (cfg.union_mode == UnionMode::hull) {
        denom = hull_measure(pred, gt);
        d_denom.d_start = -d_min_first(pred.start, gt.start);
        d_denom.d_end = d_max_first(pred.end, gt.end);
    }
    if (denom > 0.0) {
        const double diff = gt.center() - pred.center();
        const double num = std::abs(diff);
        const double ratio = num / denom;
        if (ratio > cfg.alpha1) {
            const double d_num = -0.5 * sign(diff);  // same for start and end
            g.d_start += cfg.beta1 * (d_num * denom - num * d_denom.d_start) / (denom * denom);
            g.d_end += cfg.beta1 * (d_num * denom - num * d_denom.d_end) / (denom * denom);
        }
    }

    // duration term: max(|d_g - d_p| / d_g, alpha2)
    const double dg = gt.duration();
    if (dg > 0.0) {
        const double diff = dg - pred.duration();
        if (std::abs(diff) / dg > cfg.alpha2) {
            const double s = sign(diff) / dg;
            g.d_start += cfg.beta2 * s;
            g.d_end -= cfg.beta2 * s;
        }
    }
    return g;
}

IntervalGrad fd_grad_oracle(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg,
                            double h) {
    if (!(h > 0.0)) {
        throw std::invalid_argument("finite-difference step must be positive");
    }
    auto f = [&](double s, double e) {
        return training_objective(loss_tdiou(TimeInterval{s, e}, gt, cfg), cfg);
    };
    IntervalGrad g;
    g.d_start = (f(pred.start + h, pred.end) - f(pred.start - h, pred.end)) / (2.0 * h);
    g.d_end = (f(pred.start, pred.end + h) - f(pred.start, pred.end - h)) / (2.0 * h);
    return g;
}

}  // namespace tvp
