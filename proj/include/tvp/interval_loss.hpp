#pragma once

#include <utility>

namespace tvp {

/// Normalized time interval; both ends are fractions of the video duration.
struct TimeInterval {
    double start = 0.0;
    double end = 0.0;

    double duration() const { return end - start; }
    double center() const { return 0.5 * (start + end); }
    bool operator==(const TimeInterval&) const = default;
};

/// True when 0 <= start <= end <= 1.
bool is_valid(const TimeInterval& t);

/// Throws std::invalid_argument unless the pair forms a valid interval.
TimeInterval make_interval(double start, double end);

inline constexpr double kMinGroundTruthDuration = 1e-4;

/// Throws std::invalid_argument for invalid or degenerate ground-truth intervals.
void validate_ground_truth(const TimeInterval& gt);

enum class UnionMode {
    set_measure,  // dur_a + dur_b - inter
    hull,         // enclosing interval, used only by the distance term
};

struct LossConfig {
    double alpha1 = 0.2;  // distance clamp floor
    double alpha2 = 0.4;  // duration clamp floor
    double beta1 = 1.0;
    double beta2 = 0.1;
    UnionMode union_mode = UnionMode::set_measure;
    // Train on 1 - tIoU alone; the distance and duration terms are still reported.
    bool tiou_only = false;

    /// Throws std::invalid_argument on negative floors or non-positive weights.
    void validate() const;
};

struct LossBreakdown {
    double tiou_loss = 0.0;
    double dis_loss = 0.0;
    double dur_loss = 0.0;
    double total = 0.0;
};

struct IntervalGrad {
    double d_start = 0.0;
    double d_end = 0.0;
};

double intersection(const TimeInterval& a, const TimeInterval& b);
double union_measure(const TimeInterval& a, const TimeInterval& b);
double hull_measure(const TimeInterval& a, const TimeInterval& b);

/// |a ∩ b| / |a ∪ b|; 1 when both are the same zero-length interval.
double tiou(const TimeInterval& a, const TimeInterval& b);

double loss_tiou(const TimeInterval& pred, const TimeInterval& gt);
double loss_dis(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg);

/// Throws std::domain_error when the ground truth has zero duration.
double loss_dur(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg);

LossBreakdown loss_tdiou(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg);

/// Analytic derivative of the training objective w.r.t. (pred.start, pred.end).
///
/// Subgradient conventions: a clamp sitting exactly on its floor and |x| at
/// x == 0 contribute 0; a tie between pred and gt endpoints inside the
/// intersection's min/max takes the average of the one-sided derivatives.
IntervalGrad grad_tdiou(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg);

/// Central finite differences of the training objective with step h.
IntervalGrad fd_grad_oracle(const TimeInterval& pred, const TimeInterval& gt, const LossConfig& cfg,
                            double h);

/// The scalar actually minimised: breakdown.total, or tiou_loss when cfg.tiou_only.
double training_objective(const LossBreakdown& b, const LossConfig& cfg);

}  // namespace tvp
