#pragma once

#include <span>
#include <vector>

namespace tvp {

/// Decoded video: n_frames x channels x height x width pixels in [0, 1].
struct RawVideo {
    int n_frames = 0;
    int channels = 3;
    int height = 0;
    int width = 0;
    double duration_s = 0.0;
    std::vector<float> pixels;

    std::size_t frame_size() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(width);
    }
    std::span<const float> frame(int i) const {
        return std::span<const float>(pixels).subspan(static_cast<std::size_t>(i) * frame_size(),
                                                      frame_size());
    }
    /// Throws std::invalid_argument on shape/buffer inconsistencies.
    void validate() const;
};

/// Rows/cols of real content in a padded canvas (anchored top-left).
struct ValidRegion {
    int rows = 0;
    int cols = 0;
    bool operator==(const ValidRegion&) const = default;
};

/// n_sam x channels x canvas x canvas frames ready for the vision encoder.
struct FrameBatch {
    int n_sam = 0;
    int channels = 3;
    int canvas = 0;
    std::vector<double> pixels;
    std::vector<ValidRegion> valid;

    std::size_t frame_size() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(canvas) *
               static_cast<std::size_t>(canvas);
    }
    double* frame(int i) { return pixels.data() + static_cast<std::size_t>(i) * frame_size(); }
    const double* frame(int i) const {
        return pixels.data() + static_cast<std::size_t>(i) * frame_size();
    }
    bool operator==(const FrameBatch&) const = default;
};

struct PipelineConfig {
    int n_sam = 8;
    int canvas = 64;

    static PipelineConfig full_scale_charades() { return {48, 448}; }
    static PipelineConfig full_scale_activitynet() { return {64, 448}; }
};

/// Midpoint rule: index_i = floor((i + 0.5) * n_vid / n_sam), clamped to [0, n_vid - 1].
std::vector<int> uniform_sample(int n_vid, int n_sam);

struct ResizedFrame {
    std::vector<double> pixels;  // channels x canvas x canvas
    ValidRegion valid;
};

/// Content size after scaling the longer side of (height, width) to canvas.
ValidRegion scaled_extent(int height, int width, int canvas);

/// Aspect-preserving bilinear resize (half-pixel centres, edge clamp) so the
/// longer side equals canvas, then zero-pad bottom/right to canvas x canvas.
ResizedFrame resize_pad(std::span<const float> frame, int channels, int height, int width,
                        int canvas);

/// uniform_sample followed by resize_pad on each sampled frame.
FrameBatch preprocess(const RawVideo& video, const PipelineConfig& cfg);

}  // namespace tvp
