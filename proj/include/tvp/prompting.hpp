#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tvp/frame_pipeline.hpp"

namespace tvp {

/// How a visual prompt combines with the frame pixels on the border ring.
enum class PromptMode { replace, add, remove };

std::string to_string(PromptMode m);
PromptMode prompt_mode_from_string(const std::string& s);

/// Frame-aware visual prompts: one pattern per sampled frame, used only on
/// the border ring of width `width` around the canvas.
struct VisualPromptSet {
    int n_sam = 0;
    int channels = 3;
    int canvas = 0;
    int width = 0;
    PromptMode mode = PromptMode::replace;
    std::vector<double> patterns;  // n_sam x channels x canvas x canvas

    /// Trainable entries per frame: channels * (canvas^2 - (canvas - 2 * width)^2).
    std::size_t params_per_frame() const;
    bool operator==(const VisualPromptSet&) const = default;
};

/// Text prompts: `count` trainable vectors of the model hidden width.
struct TextPromptSet {
    int count = 0;
    int width = 0;
    std::vector<double> vectors;  // count x width
    bool operator==(const TextPromptSet&) const = default;
};

struct PromptConfig {
    int n_sam = 8;
    int channels = 3;
    int canvas = 64;
    int visual_width = 8;  // p
    int text_count = 10;   // N_tp
    int text_width = 64;   // must equal the model hidden width
    PromptMode mode = PromptMode::replace;

    void validate() const;
};

/// True when pixel (row, col) lies on the border ring of width p.
inline bool in_ring(int row, int col, int canvas, int p) {
    return row < p || col < p || row >= canvas - p || col >= canvas - p;
}

std::size_t ring_area(int canvas, int p);

/// Applies pattern i to frame i on the ring; pixels strictly inside are copied bit-exactly.
/// Throws std::invalid_argument on shape mismatch.
FrameBatch apply_visual(const FrameBatch& batch, const VisualPromptSet& prompts);

/// Accumulates d loss / d pattern from d loss / d(prompted frames).
void accumulate_visual_grad(const std::vector<double>& d_prompted, const VisualPromptSet& prompts,
                            std::vector<double>& d_patterns);

/// Prepends the prompt vectors to the token features (row-major, width columns).
/// Throws std::invalid_argument on width mismatch.
std::vector<double> apply_text(const std::vector<double>& text_features, int n_tex, int width,
                               const TextPromptSet& prompts);

struct PromptBundle {
    VisualPromptSet visual;
    TextPromptSet text;
};

/// Visual patterns ~ U(0, 1) on the ring (zero elsewhere); text vectors ~ N(0, 0.02).
PromptBundle init_prompts(const PromptConfig& cfg, std::uint64_t seed);

/// Prompts that leave the model input unchanged: p = 0 and N_tp = 0.
PromptBundle identity_prompts(int n_sam, int channels, int canvas, int text_width);

}  // namespace tvp
