#include "tvp/prompting.hpp"

#include <algorithm>
#include <stdexcept>

#include "tvp/rng.hpp"

namespace tvp {

std::string to_string(PromptMode m) {
    switch (m) {
        case PromptMode::replace:
            return "replace";
        case PromptMode::add:
            return "add";
        case PromptMode::remove:
            return "remove";
    }
    return "replace";
}

PromptMode prompt_mode_from_string(const std::string& s) {
    if (s == "replace") {
        return PromptMode::replace;
    }
    if (s == "add") {
        return PromptMode::add;
    }
    if (s == "remove") {
        return PromptMode::remove;
    }
    throw std::invalid_argument("unknown prompt mode '" + s + "'");
}

std::size_t ring_area(int canvas, int p) {
    const long long inner = std::max(0, canvas - 2 * p);
    return static_cast<std::size_t>(static_cast<long long>(canvas) * canvas - inner * inner);
}

std::size_t VisualPromptSet::params_per_frame() const {
    return static_cast<std::size_t>(channels) * ring_area(canvas, width);
}

void PromptConfig::validate() const {
    if (visual_width < 0 || 2 * visual_width > canvas) {
        throw std::invalid_argument("visual prompt width must satisfy 0 <= p <= canvas / 2");
    }
    if (text_count < 0) {
        throw std::invalid_argument("text prompt count must be >= 0");
    }
    if (n_sam < 1 || channels < 1 || canvas < 1 || text_width < 1) {
        throw std::invalid_argument("prompt config dimensions must be positive");
    }
}

FrameBatch apply_visual(const FrameBatch& batch, const VisualPromptSet& prompts) {
    if (batch.n_sam != prompts.n_sam || batch.channels != prompts.channels ||
        batch.canvas != prompts.canvas) {
        throw std::invalid_argument("visual prompts and frame batch disagree on N_sam/C/S");
    }
    if (prompts.patterns.size() != batch.pixels.size()) {
        throw std::invalid_argument("visual prompt pattern buffer has the wrong size");
    }
    FrameBatch out = batch;
    const int s = batch.canvas;
    const int p = prompts.width;
    if (p == 0) {
        return out;
    }
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    const std::size_t planes = static_cast<std::size_t>(batch.n_sam) * batch.channels;
    for (std::size_t k = 0; k < planes; ++k) {
        double* dst = out.pixels.data() + k * plane;
        const double* pat = prompts.patterns.data() + k * plane;
        for (int r = 0; r < s; ++r) {
            for (int c = 0; c < s; ++c) {
                if (!in_ring(r, c, s, p)) {
                    continue;
                }
                const std::size_t i = static_cast<std::size_t>(r) * s + c;
                switch (prompts.mode) {
                    case PromptMode::replace:
                        dst[i] = pat[i];
                        break;
                    case PromptMode::add:
                        dst[i] += pat[i];
                        break;
                    case PromptMode::remove:
                        dst[i] = 0.0;
                        break;
                }
            }
        }
    }
    return out;
}

void accumulate_visual_grad(const std::vector<double>& d_prompted, const VisualPromptSet& prompts,
                            std::vector<double>& d_patterns) {
    if (d_patterns.size() != prompts.patterns.size() || d_prompted.size() != d_patterns.size()) {
        throw std::invalid_argument("visual prompt gradient buffers have the wrong size");
    }
    if (prompts.mode == PromptMode::remove || prompts.width == 0) {
        return;
    }
    const int s = prompts.canvas;
    const int p = prompts.width;
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    const std::size_t planes = static_cast<std::size_t>(prompts.n_sam) * prompts.channels;
    for (std::size_t k = 0; k < planes; ++k) {
        for (int r = 0; r < s; ++r) {
            for (int c = 0; c < s; ++c) {
                if (in_ring(r, c, s, p)) {
                    const std::size_t i = k * plane + static_cast<std::size_t>(r) * s + c;
                    d_patterns[i] += d_prompted[i];
                }
            }
        }
    }
}

std::vector<double> apply_text(const std::vector<double>& text_features, int n_tex, int width,
                               const TextPromptSet& prompts) {
    if (prompts.count > 0 && prompts.width != width) {
        throw std::invalid_argument("text prompt width does not match the hidden width");
    }
    if (text_features.size() != static_cast<std::size_t>(n_tex) * width) {
        throw std::invalid_argument("text feature buffer does not match n_tex x width");
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(prompts.count + n_tex) * width);
    out.insert(out.end(), prompts.vectors.begin(), prompts.vectors.end());
    out.insert(out.end(), text_features.begin(), text_features.end());
    return out;
}

PromptBundle init_prompts(const PromptConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    PromptBundle b;
    auto& v = b.visual;
    v.n_sam = cfg.n_sam;
    v.channels = cfg.channels;
    v.canvas = cfg.canvas;
    v.width = cfg.visual_width;
    v.mode = cfg.mode;
    const int s = cfg.canvas;
    v.patterns.assign(static_cast<std::size_t>(cfg.n_sam) * cfg.channels * s * s, 0.0);

    // One draw per ring position, shared by every frame: the frame patterns
    // start equal and separate only through training.
    Rng vis_rng(derive_seed(seed, 0x7669735f70726fULL));
    const std::size_t frame = static_cast<std::size_t>(cfg.channels) * s * s;
    std::size_t k = 0;
    for (int plane = 0; plane < cfg.channels; ++plane) {
        for (int r = 0; r < s; ++r) {
            for (int c = 0; c < s; ++c, ++k) {
                if (in_ring(r, c, s, cfg.visual_width)) {
                    v.patterns[k] = uniform01(vis_rng);
                }
            }
        }
    }
    for (int f = 1; f < cfg.n_sam; ++f) {
        std::copy_n(v.patterns.begin(), frame, v.patterns.begin() + static_cast<std::ptrdiff_t>(f * frame));
    }

    auto& t = b.text;
    t.count = cfg.text_count;
    t.width = cfg.text_width;
    t.vectors.resize(static_cast<std::size_t>(cfg.text_count) * cfg.text_width);
    Rng txt_rng(derive_seed(seed, 0x7478745f70726fULL));
    for (double& x : t.vectors) {
        x = normal(txt_rng, 0.0, 0.02);
    }
    return b;
}

PromptBundle identity_prompts(int n_sam, int channels, int canvas, int text_width) {
    PromptBundle b;
    b.visual.n_sam = n_sam;
    b.visual.channels = channels;
    b.visual.canvas = canvas;
    b.visual.width = 0;
    b.visual.patterns.assign(static_cast<std::size_t>(n_sam) * channels * canvas * canvas, 0.0);
    b.text.count = 0;
    b.text.width = text_width;
    return b;
}

}  // namespace tvp
