#include "tvp/frame_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tvp {

void RawVideo::validate() const {
    if (n_frames < 1) {
        throw std::invalid_argument("video must have at least one frame");
    }
    if (channels != 3) {
        throw std::invalid_argument("video must have 3 channels");
    }
    if (height < 1 || width < 1) {
        throw std::invalid_argument("video frame dimensions must be positive");
    }
    if (pixels.size() != frame_size() * static_cast<std::size_t>(n_frames)) {
        throw std::invalid_argument("video pixel buffer does not match its shape");
    }
}

std::vector<int> uniform_sample(int n_vid, int n_sam) {
    if (n_sam < 1 || n_vid < 1) {
        throw std::invalid_argument("uniform_sample needs n_vid >= 1 and n_sam >= 1");
    }
    std::vector<int> idx(static_cast<std::size_t>(n_sam));
    for (int i = 0; i < n_sam; ++i) {
        // Integer form of floor((i + 0.5) * n_vid / n_sam), exact for all sizes.
        const long long num = (2LL * i + 1) * n_vid;
        const long long v = num / (2LL * n_sam);
        idx[static_cast<std::size_t>(i)] = static_cast<int>(std::clamp<long long>(v, 0, n_vid - 1));
    }
    return idx;
}

ValidRegion scaled_extent(int height, int width, int canvas) {
    const int longer = std::max(height, width);
    auto scale = [&](int d) {
        if (d == longer) {
            return canvas;
        }
        // round(d * canvas / longer) in integers, at least one pixel
        const long long v = (2LL * d * canvas + longer) / (2LL * longer);
        return static_cast<int>(std::clamp<long long>(v, 1, canvas));
    };
    return {scale(height), scale(width)};
}

ResizedFrame resize_pad(std::span<const float> frame, int channels, int height, int width,
                        int canvas) {
    if (height < 1 || width < 1 || channels < 1 || canvas < 1) {
        throw std::invalid_argument("resize_pad needs positive dimensions");
    }
    if (frame.size() != static_cast<std::size_t>(channels) * height * width) {
        throw std::invalid_argument("resize_pad: frame buffer does not match its shape");
    }
    ResizedFrame out;
    out.valid = scaled_extent(height, width, canvas);
    out.pixels.assign(static_cast<std::size_t>(channels) * canvas * canvas, 0.0);

    const int oh = out.valid.rows;
    const int ow = out.valid.cols;
    const double sy = static_cast<double>(height) / oh;
    const double sx = static_cast<double>(width) / ow;

    struct Tap {
        int i0, i1;
        double w1;
    };
    auto taps = [](int n_out, int n_in, double scale) {
        std::vector<Tap> t(static_cast<std::size_t>(n_out));
        for (int o = 0; o < n_out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
            const int i0 = static_cast<int>(std::floor(src));
            const int i1 = std::min(i0 + 1, n_in - 1);
            t[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
        }
        return t;
    };
    const auto ty = taps(oh, height, sy);
    const auto tx = taps(ow, width, sx);

    for (int c = 0; c < channels; ++c) {
        const float* src = frame.data() + static_cast<std::size_t>(c) * height * width;
        double* dst = out.pixels.data() + static_cast<std::size_t>(c) * canvas * canvas;
        for (int y = 0; y < oh; ++y) {
            const Tap& a = ty[static_cast<std::size_t>(y)];
            const float* r0 = src + static_cast<std::size_t>(a.i0) * width;
            const float* r1 = src + static_cast<std::size_t>(a.i1) * width;
            for (int x = 0; x < ow; ++x) {
                const Tap& b = tx[static_cast<std::size_t>(x)];
                const double top = (1.0 - b.w1) * r0[b.i0] + b.w1 * r0[b.i1];
                const double bot = (1.0 - b.w1) * r1[b.i0] + b.w1 * r1[b.i1];
                dst[static_cast<std::size_t>(y) * canvas + x] = (1.0 - a.w1) * top + a.w1 * bot;
            }
        }
    }
    return out;
}

FrameBatch preprocess(const RawVideo& video, const PipelineConfig& cfg) {
    video.validate();
    FrameBatch batch;
    batch.n_sam = cfg.n_sam;
    batch.channels = video.channels;
    batch.canvas = cfg.canvas;
    batch.pixels.resize(batch.frame_size() * static_cast<std::size_t>(cfg.n_sam));
    batch.valid.resize(static_cast<std::size_t>(cfg.n_sam));

    const auto idx = uniform_sample(video.n_frames, cfg.n_sam);
    for (int i = 0; i < cfg.n_sam; ++i) {
        auto r = resize_pad(video.frame(idx[static_cast<std::size_t>(i)]), video.channels,
                            video.height, video.width, cfg.canvas);
        std::copy(r.pixels.begin(), r.pixels.end(), batch.frame(i));
        batch.valid[static_cast<std::size_t>(i)] = r.valid;
    }
    return batch;
}

}  // namespace tvp
