#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tvp/model.hpp"

namespace tvp {

/// One convolution (+ ReLU) layer; a 2D layer is the kt = 1, temporal stride 1 case.
struct ConvLayerSpec {
    int c_in = 0;
    int c_out = 0;
    int kt = 1, kh = 3, kw = 3;
    int st = 1, sh = 1, sw = 1;
    int pt = 0, ph = 1, pw = 1;
    bool relu = true;
};

enum class EncoderKind { conv2d, conv3d };

struct EncoderSpec {
    EncoderKind kind = EncoderKind::conv2d;
    std::vector<ConvLayerSpec> layers;
};

struct VolumeDims {
    int frames = 1;
    int channels = 3;
    int height = 0;
    int width = 0;
    bool operator==(const VolumeDims&) const = default;
};

/// Output volume after each layer; throws std::invalid_argument on channel or size mismatch.
std::vector<VolumeDims> layer_outputs(const EncoderSpec& spec, const VolumeDims& input);

/// Per conv: 2 * C_in * C_out * kt*kh*kw * T_out*H_out*W_out; ReLU adds 1 per output element.
std::uint64_t count_flops(const EncoderSpec& spec, const VolumeDims& input);

/// Layer-for-layer copy of the model's vision encoder (stride-2 3x3 convs, per frame).
EncoderSpec desk_2d_spec(const ModelConfig& cfg);
/// Same layers with a temporal kernel of 3, temporal padding 1 and no temporal stride.
EncoderSpec desk_3d_spec(const ModelConfig& cfg);

/// Encoder weights for timing runs.
struct EncoderWeights {
    std::vector<std::vector<double>> w;  // c_out x c_in x kt x kh x kw
    std::vector<std::vector<double>> b;
    static EncoderWeights random(const EncoderSpec& spec, std::uint64_t seed);
};

/// Forward pass through the encoder (im2col + matrix product per layer).
std::vector<double> run_encoder(const EncoderSpec& spec, const EncoderWeights& weights,
                                const VolumeDims& input, const std::vector<double>& x);

/// Direct nested-loop convolution that counts every multiply-accumulate and
/// every ReLU output; used to check count_flops.
struct CountedRun {
    std::vector<double> output;
    std::uint64_t macs = 0;
    std::uint64_t elementwise = 0;
};
CountedRun run_encoder_reference(const EncoderSpec& spec, const EncoderWeights& weights,
                                 const VolumeDims& input, const std::vector<double>& x);

struct BenchConfig {
    int reps = 20;
    int warmup = 3;
    std::uint64_t seed = 0;
    bool operator==(const BenchConfig&) const = default;
};

struct TimingStats {
    double mean_ms = 0.0;
    double stddev_ms = 0.0;
    int reps = 0;
};

struct BenchReport {
    VolumeDims input;
    std::uint64_t flops_2d = 0;
    std::uint64_t flops_3d = 0;
    double flop_ratio = 0.0;
    TimingStats time_2d;
    TimingStats time_3d;
    double time_ratio = 0.0;
    bool noisy = false;  // reps < 10 or a stddev >= 20% of its mean
};

/// Times both encoders on the same random input batch (n_sam frames at S x S).
BenchReport run_bench(const ModelConfig& model, const BenchConfig& cfg);

nlohmann::json to_json(const BenchReport& r);

}  // namespace tvp
