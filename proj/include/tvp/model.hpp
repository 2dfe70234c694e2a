#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tvp/frame_pipeline.hpp"
#include "tvp/interval_loss.hpp"
#include "tvp/prompting.hpp"
#include "tvp/tensor.hpp"

namespace tvp {

struct ModelConfig {
    int hidden = 64;                          // d_h, also the text prompt width
    int channels = 3;
    int canvas = 64;                          // S
    int n_sam = 8;
    std::vector<int> vision_widths{8, 16, 32};  // one stride-2 3x3 conv block per entry
    int layers = 2;
    int heads = 4;
    int ffn_mult = 4;
    int vocab = 64;
    int max_text_len = 16;
    int n_tp = 10;  // text prompt slots reserved in the position table
    double dropout = 0.0;
    // Per-frame summary tokens with temporal position embeddings, next to the
    // temporally mean-pooled grid. false gives the plain grid-only sequence.
    bool frame_tokens = true;
    bool post_norm = false;

    int total_stride() const { return 1 << static_cast<int>(vision_widths.size()); }
    int feature_side() const { return canvas / total_stride(); }
    int grid_side() const { return feature_side() / 2; }
    int vision_dim() const { return vision_widths.back(); }
    int head_dim() const { return hidden / heads; }
    /// 1 (aggregation) + text rows + G^2 (+ n_sam frame tokens).
    int sequence_length(int text_rows) const;

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;

    static ModelConfig desk() { return {}; }
    /// ResNet-50-shaped 5-block encoder at stride 32 and a 12-layer transformer.
    static ModelConfig full_scale_reference();
};

/// All trainable weights of the grounding model.
struct ModelParams {
    struct ConvBlock {
        Tensor w, b, norm_g, norm_b;
    };
    struct Layer {
        Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };

    std::vector<ConvBlock> vision;
    Tensor vis_proj_w, vis_proj_b;
    Tensor frame_proj_w, frame_proj_b;
    Tensor tok_emb, pos_emb, row_emb, col_emb, time_emb, type_emb, agg_emb;
    std::vector<Layer> layers;
    Tensor lnf_g, lnf_b;
    Tensor head_w1, head_b1, head_w2, head_b2;

    /// Calls f(name, tensor) for every tensor in a fixed order.
    template <class F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <class F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }

    /// Correctly shaped tensors, all zero.
    static ModelParams zeros(const ModelConfig& cfg);
    /// Seeded random initialisation.
    static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

    std::size_t parameter_count() const;
    bool all_finite() const;
    bool operator==(const ModelParams& o) const;

private:
    template <class Self, class F>
    static void visit_impl(Self& p, F& f) {
        for (std::size_t i = 0; i < p.vision.size(); ++i) {
            const std::string n = "vision." + std::to_string(i) + ".";
            f(n + "w", p.vision[i].w);
            f(n + "b", p.vision[i].b);
            f(n + "norm_g", p.vision[i].norm_g);
            f(n + "norm_b", p.vision[i].norm_b);
        }
        f(std::string("vis_proj_w"), p.vis_proj_w);
        f(std::string("vis_proj_b"), p.vis_proj_b);
        if (!p.frame_proj_w.data.empty()) {
            f(std::string("frame_proj_w"), p.frame_proj_w);
            f(std::string("frame_proj_b"), p.frame_proj_b);
            f(std::string("time_emb"), p.time_emb);
        }
        f(std::string("tok_emb"), p.tok_emb);
        f(std::string("pos_emb"), p.pos_emb);
        f(std::string("row_emb"), p.row_emb);
        f(std::string("col_emb"), p.col_emb);
        f(std::string("type_emb"), p.type_emb);
        f(std::string("agg_emb"), p.agg_emb);
        for (std::size_t i = 0; i < p.layers.size(); ++i) {
            auto& l = p.layers[i];
            const std::string n = "layers." + std::to_string(i) + ".";
            f(n + "ln1_g", l.ln1_g);
            f(n + "ln1_b", l.ln1_b);
            f(n + "wq", l.wq);
            f(n + "bq", l.bq);
            f(n + "wk", l.wk);
            f(n + "bk", l.bk);
            f(n + "wv", l.wv);
            f(n + "bv", l.bv);
            f(n + "wo", l.wo);
            f(n + "bo", l.bo);
            f(n + "ln2_g", l.ln2_g);
            f(n + "ln2_b", l.ln2_b);
            f(n + "w1", l.w1);
            f(n + "b1", l.b1);
            f(n + "w2", l.w2);
            f(n + "b2", l.b2);
        }
        if (!p.lnf_g.data.empty()) {
            f(std::string("lnf_g"), p.lnf_g);
            f(std::string("lnf_b"), p.lnf_b);
        }
        f(std::string("head_w1"), p.head_w1);
        f(std::string("head_b1"), p.head_b1);
        f(std::string("head_w2"), p.head_w2);
        f(std::string("head_b2"), p.head_b2);
    }
};

struct ConvBlockCache {
    std::vector<double> conv;    // pre-norm conv output, all frames
    std::vector<double> mean;    // channel-norm statistics per pixel
    std::vector<double> rstd;
    std::vector<double> normed;  // post-norm, pre-ReLU
    std::vector<double> act;     // block output
};

struct LayerCache {
    std::vector<double> x_in;
    std::vector<double> attn_in;  // LN1(x) (pre-norm) or x (post-norm)
    std::vector<double> ln1_mean, ln1_rstd;
    std::vector<double> q, k, v, probs, attn, proj;
    std::vector<double> mask1;
    std::vector<double> sum1;     // post-norm: x + attention branch
    std::vector<double> x_mid;
    std::vector<double> ffn_in;   // LN2(x_mid) (pre-norm) or x_mid (post-norm)
    std::vector<double> ln2_mean, ln2_rstd;
    std::vector<double> hidden, act, out;
    std::vector<double> mask2;
    std::vector<double> sum2;     // post-norm: x_mid + FFN branch
    std::vector<double> x_out;
};

/// Named intermediates of one forward pass, kept for the backward pass.
struct Activations {
    int n_sam = 0;
    int n_tp = 0;
    int n_tex = 0;
    int seq_len = 0;
    std::vector<int> tokens;
    std::vector<double> frames;            // prompted input frames
    std::vector<ConvBlockCache> vision;    // vision.back().act is Q_vid
    std::vector<double> pooled;            // 2x2 max-pooled Q_vid, per frame
    std::vector<int> pool_argmax;
    std::vector<double> q_vid_fused;       // Q'_vid: D_v x G x G
    std::vector<double> frame_summary;     // n_sam x D_v, centred over frames and RMS-scaled
    double frame_scale = 1.0;              // RMS of the centred spatial means
    std::vector<double> q_tex;             // Q_tex: N_tex x d_h
    std::vector<double> q_tex_prompted;    // Q'_tex: (N_tp + N_tex) x d_h
    std::vector<double> grid_in;           // G^2 x D_v, row-major grid cells
    std::vector<double> q_all;             // Q_all with type embeddings: T x d_h
    std::vector<LayerCache> layers;
    std::vector<double> lnf_mean, lnf_rstd;
    std::vector<double> q_cm;              // Q_CM: T x d_h
    std::vector<double> head_hidden, head_act;
    double logits[2] = {0.0, 0.0};
    double raw_start = 0.5;                // sigmoid outputs before ordering
    double raw_end = 0.5;
    TimeInterval pred;

    const std::vector<double>& q_vid() const { return vision.back().act; }
};

struct ForwardOptions {
    bool training = false;          // enables dropout
    std::uint64_t dropout_seed = 0;
};

struct BackwardOptions {
    bool param_grads = true;   // accumulate into the ModelParams gradient
    bool input_grads = false;  // produce d loss / d(prompted frames) and d/d(text prompts)
};

// ---- individual stages -------------------------------------------------

/// Strided conv stack; returns Q_vid as n_sam x D_v x (S/stride) x (S/stride).
std::vector<double> encode_vision(const ModelConfig& cfg, const ModelParams& params,
                                  const FrameBatch& frames, Activations* cache = nullptr);

struct PoolResult {
    std::vector<double> fused;   // D_v x G x G
    std::vector<double> pooled;  // n x D_v x G x G
    std::vector<int> argmax;
};

/// 2x2 spatial max pool per frame, then mean over frames. Throws on odd sides.
PoolResult pool_fuse(std::span<const double> q_vid, int n_frames, int channels, int side);

/// Embedding lookup; throws std::out_of_range for ids >= vocab.
std::vector<double> encode_text(const ModelConfig& cfg, const ModelParams& params,
                                std::span<const int> tokens);

/// [AGG; prompted text + M_pos; visual grid + M_2D (+ frame tokens)] plus type embeddings.
std::vector<double> assemble(const ModelConfig& cfg, const ModelParams& params,
                             std::span<const double> q_vid_fused,
                             std::span<const double> frame_summary,
                             std::span<const double> prompted_text, int text_rows,
                             Activations* cache = nullptr);

std::vector<double> crossmodal_forward(const ModelConfig& cfg, const ModelParams& params,
                                       std::span<const double> q_all, int seq_len,
                                       Activations* cache = nullptr,
                                       const ForwardOptions& opts = {});

/// MLP on the aggregation row -> sigmoid -> ordered (min, max) interval.
TimeInterval predict(const ModelConfig& cfg, const ModelParams& params,
                     std::span<const double> q_cm, Activations* cache = nullptr);

// ---- full model --------------------------------------------------------

/// Runs the model on already prompted frames and token ids.
Activations forward_activations(const ModelConfig& cfg, const ModelParams& params,
                                const FrameBatch& prompted_frames, std::span<const int> tokens,
                                const TextPromptSet& text_prompts, const ForwardOptions& opts = {});

struct InputGrads {
    std::vector<double> frames;        // same layout as the prompted frames
    std::vector<double> text_prompts;  // N_tp x d_h
};

/// Back-propagates d loss / d(pred.start, pred.end) through the cached pass.
void backward(const ModelConfig& cfg, const ModelParams& params, const Activations& acts,
              const IntervalGrad& d_pred, const BackwardOptions& opts, ModelParams* grads,
              InputGrads* input_grads);

struct ForwardResult {
    TimeInterval pred;
    LossBreakdown loss;  // populated when a ground truth is given
    bool has_loss = false;
};

/// preprocess -> apply_visual -> vision -> pool -> text -> prompts -> assemble -> transformer -> head.
ForwardResult forward(const RawVideo& video, std::span<const int> tokens, const PromptBundle& prompts,
                      const ModelParams& params, const ModelConfig& cfg,
                      const TimeInterval* gt = nullptr, const LossConfig& loss_cfg = {});

}  // namespace tvp
