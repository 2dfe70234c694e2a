#include "tvp/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tvp/nn.hpp"
#include "tvp/rng.hpp"

namespace tvp {

namespace {

constexpr int kKernel = 3;
constexpr double kEmbeddingStd = 1.0;
constexpr double kFrameEps = 1e-5;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

nn::ConvShape block_shape(const ModelConfig& cfg, int b) {
    nn::ConvShape s;
    s.c_in = b == 0 ? cfg.channels : cfg.vision_widths[sz(b - 1)];
    s.height = s.width = cfg.canvas >> b;
    s.c_out = cfg.vision_widths[sz(b)];
    s.kernel = kKernel;
    s.stride = 2;
    s.pad = 1;
    return s;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void add_rows(double* dst, const double* src, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        dst[i] += src[i];
    }
}

void make_dropout_mask(std::vector<double>& mask, std::size_t n, double rate, Rng& rng) {
    mask.resize(n);
    const double keep = 1.0 / (1.0 - rate);
    for (double& m : mask) {
        m = uniform01(rng) < rate ? 0.0 : keep;
    }
}

// Gradient pointer for a tensor, or null when parameter gradients are off.
struct GradSink {
    ModelParams* grads;
    double* operator()(Tensor ModelParams::*t) const { return grads ? (grads->*t).ptr() : nullptr; }
};

}  // namespace

int ModelConfig::sequence_length(int text_rows) const {
    const int g = grid_side();
    return 1 + text_rows + g * g + (frame_tokens ? n_sam : 0);
}

void ModelConfig::validate() const {
    if (hidden < 1 || heads < 1 || hidden % heads != 0) {
        throw std::invalid_argument("hidden width must be a positive multiple of the head count");
    }
    if (vision_widths.empty()) {
        throw std::invalid_argument("vision encoder needs at least one conv block");
    }
    for (int w : vision_widths) {
        if (w < 1) {
            throw std::invalid_argument("vision channel widths must be positive");
        }
    }
    if (canvas < 1 || canvas % total_stride() != 0) {
        throw std::invalid_argument("canvas S must be divisible by the encoder total stride " +
                                    std::to_string(total_stride()));
    }
    if (feature_side() % 2 != 0) {
        throw std::invalid_argument("encoder feature map side must be even for 2x2 pooling");
    }
    if (channels != 3) {
        throw std::invalid_argument("model expects 3-channel frames");
    }
    if (n_sam < 1 || layers < 0 || ffn_mult < 1 || vocab < 1 || max_text_len < 1 || n_tp < 0) {
        throw std::invalid_argument("model sizes must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw std::invalid_argument("dropout must be in [0, 1)");
    }
}

ModelConfig ModelConfig::full_scale_reference() {
    ModelConfig c;
    c.hidden = 768;
    c.canvas = 448;
    c.n_sam = 48;
    c.vision_widths = {64, 256, 512, 1024, 2048};
    c.layers = 12;
    c.heads = 12;
    c.vocab = 30522;
    c.max_text_len = 64;
    c.n_tp = 10;
    c.dropout = 0.1;
    c.frame_tokens = false;
    c.post_norm = true;
    return c;
}

ModelParams ModelParams::zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    const int d = cfg.hidden;
    const int dv = cfg.vision_dim();
    for (std::size_t b = 0; b < cfg.vision_widths.size(); ++b) {
        const auto s = block_shape(cfg, static_cast<int>(b));
        p.vision.push_back({Tensor({s.c_out, s.c_in, kKernel, kKernel}), Tensor({s.c_out}),
                            Tensor({s.c_out}), Tensor({s.c_out})});
    }
    p.vis_proj_w = Tensor({d, dv});
    p.vis_proj_b = Tensor({d});
    if (cfg.frame_tokens) {
        p.frame_proj_w = Tensor({d, dv});
        p.frame_proj_b = Tensor({d});
        p.time_emb = Tensor({cfg.n_sam, d});
    }
    p.tok_emb = Tensor({cfg.vocab, d});
    p.pos_emb = Tensor({cfg.n_tp + cfg.max_text_len, d});
    p.row_emb = Tensor({cfg.grid_side(), d});
    p.col_emb = Tensor({cfg.grid_side(), d});
    p.type_emb = Tensor({2, d});
    p.agg_emb = Tensor({d});
    const int f = cfg.ffn_mult * d;
    for (int l = 0; l < cfg.layers; ++l) {
        p.layers.push_back({Tensor({d}), Tensor({d}), Tensor({d, d}), Tensor({d}), Tensor({d, d}),
                            Tensor({d}), Tensor({d, d}), Tensor({d}), Tensor({d, d}), Tensor({d}),
                            Tensor({d}), Tensor({d}), Tensor({f, d}), Tensor({f}), Tensor({d, f}),
                            Tensor({d})});
    }
    if (!cfg.post_norm) {
        p.lnf_g = Tensor({d});
        p.lnf_b = Tensor({d});
    }
    p.head_w1 = Tensor({d, d});
    p.head_b1 = Tensor({d});
    p.head_w2 = Tensor({2, d});
    p.head_b2 = Tensor({2});
    return p;
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = zeros(cfg);
    Rng rng(derive_seed(seed, 0x6d6f64656cULL));
    auto fill_normal = [&](Tensor& t, double stddev) {
        for (double& x : t.data) {
            x = normal(rng, 0.0, stddev);
        }
    };
    auto fan_in = [](const Tensor& t) {
        std::size_t n = 1;
        for (std::size_t i = 1; i < t.shape.size(); ++i) {
            n *= sz(t.shape[i]);
        }
        return static_cast<double>(n);
    };
    for (auto& b : p.vision) {
        fill_normal(b.w, std::sqrt(2.0 / fan_in(b.w)));
        b.norm_g.fill(1.0);
    }
    fill_normal(p.vis_proj_w, 1.0 / std::sqrt(fan_in(p.vis_proj_w)));
    // Embeddings start at the scale of the projected visual features so position
    // and token identity survive the first LayerNorm.
    if (cfg.frame_tokens) {
        fill_normal(p.frame_proj_w, 1.0 / std::sqrt(fan_in(p.frame_proj_w)));
        fill_normal(p.time_emb, kEmbeddingStd);
    }
    fill_normal(p.tok_emb, kEmbeddingStd);
    fill_normal(p.pos_emb, kEmbeddingStd);
    fill_normal(p.row_emb, kEmbeddingStd);
    fill_normal(p.col_emb, kEmbeddingStd);
    fill_normal(p.type_emb, kEmbeddingStd);
    fill_normal(p.agg_emb, kEmbeddingStd);
    for (auto& l : p.layers) {
        l.ln1_g.fill(1.0);
        l.ln2_g.fill(1.0);
        for (Tensor* w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) {
            fill_normal(*w, 1.0 / std::sqrt(fan_in(*w)));
        }
        // Shrink residual-branch outputs so the initial stack is close to identity.
        for (double& x : l.wo.data) {
            x *= 0.5;
        }
        for (double& x : l.w2.data) {
            x *= 0.5;
        }
    }
    if (!cfg.post_norm) {
        p.lnf_g.fill(1.0);
    }
    fill_normal(p.head_w1, 1.0 / std::sqrt(fan_in(p.head_w1)));
    fill_normal(p.head_w2, 0.02);
    // Start from a wide centred interval (sigmoid(-1), sigmoid(1)) ~ (0.27, 0.73).
    p.head_b2.data = {-1.0, 1.0};
    return p;
}

std::size_t ModelParams::parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
}

bool ModelParams::all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Tensor& t) {
        for (double x : t.data) {
            ok = ok && std::isfinite(x);
        }
    });
    return ok;
}

bool ModelParams::operator==(const ModelParams& o) const {
    std::vector<const Tensor*> a;
    std::vector<const Tensor*> b;
    visit([&](const std::string&, const Tensor& t) { a.push_back(&t); });
    o.visit([&](const std::string&, const Tensor& t) { b.push_back(&t); });
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(*a[i] == *b[i])) {
            return false;
        }
    }
    return true;
}

// ---- stages ------------------------------------------------------------

std::vector<double> encode_vision(const ModelConfig& cfg, const ModelParams& params,
                                  const FrameBatch& frames, Activations* cache) {
    if (frames.canvas != cfg.canvas || frames.channels != cfg.channels) {
        throw std::invalid_argument("frame batch does not match the model canvas/channels");
    }
    if (frames.canvas % cfg.total_stride() != 0) {
        throw std::invalid_argument("canvas not divisible by the encoder stride");
    }
    const int n = frames.n_sam;
    const int blocks = static_cast<int>(cfg.vision_widths.size());
    std::vector<ConvBlockCache> local;
    std::vector<ConvBlockCache>& bc = cache ? cache->vision : local;
    bc.assign(sz(blocks), {});

    std::vector<double> col;
    const std::vector<double>* input = &frames.pixels;
    for (int b = 0; b < blocks; ++b) {
        const auto s = block_shape(cfg, b);
        const std::size_t in_size = sz(s.c_in) * sz(s.height) * sz(s.width);
        const int pix = s.out_height() * s.out_width();
        const std::size_t out_size = sz(s.c_out) * sz(pix);
        auto& c = bc[sz(b)];
        c.conv.resize(out_size * sz(n));
        c.normed.resize(out_size * sz(n));
        c.act.resize(out_size * sz(n));
        c.mean.resize(sz(pix) * sz(n));
        c.rstd.resize(sz(pix) * sz(n));
        const auto& blk = params.vision[sz(b)];
        for (int f = 0; f < n; ++f) {
            double* conv = c.conv.data() + out_size * sz(f);
            double* normed = c.normed.data() + out_size * sz(f);
            nn::conv2d_forward(s, input->data() + in_size * sz(f), blk.w.ptr(), blk.b.ptr(), conv,
                               col);
            nn::channel_norm_forward(conv, s.c_out, pix, blk.norm_g.ptr(), blk.norm_b.ptr(), normed,
                                     c.mean.data() + sz(pix) * sz(f),
                                     c.rstd.data() + sz(pix) * sz(f));
            nn::relu_forward(normed, out_size, c.act.data() + out_size * sz(f));
        }
        input = &c.act;
    }
    if (cache) {
        return bc.back().act;
    }
    return std::move(bc.back().act);
}

PoolResult pool_fuse(std::span<const double> q_vid, int n_frames, int channels, int side) {
    if (side % 2 != 0) {
        throw std::invalid_argument("pool_fuse needs even spatial dimensions");
    }
    if (q_vid.size() != sz(n_frames) * sz(channels) * sz(side) * sz(side) || n_frames < 1) {
        throw std::invalid_argument("pool_fuse: feature buffer does not match its shape");
    }
    const int g = side / 2;
    PoolResult r;
    const std::size_t frame_in = sz(channels) * sz(side) * sz(side);
    const std::size_t frame_out = sz(channels) * sz(g) * sz(g);
    r.pooled.resize(frame_out * sz(n_frames));
    r.argmax.resize(frame_out * sz(n_frames));
    r.fused.assign(frame_out, 0.0);
    for (int f = 0; f < n_frames; ++f) {
        const double* src = q_vid.data() + frame_in * sz(f);
        for (int c = 0; c < channels; ++c) {
            for (int y = 0; y < g; ++y) {
                for (int x = 0; x < g; ++x) {
                    int best = c * side * side + (2 * y) * side + 2 * x;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const int i = c * side * side + (2 * y + dy) * side + 2 * x + dx;
                            if (src[i] > src[best]) {
                                best = i;
                            }
                        }
                    }
                    const std::size_t o = frame_out * sz(f) + sz(c) * sz(g) * sz(g) + sz(y * g + x);
                    r.pooled[o] = src[best];
                    r.argmax[o] = best;
                }
            }
        }
    }
    for (int f = 0; f < n_frames; ++f) {
        add_rows(r.fused.data(), r.pooled.data() + frame_out * sz(f), frame_out);
    }
    for (double& v : r.fused) {
        v /= n_frames;
    }
    return r;
}

std::vector<double> encode_text(const ModelConfig& cfg, const ModelParams& params,
                                std::span<const int> tokens) {
    const int d = cfg.hidden;
    std::vector<double> out(tokens.size() * sz(d));
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int id = tokens[i];
        if (id < 0 || id >= cfg.vocab) {
            throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                                    std::to_string(cfg.vocab));
        }
        std::copy_n(params.tok_emb.ptr() + sz(id) * sz(d), d, out.data() + i * sz(d));
    }
    return out;
}

std::vector<double> assemble(const ModelConfig& cfg, const ModelParams& params,
                             std::span<const double> q_vid_fused,
                             std::span<const double> frame_summary,
                             std::span<const double> prompted_text, int text_rows,
                             Activations* cache) {
    const int d = cfg.hidden;
    const int dv = cfg.vision_dim();
    const int g = cfg.grid_side();
    if (q_vid_fused.size() != sz(dv) * sz(g) * sz(g)) {
        throw std::invalid_argument("assemble: visual features do not match D_v x G x G");
    }
    if (prompted_text.size() != sz(text_rows) * sz(d)) {
        throw std::invalid_argument("assemble: text features width does not match d_h");
    }
    if (text_rows > params.pos_emb.shape[0]) {
        throw std::invalid_argument("assemble: text sequence longer than the position table");
    }
    if (cfg.frame_tokens && frame_summary.size() != sz(cfg.n_sam) * sz(dv)) {
        throw std::invalid_argument("assemble: frame summary does not match n_sam x D_v");
    }
    const int t = cfg.sequence_length(text_rows);
    std::vector<double> q(sz(t) * sz(d), 0.0);
    const double* type0 = params.type_emb.ptr();
    const double* type1 = params.type_emb.ptr() + d;

    // aggregation token
    std::copy_n(params.agg_emb.ptr(), d, q.data());
    add_rows(q.data(), type0, sz(d));

    // text: Q''_tex = Q'_tex + M_pos
    for (int i = 0; i < text_rows; ++i) {
        double* row = q.data() + sz(1 + i) * sz(d);
        std::copy_n(prompted_text.data() + sz(i) * sz(d), d, row);
        add_rows(row, params.pos_emb.ptr() + sz(i) * sz(d), sz(d));
        add_rows(row, type0, sz(d));
    }

    // visual grid: 1x1 projection, then row + column embeddings
    std::vector<double> grid_in(sz(g) * sz(g) * sz(dv));
    for (int c = 0; c < dv; ++c) {
        for (int cell = 0; cell < g * g; ++cell) {
            grid_in[sz(cell) * sz(dv) + sz(c)] = q_vid_fused[sz(c) * sz(g * g) + sz(cell)];
        }
    }
    const int grid_off = 1 + text_rows;
    double* grid = q.data() + sz(grid_off) * sz(d);
    nn::linear_forward(grid_in.data(), g * g, dv, params.vis_proj_w.ptr(), params.vis_proj_b.ptr(),
                       d, grid);
    for (int r = 0; r < g; ++r) {
        for (int c = 0; c < g; ++c) {
            double* row = grid + sz(r * g + c) * sz(d);
            add_rows(row, params.row_emb.ptr() + sz(r) * sz(d), sz(d));
            add_rows(row, params.col_emb.ptr() + sz(c) * sz(d), sz(d));
            add_rows(row, type1, sz(d));
        }
    }

    if (cfg.frame_tokens) {
        double* fr = q.data() + sz(grid_off + g * g) * sz(d);
        nn::linear_forward(frame_summary.data(), cfg.n_sam, dv, params.frame_proj_w.ptr(),
                           params.frame_proj_b.ptr(), d, fr);
        for (int f = 0; f < cfg.n_sam; ++f) {
            add_rows(fr + sz(f) * sz(d), params.time_emb.ptr() + sz(f) * sz(d), sz(d));
            add_rows(fr + sz(f) * sz(d), type1, sz(d));
        }
    }
    if (cache) {
        cache->grid_in = std::move(grid_in);
        cache->seq_len = t;
    }
    return q;
}

std::vector<double> crossmodal_forward(const ModelConfig& cfg, const ModelParams& params,
                                       std::span<const double> q_all, int seq_len,
                                       Activations* cache, const ForwardOptions& opts) {
    const int d = cfg.hidden;
    const int t = seq_len;
    const int f = cfg.ffn_mult * d;
    const std::size_t td = sz(t) * sz(d);
    if (q_all.size() != td) {
        throw std::invalid_argument("crossmodal_forward: input does not match seq_len x d_h");
    }
    const bool drop = opts.training && cfg.dropout > 0.0;
    Rng rng(derive_seed(opts.dropout_seed, 0x64726f70ULL));

    std::vector<LayerCache> local;
    std::vector<LayerCache>& lcs = cache ? cache->layers : local;
    lcs.assign(sz(cfg.layers), {});

    std::vector<double> x(q_all.begin(), q_all.end());
    for (int li = 0; li < cfg.layers; ++li) {
        const auto& L = params.layers[sz(li)];
        LayerCache& c = lcs[sz(li)];
        c.x_in = x;
        c.ln1_mean.resize(sz(t));
        c.ln1_rstd.resize(sz(t));
        c.ln2_mean.resize(sz(t));
        c.ln2_rstd.resize(sz(t));
        if (cfg.post_norm) {
            c.attn_in = x;
        } else {
            c.attn_in.resize(td);
            nn::layernorm_forward(x.data(), t, d, L.ln1_g.ptr(), L.ln1_b.ptr(), c.attn_in.data(),
                                  c.ln1_mean.data(), c.ln1_rstd.data());
        }
        c.q.resize(td);
        c.k.resize(td);
        c.v.resize(td);
        nn::linear_forward(c.attn_in.data(), t, d, L.wq.ptr(), L.bq.ptr(), d, c.q.data());
        nn::linear_forward(c.attn_in.data(), t, d, L.wk.ptr(), L.bk.ptr(), d, c.k.data());
        nn::linear_forward(c.attn_in.data(), t, d, L.wv.ptr(), L.bv.ptr(), d, c.v.data());
        c.probs.resize(sz(cfg.heads) * sz(t) * sz(t));
        c.attn.resize(td);
        nn::attention_forward(c.q.data(), c.k.data(), c.v.data(), t, d, cfg.heads, c.probs.data(),
                              c.attn.data());
        c.proj.resize(td);
        nn::linear_forward(c.attn.data(), t, d, L.wo.ptr(), L.bo.ptr(), d, c.proj.data());
        if (drop) {
            make_dropout_mask(c.mask1, td, cfg.dropout, rng);
        }
        std::vector<double> sum1 = x;
        for (std::size_t i = 0; i < td; ++i) {
            sum1[i] += drop ? c.proj[i] * c.mask1[i] : c.proj[i];
        }
        if (cfg.post_norm) {
            c.sum1 = sum1;
            c.x_mid.resize(td);
            nn::layernorm_forward(sum1.data(), t, d, L.ln1_g.ptr(), L.ln1_b.ptr(), c.x_mid.data(),
                                  c.ln1_mean.data(), c.ln1_rstd.data());
            c.ffn_in = c.x_mid;
        } else {
            c.x_mid = std::move(sum1);
            c.ffn_in.resize(td);
            nn::layernorm_forward(c.x_mid.data(), t, d, L.ln2_g.ptr(), L.ln2_b.ptr(),
                                  c.ffn_in.data(), c.ln2_mean.data(), c.ln2_rstd.data());
        }
        c.hidden.resize(sz(t) * sz(f));
        c.act.resize(sz(t) * sz(f));
        nn::linear_forward(c.ffn_in.data(), t, d, L.w1.ptr(), L.b1.ptr(), f, c.hidden.data());
        nn::gelu_forward(c.hidden.data(), c.hidden.size(), c.act.data());
        c.out.resize(td);
        nn::linear_forward(c.act.data(), t, f, L.w2.ptr(), L.b2.ptr(), d, c.out.data());
        if (drop) {
            make_dropout_mask(c.mask2, td, cfg.dropout, rng);
        }
        std::vector<double> sum2 = c.x_mid;
        for (std::size_t i = 0; i < td; ++i) {
            sum2[i] += drop ? c.out[i] * c.mask2[i] : c.out[i];
        }
        if (cfg.post_norm) {
            c.sum2 = sum2;
            x.resize(td);
            nn::layernorm_forward(sum2.data(), t, d, L.ln2_g.ptr(), L.ln2_b.ptr(), x.data(),
                                  c.ln2_mean.data(), c.ln2_rstd.data());
        } else {
            x = std::move(sum2);
        }
        if (cache) {
            c.x_out = x;
        }
    }
    if (cfg.post_norm) {
        return x;
    }
    std::vector<double> out(td);
    std::vector<double> mean(sz(t));
    std::vector<double> rstd(sz(t));
    nn::layernorm_forward(x.data(), t, d, params.lnf_g.ptr(), params.lnf_b.ptr(), out.data(),
                          mean.data(), rstd.data());
    if (cache) {
        cache->lnf_mean = std::move(mean);
        cache->lnf_rstd = std::move(rstd);
    }
    return out;
}

TimeInterval predict(const ModelConfig& cfg, const ModelParams& params,
                     std::span<const double> q_cm, Activations* cache) {
    const int d = cfg.hidden;
    if (q_cm.size() < sz(d)) {
        throw std::invalid_argument("predict: empty crossmodal representation");
    }
    std::vector<double> hidden(sz(d));
    std::vector<double> act(sz(d));
    nn::linear_forward(q_cm.data(), 1, d, params.head_w1.ptr(), params.head_b1.ptr(), d,
                       hidden.data());
    nn::gelu_forward(hidden.data(), hidden.size(), act.data());
    double logits[2];
    nn::linear_forward(act.data(), 1, d, params.head_w2.ptr(), params.head_b2.ptr(), 2, logits);
    const double u = sigmoid(logits[0]);
    const double v = sigmoid(logits[1]);
    const TimeInterval pred{std::min(u, v), std::max(u, v)};
    if (cache) {
        cache->head_hidden = std::move(hidden);
        cache->head_act = std::move(act);
        cache->logits[0] = logits[0];
        cache->logits[1] = logits[1];
        cache->raw_start = u;
        cache->raw_end = v;
        cache->pred = pred;
    }
    return pred;
}

Activations forward_activations(const ModelConfig& cfg, const ModelParams& params,
                                const FrameBatch& prompted_frames, std::span<const int> tokens,
                                const TextPromptSet& text_prompts, const ForwardOptions& opts) {
    if (prompted_frames.n_sam != cfg.n_sam) {
        throw std::invalid_argument("frame batch N_sam does not match the model config");
    }
    if (static_cast<int>(tokens.size()) > cfg.max_text_len) {
        throw std::invalid_argument("query longer than the model's max text length");
    }
    if (text_prompts.count > cfg.n_tp) {
        throw std::invalid_argument("more text prompts than reserved position slots");
    }
    Activations a;
    a.n_sam = cfg.n_sam;
    a.n_tp = text_prompts.count;
    a.n_tex = static_cast<int>(tokens.size());
    a.tokens.assign(tokens.begin(), tokens.end());
    a.frames = prompted_frames.pixels;

    encode_vision(cfg, params, prompted_frames, &a);
    const int dv = cfg.vision_dim();
    const int fs = cfg.feature_side();
    auto pool = pool_fuse(a.q_vid(), cfg.n_sam, dv, fs);
    a.pooled = std::move(pool.pooled);
    a.pool_argmax = std::move(pool.argmax);
    a.q_vid_fused = std::move(pool.fused);
    if (cfg.frame_tokens) {
        const int pix = fs * fs;
        a.frame_summary.assign(sz(cfg.n_sam) * sz(dv), 0.0);
        const auto& q = a.q_vid();
        for (int f = 0; f < cfg.n_sam; ++f) {
            for (int c = 0; c < dv; ++c) {
                const double* m = q.data() + (sz(f) * sz(dv) + sz(c)) * sz(pix);
                double s = 0.0;
                for (int i = 0; i < pix; ++i) {
                    s += m[i];
                }
                a.frame_summary[sz(f) * sz(dv) + sz(c)] = s / pix;
            }
        }
        // Contrast over time: the static background drops out and what changes
        // between frames arrives at unit scale.
        for (int c = 0; c < dv; ++c) {
            double mean = 0.0;
            for (int f = 0; f < cfg.n_sam; ++f) {
                mean += a.frame_summary[sz(f) * sz(dv) + sz(c)];
            }
            mean /= cfg.n_sam;
            for (int f = 0; f < cfg.n_sam; ++f) {
                a.frame_summary[sz(f) * sz(dv) + sz(c)] -= mean;
            }
        }
        double ms = 0.0;
        for (double v : a.frame_summary) {
            ms += v * v;
        }
        a.frame_scale = std::sqrt(ms / static_cast<double>(a.frame_summary.size()) + kFrameEps);
        for (double& v : a.frame_summary) {
            v /= a.frame_scale;
        }
    }
    a.q_tex = encode_text(cfg, params, tokens);
    a.q_tex_prompted = apply_text(a.q_tex, a.n_tex, cfg.hidden, text_prompts);
    const int text_rows = a.n_tp + a.n_tex;
    a.q_all = assemble(cfg, params, a.q_vid_fused, a.frame_summary, a.q_tex_prompted, text_rows, &a);
    a.q_cm = crossmodal_forward(cfg, params, a.q_all, a.seq_len, &a, opts);
    predict(cfg, params, a.q_cm, &a);
    return a;
}

// ---- backward ----------------------------------------------------------

void backward(const ModelConfig& cfg, const ModelParams& params, const Activations& a,
              const IntervalGrad& d_pred, const BackwardOptions& opts, ModelParams* grads,
              InputGrads* input_grads) {
    const int d = cfg.hidden;
    const int t = a.seq_len;
    const int f = cfg.ffn_mult * d;
    const std::size_t td = sz(t) * sz(d);
    ModelParams* G = opts.param_grads ? grads : nullptr;
    if (opts.param_grads && grads == nullptr) {
        throw std::invalid_argument("backward: parameter gradients requested without a buffer");
    }
    const GradSink g{G};

    // head: route the ordered-interval gradient back to the raw sigmoid outputs
    double du = d_pred.d_start;
    double dv = d_pred.d_end;
    if (a.raw_start > a.raw_end) {
        std::swap(du, dv);
    }
    double dlogits[2] = {du * a.raw_start * (1.0 - a.raw_start),
                         dv * a.raw_end * (1.0 - a.raw_end)};
    std::vector<double> d_act(sz(d), 0.0);
    nn::linear_backward(a.head_act.data(), 1, d, params.head_w2.ptr(), 2, dlogits, d_act.data(),
                        g(&ModelParams::head_w2), g(&ModelParams::head_b2));
    std::vector<double> d_hidden(sz(d), 0.0);
    nn::gelu_backward(a.head_hidden.data(), sz(d), d_act.data(), d_hidden.data());
    std::vector<double> dx(td, 0.0);  // d Q_CM
    nn::linear_backward(a.q_cm.data(), 1, d, params.head_w1.ptr(), d, d_hidden.data(), dx.data(),
                        g(&ModelParams::head_w1), g(&ModelParams::head_b1));

    // final norm
    if (!cfg.post_norm) {
        const auto& last = cfg.layers > 0 ? a.layers.back().x_out : a.q_all;
        std::vector<double> dprev(td, 0.0);
        nn::layernorm_backward(last.data(), t, d, params.lnf_g.ptr(), a.lnf_mean.data(),
                               a.lnf_rstd.data(), dx.data(), dprev.data(), g(&ModelParams::lnf_g),
                               g(&ModelParams::lnf_b));
        dx = std::move(dprev);
    }

    // transformer layers
    for (int li = cfg.layers - 1; li >= 0; --li) {
        const auto& L = params.layers[sz(li)];
        ModelParams::Layer* GL = G ? &G->layers[sz(li)] : nullptr;
        auto lg = [&](auto member) { return GL ? (GL->*member).ptr() : nullptr; };
        const LayerCache& c = a.layers[sz(li)];
        const bool drop = !c.mask1.empty();

        std::vector<double> d_sum2;
        if (cfg.post_norm) {
            d_sum2.assign(td, 0.0);
            nn::layernorm_backward(c.sum2.data(), t, d, L.ln2_g.ptr(), c.ln2_mean.data(),
                                   c.ln2_rstd.data(), dx.data(), d_sum2.data(),
                                   lg(&ModelParams::Layer::ln2_g), lg(&ModelParams::Layer::ln2_b));
        } else {
            d_sum2 = dx;
        }
        // FFN branch
        std::vector<double> d_out = d_sum2;
        if (drop) {
            for (std::size_t i = 0; i < td; ++i) {
                d_out[i] *= c.mask2[i];
            }
        }
        std::vector<double> d_ffn_act(sz(t) * sz(f), 0.0);
        nn::linear_backward(c.act.data(), t, f, L.w2.ptr(), d, d_out.data(), d_ffn_act.data(),
                            lg(&ModelParams::Layer::w2), lg(&ModelParams::Layer::b2));
        std::vector<double> d_ffn_hidden(sz(t) * sz(f), 0.0);
        nn::gelu_backward(c.hidden.data(), d_ffn_hidden.size(), d_ffn_act.data(),
                          d_ffn_hidden.data());
        std::vector<double> d_ffn_in(td, 0.0);
        nn::linear_backward(c.ffn_in.data(), t, d, L.w1.ptr(), f, d_ffn_hidden.data(),
                            d_ffn_in.data(), lg(&ModelParams::Layer::w1),
                            lg(&ModelParams::Layer::b1));
        std::vector<double> d_mid = d_sum2;  // residual
        if (cfg.post_norm) {
            add_rows(d_mid.data(), d_ffn_in.data(), td);
        } else {
            nn::layernorm_backward(c.x_mid.data(), t, d, L.ln2_g.ptr(), c.ln2_mean.data(),
                                   c.ln2_rstd.data(), d_ffn_in.data(), d_mid.data(),
                                   lg(&ModelParams::Layer::ln2_g), lg(&ModelParams::Layer::ln2_b));
        }
        std::vector<double> d_sum1;
        if (cfg.post_norm) {
            d_sum1.assign(td, 0.0);
            nn::layernorm_backward(c.sum1.data(), t, d, L.ln1_g.ptr(), c.ln1_mean.data(),
                                   c.ln1_rstd.data(), d_mid.data(), d_sum1.data(),
                                   lg(&ModelParams::Layer::ln1_g), lg(&ModelParams::Layer::ln1_b));
        } else {
            d_sum1 = std::move(d_mid);
        }
        // attention branch
        std::vector<double> d_proj = d_sum1;
        if (drop) {
            for (std::size_t i = 0; i < td; ++i) {
                d_proj[i] *= c.mask1[i];
            }
        }
        std::vector<double> d_attn(td, 0.0);
        nn::linear_backward(c.attn.data(), t, d, L.wo.ptr(), d, d_proj.data(), d_attn.data(),
                            lg(&ModelParams::Layer::wo), lg(&ModelParams::Layer::bo));
        std::vector<double> dq(td, 0.0);
        std::vector<double> dk(td, 0.0);
        std::vector<double> dvv(td, 0.0);
        nn::attention_backward(c.q.data(), c.k.data(), c.v.data(), c.probs.data(), t, d, cfg.heads,
                               d_attn.data(), dq.data(), dk.data(), dvv.data());
        std::vector<double> d_attn_in(td, 0.0);
        nn::linear_backward(c.attn_in.data(), t, d, L.wq.ptr(), d, dq.data(), d_attn_in.data(),
                            lg(&ModelParams::Layer::wq), lg(&ModelParams::Layer::bq));
        nn::linear_backward(c.attn_in.data(), t, d, L.wk.ptr(), d, dk.data(), d_attn_in.data(),
                            lg(&ModelParams::Layer::wk), lg(&ModelParams::Layer::bk));
        nn::linear_backward(c.attn_in.data(), t, d, L.wv.ptr(), d, dvv.data(), d_attn_in.data(),
                            lg(&ModelParams::Layer::wv), lg(&ModelParams::Layer::bv));
        std::vector<double> d_in = d_sum1;  // residual
        if (cfg.post_norm) {
            add_rows(d_in.data(), d_attn_in.data(), td);
        } else {
            nn::layernorm_backward(c.x_in.data(), t, d, L.ln1_g.ptr(), c.ln1_mean.data(),
                                   c.ln1_rstd.data(), d_attn_in.data(), d_in.data(),
                                   lg(&ModelParams::Layer::ln1_g), lg(&ModelParams::Layer::ln1_b));
        }
        dx = std::move(d_in);
    }

    // dx is now d Q_all; split it back over the assembled sequence
    const int g_side = cfg.grid_side();
    const int dvis = cfg.vision_dim();
    const int text_rows = a.n_tp + a.n_tex;
    const int grid_off = 1 + text_rows;
    double* d_type0 = g(&ModelParams::type_emb);
    double* d_type1 = d_type0 ? d_type0 + d : nullptr;
    auto add_type = [&](double* dst, int row) {
        if (dst) {
            add_rows(dst, dx.data() + sz(row) * sz(d), sz(d));
        }
    };
    if (G) {
        add_rows(G->agg_emb.ptr(), dx.data(), sz(d));
    }
    add_type(d_type0, 0);
    for (int i = 0; i < text_rows; ++i) {
        const double* row = dx.data() + sz(1 + i) * sz(d);
        add_type(d_type0, 1 + i);
        if (G) {
            add_rows(G->pos_emb.ptr() + sz(i) * sz(d), row, sz(d));
        }
        if (i < a.n_tp) {
            if (opts.input_grads && input_grads) {
                input_grads->text_prompts.resize(sz(a.n_tp) * sz(d), 0.0);
                add_rows(input_grads->text_prompts.data() + sz(i) * sz(d), row, sz(d));
            }
        } else if (G) {
            const int id = a.tokens[sz(i - a.n_tp)];
            add_rows(G->tok_emb.ptr() + sz(id) * sz(d), row, sz(d));
        }
    }
    const double* d_grid = dx.data() + sz(grid_off) * sz(d);
    for (int r = 0; r < g_side; ++r) {
        for (int c = 0; c < g_side; ++c) {
            const int cell = r * g_side + c;
            add_type(d_type1, grid_off + cell);
            if (G) {
                add_rows(G->row_emb.ptr() + sz(r) * sz(d), d_grid + sz(cell) * sz(d), sz(d));
                add_rows(G->col_emb.ptr() + sz(c) * sz(d), d_grid + sz(cell) * sz(d), sz(d));
            }
        }
    }
    std::vector<double> d_grid_in(a.grid_in.size(), 0.0);
    nn::linear_backward(a.grid_in.data(), g_side * g_side, dvis, params.vis_proj_w.ptr(), d, d_grid,
                        d_grid_in.data(), g(&ModelParams::vis_proj_w),
                        g(&ModelParams::vis_proj_b));

    // back through the pool: mean over frames, then the 2x2 max
    const int fs = cfg.feature_side();
    const std::size_t frame_feat = sz(dvis) * sz(fs) * sz(fs);
    std::vector<double> d_qvid(frame_feat * sz(a.n_sam), 0.0);
    const std::size_t frame_pool = sz(dvis) * sz(g_side) * sz(g_side);
    const double inv_n = 1.0 / a.n_sam;
    for (int fr = 0; fr < a.n_sam; ++fr) {
        for (int ch = 0; ch < dvis; ++ch) {
            for (int cell = 0; cell < g_side * g_side; ++cell) {
                const std::size_t o = frame_pool * sz(fr) + sz(ch) * sz(g_side * g_side) + sz(cell);
                const double gv = d_grid_in[sz(cell) * sz(dvis) + sz(ch)] * inv_n;
                d_qvid[frame_feat * sz(fr) + sz(a.pool_argmax[o])] += gv;
            }
        }
    }
    if (cfg.frame_tokens) {
        const int frow = grid_off + g_side * g_side;
        const double* d_fr = dx.data() + sz(frow) * sz(d);
        for (int fr = 0; fr < a.n_sam; ++fr) {
            add_type(d_type1, frow + fr);
            if (G) {
                add_rows(G->time_emb.ptr() + sz(fr) * sz(d), d_fr + sz(fr) * sz(d), sz(d));
            }
        }
        std::vector<double> d_summary(a.frame_summary.size(), 0.0);
        nn::linear_backward(a.frame_summary.data(), a.n_sam, dvis, params.frame_proj_w.ptr(), d,
                            d_fr, d_summary.data(), g(&ModelParams::frame_proj_w),
                            g(&ModelParams::frame_proj_b));
        double dz_dot_z = 0.0;
        for (std::size_t i = 0; i < d_summary.size(); ++i) {
            dz_dot_z += d_summary[i] * a.frame_summary[i];
        }
        dz_dot_z /= static_cast<double>(d_summary.size());
        for (std::size_t i = 0; i < d_summary.size(); ++i) {
            d_summary[i] = (d_summary[i] - a.frame_summary[i] * dz_dot_z) / a.frame_scale;
        }
        for (int ch = 0; ch < dvis; ++ch) {
            double mean = 0.0;
            for (int fr = 0; fr < a.n_sam; ++fr) {
                mean += d_summary[sz(fr) * sz(dvis) + sz(ch)];
            }
            mean /= a.n_sam;
            for (int fr = 0; fr < a.n_sam; ++fr) {
                d_summary[sz(fr) * sz(dvis) + sz(ch)] -= mean;
            }
        }
        const int pix = fs * fs;
        for (int fr = 0; fr < a.n_sam; ++fr) {
            for (int ch = 0; ch < dvis; ++ch) {
                const double gv = d_summary[sz(fr) * sz(dvis) + sz(ch)] / pix;
                double* dst = d_qvid.data() + frame_feat * sz(fr) + sz(ch) * sz(pix);
                for (int i = 0; i < pix; ++i) {
                    dst[i] += gv;
                }
            }
        }
    }

    // vision encoder
    const bool need_input = opts.input_grads && input_grads;
    std::vector<double> d_cur = std::move(d_qvid);
    std::vector<double> col;
    const int blocks = static_cast<int>(cfg.vision_widths.size());
    for (int b = blocks - 1; b >= 0 && (G || need_input); --b) {
        const auto s = block_shape(cfg, b);
        const auto& blk = params.vision[sz(b)];
        ModelParams::ConvBlock* GB = G ? &G->vision[sz(b)] : nullptr;
        const auto& c = a.vision[sz(b)];
        const int pix = s.out_height() * s.out_width();
        const std::size_t out_size = sz(s.c_out) * sz(pix);
        const std::size_t in_size = sz(s.c_in) * sz(s.height) * sz(s.width);
        const std::vector<double>& input = b == 0 ? a.frames : a.vision[sz(b - 1)].act;
        const bool want_dx = b > 0 || need_input;
        std::vector<double> d_in(want_dx ? in_size * sz(a.n_sam) : 0, 0.0);
        std::vector<double> d_normed(out_size);
        std::vector<double> d_conv(out_size);
        for (int fr = 0; fr < a.n_sam; ++fr) {
            const std::size_t off = out_size * sz(fr);
            std::fill(d_normed.begin(), d_normed.end(), 0.0);
            std::fill(d_conv.begin(), d_conv.end(), 0.0);
            nn::relu_backward(c.normed.data() + off, out_size, d_cur.data() + off, d_normed.data());
            nn::channel_norm_backward(c.conv.data() + off, s.c_out, pix, blk.norm_g.ptr(),
                                      c.mean.data() + sz(pix) * sz(fr),
                                      c.rstd.data() + sz(pix) * sz(fr), d_normed.data(),
                                      d_conv.data(), GB ? GB->norm_g.ptr() : nullptr,
                                      GB ? GB->norm_b.ptr() : nullptr);
            nn::conv2d_backward(s, input.data() + in_size * sz(fr), blk.w.ptr(), d_conv.data(),
                                want_dx ? d_in.data() + in_size * sz(fr) : nullptr,
                                GB ? GB->w.ptr() : nullptr, GB ? GB->b.ptr() : nullptr, col);
        }
        if (b == 0 && need_input) {
            input_grads->frames = std::move(d_in);
        } else {
            d_cur = std::move(d_in);
        }
    }
    if (opts.input_grads && input_grads && a.n_tp > 0 && input_grads->text_prompts.empty()) {
        input_grads->text_prompts.assign(sz(a.n_tp) * sz(d), 0.0);
    }
}

ForwardResult forward(const RawVideo& video, std::span<const int> tokens, const PromptBundle& prompts,
                      const ModelParams& params, const ModelConfig& cfg, const TimeInterval* gt,
                      const LossConfig& loss_cfg) {
    const FrameBatch batch = preprocess(video, PipelineConfig{cfg.n_sam, cfg.canvas});
    const FrameBatch prompted = apply_visual(batch, prompts.visual);
    const Activations a = forward_activations(cfg, params, prompted, tokens, prompts.text);
    ForwardResult r;
    r.pred = a.pred;
    if (gt != nullptr) {
        r.loss = loss_tdiou(a.pred, *gt, loss_cfg);
        r.has_loss = true;
    }
    return r;
}

}  // namespace tvp
