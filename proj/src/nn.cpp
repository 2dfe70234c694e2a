#include "tvp/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "tvp/tensor.hpp"

namespace tvp {

std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "," : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace tvp

namespace tvp::nn {

namespace {

constexpr double kNormEps = 1e-5;

// Dot product over sixteen fixed lanes folded in a fixed order.
double dot(const double* x, const double* y, int n) {
    constexpr int kLanes = 16;
    double lane[kLanes] = {};
    int j = 0;
    for (; j + kLanes <= n; j += kLanes) {
        for (int l = 0; l < kLanes; ++l) {
            lane[l] += x[j + l] * y[j + l];
        }
    }
    for (int width = kLanes / 2; width > 0; width /= 2) {
        for (int l = 0; l < width; ++l) {
            lane[l] += lane[l + width];
        }
    }
    double acc = lane[0];
    for (; j < n; ++j) {
        acc += x[j] * y[j];
    }
    return acc;
}

// C (m x n, row stride ldc) += op(A) * op(B). The summation order of every
// element is fixed by the code, never by buffer alignment or thread count,
// so results are bit-stable across runs.
void gemm_acc(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda,
              const double* b, int ldb, double* c, int ldc) {
    // Long reductions onto few columns (conv weight gradients) go through dot
    // products; everything else through row updates on a transposed copy.
    if (trans_b && !trans_a && k >= 8 * n) {
        for (int i = 0; i < m; ++i) {
            const double* ai = a + static_cast<std::size_t>(i) * lda;
            double* ci = c + static_cast<std::size_t>(i) * ldc;
            for (int j = 0; j < n; ++j) {
                ci[j] += dot(ai, b + static_cast<std::size_t>(j) * ldb, k);
            }
        }
        return;
    }
    std::vector<double> bt;
    if (trans_b) {
        bt.resize(static_cast<std::size_t>(k) * static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            for (int p = 0; p < k; ++p) {
                bt[static_cast<std::size_t>(p) * n + j] = b[static_cast<std::size_t>(j) * ldb + p];
            }
        }
        b = bt.data();
        ldb = n;
    }
    auto at = [&](int i, int p) {
        return trans_a ? a[static_cast<std::size_t>(p) * lda + i]
                       : a[static_cast<std::size_t>(i) * lda + p];
    };
    // Rows of C in pairs, four k terms per pass; every element still adds its
    // k terms left to right in increasing order.
    int i = 0;
    for (; i + 2 <= m; i += 2) {
        double* c0 = c + static_cast<std::size_t>(i) * ldc;
        double* c1 = c0 + ldc;
        int p = 0;
        for (; p + 4 <= k; p += 4) {
            const double x0 = at(i, p), x1 = at(i, p + 1), x2 = at(i, p + 2), x3 = at(i, p + 3);
            const double y0 = at(i + 1, p), y1 = at(i + 1, p + 1), y2 = at(i + 1, p + 2),
                         y3 = at(i + 1, p + 3);
            const double* b0 = b + static_cast<std::size_t>(p) * ldb;
            const double* b1 = b0 + ldb;
            const double* b2 = b1 + ldb;
            const double* b3 = b2 + ldb;
            for (int j = 0; j < n; ++j) {
                c0[j] = c0[j] + x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
                c1[j] = c1[j] + y0 * b0[j] + y1 * b1[j] + y2 * b2[j] + y3 * b3[j];
            }
        }
        for (; p < k; ++p) {
            const double x0 = at(i, p), y0 = at(i + 1, p);
            const double* bp = b + static_cast<std::size_t>(p) * ldb;
            for (int j = 0; j < n; ++j) {
                c0[j] += x0 * bp[j];
                c1[j] += y0 * bp[j];
            }
        }
    }
    for (; i < m; ++i) {
        double* ci = c + static_cast<std::size_t>(i) * ldc;
        int p = 0;
        for (; p + 4 <= k; p += 4) {
            const double a0 = at(i, p), a1 = at(i, p + 1), a2 = at(i, p + 2), a3 = at(i, p + 3);
            const double* b0 = b + static_cast<std::size_t>(p) * ldb;
            const double* b1 = b0 + ldb;
            const double* b2 = b1 + ldb;
            const double* b3 = b2 + ldb;
            for (int j = 0; j < n; ++j) {
                ci[j] = ci[j] + a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
            }
        }
        for (; p < k; ++p) {
            const double av = at(i, p);
            const double* bp = b + static_cast<std::size_t>(p) * ldb;
            for (int j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

void zero_rows(double* c, int m, int n, int ldc) {
    for (int i = 0; i < m; ++i) {
        std::fill_n(c + static_cast<std::size_t>(i) * ldc, n, 0.0);
    }
}

}  // namespace

void linear_forward(const double* x, int rows, int in, const double* w, const double* b, int out,
                    double* y) {
    zero_rows(y, rows, out, out);
    gemm_acc(false, true, rows, out, in, x, in, w, in, y, out);
    if (b != nullptr) {
        for (int r = 0; r < rows; ++r) {
            double* yr = y + static_cast<std::size_t>(r) * out;
            for (int j = 0; j < out; ++j) {
                yr[j] += b[j];
            }
        }
    }
}

void linear_backward(const double* x, int rows, int in, const double* w, int out, const double* dy,
                     double* dx, double* dw, double* db) {
    if (dx != nullptr) {
        gemm_acc(false, false, rows, in, out, dy, out, w, in, dx, in);
    }
    if (dw != nullptr) {
        gemm_acc(true, false, out, in, rows, dy, out, x, in, dw, in);
    }
    if (db != nullptr) {
        for (int r = 0; r < rows; ++r) {
            const double* dr = dy + static_cast<std::size_t>(r) * out;
            for (int j = 0; j < out; ++j) {
                db[j] += dr[j];
            }
        }
    }
}

void layernorm_forward(const double* x, int rows, int n, const double* gamma, const double* beta,
                       double* y, double* mean, double* rstd) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<std::size_t>(r) * n;
        double m = 0.0;
        for (int i = 0; i < n; ++i) {
            m += xr[i];
        }
        m /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d = xr[i] - m;
            var += d * d;
        }
        var /= n;
        const double rs = 1.0 / std::sqrt(var + kNormEps);
        double* yr = y + static_cast<std::size_t>(r) * n;
        for (int i = 0; i < n; ++i) {
            yr[i] = (xr[i] - m) * rs * gamma[i] + beta[i];
        }
        mean[r] = m;
        rstd[r] = rs;
    }
}

void layernorm_backward(const double* x, int rows, int n, const double* gamma, const double* mean,
                        const double* rstd, const double* dy, double* dx, double* dgamma,
                        double* dbeta) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<std::size_t>(r) * n;
        const double* dyr = dy + static_cast<std::size_t>(r) * n;
        const double m = mean[r];
        const double rs = rstd[r];
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (int i = 0; i < n; ++i) {
            const double xhat = (xr[i] - m) * rs;
            const double g = dyr[i] * gamma[i];
            sum_g += g;
            sum_gx += g * xhat;
            if (dgamma != nullptr) {
                dgamma[i] += dyr[i] * xhat;
            }
            if (dbeta != nullptr) {
                dbeta[i] += dyr[i];
            }
        }
        if (dx != nullptr) {
            double* dxr = dx + static_cast<std::size_t>(r) * n;
            for (int i = 0; i < n; ++i) {
                const double xhat = (xr[i] - m) * rs;
                dxr[i] += rs * (dyr[i] * gamma[i] - (sum_g + xhat * sum_gx) / n);
            }
        }
    }
}

void channel_norm_forward(const double* x, int channels, int pixels, const double* gamma,
                          const double* beta, double* y, double* mean, double* rstd) {
    std::fill(mean, mean + pixels, 0.0);
    for (int c = 0; c < channels; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * pixels;
        for (int p = 0; p < pixels; ++p) {
            mean[p] += xc[p];
        }
    }
    for (int p = 0; p < pixels; ++p) {
        mean[p] /= channels;
        rstd[p] = 0.0;
    }
    for (int c = 0; c < channels; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * pixels;
        for (int p = 0; p < pixels; ++p) {
            const double d = xc[p] - mean[p];
            rstd[p] += d * d;
        }
    }
    for (int p = 0; p < pixels; ++p) {
        rstd[p] = 1.0 / std::sqrt(rstd[p] / channels + kNormEps);
    }
    for (int c = 0; c < channels; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * pixels;
        double* yc = y + static_cast<std::size_t>(c) * pixels;
        for (int p = 0; p < pixels; ++p) {
            yc[p] = (xc[p] - mean[p]) * rstd[p] * gamma[c] + beta[c];
        }
    }
}

void channel_norm_backward(const double* x, int channels, int pixels, const double* gamma,
                           const double* mean, const double* rstd, const double* dy, double* dx,
                           double* dgamma, double* dbeta) {
    std::vector<double> sum_g(static_cast<std::size_t>(pixels), 0.0);
    std::vector<double> sum_gx(static_cast<std::size_t>(pixels), 0.0);
    for (int c = 0; c < channels; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * pixels;
        const double* dyc = dy + static_cast<std::size_t>(c) * pixels;
        double dgc = 0.0;
        double dbc = 0.0;
        for (int p = 0; p < pixels; ++p) {
            const double xhat = (xc[p] - mean[p]) * rstd[p];
            const double g = dyc[p] * gamma[c];
            sum_g[static_cast<std::size_t>(p)] += g;
            sum_gx[static_cast<std::size_t>(p)] += g * xhat;
            dgc += dyc[p] * xhat;
            dbc += dyc[p];
        }
        if (dgamma != nullptr) {
            dgamma[c] += dgc;
        }
        if (dbeta != nullptr) {
            dbeta[c] += dbc;
        }
    }
    if (dx == nullptr) {
        return;
    }
    for (int c = 0; c < channels; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * pixels;
        const double* dyc = dy + static_cast<std::size_t>(c) * pixels;
        double* dxc = dx + static_cast<std::size_t>(c) * pixels;
        for (int p = 0; p < pixels; ++p) {
            const double xhat = (xc[p] - mean[p]) * rstd[p];
            const auto pi = static_cast<std::size_t>(p);
            dxc[p] += rstd[p] * (dyc[p] * gamma[c] - (sum_g[pi] + xhat * sum_gx[pi]) / channels);
        }
    }
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

void gelu_forward(const double* x, std::size_t n, double* y) {
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        y[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
}

void gelu_backward(const double* x, std::size_t n, const double* dy, double* dx) {
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double dth = (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        dx[i] += dy[i] * (0.5 * (1.0 + th) + 0.5 * v * dth);
    }
}

void relu_forward(const double* x, std::size_t n, double* y) {
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = x[i] > 0.0 ? x[i] : 0.0;
    }
}

void relu_backward(const double* x, std::size_t n, const double* dy, double* dx) {
    for (std::size_t i = 0; i < n; ++i) {
        if (x[i] > 0.0) {
            dx[i] += dy[i];
        }
    }
}

void im2col(const ConvShape& s, const double* x, double* col) {
    const int oh = s.out_height();
    const int ow = s.out_width();
    std::size_t row = 0;
    for (int c = 0; c < s.c_in; ++c) {
        const double* xc = x + static_cast<std::size_t>(c) * s.height * s.width;
        for (int ky = 0; ky < s.kernel; ++ky) {
            for (int kx = 0; kx < s.kernel; ++kx, ++row) {
                double* dst = col + row * static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s.stride - s.pad + ky;
                    double* d = dst + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= s.height) {
                        std::fill(d, d + ow, 0.0);
                        continue;
                    }
                    const double* src = xc + static_cast<std::size_t>(iy) * s.width;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * s.stride - s.pad + kx;
                        d[ox] = (ix >= 0 && ix < s.width) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvShape& s, const double* col, double* dx) {
    const int oh = s.out_height();
    const int ow = s.out_width();
    std::size_t row = 0;
    for (int c = 0; c < s.c_in; ++c) {
        double* xc = dx + static_cast<std::size_t>(c) * s.height * s.width;
        for (int ky = 0; ky < s.kernel; ++ky) {
            for (int kx = 0; kx < s.kernel; ++kx, ++row) {
                const double* src = col + row * static_cast<std::size_t>(oh) * ow;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * s.stride - s.pad + ky;
                    if (iy < 0 || iy >= s.height) {
                        continue;
                    }
                    double* d = xc + static_cast<std::size_t>(iy) * s.width;
                    const double* sr = src + static_cast<std::size_t>(oy) * ow;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * s.stride - s.pad + kx;
                        if (ix >= 0 && ix < s.width) {
                            d[ix] += sr[ox];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_forward(const ConvShape& s, const double* x, const double* w, const double* b, double* y,
                    std::vector<double>& col) {
    const int kk = s.c_in * s.kernel * s.kernel;
    const int n = s.out_height() * s.out_width();
    col.resize(s.col_size());
    im2col(s, x, col.data());
    zero_rows(y, s.c_out, n, n);
    gemm_acc(false, false, s.c_out, n, kk, w, kk, col.data(), n, y, n);
    if (b != nullptr) {
        for (int o = 0; o < s.c_out; ++o) {
            double* yo = y + static_cast<std::size_t>(o) * n;
            for (int j = 0; j < n; ++j) {
                yo[j] += b[o];
            }
        }
    }
}

void conv2d_backward(const ConvShape& s, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db, std::vector<double>& col) {
    const int kk = s.c_in * s.kernel * s.kernel;
    const int n = s.out_height() * s.out_width();
    if (db != nullptr) {
        for (int o = 0; o < s.c_out; ++o) {
            const double* d = dy + static_cast<std::size_t>(o) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) {
                acc += d[j];
            }
            db[o] += acc;
        }
    }
    col.resize(s.col_size());
    if (dw != nullptr) {
        im2col(s, x, col.data());
        gemm_acc(false, true, s.c_out, kk, n, dy, n, col.data(), n, dw, kk);
    }
    if (dx != nullptr) {
        std::fill(col.begin(), col.end(), 0.0);
        gemm_acc(true, false, kk, n, s.c_out, w, kk, dy, n, col.data(), n);
        col2im_add(s, col.data(), dx);
    }
}

void attention_forward(const double* q, const double* k, const double* v, int t, int d, int heads,
                       double* probs, double* out) {
    const int hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < heads; ++h) {
        double* p = probs + static_cast<std::size_t>(h) * t * t;
        zero_rows(p, t, t, t);
        gemm_acc(false, true, t, t, hd, q + h * hd, d, k + h * hd, d, p, t);
        for (int i = 0; i < t; ++i) {
            double* row = p + static_cast<std::size_t>(i) * t;
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < t; ++j) {
                row[j] *= scale;
                mx = std::max(mx, row[j]);
            }
            double sum = 0.0;
            for (int j = 0; j < t; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (int j = 0; j < t; ++j) {
                row[j] /= sum;
            }
        }
        zero_rows(out + h * hd, t, hd, d);
        gemm_acc(false, false, t, hd, t, p, t, v + h * hd, d, out + h * hd, d);
    }
}

void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        int t, int d, int heads, const double* dout, double* dq, double* dk,
                        double* dv) {
    const int hd = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> dp(static_cast<std::size_t>(t) * static_cast<std::size_t>(t));
    for (int h = 0; h < heads; ++h) {
        const double* p = probs + static_cast<std::size_t>(h) * t * t;
        gemm_acc(true, false, t, hd, t, p, t, dout + h * hd, d, dv + h * hd, d);
        std::fill(dp.begin(), dp.end(), 0.0);
        gemm_acc(false, true, t, t, hd, dout + h * hd, d, v + h * hd, d, dp.data(), t);
        for (int i = 0; i < t; ++i) {
            double* drow = dp.data() + static_cast<std::size_t>(i) * t;
            const double* prow = p + static_cast<std::size_t>(i) * t;
            double dot = 0.0;
            for (int j = 0; j < t; ++j) {
                dot += drow[j] * prow[j];
            }
            for (int j = 0; j < t; ++j) {
                drow[j] = prow[j] * (drow[j] - dot) * scale;
            }
        }
        gemm_acc(false, false, t, hd, t, dp.data(), t, k + h * hd, d, dq + h * hd, d);
        gemm_acc(true, false, t, hd, t, dp.data(), t, q + h * hd, d, dk + h * hd, d);
    }
}

}  // namespace tvp::nn
