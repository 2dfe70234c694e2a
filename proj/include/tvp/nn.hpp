#pragma once

#include <cstddef>
#include <vector>

// Forward/backward kernels on row-major double buffers. Backward kernels
// accumulate (+=) into every gradient output; pass nullptr to skip one.
namespace tvp::nn {

// y[rows x out] = x[rows x in] * w^T + b, with w stored out x in.
void linear_forward(const double* x, int rows, int in, const double* w, const double* b, int out,
                    double* y);
void linear_backward(const double* x, int rows, int in, const double* w, int out, const double* dy,
                     double* dx, double* dw, double* db);

// Normalise each row of x[rows x n] over its n entries.
void layernorm_forward(const double* x, int rows, int n, const double* gamma, const double* beta,
                       double* y, double* mean, double* rstd);
void layernorm_backward(const double* x, int rows, int n, const double* gamma, const double* mean,
                        const double* rstd, const double* dy, double* dx, double* dgamma,
                        double* dbeta);

// Normalise x[channels x pixels] over the channel axis at every pixel.
void channel_norm_forward(const double* x, int channels, int pixels, const double* gamma,
                          const double* beta, double* y, double* mean, double* rstd);
void channel_norm_backward(const double* x, int channels, int pixels, const double* gamma,
                           const double* mean, const double* rstd, const double* dy, double* dx,
                           double* dgamma, double* dbeta);

// tanh-approximated GELU.
void gelu_forward(const double* x, std::size_t n, double* y);
void gelu_backward(const double* x, std::size_t n, const double* dy, double* dx);

void relu_forward(const double* x, std::size_t n, double* y);
void relu_backward(const double* x, std::size_t n, const double* dy, double* dx);

struct ConvShape {
    int c_in = 0;
    int height = 0;
    int width = 0;
    int c_out = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
    int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
    std::size_t col_size() const {
        return static_cast<std::size_t>(c_in) * kernel * kernel * out_height() * out_width();
    }
};

// col[(c*k*k) x (oh*ow)] gathered from x[c x h x w].
void im2col(const ConvShape& s, const double* x, double* col);
void col2im_add(const ConvShape& s, const double* col, double* dx);

// One image: x[c_in x h x w] -> y[c_out x oh x ow]; w is c_out x (c_in*k*k).
void conv2d_forward(const ConvShape& s, const double* x, const double* w, const double* b, double* y,
                    std::vector<double>& col);
void conv2d_backward(const ConvShape& s, const double* x, const double* w, const double* dy,
                     double* dx, double* dw, double* db, std::vector<double>& col);

// Multi-head scaled dot-product self-attention over q, k, v [t x d].
// probs receives heads x t x t softmax rows; out receives [t x d].
void attention_forward(const double* q, const double* k, const double* v, int t, int d, int heads,
                       double* probs, double* out);
void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        int t, int d, int heads, const double* dout, double* dq, double* dk,
                        double* dv);

}  // namespace tvp::nn
