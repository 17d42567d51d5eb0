#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "coda/errors.hpp"
#include "coda/rng.hpp"

namespace coda {

// Dense float32 tensor, row-major. Feature maps are C x H x W, convolution
// weights are O x I x K x K.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {}

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int> s) {
        int64_t n = count(s);
        return Tensor(std::move(s), std::vector<float>(size_t(n), 0.0f));
    }

    static Tensor full(std::vector<int> s, float v) {
        int64_t n = count(s);
        return Tensor(std::move(s), std::vector<float>(size_t(n), v));
    }

    int64_t size() const { return int64_t(data.size()); }
    int dim(int i) const { return shape[size_t(i)]; }
    int rank() const { return int(shape.size()); }

    float& at3(int c, int h, int w) {
        return data[size_t((c * shape[1] + h) * shape[2] + w)];
    }
    float at3(int c, int h, int w) const {
        return data[size_t((c * shape[1] + h) * shape[2] + w)];
    }
    float& at4(int o, int i, int kh, int kw) {
        return data[size_t(((o * shape[1] + i) * shape[2] + kh) * shape[3] + kw)];
    }
    float at4(int o, int i, int kh, int kw) const {
        return data[size_t(((o * shape[1] + i) * shape[2] + kh) * shape[3] + kw)];
    }
    float& at2(int r, int c) { return data[size_t(r * shape[1] + c)]; }
    float at2(int r, int c) const { return data[size_t(r * shape[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += "x";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

inline void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank)
        throw ValidationError(std::string(what) + ": expected rank " +
                              std::to_string(rank) + ", got shape " +
                              shape_str(t.shape));
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// ---------------------------------------------------------------------------
// Convolution

// input C_in x H x W, weight C_out x C_in x K x K, bias C_out (may be empty
// for bias-free layers). Zero padding. Accumulation order is fixed: input
// channel, then kernel row, then kernel column, so results are reproducible.
inline Tensor conv2d_fwd(const Tensor& input, const Tensor& weight,
                         const Tensor& bias, int stride, int pad) {
    require_rank(input, 3, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != ci)
        throw ValidationError("conv2d: weight expects " +
                              std::to_string(weight.dim(1)) +
                              " input channels, input has " + std::to_string(ci));
    if (weight.dim(2) != weight.dim(3))
        throw ValidationError("conv2d: non-square kernel " + shape_str(weight.shape));
    if (k > h + 2 * pad || k > w + 2 * pad)
        throw ValidationError("conv2d: kernel " + std::to_string(k) +
                              " larger than padded input " + shape_str(input.shape));
    if (!bias.data.empty() && int64_t(bias.data.size()) != co)
        throw ValidationError("conv2d: bias length " +
                              std::to_string(bias.data.size()) +
                              " != out channels " + std::to_string(co));
    const int oh = conv_out_dim(h, k, stride, pad);
    const int ow = conv_out_dim(w, k, stride, pad);
    Tensor out = Tensor::zeros({co, oh, ow});
    for (int o = 0; o < co; ++o) {
        const float b = bias.data.empty() ? 0.0f : bias.data[size_t(o)];
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                float acc = b;
                const int hy = y * stride - pad;
                const int wx = x * stride - pad;
                for (int c = 0; c < ci; ++c) {
                    for (int kh = 0; kh < k; ++kh) {
                        const int iy = hy + kh;
                        if (iy < 0 || iy >= h) continue;
                        const float* in_row = &input.data[size_t((c * h + iy) * w)];
                        const float* w_row =
                            &weight.data[size_t(((o * ci + c) * k + kh) * k)];
                        for (int kw = 0; kw < k; ++kw) {
                            const int ix = wx + kw;
                            if (ix < 0 || ix >= w) continue;
                            acc += w_row[kw] * in_row[ix];
                        }
                    }
                }
                out.at3(o, y, x) = acc;
            }
        }
    }
    return out;
}

struct Conv2dGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

inline Conv2dGrads conv2d_bwd(const Tensor& input, const Tensor& weight,
                              int stride, int pad, const Tensor& grad_out) {
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = weight.dim(0), k = weight.dim(2);
    const int oh = conv_out_dim(h, k, stride, pad);
    const int ow = conv_out_dim(w, k, stride, pad);
    if (grad_out.shape != std::vector<int>{co, oh, ow})
        throw ValidationError("conv2d_bwd: grad shape " + shape_str(grad_out.shape) +
                              " != forward output " +
                              shape_str({co, oh, ow}));
    Conv2dGrads g;
    g.input = Tensor::zeros({ci, h, w});
    g.weight = Tensor::zeros(weight.shape);
    g.bias = Tensor::zeros({co});
    for (int o = 0; o < co; ++o) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const float go = grad_out.at3(o, y, x);
                if (go == 0.0f) continue;
                g.bias.data[size_t(o)] += go;
                const int hy = y * stride - pad;
                const int wx = x * stride - pad;
                for (int c = 0; c < ci; ++c) {
                    for (int kh = 0; kh < k; ++kh) {
                        const int iy = hy + kh;
                        if (iy < 0 || iy >= h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int ix = wx + kw;
                            if (ix < 0 || ix >= w) continue;
                            g.weight.at4(o, c, kh, kw) += go * input.at3(c, iy, ix);
                            g.input.at3(c, iy, ix) += go * weight.at4(o, c, kh, kw);
                        }
                    }
                }
            }
        }
    }
    return g;
}

// Gradient with respect to the input only; the attack loop never needs
// parameter gradients.
inline Tensor conv2d_bwd_input(const Tensor& weight, int stride, int pad,
                               const Tensor& grad_out,
                               const std::vector<int>& input_shape) {
    const int ci = input_shape[0], h = input_shape[1], w = input_shape[2];
    const int co = weight.dim(0), k = weight.dim(2);
    Tensor g = Tensor::zeros(input_shape);
    const int oh = grad_out.dim(1), ow = grad_out.dim(2);
    for (int o = 0; o < co; ++o) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                const float go = grad_out.at3(o, y, x);
                if (go == 0.0f) continue;
                const int hy = y * stride - pad;
                const int wx = x * stride - pad;
                for (int c = 0; c < ci; ++c) {
                    for (int kh = 0; kh < k; ++kh) {
                        const int iy = hy + kh;
                        if (iy < 0 || iy >= h) continue;
                        for (int kw = 0; kw < k; ++kw) {
                            const int ix = wx + kw;
                            if (ix < 0 || ix >= w) continue;
                            g.at3(c, iy, ix) += go * weight.at4(o, c, kh, kw);
                        }
                    }
                }
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Max pooling

struct MaxPoolOut {
    Tensor output;
    // Flat index into the input tensor of each output element's max.
    std::vector<int> argmax;
};

// Padding cells hold -inf so they never win. Ties go to the first element in
// window scan order (row-major over the window), which makes the backward
// routing deterministic.
inline MaxPoolOut maxpool_fwd(const Tensor& input, int k, int stride, int pad) {
    require_rank(input, 3, "maxpool input");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (k > h + 2 * pad || k > w + 2 * pad)
        throw ValidationError("maxpool: window " + std::to_string(k) +
                              " larger than padded input " + shape_str(input.shape));
    if (pad >= k)
        throw ValidationError("maxpool: padding " + std::to_string(pad) +
                              " >= window " + std::to_string(k));
    const int oh = conv_out_dim(h, k, stride, pad);
    const int ow = conv_out_dim(w, k, stride, pad);
    MaxPoolOut r;
    r.output = Tensor::zeros({c, oh, ow});
    r.argmax.assign(size_t(c) * oh * ow, -1);
    size_t oi = 0;
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x, ++oi) {
                float best = -std::numeric_limits<float>::infinity();
                int best_idx = -1;
                for (int kh = 0; kh < k; ++kh) {
                    const int iy = y * stride - pad + kh;
                    if (iy < 0 || iy >= h) continue;
                    for (int kw = 0; kw < k; ++kw) {
                        const int ix = x * stride - pad + kw;
                        if (ix < 0 || ix >= w) continue;
                        const float v = input.at3(ch, iy, ix);
                        if (v > best) {
                            best = v;
                            best_idx = (ch * h + iy) * w + ix;
                        }
                    }
                }
                r.output.at3(ch, y, x) = best;
                r.argmax[oi] = best_idx;
            }
        }
    }
    return r;
}

inline Tensor maxpool_bwd(const std::vector<int>& argmax, const Tensor& grad_out,
                          const std::vector<int>& input_shape) {
    if (argmax.size() != grad_out.data.size())
        throw ValidationError("maxpool_bwd: argmax/grad size mismatch");
    Tensor g = Tensor::zeros(input_shape);
    for (size_t i = 0; i < argmax.size(); ++i)
        g.data[size_t(argmax[i])] += grad_out.data[i];
    return g;
}

// ---------------------------------------------------------------------------
// Fully connected

inline Tensor fc_fwd(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "fc weight");
    const int out = weight.dim(0), in = weight.dim(1);
    if (input.size() != in)
        throw ValidationError("fc: input length " + std::to_string(input.size()) +
                              " != weight in-dim " + std::to_string(in));
    Tensor y = Tensor::zeros({out});
    for (int o = 0; o < out; ++o) {
        float acc = bias.data.empty() ? 0.0f : bias.data[size_t(o)];
        const float* wrow = &weight.data[size_t(o * in)];
        for (int i = 0; i < in; ++i) acc += wrow[i] * input.data[size_t(i)];
        y.data[size_t(o)] = acc;
    }
    return y;
}

struct FcGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};

inline FcGrads fc_bwd(const Tensor& input, const Tensor& weight,
                      const Tensor& grad_out) {
    const int out = weight.dim(0), in = weight.dim(1);
    if (grad_out.size() != out)
        throw ValidationError("fc_bwd: grad length mismatch");
    FcGrads g;
    g.input = Tensor::zeros({in});
    g.weight = Tensor::zeros(weight.shape);
    g.bias = Tensor::zeros({out});
    for (int o = 0; o < out; ++o) {
        const float go = grad_out.data[size_t(o)];
        g.bias.data[size_t(o)] = go;
        const float* wrow = &weight.data[size_t(o * in)];
        float* gwrow = &g.weight.data[size_t(o * in)];
        for (int i = 0; i < in; ++i) {
            gwrow[i] = go * input.data[size_t(i)];
            g.input.data[size_t(i)] += go * wrow[i];
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// ReLU

inline Tensor relu_fwd(const Tensor& input) {
    Tensor y = input;
    for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
    return y;
}

inline Tensor relu_bwd(const Tensor& input, const Tensor& grad_out) {
    Tensor g = grad_out;
    for (size_t i = 0; i < g.data.size(); ++i)
        if (input.data[i] <= 0.0f) g.data[i] = 0.0f;
    return g;
}

// ---------------------------------------------------------------------------
// Batch normalization
//
// Normalization always uses the running statistics; training mode additionally
// folds the per-call spatial statistics into the running estimates afterwards.
// Gradients are exact for the normalization actually applied (the stats are
// constants of the forward pass); gradients through the running-stat update
// are out of scope.

struct BatchNormStats {
    Tensor mean;
    Tensor var;
};

inline Tensor batchnorm_fwd(const Tensor& input, const Tensor& gamma,
                            const Tensor& beta, const BatchNormStats& stats,
                            float eps) {
    require_rank(input, 3, "batchnorm input");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    if (gamma.size() != c || beta.size() != c || stats.mean.size() != c ||
        stats.var.size() != c)
        throw ValidationError("batchnorm: parameter length != " + std::to_string(c) +
                              " channels");
    Tensor y = Tensor::zeros(input.shape);
    for (int ch = 0; ch < c; ++ch) {
        const float inv = 1.0f / std::sqrt(stats.var.data[size_t(ch)] + eps);
        const float g = gamma.data[size_t(ch)];
        const float b = beta.data[size_t(ch)];
        const float m = stats.mean.data[size_t(ch)];
        for (int i = 0; i < h * w; ++i) {
            const size_t idx = size_t(ch * h * w + i);
            y.data[idx] = g * (input.data[idx] - m) * inv + b;
        }
    }
    return y;
}

// Per-channel spatial mean/variance of one sample, used to advance the
// running statistics during training.
inline BatchNormStats batchnorm_observe(const Tensor& input) {
    const int c = input.dim(0), n = input.dim(1) * input.dim(2);
    BatchNormStats s;
    s.mean = Tensor::zeros({c});
    s.var = Tensor::zeros({c});
    for (int ch = 0; ch < c; ++ch) {
        float m = 0.0f;
        for (int i = 0; i < n; ++i) m += input.data[size_t(ch * n + i)];
        m /= float(n);
        float v = 0.0f;
        for (int i = 0; i < n; ++i) {
            const float d = input.data[size_t(ch * n + i)] - m;
            v += d * d;
        }
        s.mean.data[size_t(ch)] = m;
        s.var.data[size_t(ch)] = v / float(n);
    }
    return s;
}

inline void batchnorm_update_running(BatchNormStats& running,
                                     const BatchNormStats& observed,
                                     float momentum) {
    for (size_t i = 0; i < running.mean.data.size(); ++i) {
        running.mean.data[i] =
            (1.0f - momentum) * running.mean.data[i] + momentum * observed.mean.data[i];
        running.var.data[i] =
            (1.0f - momentum) * running.var.data[i] + momentum * observed.var.data[i];
    }
}

struct BatchNormGrads {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

inline BatchNormGrads batchnorm_bwd(const Tensor& input, const Tensor& gamma,
                                    const BatchNormStats& stats, float eps,
                                    const Tensor& grad_out) {
    const int c = input.dim(0), n = input.dim(1) * input.dim(2);
    BatchNormGrads g;
    g.input = Tensor::zeros(input.shape);
    g.gamma = Tensor::zeros({c});
    g.beta = Tensor::zeros({c});
    for (int ch = 0; ch < c; ++ch) {
        const float inv = 1.0f / std::sqrt(stats.var.data[size_t(ch)] + eps);
        const float m = stats.mean.data[size_t(ch)];
        const float gm = gamma.data[size_t(ch)];
        float dgamma = 0.0f, dbeta = 0.0f;
        for (int i = 0; i < n; ++i) {
            const size_t idx = size_t(ch * n + i);
            const float go = grad_out.data[idx];
            dgamma += go * (input.data[idx] - m) * inv;
            dbeta += go;
            g.input.data[idx] = go * gm * inv;
        }
        g.gamma.data[size_t(ch)] = dgamma;
        g.beta.data[size_t(ch)] = dbeta;
    }
    return g;
}

// Folds eval-mode batch normalization into the preceding convolution.
// y = gamma * (conv(x) - mean) / sqrt(var + eps) + beta collapses to a
// convolution with rescaled weights and shifted bias.
inline void fuse_batchnorm(Tensor& conv_weight, Tensor& conv_bias,
                           const Tensor& gamma, const Tensor& beta,
                           const BatchNormStats& stats, float eps) {
    const int co = conv_weight.dim(0);
    const int64_t per_ch = conv_weight.size() / co;
    if (conv_bias.data.empty()) conv_bias = Tensor::zeros({co});
    for (int o = 0; o < co; ++o) {
        const float scale =
            gamma.data[size_t(o)] / std::sqrt(stats.var.data[size_t(o)] + eps);
        for (int64_t i = 0; i < per_ch; ++i)
            conv_weight.data[size_t(o * per_ch + i)] *= scale;
        conv_bias.data[size_t(o)] =
            (conv_bias.data[size_t(o)] - stats.mean.data[size_t(o)]) * scale +
            beta.data[size_t(o)];
    }
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

struct SoftmaxXent {
    float loss;
    Tensor grad_logits;
    std::vector<float> probs;
};

inline SoftmaxXent softmax_xent(const Tensor& logits, int label) {
    const int n = int(logits.size());
    if (label < 0 || label >= n)
        throw ValidationError("softmax_xent: label " + std::to_string(label) +
                              " out of range for " + std::to_string(n) + " classes");
    float mx = logits.data[0];
    for (float v : logits.data) mx = std::max(mx, v);
    double denom = 0.0;
    for (float v : logits.data) denom += std::exp(double(v - mx));
    SoftmaxXent r;
    r.probs.resize(size_t(n));
    r.grad_logits = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) {
        const double p = std::exp(double(logits.data[size_t(i)] - mx)) / denom;
        r.probs[size_t(i)] = float(p);
        r.grad_logits.data[size_t(i)] = float(p) - (i == label ? 1.0f : 0.0f);
    }
    r.loss = float(-(double(logits.data[size_t(label)] - mx) - std::log(denom)));
    return r;
}

} // namespace coda
