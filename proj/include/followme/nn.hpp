#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "followme/tensor.hpp"

namespace followme::nn {

/// Half-open range of columns (the last tensor axis) to compute.
struct ColumnRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    bool empty() const { return begin >= end; }
    /// Columns whose outputs depend on this range through a kernel of width `kw`.
    ColumnRange widen(std::size_t kw, std::size_t width) const {
        const std::size_t r = kw / 2;
        return {begin > r ? begin - r : 0, std::min(width, end + r)};
    }
    ColumnRange unite(ColumnRange o) const {
        if (empty()) return o;
        if (o.empty()) return *this;
        return {std::min(begin, o.begin), std::max(end, o.end)};
    }
};

/// Same-padded 2-D convolution, `in` [Cin, H, W], `weight` [Cout, Cin, KH, KW],
/// `bias` [Cout] -> `out` [Cout, H, W]. Only output columns in `cols` are written.
inline void conv2d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, Tensor& out,
                           ColumnRange cols) {
    const std::size_t cin = in.dim(0), H = in.dim(1), W = in.dim(2);
    const std::size_t cout = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
    const long ph = long(KH / 2), pw = long(KW / 2);
    for (std::size_t co = 0; co < cout; ++co) {
        double* o = out.data() + co * H * W;
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = cols.begin; w < cols.end; ++w) o[h * W + w] = bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* x = in.data() + ci * H * W;
            const double* k = weight.data() + (co * cin + ci) * KH * KW;
            for (std::size_t kh = 0; kh < KH; ++kh) {
                const long dh = long(kh) - ph;
                const std::size_t h0 = dh < 0 ? std::size_t(-dh) : 0;
                const std::size_t h1 = dh > 0 ? H - std::min(H, std::size_t(dh)) : H;
                for (std::size_t kw = 0; kw < KW; ++kw) {
                    const double kv = k[kh * KW + kw];
                    const long dw = long(kw) - pw;
                    const std::size_t w0 = std::max<long>(long(cols.begin), -dw);
                    const std::size_t w1 = std::min<long>(long(cols.end), long(W) - dw);
                    for (std::size_t h = h0; h < h1; ++h) {
                        double* orow = o + h * W;
                        const double* xrow = x + (long(h) + dh) * long(W) + dw;
                        for (std::size_t w = w0; w < w1; ++w) orow[w] += kv * xrow[w];
                    }
                }
            }
        }
    }
}

inline Tensor conv2d(const Tensor& in, const Tensor& weight, const Tensor& bias) {
    Tensor out({weight.dim(0), in.dim(1), in.dim(2)});
    conv2d_forward(in, weight, bias, out, {0, in.dim(2)});
    return out;
}

/// Accumulates parameter gradients and, when `grad_in` is non-null, the input
/// gradient restricted to columns `in_cols`.
inline void conv2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out, Tensor* grad_in,
                            ColumnRange in_cols, Tensor& grad_weight, Tensor& grad_bias) {
    const std::size_t cin = in.dim(0), H = in.dim(1), W = in.dim(2);
    const std::size_t cout = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
    const long ph = long(KH / 2), pw = long(KW / 2);
    for (std::size_t co = 0; co < cout; ++co) {
        const double* g = grad_out.data() + co * H * W;
        double gb = 0.0;
        for (std::size_t i = 0; i < H * W; ++i) gb += g[i];
        grad_bias[co] += gb;
        for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* x = in.data() + ci * H * W;
            const double* k = weight.data() + (co * cin + ci) * KH * KW;
            double* gk = grad_weight.data() + (co * cin + ci) * KH * KW;
            double* gx = grad_in ? grad_in->data() + ci * H * W : nullptr;
            for (std::size_t kh = 0; kh < KH; ++kh) {
                const long dh = long(kh) - ph;
                const std::size_t h0 = dh < 0 ? std::size_t(-dh) : 0;
                const std::size_t h1 = dh > 0 ? H - std::min(H, std::size_t(dh)) : H;
                for (std::size_t kw = 0; kw < KW; ++kw) {
                    const long dw = long(kw) - pw;
                    const std::size_t w0 = std::max<long>(0, -dw);
                    const std::size_t w1 = std::min<long>(long(W), long(W) - dw);
                    double acc = 0.0;
                    for (std::size_t h = h0; h < h1; ++h) {
                        const double* grow = g + h * W;
                        const double* xrow = x + (long(h) + dh) * long(W) + dw;
                        for (std::size_t w = w0; w < w1; ++w) acc += grow[w] * xrow[w];
                    }
                    gk[kh * KW + kw] += acc;
                    if (!gx) continue;
                    // input column c = w + dw must lie in in_cols
                    const long v0 = std::max<long>(long(w0), long(in_cols.begin) - dw);
                    const long v1 = std::min<long>(long(w1), long(in_cols.end) - dw);
                    if (v1 <= v0) continue;
                    const double kv = k[kh * KW + kw];
                    for (std::size_t h = h0; h < h1; ++h) {
                        const double* grow = g + h * W;
                        double* gxrow = gx + (long(h) + dh) * long(W) + dw;
                        for (long w = v0; w < v1; ++w) gxrow[w] += kv * grow[w];
                    }
                }
            }
        }
    }
}

/// PReLU with one shared learnable slope.
inline void prelu_forward(const Tensor& in, double slope, Tensor& out, ColumnRange cols) {
    const std::size_t W = in.dim(in.rank() - 1);
    const std::size_t rows = in.size() / W;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t w = cols.begin; w < cols.end; ++w) {
            const double v = in[r * W + w];
            out[r * W + w] = v > 0 ? v : slope * v;
        }
}

inline void prelu_backward(const Tensor& in, double slope, const Tensor& grad_out, Tensor& grad_in,
                           double& grad_slope) {
    double gs = 0.0;
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double v = in[i];
        if (v > 0) {
            grad_in[i] = grad_out[i];
        } else {
            grad_in[i] = slope * grad_out[i];
            gs += v * grad_out[i];
        }
    }
    grad_slope += gs;
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Named parameter tensors with a fixed order.
struct ParameterSet {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    std::size_t add(std::string name, Tensor value) {
        names.push_back(std::move(name));
        values.push_back(std::move(value));
        return values.size() - 1;
    }

    std::size_t find(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        return names.size();
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& v : values) n += v.size();
        return n;
    }

    /// Zero tensors shaped like every parameter.
    std::vector<Tensor> zeros_like() const {
        std::vector<Tensor> g;
        g.reserve(values.size());
        for (const auto& v : values) g.emplace_back(v.shape());
        return g;
    }
};

using Gradients = std::vector<Tensor>;

inline void add_into(Gradients& dst, const Gradients& src, double scale = 1.0) {
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += scale * src[i][j];
}

inline double global_norm(const Gradients& g) {
    double s = 0.0;
    for (const auto& t : g)
        for (double v : t.values()) s += v * v;
    return std::sqrt(s);
}

/// Adam with bias correction.
class Adam {
public:
    Adam(const ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : m_(params.zeros_like()), v_(params.zeros_like()), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParameterSet& params, const Gradients& grads, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, double(t_));
        const double c2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t i = 0; i < params.values.size(); ++i) {
            auto& p = params.values[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double g = grads[i][j];
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                p[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
            }
        }
    }

    long steps() const { return t_; }

private:
    Gradients m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace followme::nn
