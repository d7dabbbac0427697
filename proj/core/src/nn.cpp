#include "ganguards/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <cmath>

#include "ganguards/error.hpp"

namespace ganguards::nn {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void init_normal(std::vector<float>& w, float stddev, std::mt19937_64& rng) {
    std::normal_distribution<float> dist(0.0f, stddev);
    for (float& v : w) v = dist(rng);
}

struct Geometry {
    int n, c, h, w, k, s, p, oh, ow;
    std::size_t patch() const { return static_cast<std::size_t>(oh) * ow; }
    std::size_t rows() const { return static_cast<std::size_t>(c) * k * k; }
    std::size_t cols() const { return static_cast<std::size_t>(n) * patch(); }
};

// Output columns [lo, hi) whose input coordinate ox*s - p + k lies in [0, extent).
inline void valid_range(int extent, int out_extent, int s, int p, int k, int& lo, int& hi) {
    const int off = p - k;  // ox*s >= off  and  ox*s <= extent - 1 + off
    lo = off <= 0 ? 0 : (off + s - 1) / s;
    const int top = extent - 1 + off;
    hi = top < 0 ? 0 : std::min(out_extent, top / s + 1);
    if (hi < lo) hi = lo;
}

// cols is (c*k*k) x (n*oh*ow), column index n*P + oy*ow + ox.
void im2col(const float* x, const Geometry& g, float* cols) {
    const std::size_t width = g.cols();
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    for (int c = 0; c < g.c; ++c)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                int lo, hi;
                valid_range(g.w, g.ow, g.s, g.p, kx, lo, hi);
                const int shift = kx - g.p;
                float* dst_row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * width;
                for (int n = 0; n < g.n; ++n) {
                    const float* src = x + (static_cast<std::size_t>(n) * g.c + c) * plane;
                    float* dst = dst_row + n * g.patch();
                    for (int oy = 0; oy < g.oh; ++oy) {
                        const int iy = oy * g.s - g.p + ky;
                        float* out = dst + oy * g.ow;
                        if (iy < 0 || iy >= g.h) {
                            std::fill(out, out + g.ow, 0.0f);
                            continue;
                        }
                        const float* in = src + iy * g.w + shift;
                        std::fill(out, out + lo, 0.0f);
                        if (g.s == 1) {
                            std::copy(in + lo, in + hi, out + lo);
                        } else {
                            for (int ox = lo; ox < hi; ++ox) out[ox] = in[ox * g.s];
                        }
                        std::fill(out + hi, out + g.ow, 0.0f);
                    }
                }
            }
}

// Adjoint of im2col: accumulates columns back into an (n, c, h, w) buffer.
void col2im(const float* cols, const Geometry& g, float* x) {
    const std::size_t width = g.cols();
    const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
    for (int c = 0; c < g.c; ++c)
        for (int ky = 0; ky < g.k; ++ky)
            for (int kx = 0; kx < g.k; ++kx) {
                int lo, hi;
                valid_range(g.w, g.ow, g.s, g.p, kx, lo, hi);
                const int shift = kx - g.p;
                const float* src_row = cols + ((static_cast<std::size_t>(c) * g.k + ky) * g.k + kx) * width;
                for (int n = 0; n < g.n; ++n) {
                    float* dst = x + (static_cast<std::size_t>(n) * g.c + c) * plane;
                    const float* src = src_row + n * g.patch();
                    for (int oy = 0; oy < g.oh; ++oy) {
                        const int iy = oy * g.s - g.p + ky;
                        if (iy < 0 || iy >= g.h) continue;
                        float* out = dst + iy * g.w + shift;
                        const float* in = src + oy * g.ow;
                        if (g.s == 1) {
                            for (int ox = lo; ox < hi; ++ox) out[ox] += in[ox];
                        } else {
                            for (int ox = lo; ox < hi; ++ox) out[ox * g.s] += in[ox];
                        }
                    }
                }
            }
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(int n, int c, int h, int w, float fill)
    : n_(n), c_(c), h_(h), w_(w), data_(static_cast<std::size_t>(n) * c * h * w, fill) {}

Tensor Tensor::reshaped(int c, int h, int w) const& {
    Tensor copy = *this;
    return std::move(copy).reshaped(c, h, w);
}

Tensor Tensor::reshaped(int c, int h, int w) && {
    if (static_cast<std::size_t>(c) * h * w != stride())
        throw PreconditionError("reshape: element count mismatch");
    Tensor out;
    out.n_ = n_;
    out.c_ = c;
    out.h_ = h;
    out.w_ = w;
    out.data_ = std::move(data_);
    return out;
}

Tensor Tensor::slice(int first, int count) const {
    if (first < 0 || count < 0 || first + count > n_) throw PreconditionError("slice out of range");
    Tensor out(count, c_, h_, w_);
    std::copy_n(sample(first), static_cast<std::size_t>(count) * stride(), out.data());
    return out;
}

bool Tensor::same_shape(const Tensor& other) const {
    return n_ == other.n_ && c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
}

Tensor concat(std::span<const Tensor* const> parts) {
    if (parts.empty()) return {};
    const Tensor& first = *parts.front();
    int total = 0;
    for (const Tensor* t : parts) {
        if (t->c() != first.c() || t->h() != first.h() || t->w() != first.w())
            throw PreconditionError("concat: per-sample shape mismatch");
        total += t->n();
    }
    Tensor out(total, first.c(), first.h(), first.w());
    float* dst = out.data();
    for (const Tensor* t : parts) dst = std::copy_n(t->data(), t->size(), dst);
    return out;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in, int out, std::mt19937_64& rng, float gain)
    : in_(in), out_(out), weight_(static_cast<std::size_t>(in) * out), bias_(out) {
    init_normal(weight_.value, gain / std::sqrt(static_cast<float>(in)), rng);
}

Tensor Linear::infer(const Tensor& x) const {
    if (static_cast<int>(x.stride()) != in_) throw PreconditionError("linear: input width mismatch");
    Tensor y(x.n(), out_, 1, 1);
    CMapR xm(x.data(), x.n(), in_);
    CMapR wm(weight_.value.data(), out_, in_);
    MapR ym(y.data(), x.n(), out_);
    ym.noalias() = xm * wm.transpose();
    Eigen::Map<const Eigen::RowVectorXf> b(bias_.value.data(), out_);
    ym.rowwise() += b;
    return y;
}

Tensor Linear::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor Linear::backward(const Tensor& grad_out) {
    const int n = grad_out.n();
    CMapR g(grad_out.data(), n, out_);
    CMapR xm(input_.data(), n, in_);
    MapR dw(weight_.grad.data(), out_, in_);
    dw.noalias() += g.transpose() * xm;
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_; ++o) bias_.grad[static_cast<std::size_t>(o)] += g(i, o);
    Tensor dx(n, input_.c(), input_.h(), input_.w());
    CMapR wm(weight_.value.data(), out_, in_);
    MapR dxm(dx.data(), n, in_);
    dxm.noalias() = g * wm;
    return dx;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng, float gain)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad),
      weight_(static_cast<std::size_t>(out) * in * kernel * kernel), bias_(out) {
    init_normal(weight_.value, gain / std::sqrt(static_cast<float>(in * kernel * kernel)), rng);
}

// Convolutions run one sample at a time so the unfolded patch matrix stays
// cache-resident; the per-sample output (out x P) is already NCHW.

Tensor Conv2d::infer(const Tensor& x) const {
    if (x.c() != in_) throw PreconditionError("conv2d: channel mismatch");
    const Geometry g{1, in_, x.h(), x.w(), kernel_, stride_, pad_,
                     (x.h() + 2 * pad_ - kernel_) / stride_ + 1, (x.w() + 2 * pad_ - kernel_) / stride_ + 1};
    Tensor y(x.n(), out_, g.oh, g.ow);
    MatR cols(g.rows(), g.patch());
    CMapR w(weight_.value.data(), out_, g.rows());
    Eigen::Map<const Eigen::VectorXf> b(bias_.value.data(), out_);
    for (int n = 0; n < x.n(); ++n) {
        im2col(x.sample(n), g, cols.data());
        MapR out(y.sample(n), out_, g.patch());
        out.noalias() = w * cols;
        out.colwise() += b;
    }
    return y;
}

Tensor Conv2d::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const Geometry g{1, in_, input_.h(), input_.w(), kernel_, stride_, pad_, grad_out.h(), grad_out.w()};
    MatR cols(g.rows(), g.patch());
    MatR dcols(g.rows(), g.patch());
    CMapR w(weight_.value.data(), out_, g.rows());
    MapR dw(weight_.grad.data(), out_, g.rows());
    Tensor dx(input_.n(), in_, input_.h(), input_.w());
    for (int n = 0; n < input_.n(); ++n) {
        im2col(input_.sample(n), g, cols.data());
        CMapR gm(grad_out.sample(n), out_, g.patch());
        dw.noalias() += gm * cols.transpose();
        for (int o = 0; o < out_; ++o) {
            // Plain loop: Eigen's vectorized reduction peels by address, which
            // makes the summation order depend on heap alignment.
            float acc = 0.0f;
            for (std::size_t p = 0; p < g.patch(); ++p) acc += gm(o, static_cast<Eigen::Index>(p));
            bias_.grad[static_cast<std::size_t>(o)] += acc;
        }
        dcols.noalias() = w.transpose() * gm;
        col2im(dcols.data(), g, dx.sample(n));
    }
    return dx;
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng, float gain)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad),
      weight_(static_cast<std::size_t>(in) * out * kernel * kernel), bias_(out) {
    const float fan_in = static_cast<float>(in * kernel * kernel) / static_cast<float>(stride * stride);
    init_normal(weight_.value, gain / std::sqrt(fan_in), rng);
}

Tensor ConvTranspose2d::infer(const Tensor& x) const {
    if (x.c() != in_) throw PreconditionError("conv_transpose2d: channel mismatch");
    const int oh = (x.h() - 1) * stride_ - 2 * pad_ + kernel_;
    const int ow = (x.w() - 1) * stride_ - 2 * pad_ + kernel_;
    // Geometry of the adjoint convolution: output space -> input space.
    const Geometry g{1, out_, oh, ow, kernel_, stride_, pad_, x.h(), x.w()};
    Tensor y(x.n(), out_, oh, ow);
    MatR cols(g.rows(), g.patch());
    CMapR w(weight_.value.data(), in_, g.rows());
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    for (int n = 0; n < x.n(); ++n) {
        cols.noalias() = w.transpose() * CMapR(x.sample(n), in_, g.patch());
        float* dst = y.sample(n);
        col2im(cols.data(), g, dst);
        for (int c = 0; c < out_; ++c) {
            const float b = bias_.value[c];
            float* p = dst + c * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] += b;
        }
    }
    return y;
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
    const Geometry g{1, out_, grad_out.h(), grad_out.w(), kernel_, stride_, pad_, input_.h(), input_.w()};
    MatR dcols(g.rows(), g.patch());
    CMapR w(weight_.value.data(), in_, g.rows());
    MapR dw(weight_.grad.data(), in_, g.rows());
    Tensor dx(input_.n(), in_, input_.h(), input_.w());
    const std::size_t plane = static_cast<std::size_t>(grad_out.h()) * grad_out.w();
    for (int n = 0; n < grad_out.n(); ++n) {
        im2col(grad_out.sample(n), g, dcols.data());
        CMapR xm(input_.sample(n), in_, g.patch());
        dw.noalias() += xm * dcols.transpose();
        MapR(dx.sample(n), in_, g.patch()).noalias() = w * dcols;
        const float* gp = grad_out.sample(n);
        for (int c = 0; c < out_; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += gp[c * plane + i];
            bias_.grad[c] += static_cast<float>(acc);
        }
    }
    return dx;
}

// ---------------------------------------------------------- activations

Tensor ReLU::infer(const Tensor& x) const {
    Tensor y = x;
    for (float& v : y.values()) v = std::max(v, 0.0f);
    return y;
}

Tensor ReLU::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    auto in = input_.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] > 0.0f ? d[i] : 0.0f;
    return dx;
}

Tensor LeakyReLU::infer(const Tensor& x) const {
    Tensor y = x;
    const float slope = slope_;
    for (float& v : y.values()) v = v < 0.0f ? v * slope : v;
    return y;
}

Tensor LeakyReLU::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor LeakyReLU::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    auto in = input_.values();
    auto d = dx.values();
    const float slope = slope_;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = in[i] < 0.0f ? d[i] * slope : d[i];
    return dx;
}

Tensor Tanh::infer(const Tensor& x) const {
    Tensor y = x;
    for (float& v : y.values()) v = std::tanh(v);
    return y;
}

Tensor Tanh::forward(const Tensor& x) {
    output_ = infer(x);
    return output_;
}

Tensor Tanh::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    auto y = output_.values();
    auto d = dx.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0f - y[i] * y[i];
    return dx;
}

// ---------------------------------------------------------- reshaping

Tensor Reshape::infer(const Tensor& x) const { return x.reshaped(c_, h_, w_); }

Tensor Reshape::forward(const Tensor& x) {
    in_c_ = x.c();
    in_h_ = x.h();
    in_w_ = x.w();
    return infer(x);
}

Tensor Reshape::backward(const Tensor& grad_out) { return grad_out.reshaped(in_c_, in_h_, in_w_); }

Tensor UpsampleNearest2x::infer(const Tensor& x) const {
    Tensor y(x.n(), x.c(), 2 * x.h(), 2 * x.w());
    const int planes = x.n() * x.c();
    const int h = x.h(), w = x.w();
    for (int p = 0; p < planes; ++p) {
        const float* src = x.data() + static_cast<std::size_t>(p) * h * w;
        float* dst = y.data() + static_cast<std::size_t>(p) * 4 * h * w;
        for (int yy = 0; yy < h; ++yy) {
            float* row = dst + 2 * yy * 2 * w;
            for (int xx = 0; xx < w; ++xx) row[2 * xx] = row[2 * xx + 1] = src[yy * w + xx];
            std::copy_n(row, 2 * w, row + 2 * w);
        }
    }
    return y;
}

Tensor UpsampleNearest2x::forward(const Tensor& x) { return infer(x); }

Tensor UpsampleNearest2x::backward(const Tensor& grad_out) {
    Tensor dx(grad_out.n(), grad_out.c(), grad_out.h() / 2, grad_out.w() / 2);
    const int planes = dx.n() * dx.c();
    const int h = dx.h(), w = dx.w();
    for (int p = 0; p < planes; ++p) {
        const float* src = grad_out.data() + static_cast<std::size_t>(p) * 4 * h * w;
        float* dst = dx.data() + static_cast<std::size_t>(p) * h * w;
        for (int yy = 0; yy < h; ++yy) {
            const float* r0 = src + 2 * yy * 2 * w;
            const float* r1 = r0 + 2 * w;
            for (int xx = 0; xx < w; ++xx)
                dst[yy * w + xx] = r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1];
        }
    }
    return dx;
}

Tensor AvgPool2x::infer(const Tensor& x) const {
    if (x.h() % 2 || x.w() % 2) throw PreconditionError("avgpool2x: odd spatial size");
    Tensor y(x.n(), x.c(), x.h() / 2, x.w() / 2);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int yy = 0; yy < y.h(); ++yy)
                for (int xx = 0; xx < y.w(); ++xx)
                    y.at(n, c, yy, xx) = 0.25f * (x.at(n, c, 2 * yy, 2 * xx) + x.at(n, c, 2 * yy, 2 * xx + 1) +
                                                  x.at(n, c, 2 * yy + 1, 2 * xx) + x.at(n, c, 2 * yy + 1, 2 * xx + 1));
    return y;
}

Tensor AvgPool2x::forward(const Tensor& x) { return infer(x); }

Tensor AvgPool2x::backward(const Tensor& grad_out) {
    Tensor dx(grad_out.n(), grad_out.c(), grad_out.h() * 2, grad_out.w() * 2);
    for (int n = 0; n < dx.n(); ++n)
        for (int c = 0; c < dx.c(); ++c)
            for (int yy = 0; yy < dx.h(); ++yy)
                for (int xx = 0; xx < dx.w(); ++xx) dx.at(n, c, yy, xx) = 0.25f * grad_out.at(n, c, yy / 2, xx / 2);
    return dx;
}

// -------------------------------------------------------- normalization

namespace {
constexpr float kPixelNormEps = 1e-8f;
constexpr float kInstanceNormEps = 1e-5f;
}  // namespace

Tensor PixelNorm::infer(const Tensor& x) const {
    Tensor y = x;
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n) {
        float* s = y.sample(n);
        for (std::size_t p = 0; p < plane; ++p) {
            float ms = 0.0f;
            for (int c = 0; c < x.c(); ++c) ms += s[c * plane + p] * s[c * plane + p];
            const float r = 1.0f / std::sqrt(ms / x.c() + kPixelNormEps);
            for (int c = 0; c < x.c(); ++c) s[c * plane + p] *= r;
        }
    }
    return y;
}

Tensor PixelNorm::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor PixelNorm::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    const int channels = input_.c();
    const std::size_t plane = static_cast<std::size_t>(input_.h()) * input_.w();
    for (int n = 0; n < input_.n(); ++n) {
        const float* x = input_.sample(n);
        float* d = dx.sample(n);
        for (std::size_t p = 0; p < plane; ++p) {
            float ms = 0.0f, gx = 0.0f;
            for (int c = 0; c < channels; ++c) {
                ms += x[c * plane + p] * x[c * plane + p];
                gx += d[c * plane + p] * x[c * plane + p];
            }
            const float r = 1.0f / std::sqrt(ms / channels + kPixelNormEps);
            const float k = r * r * r * gx / channels;
            for (int c = 0; c < channels; ++c) d[c * plane + p] = r * d[c * plane + p] - k * x[c * plane + p];
        }
    }
    return dx;
}

int MinibatchStdDev::group_size(int n) const {
    const int g = std::min(group_, n);
    require(n % g == 0, "minibatch stddev: batch of " + std::to_string(n) + " not divisible into groups of " +
                            std::to_string(g));
    return g;
}

Tensor MinibatchStdDev::infer(const Tensor& x) const {
    const int g = group_size(x.n());
    const std::size_t feat = x.stride();
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
    Tensor y(x.n(), x.c() + 1, x.h(), x.w());
    for (int first = 0; first < x.n(); first += g) {
        double total = 0.0;
        for (std::size_t f = 0; f < feat; ++f) {
            double mean = 0.0, var = 0.0;
            for (int i = first; i < first + g; ++i) mean += x.sample(i)[f];
            mean /= g;
            for (int i = first; i < first + g; ++i) var += (x.sample(i)[f] - mean) * (x.sample(i)[f] - mean);
            total += std::sqrt(var / g + 1e-8);
        }
        const float stat = static_cast<float>(total / static_cast<double>(feat));
        for (int i = first; i < first + g; ++i) {
            std::copy(x.sample(i), x.sample(i) + feat, y.sample(i));
            std::fill(y.sample(i) + feat, y.sample(i) + feat + plane, stat);
        }
    }
    return y;
}

Tensor MinibatchStdDev::forward(const Tensor& x) {
    input_ = x;
    return infer(x);
}

Tensor MinibatchStdDev::backward(const Tensor& grad_out) {
    const Tensor& x = input_;
    const int g = group_size(x.n());
    const std::size_t feat = x.stride();
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
    Tensor dx(x.n(), x.c(), x.h(), x.w());
    for (int first = 0; first < x.n(); first += g) {
        double dstat = 0.0;
        for (int i = first; i < first + g; ++i) {
            std::copy(grad_out.sample(i), grad_out.sample(i) + feat, dx.sample(i));
            for (std::size_t p = 0; p < plane; ++p) dstat += grad_out.sample(i)[feat + p];
        }
        const double scale = dstat / (static_cast<double>(feat) * g);
        for (std::size_t f = 0; f < feat; ++f) {
            double mean = 0.0, var = 0.0;
            for (int i = first; i < first + g; ++i) mean += x.sample(i)[f];
            mean /= g;
            for (int i = first; i < first + g; ++i) var += (x.sample(i)[f] - mean) * (x.sample(i)[f] - mean);
            const double s = std::sqrt(var / g + 1e-8);
            for (int i = first; i < first + g; ++i)
                dx.sample(i)[f] += static_cast<float>(scale * (x.sample(i)[f] - mean) / s);
        }
    }
    return dx;
}

Tensor InstanceNorm::infer(const Tensor& x) const {
    Tensor y = x;
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            float* p = y.sample(n) + c * plane;
            double mean = 0.0, var = 0.0;
            for (std::size_t i = 0; i < plane; ++i) mean += p[i];
            mean /= static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= static_cast<double>(plane);
            const float inv = static_cast<float>(1.0 / std::sqrt(var + kInstanceNormEps));
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - static_cast<float>(mean)) * inv;
        }
    return y;
}

Tensor InstanceNorm::forward(const Tensor& x) {
    output_ = infer(x);
    const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
    inv_std_.assign(static_cast<std::size_t>(x.n()) * x.c(), 0.0f);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c) {
            const float* p = x.sample(n) + c * plane;
            double mean = 0.0, var = 0.0;
            for (std::size_t i = 0; i < plane; ++i) mean += p[i];
            mean /= static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= static_cast<double>(plane);
            inv_std_[n * x.c() + c] = static_cast<float>(1.0 / std::sqrt(var + kInstanceNormEps));
        }
    return output_;
}

Tensor InstanceNorm::backward(const Tensor& grad_out) {
    Tensor dx = grad_out;
    const std::size_t plane = static_cast<std::size_t>(grad_out.h()) * grad_out.w();
    for (int n = 0; n < grad_out.n(); ++n)
        for (int c = 0; c < grad_out.c(); ++c) {
            float* d = dx.sample(n) + c * plane;
            const float* y = output_.sample(n) + c * plane;
            double mg = 0.0, mgy = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                mg += d[i];
                mgy += d[i] * y[i];
            }
            mg /= static_cast<double>(plane);
            mgy /= static_cast<double>(plane);
            const float inv = inv_std_[n * grad_out.c() + c];
            for (std::size_t i = 0; i < plane; ++i)
                d[i] = inv * (d[i] - static_cast<float>(mg) - y[i] * static_cast<float>(mgy));
        }
    return dx;
}

// ------------------------------------------------------------ Residual

Residual::Residual(std::unique_ptr<Sequential> body) : body_(std::move(body)) {}
Residual::Residual(const Residual& other) : body_(std::make_unique<Sequential>(*other.body_)) {}
Residual::~Residual() = default;

Tensor Residual::infer(const Tensor& x) const {
    Tensor y = body_->infer(x);
    if (!y.same_shape(x)) throw PreconditionError("residual: body changes shape");
    auto out = y.values();
    auto in = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
    return y;
}

Tensor Residual::forward(const Tensor& x) {
    Tensor y = body_->forward(x);
    auto out = y.values();
    auto in = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += in[i];
    return y;
}

Tensor Residual::backward(const Tensor& grad_out) {
    Tensor dx = body_->backward(grad_out);
    auto d = dx.values();
    auto g = grad_out.values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    return dx;
}

std::vector<Param*> Residual::params() { return body_->params(); }

// ---------------------------------------------------------- Sequential

Sequential::Sequential(const Sequential& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
    if (this != &other) {
        Sequential copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Sequential& Sequential::add(LayerPtr layer) {
    layers_.push_back(std::move(layer));
    return *this;
}

Tensor Sequential::infer(const Tensor& x, std::size_t upto) const {
    upto = std::min(upto, layers_.size());
    if (upto == 0) return x;
    Tensor h = layers_[0]->infer(x);
    for (std::size_t i = 1; i < upto; ++i) h = layers_[i]->infer(h);
    return h;
}

Tensor Sequential::forward(const Tensor& x) {
    if (layers_.empty()) return x;
    Tensor h = layers_[0]->forward(x);
    for (std::size_t i = 1; i < layers_.size(); ++i) h = layers_[i]->forward(h);
    return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    if (layers_.empty()) return grad_out;
    Tensor g = layers_.back()->backward(grad_out);
    for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
    return g;
}

std::vector<Param*> Sequential::params() {
    std::vector<Param*> out;
    for (auto& l : layers_)
        for (Param* p : l->params()) out.push_back(p);
    return out;
}

void Sequential::zero_grad() {
    for (Param* p : params()) p->zero_grad();
}

std::size_t Sequential::parameter_count() const {
    std::size_t total = 0;
    for (Param* p : const_cast<Sequential*>(this)->params()) total += p->value.size();
    return total;
}

std::vector<float> Sequential::weights() const {
    std::vector<float> flat;
    flat.reserve(parameter_count());
    for (Param* p : const_cast<Sequential*>(this)->params()) flat.insert(flat.end(), p->value.begin(), p->value.end());
    return flat;
}

void Sequential::set_weights(std::span<const float> flat) {
    if (flat.size() != parameter_count()) throw PreconditionError("set_weights: parameter count mismatch");
    std::size_t offset = 0;
    for (Param* p : params()) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), p->value.size(), p->value.begin());
        offset += p->value.size();
    }
}

// ---------------------------------------------------------- optimizers

void Adam::step(std::span<Param* const> params) {
    if (m_.size() != params.size()) {
        m_.clear();
        v_.clear();
        for (Param* p : params) {
            m_.emplace_back(p->value.size(), 0.0f);
            v_.emplace_back(p->value.size(), 0.0f);
        }
    }
    ++t_;
    const float c1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
    const float c2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
    const float step = lr_ * std::sqrt(c2) / c1;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const float g = p.grad[i];
            m[i] = beta1_ * m[i] + (1.0f - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0f - beta2_) * g * g;
            p.value[i] -= step * m[i] / (std::sqrt(v[i]) + eps_);
        }
    }
}

void Sgd::step(std::span<Param* const> params) {
    if (velocity_.size() != params.size()) {
        velocity_.clear();
        for (Param* p : params) velocity_.emplace_back(p->value.size(), 0.0f);
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k];
        auto& vel = velocity_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const float g = p.grad[i] + weight_decay_ * p.value[i];
            vel[i] = momentum_ * vel[i] + g;
            p.value[i] -= lr_ * vel[i];
        }
    }
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double bce_with_logits(const Tensor& logits, std::span<const float> targets, Tensor& grad) {
    const auto l = logits.values();
    if (l.size() != targets.size()) throw PreconditionError("bce: target count mismatch");
    grad = Tensor(logits.n(), logits.c(), logits.h(), logits.w());
    auto g = grad.values();
    const double inv_n = 1.0 / static_cast<double>(l.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) {
        const double x = l[i];
        loss += softplus(x) - targets[i] * x;
        const double sig = 1.0 / (1.0 + std::exp(-x));
        g[i] = static_cast<float>((sig - targets[i]) * inv_n);
    }
    return loss * inv_n;
}

}  // namespace ganguards::nn
