#pragma once

// Minimal CPU neural-network engine: NCHW float tensors, layers with explicit
// forward/backward passes, and the two optimizers the pipeline needs.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ganguards::nn {

class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w, float fill = 0.0f);

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    /// Elements per sample.
    std::size_t stride() const { return static_cast<std::size_t>(c_) * h_ * w_; }
    std::size_t size() const { return data_.size(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }
    float* sample(int i) { return data_.data() + i * stride(); }
    const float* sample(int i) const { return data_.data() + i * stride(); }

    float& at(int n, int c, int y, int x) { return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x]; }
    float at(int n, int c, int y, int x) const { return data_[((static_cast<std::size_t>(n) * c_ + c) * h_ + y) * w_ + x]; }

    /// Same storage, new per-sample shape; element count must match.
    Tensor reshaped(int c, int h, int w) const&;
    Tensor reshaped(int c, int h, int w) &&;
    /// Copy of samples [first, first + count).
    Tensor slice(int first, int count) const;
    bool same_shape(const Tensor& other) const;

private:
    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<float> data_;
};

/// Stacks batches along the sample axis. All inputs share per-sample shape.
Tensor concat(std::span<const Tensor* const> parts);

struct Param {
    std::vector<float> value;
    std::vector<float> grad;

    explicit Param(std::size_t count = 0) : value(count, 0.0f), grad(count, 0.0f) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

/// A differentiable stage. `infer` is const and cache-free (safe for
/// concurrent readers); `forward` stores whatever `backward` needs.
class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor infer(const Tensor& x) const = 0;
    virtual Tensor forward(const Tensor& x) = 0;
    /// Accumulates parameter gradients, returns d(loss)/d(input).
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual std::vector<Param*> params() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual std::string kind() const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

class Linear final : public Layer {
public:
    Linear(int in, int out, std::mt19937_64& rng, float gain = 1.41421356f);
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    LayerPtr clone() const override { return std::make_unique<Linear>(*this); }
    std::string kind() const override { return "linear"; }

private:
    int in_, out_;
    Param weight_;  // out x in, row-major
    Param bias_;
    Tensor input_;
};

class Conv2d final : public Layer {
public:
    Conv2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng, float gain = 1.41421356f);
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    LayerPtr clone() const override { return std::make_unique<Conv2d>(*this); }
    std::string kind() const override { return "conv2d"; }

private:
    int in_, out_, kernel_, stride_, pad_;
    Param weight_;  // out x (in * k * k)
    Param bias_;
    Tensor input_;
};

/// Transposed convolution (the adjoint of Conv2d with the same geometry).
class ConvTranspose2d final : public Layer {
public:
    ConvTranspose2d(int in, int out, int kernel, int stride, int pad, std::mt19937_64& rng,
                    float gain = 1.41421356f);
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    LayerPtr clone() const override { return std::make_unique<ConvTranspose2d>(*this); }
    std::string kind() const override { return "conv_transpose2d"; }

private:
    int in_, out_, kernel_, stride_, pad_;
    Param weight_;  // in x (out * k * k)
    Param bias_;
    Tensor input_;
};

class ReLU final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<ReLU>(*this); }
    std::string kind() const override { return "relu"; }

private:
    Tensor input_;
};

class LeakyReLU final : public Layer {
public:
    explicit LeakyReLU(float slope = 0.2f) : slope_(slope) {}
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<LeakyReLU>(*this); }
    std::string kind() const override { return "leaky_relu"; }

private:
    float slope_;
    Tensor input_;
};

class Tanh final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<Tanh>(*this); }
    std::string kind() const override { return "tanh"; }

private:
    Tensor output_;
};

class Reshape final : public Layer {
public:
    Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<Reshape>(*this); }
    std::string kind() const override { return "reshape"; }

private:
    int c_, h_, w_;
    int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

class UpsampleNearest2x final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<UpsampleNearest2x>(*this); }
    std::string kind() const override { return "upsample2x"; }
};

class AvgPool2x final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<AvgPool2x>(*this); }
    std::string kind() const override { return "avgpool2x"; }
};

/// Normalizes each pixel's channel vector to unit RMS.
class PixelNorm final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<PixelNorm>(*this); }
    std::string kind() const override { return "pixel_norm"; }

private:
    Tensor input_;
};

/// Appends one channel holding the mean feature standard deviation over
/// contiguous groups of `group` samples (the batch size must divide evenly).
class MinibatchStdDev final : public Layer {
public:
    explicit MinibatchStdDev(int group = 4) : group_(group) {}
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<MinibatchStdDev>(*this); }
    std::string kind() const override { return "minibatch_stddev"; }

private:
    int group_size(int n) const;

    int group_;
    Tensor input_;
};

/// Per-sample, per-channel standardization (no affine parameters).
class InstanceNorm final : public Layer {
public:
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    LayerPtr clone() const override { return std::make_unique<InstanceNorm>(*this); }
    std::string kind() const override { return "instance_norm"; }

private:
    Tensor output_;
    std::vector<float> inv_std_;
};

class Sequential;

/// y = x + body(x)
class Residual final : public Layer {
public:
    explicit Residual(std::unique_ptr<Sequential> body);
    Residual(const Residual& other);
    ~Residual() override;
    Tensor infer(const Tensor& x) const override;
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override;
    LayerPtr clone() const override { return std::make_unique<Residual>(*this); }
    std::string kind() const override { return "residual"; }

private:
    std::unique_ptr<Sequential> body_;
};

class Sequential {
public:
    Sequential() = default;
    Sequential(const Sequential& other);
    Sequential& operator=(const Sequential& other);
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    Sequential& add(LayerPtr layer);
    template <typename L, typename... Args>
    Sequential& emplace(Args&&... args) {
        return add(std::make_unique<L>(std::forward<Args>(args)...));
    }

    std::size_t depth() const { return layers_.size(); }
    /// Runs layers [0, upto) without caching.
    Tensor infer(const Tensor& x, std::size_t upto) const;
    Tensor infer(const Tensor& x) const { return infer(x, layers_.size()); }
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& grad_out);

    std::vector<Param*> params();
    void zero_grad();
    std::size_t parameter_count() const;

    /// Flat copy of every parameter value in layer order.
    std::vector<float> weights() const;
    void set_weights(std::span<const float> flat);

private:
    std::vector<LayerPtr> layers_;
};

class Adam {
public:
    Adam(float lr, float beta1, float beta2, float eps = 1e-8f) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(std::span<Param* const> params);

private:
    float lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

class Sgd {
public:
    Sgd(float lr, float momentum, float weight_decay = 0.0f) : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}
    void step(std::span<Param* const> params);

private:
    float lr_, momentum_, weight_decay_;
    std::vector<std::vector<float>> velocity_;
};

/// Mean binary cross-entropy on logits; writes d(loss)/d(logit) into `grad`.
double bce_with_logits(const Tensor& logits, std::span<const float> targets, Tensor& grad);

/// Numerically stable log(1 + exp(x)).
double softplus(double x);

}  // namespace ganguards::nn
