#include <doctest.h>

#include <cmath>
#include <random>

#include "ganguards/nn.hpp"

using namespace ganguards::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::mt19937_64& rng, bool avoid_zero = false) {
    Tensor t(n, c, h, w);
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (float& v : t.values()) {
        v = d(rng);
        if (avoid_zero && std::abs(v) < 0.05f) v += v < 0 ? -0.1f : 0.1f;
    }
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.data()[i]) * b.data()[i];
    return s;
}

// Loss L = <layer(x), r>. Compares backward() against central differences
// for the input and every parameter.
void check_gradients(Layer& layer, Tensor x, double tol = 2e-2) {
    std::mt19937_64 rng(99);
    const Tensor y = layer.forward(x);
    const Tensor r = random_tensor(y.n(), y.c(), y.h(), y.w(), rng);
    for (Param* p : layer.params()) p->zero_grad();
    const Tensor dx = layer.backward(r);
    REQUIRE(dx.same_shape(x));

    const float eps = 1e-2f;
    auto close = [&](double analytic, double numeric) {
        const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
        CHECK(std::abs(analytic - numeric) / scale < tol);
    };
    for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 40)) {
        const float keep = x.data()[i];
        x.data()[i] = keep + eps;
        const double up = dot(layer.infer(x), r);
        x.data()[i] = keep - eps;
        const double down = dot(layer.infer(x), r);
        x.data()[i] = keep;
        close(dx.data()[i], (up - down) / (2 * eps));
    }
    for (Param* p : layer.params()) {
        for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 25)) {
            const float keep = p->value[i];
            p->value[i] = keep + eps;
            const double up = dot(layer.infer(x), r);
            p->value[i] = keep - eps;
            const double down = dot(layer.infer(x), r);
            p->value[i] = keep;
            close(p->grad[i], (up - down) / (2 * eps));
        }
    }
}

}  // namespace

TEST_CASE("linear gradients") {
    std::mt19937_64 rng(1);
    Linear l(12, 5, rng);
    check_gradients(l, random_tensor(3, 12, 1, 1, rng));
}

TEST_CASE("conv2d gradients, strided and padded") {
    std::mt19937_64 rng(2);
    Conv2d conv(3, 4, 3, 2, 1, rng);
    check_gradients(conv, random_tensor(2, 3, 6, 6, rng));
    Conv2d conv1(2, 3, 3, 1, 1, rng);
    check_gradients(conv1, random_tensor(2, 2, 5, 5, rng));
}

TEST_CASE("transposed convolution gradients") {
    std::mt19937_64 rng(3);
    ConvTranspose2d t(4, 3, 4, 2, 1, rng);
    check_gradients(t, random_tensor(2, 4, 3, 3, rng));
}

TEST_CASE("pointwise and shape layers") {
    std::mt19937_64 rng(4);
    ReLU relu;
    check_gradients(relu, random_tensor(2, 3, 4, 4, rng, true));
    LeakyReLU leaky(0.2f);
    check_gradients(leaky, random_tensor(2, 3, 4, 4, rng, true));
    Tanh tanh_layer;
    check_gradients(tanh_layer, random_tensor(2, 3, 4, 4, rng));
    UpsampleNearest2x up;
    check_gradients(up, random_tensor(2, 2, 3, 3, rng));
    AvgPool2x pool;
    check_gradients(pool, random_tensor(2, 2, 4, 4, rng));
    Reshape reshape(18, 1, 1);
    check_gradients(reshape, random_tensor(2, 2, 3, 3, rng));
}

TEST_CASE("normalization layers") {
    std::mt19937_64 rng(5);
    PixelNorm pn;
    check_gradients(pn, random_tensor(2, 4, 3, 3, rng));
    InstanceNorm in;
    check_gradients(in, random_tensor(2, 3, 4, 4, rng));
}

TEST_CASE("minibatch stddev") {
    std::mt19937_64 rng(6);
    MinibatchStdDev mb(4);
    Tensor x = random_tensor(8, 3, 2, 2, rng);
    const Tensor y = mb.infer(x);
    CHECK(y.c() == 4);
    // Group 0 holds samples 0..3; its statistic is the mean over features of
    // the per-feature population standard deviation.
    double expected = 0;
    for (int f = 0; f < 12; ++f) {
        double mu = 0, var = 0;
        for (int s = 0; s < 4; ++s) mu += x.sample(s)[f];
        mu /= 4;
        for (int s = 0; s < 4; ++s) var += (x.sample(s)[f] - mu) * (x.sample(s)[f] - mu);
        expected += std::sqrt(var / 4 + 1e-8);
    }
    expected /= 12;
    CHECK(y.at(0, 3, 0, 0) == doctest::Approx(expected).epsilon(1e-5));
    CHECK(y.at(3, 3, 1, 1) == doctest::Approx(expected).epsilon(1e-5));
    CHECK(y.at(5, 3, 0, 0) != doctest::Approx(expected).epsilon(1e-5));
    check_gradients(mb, x);
    Tensor odd = random_tensor(6, 3, 2, 2, rng);
    CHECK_THROWS(mb.infer(odd));
}

TEST_CASE("residual block gradients") {
    std::mt19937_64 rng(7);
    auto body = std::make_unique<Sequential>();
    body->emplace<Conv2d>(2, 2, 3, 1, 1, rng);
    body->emplace<Tanh>();
    Residual res(std::move(body));
    check_gradients(res, random_tensor(2, 2, 4, 4, rng));
}

TEST_CASE("sequential weights round trip and parameter count") {
    std::mt19937_64 rng(8);
    Sequential s;
    s.emplace<Linear>(4, 3, rng).emplace<ReLU>().emplace<Linear>(3, 2, rng);
    CHECK(s.parameter_count() == 4 * 3 + 3 + 3 * 2 + 2);
    auto w = s.weights();
    Sequential copy = s;
    for (float& v : w) v *= 2;
    s.set_weights(w);
    CHECK(s.weights() == w);
    CHECK(copy.weights() != w);
    CHECK_THROWS(s.set_weights(std::vector<float>(3)));
}

TEST_CASE("bce with logits matches closed form") {
    Tensor logits(2, 1, 1, 1);
    logits.data()[0] = 0.0f;
    logits.data()[1] = 2.0f;
    const std::vector<float> targets{1.0f, 0.0f};
    Tensor grad;
    const double loss = bce_with_logits(logits, targets, grad);
    CHECK(loss == doctest::Approx((std::log(2.0) + softplus(2.0)) / 2));
    CHECK(grad.data()[0] == doctest::Approx((0.5 - 1.0) / 2));
    CHECK(grad.data()[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0)) / 2));
    CHECK(softplus(1000.0) == doctest::Approx(1000.0));
    CHECK(softplus(-1000.0) >= 0.0);
}

TEST_CASE("adam decreases a quadratic") {
    Param p(1);
    p.value[0] = 3.0f;
    Adam opt(0.1f, 0.9f, 0.999f);
    Param* ps[] = {&p};
    for (int i = 0; i < 200; ++i) {
        p.grad[0] = 2 * p.value[0];
        opt.step(ps);
    }
    CHECK(std::abs(p.value[0]) < 0.1f);
}
