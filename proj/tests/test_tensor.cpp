#include <doctest.h>

#include <cmath>

#include "coda/tensor.hpp"
#include "testutil.hpp"

using namespace coda;
using testutil::finite_diff;
using testutil::grad_close;
using testutil::random_tensor;

namespace {

// Independent convolution oracle: materializes the padded input and runs the
// full seven-loop nest with the same inner summation order (input channel,
// kernel row, kernel column) as the implementation.
Tensor conv_oracle(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   int stride, int pad) {
    const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int co = weight.dim(0), k = weight.dim(2);
    const int ph = h + 2 * pad, pw = w + 2 * pad;
    Tensor padded = Tensor::zeros({ci, ph, pw});
    for (int c = 0; c < ci; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                padded.at3(c, y + pad, x + pad) = input.at3(c, y, x);
    const int oh = (ph - k) / stride + 1;
    const int ow = (pw - k) / stride + 1;
    Tensor out = Tensor::zeros({co, oh, ow});
    for (int o = 0; o < co; ++o)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                float acc = bias.data.empty() ? 0.0f : bias.data[size_t(o)];
                for (int c = 0; c < ci; ++c)
                    for (int kh = 0; kh < k; ++kh)
                        for (int kw = 0; kw < k; ++kw)
                            acc += weight.at4(o, c, kh, kw) *
                                   padded.at3(c, y * stride + kh, x * stride + kw);
                out.at3(o, y, x) = acc;
            }
    return out;
}

} // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
    Tensor in = Tensor::full({1, 3, 3}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor b = Tensor::zeros({1});
    Tensor out = conv2d_fwd(in, w, b, 1, 0);
    CHECK(out.shape == std::vector<int>{1, 1, 1});
    CHECK(out.data[0] == 9.0f);
}

TEST_CASE("conv2d zero kernel yields constant bias") {
    Rng rng(7);
    Tensor in = random_tensor({2, 6, 6}, rng);
    Tensor w = Tensor::zeros({3, 2, 3, 3});
    Tensor b({3}, {0.5f, -1.25f, 2.0f});
    Tensor out = conv2d_fwd(in, w, b, 1, 1);
    for (int o = 0; o < 3; ++o)
        for (int y = 0; y < out.dim(1); ++y)
            for (int x = 0; x < out.dim(2); ++x)
                CHECK(out.at3(o, y, x) == b.data[size_t(o)]);
}

TEST_CASE("conv2d matches the naive-loop oracle bit-for-bit") {
    Rng rng(11);
    Tensor in = random_tensor({2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor got = conv2d_fwd(in, w, b, 2, 1);
    Tensor want = conv_oracle(in, w, b, 2, 1);
    REQUIRE(got.shape == want.shape);
    for (size_t i = 0; i < got.data.size(); ++i) CHECK(got.data[i] == want.data[i]);

    // A reordered summation (kernel row, kernel column, then input channel)
    // may differ by rounding, but only within 1e-5.
    Tensor reordered = Tensor::zeros(got.shape);
    for (int o = 0; o < 3; ++o)
        for (int y = 0; y < got.dim(1); ++y)
            for (int x = 0; x < got.dim(2); ++x) {
                float acc = b.data[size_t(o)];
                for (int kh = 0; kh < 3; ++kh)
                    for (int kw = 0; kw < 3; ++kw)
                        for (int c = 0; c < 2; ++c) {
                            const int iy = y * 2 - 1 + kh, ix = x * 2 - 1 + kw;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                            acc += w.at4(o, c, kh, kw) * in.at3(c, iy, ix);
                        }
                reordered.at3(o, y, x) = acc;
            }
    for (size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - reordered.data[i]) <= 1e-5f);
}

TEST_CASE("conv2d shape errors name the offending dimension") {
    Tensor in = Tensor::zeros({2, 5, 5});
    Tensor w = Tensor::zeros({3, 4, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d_fwd(in, w, Tensor::zeros({3}), 1, 0),
                         doctest::Contains("input channels"), ValidationError);
    Tensor w2 = Tensor::zeros({3, 2, 7, 7});
    CHECK_THROWS_AS(conv2d_fwd(in, w2, Tensor::zeros({3}), 1, 0), ValidationError);
}

TEST_CASE("conv2d_bwd zero upstream gradient") {
    Rng rng(3);
    Tensor in = random_tensor({2, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor go = Tensor::zeros({3, 2, 2});
    Conv2dGrads g = conv2d_bwd(in, w, 1, 0, go);
    for (float v : g.input.data) CHECK(v == 0.0f);
    for (float v : g.weight.data) CHECK(v == 0.0f);
    for (float v : g.bias.data) CHECK(v == 0.0f);
}

TEST_CASE("conv2d_bwd 1x1 kernel weight gradient is an outer product") {
    Rng rng(5);
    Tensor in = random_tensor({2, 3, 3}, rng);
    Tensor w = random_tensor({2, 2, 1, 1}, rng);
    Tensor go = random_tensor({2, 3, 3}, rng);
    Conv2dGrads g = conv2d_bwd(in, w, 1, 0, go);
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 2; ++i) {
            float want = 0.0f;
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x) want += in.at3(i, y, x) * go.at3(o, y, x);
            CHECK(g.weight.at4(o, i, 0, 0) == doctest::Approx(want).epsilon(1e-5));
        }
}

TEST_CASE("conv2d_bwd matches finite differences") {
    Rng rng(13);
    Tensor in = random_tensor({2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f);
    Tensor b = random_tensor({3}, rng);
    Tensor proj = random_tensor({3, 5, 5}, rng); // fixed projection => scalar loss
    auto loss = [&]() {
        Tensor out = conv2d_fwd(in, w, b, 1, 1);
        double s = 0.0;
        for (size_t i = 0; i < out.data.size(); ++i)
            s += double(out.data[i]) * double(proj.data[i]);
        return s;
    };
    Conv2dGrads g = conv2d_bwd(in, w, 1, 1, proj);
    for (size_t i = 0; i < in.data.size(); i += 7)
        CHECK(grad_close(g.input.data[i], finite_diff(in, i, loss)));
    for (size_t i = 0; i < w.data.size(); i += 5)
        CHECK(grad_close(g.weight.data[i], finite_diff(w, i, loss)));
    for (size_t i = 0; i < b.data.size(); ++i)
        CHECK(grad_close(g.bias.data[i], finite_diff(b, i, loss)));
}

TEST_CASE("maxpool basic window and argmax") {
    Tensor in({1, 2, 2}, {1, 2, 3, 4});
    MaxPoolOut p = maxpool_fwd(in, 2, 2, 0);
    CHECK(p.output.shape == std::vector<int>{1, 1, 1});
    CHECK(p.output.data[0] == 4.0f);
    CHECK(p.argmax[0] == 3);
}

TEST_CASE("maxpool ties route to the first element in scan order") {
    Tensor in = Tensor::full({1, 4, 4}, 2.5f);
    MaxPoolOut p = maxpool_fwd(in, 2, 2, 0);
    for (float v : p.output.data) CHECK(v == 2.5f);
    CHECK(p.argmax[0] == 0);  // top-left of the first window
    CHECK(p.argmax[1] == 2);
    Tensor go = Tensor::full({1, 2, 2}, 1.0f);
    Tensor gi = maxpool_bwd(p.argmax, go, in.shape);
    CHECK(gi.at3(0, 0, 0) == 1.0f);
    CHECK(gi.at3(0, 0, 1) == 0.0f);
    CHECK(gi.at3(0, 1, 1) == 0.0f);
}

TEST_CASE("maxpool window larger than padded input is rejected") {
    Tensor in = Tensor::zeros({1, 2, 2});
    CHECK_THROWS_AS(maxpool_fwd(in, 5, 1, 1), ValidationError);
}

TEST_CASE("maxpool gradient matches finite differences at non-tied points") {
    // Distinct values guarantee no ties.
    Tensor in = Tensor::zeros({4, 6, 6});
    Rng rng(17);
    std::vector<float> vals(in.data.size());
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = float(i) * 0.01f;
    rng.shuffle(vals);
    in.data = vals;
    Tensor proj = random_tensor({4, 3, 3}, rng);
    auto loss = [&]() {
        MaxPoolOut p = maxpool_fwd(in, 2, 2, 0);
        double s = 0.0;
        for (size_t i = 0; i < p.output.data.size(); ++i)
            s += double(p.output.data[i]) * double(proj.data[i]);
        return s;
    };
    MaxPoolOut p = maxpool_fwd(in, 2, 2, 0);
    Tensor gi = maxpool_bwd(p.argmax, proj, in.shape);
    for (size_t i = 0; i < in.data.size(); i += 5)
        CHECK(grad_close(gi.data[i], finite_diff(in, i, loss)));
}

TEST_CASE("fc identity weight passes input through") {
    Tensor x({4}, {1, -2, 3, 0.5f});
    Tensor w = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) w.at2(i, i) = 1.0f;
    Tensor y = fc_fwd(x, w, Tensor::zeros({4}));
    for (int i = 0; i < 4; ++i) CHECK(y.data[size_t(i)] == x.data[size_t(i)]);
}

TEST_CASE("fc zero weight yields bias") {
    Tensor x({3}, {1, 2, 3});
    Tensor b({2}, {0.25f, -4.0f});
    Tensor y = fc_fwd(x, Tensor::zeros({2, 3}), b);
    CHECK(y.data[0] == 0.25f);
    CHECK(y.data[1] == -4.0f);
}

TEST_CASE("fc gradients match finite differences") {
    Rng rng(19);
    Tensor x = random_tensor({8}, rng);
    Tensor w = random_tensor({4, 8}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor proj = random_tensor({4}, rng);
    auto loss = [&]() {
        Tensor y = fc_fwd(x, w, b);
        double s = 0.0;
        for (size_t i = 0; i < y.data.size(); ++i)
            s += double(y.data[i]) * double(proj.data[i]);
        return s;
    };
    FcGrads g = fc_bwd(x, w, proj);
    for (size_t i = 0; i < x.data.size(); ++i)
        CHECK(grad_close(g.input.data[i], finite_diff(x, i, loss)));
    for (size_t i = 0; i < w.data.size(); i += 3)
        CHECK(grad_close(g.weight.data[i], finite_diff(w, i, loss)));
}

TEST_CASE("batchnorm fusion: identity stats scale by 1/sqrt(1+eps)") {
    Rng rng(23);
    Tensor w = random_tensor({2, 1, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor w0 = w, b0 = b;
    BatchNormStats stats{Tensor::zeros({2}), Tensor::full({2}, 1.0f)};
    fuse_batchnorm(w, b, Tensor::full({2}, 1.0f), Tensor::zeros({2}), stats, 1e-5f);
    const float scale = 1.0f / std::sqrt(1.0f + 1e-5f);
    for (size_t i = 0; i < w.data.size(); ++i)
        CHECK(w.data[i] == doctest::Approx(w0.data[i] * scale).epsilon(1e-6));
    for (size_t i = 0; i < b.data.size(); ++i)
        CHECK(b.data[i] == doctest::Approx(b0.data[i] * scale).epsilon(1e-6));
}

TEST_CASE("batchnorm fusion: gamma=2, eps=0 doubles weights and shifts bias") {
    Tensor w = Tensor::full({1, 1, 1, 1}, 3.0f);
    Tensor b({1}, {0.5f});
    BatchNormStats stats{Tensor::zeros({1}), Tensor::full({1}, 1.0f)};
    fuse_batchnorm(w, b, Tensor::full({1}, 2.0f), Tensor::full({1}, 0.75f), stats, 0.0f);
    CHECK(w.data[0] == 6.0f);
    CHECK(b.data[0] == 2.0f * 0.5f + 0.75f);
}

TEST_CASE("batchnorm fusion equals conv followed by eval batchnorm") {
    Rng rng(29);
    Tensor in = random_tensor({2, 6, 6}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor gamma = random_tensor({3}, rng, 0.5f, 2.0f);
    Tensor beta = random_tensor({3}, rng);
    BatchNormStats stats{random_tensor({3}, rng), random_tensor({3}, rng, 0.2f, 2.0f)};
    Tensor ref = batchnorm_fwd(conv2d_fwd(in, w, b, 1, 1), gamma, beta, stats, 1e-5f);
    Tensor wf = w, bf = b;
    fuse_batchnorm(wf, bf, gamma, beta, stats, 1e-5f);
    Tensor fused = conv2d_fwd(in, wf, bf, 1, 1);
    REQUIRE(ref.shape == fused.shape);
    for (size_t i = 0; i < ref.data.size(); ++i)
        CHECK(std::abs(ref.data[i] - fused.data[i]) <= 1e-5f);
}

TEST_CASE("batchnorm gradients match finite differences") {
    Rng rng(31);
    Tensor in = random_tensor({3, 4, 4}, rng);
    Tensor gamma = random_tensor({3}, rng, 0.5f, 1.5f);
    Tensor beta = random_tensor({3}, rng);
    BatchNormStats stats{random_tensor({3}, rng), random_tensor({3}, rng, 0.5f, 2.0f)};
    Tensor proj = random_tensor({3, 4, 4}, rng);
    auto loss = [&]() {
        Tensor y = batchnorm_fwd(in, gamma, beta, stats, 1e-5f);
        double s = 0.0;
        for (size_t i = 0; i < y.data.size(); ++i)
            s += double(y.data[i]) * double(proj.data[i]);
        return s;
    };
    BatchNormGrads g = batchnorm_bwd(in, gamma, stats, 1e-5f, proj);
    for (size_t i = 0; i < in.data.size(); i += 4)
        CHECK(grad_close(g.input.data[i], finite_diff(in, i, loss)));
    for (size_t i = 0; i < gamma.data.size(); ++i)
        CHECK(grad_close(g.gamma.data[i], finite_diff(gamma, i, loss)));
    for (size_t i = 0; i < beta.data.size(); ++i)
        CHECK(grad_close(g.beta.data[i], finite_diff(beta, i, loss)));
}

TEST_CASE("softmax cross-entropy on uniform logits is ln(N)") {
    for (int n : {2, 4, 10}) {
        Tensor logits = Tensor::full({n}, 0.37f);
        SoftmaxXent r = softmax_xent(logits, 0);
        CHECK(r.loss == doctest::Approx(std::log(double(n))).epsilon(1e-6));
    }
}

TEST_CASE("softmax cross-entropy saturates to zero on dominant correct logit") {
    Tensor logits({3}, {1e6f, 0.0f, 0.0f});
    SoftmaxXent r = softmax_xent(logits, 0);
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax gradient is softmax minus one-hot, verified by differences") {
    Rng rng(37);
    Tensor logits = random_tensor({5}, rng, -2.0f, 2.0f);
    const int label = 2;
    auto loss = [&]() { return double(softmax_xent(logits, label).loss); };
    SoftmaxXent r = softmax_xent(logits, label);
    for (size_t i = 0; i < logits.data.size(); ++i)
        CHECK(grad_close(r.grad_logits.data[i], finite_diff(logits, i, loss)));
    for (size_t i = 0; i < 5; ++i)
        CHECK(r.grad_logits.data[i] ==
              doctest::Approx(r.probs[i] - (int(i) == label ? 1.0f : 0.0f)));
}

TEST_CASE("forward ops are deterministic across repeated calls") {
    Rng rng(41);
    Tensor in = random_tensor({3, 7, 7}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor a = conv2d_fwd(in, w, b, 2, 1);
    Tensor c = conv2d_fwd(in, w, b, 2, 1);
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == c.data[i]);
}

TEST_SUITE_END();
