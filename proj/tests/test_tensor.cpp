#include "ensel/tensor.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace ensel;
using testutil::error_code;
using testutil::random_tensor;

namespace {

// Direct quadruple loop; accumulation starts from the bias and walks input
// channel, kernel row, kernel column.
Tensor conv_oracle(const Tensor& in, const Tensor& k, const Tensor& b, int stride, int pad) {
    const int C = static_cast<int>(in.dim(0)), H = static_cast<int>(in.dim(1)), W = static_cast<int>(in.dim(2));
    const int K = static_cast<int>(k.dim(0)), kh = static_cast<int>(k.dim(2)), kw = static_cast<int>(k.dim(3));
    const int oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
    Tensor out({static_cast<std::size_t>(K), static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
    for (int f = 0; f < K; ++f)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = b[f];
                for (int c = 0; c < C; ++c)
                    for (int i = 0; i < kh; ++i)
                        for (int j = 0; j < kw; ++j) {
                            const int iy = y * stride + i - pad, ix = x * stride + j - pad;
                            if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                            s += k[((f * C + c) * kh + i) * kw + j] * in.at(c, iy, ix);
                        }
                out.at(f, y, x) = s;
            }
    return out;
}

}  // namespace

TEST_CASE("tensor construction and invariants") {
    Tensor t({2, 3, 4}, 1.5);
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    CHECK(t.all_finite());
    t[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    CHECK(shape_string({2, 3, 4}) == "[2x3x4]");
    CHECK(error_code([] { Tensor({2, 2}, std::vector<double>{1, 2, 3}); }) == Errc::invalid_shape);
}

TEST_CASE("conv2d identity kernel reproduces the input") {
    const auto in = random_tensor({1, 4, 5}, 3);
    const Tensor k({1, 1, 1, 1}, 1.0), b({1}, 0.0);
    CHECK(conv2d(in, k, b, 1, 0) == in);
}

TEST_CASE("conv2d all-ones 3x3 kernel on a constant image") {
    const Tensor in({1, 3, 3}, 2.0), k({1, 1, 3, 3}, 1.0), b({1}, 0.0);
    const auto out = conv2d(in, k, b, 1, 0);
    REQUIRE(out.shape() == Shape{1, 1, 1});
    CHECK(out[0] == 18.0);
}

TEST_CASE("conv2d matches the nested-loop oracle exactly") {
    const auto in = random_tensor({2, 5, 5}, 11);
    const auto k = random_tensor({3, 2, 3, 3}, 12);
    const auto b = random_tensor({3}, 13);
    for (int pad : {0, 1, 2})
        for (int stride : {1, 2}) {
            CAPTURE(pad);
            CAPTURE(stride);
            const auto out = conv2d(in, k, b, stride, pad);
            const auto oracle = conv_oracle(in, k, b, stride, pad);
            REQUIRE(out.shape() == oracle.shape());
            for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == oracle[i]);
        }
}

TEST_CASE("conv2d output size follows the floor formula") {
    const auto out = conv2d(Tensor({1, 7, 6}), Tensor({2, 1, 3, 2}), Tensor({2}), 2, 1);
    CHECK(out.shape() == Shape{2, 4, 4});
}

TEST_CASE("conv2d shape errors") {
    CHECK(error_code([] { conv2d(Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), 1, 0); }) == Errc::invalid_shape);
    CHECK(error_code([] { conv2d(Tensor({1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1}), 1, 0); }) == Errc::invalid_shape);
    CHECK(error_code([] { conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({2}), 1, 0); }) == Errc::invalid_shape);
    CHECK(error_code([] { conv2d(Tensor({1, 4, 4}), Tensor({1, 1, 3, 3}), Tensor({1}), 0, 0); }).has_value());
}

TEST_CASE("maxpool2 picks the window maximum") {
    const Tensor in({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    const auto r = maxpool2(in);
    CHECK(r.output.shape() == Shape{1, 1, 1});
    CHECK(r.output[0] == 4.0);
    CHECK(r.argmax[0] == 3u);  // (1,1)
}

TEST_CASE("maxpool2 ties resolve to the first element in row-major order") {
    const auto r = maxpool2(Tensor({2, 4, 4}, 7.0));
    for (std::size_t i = 0; i < r.output.size(); ++i) CHECK(r.output[i] == 7.0);
    CHECK(r.argmax[0] == 0u);
    CHECK(r.argmax[1] == 2u);
    CHECK(r.argmax[2] == 8u);
}

TEST_CASE("maxpool2 matches a brute-force window scan") {
    const auto in = random_tensor({4, 6, 6}, 21);
    const auto r = maxpool2(in);
    REQUIRE(r.output.shape() == Shape{4, 3, 3});
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 3; ++x) {
                double best = -1e300;
                std::size_t at = 0;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        const double v = in.at(c, 2 * y + dy, 2 * x + dx);
                        if (v > best) {
                            best = v;
                            at = (2 * y + dy) * 6 + 2 * x + dx;
                        }
                    }
                CHECK(r.output.at(c, y, x) == best);
                CHECK(r.argmax[(c * 3 + y) * 3 + x] == at);
            }
}

TEST_CASE("maxpool2 odd sizes floor and small inputs fail") {
    CHECK(maxpool2(Tensor({1, 5, 3})).output.shape() == Shape{1, 2, 1});
    CHECK(error_code([] { maxpool2(Tensor({1, 1, 4})); }) == Errc::invalid_shape);
}

TEST_CASE("maxpool2_backward routes gradients to the winners") {
    const auto in = random_tensor({2, 4, 4}, 5);
    const auto r = maxpool2(in);
    const Tensor g(r.output.shape(), 1.0);
    const auto gi = maxpool2_backward(in.shape(), r.argmax, g);
    double total = 0.0;
    for (auto v : gi.data()) total += v;
    CHECK(total == doctest::Approx(static_cast<double>(r.output.size())));
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 4; ++i) CHECK(gi[c * 16 + r.argmax[c * 4 + i]] == 1.0);
}

TEST_CASE("dense identity and bias-only cases") {
    const auto x = random_tensor({4}, 8);
    Tensor eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    CHECK(dense(x, eye, Tensor({4})) == x);
    const Tensor b({3}, std::vector<double>{0.5, -1.0, 2.0});
    CHECK(dense(x, Tensor({3, 4}), b) == b);
}

TEST_CASE("dense matches the matvec oracle") {
    const auto x = random_tensor({4}, 31);
    const auto w = random_tensor({3, 4}, 32);
    const auto b = random_tensor({3}, 33);
    const auto out = dense(x, w, b);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = b[i];
        for (std::size_t j = 0; j < 4; ++j) s += w[i * 4 + j] * x[j];
        CHECK(out[i] == s);
    }
    CHECK(error_code([&] { dense(Tensor({5}), w, b); }) == Errc::invalid_shape);
}

TEST_CASE("dense_backward linear case") {
    const auto x = random_tensor({4}, 41);
    const auto w = random_tensor({3, 4}, 42);
    const Tensor e1({3}, std::vector<double>{0, 1, 0});
    const auto g = dense_backward(x, w, e1);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(g.weights[0 * 4 + j] == 0.0);
        CHECK(g.weights[1 * 4 + j] == x[j]);
        CHECK(g.weights[2 * 4 + j] == 0.0);
        CHECK(g.input[j] == w[4 + j]);
    }
    CHECK(g.bias == e1);
}

TEST_CASE("softmax examples") {
    const double zero[] = {0.0, 0.0};
    auto p = softmax(zero);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);

    const double big[] = {1000.0, 1000.0, 1000.0};
    p = softmax(big);
    for (double v : p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    const double z[] = {1.0, 2.0, 3.0};
    p = softmax(z);
    long double denom = 0.0L;
    for (double v : z) denom += std::exp(static_cast<long double>(v));
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(std::abs(static_cast<long double>(p[i]) - std::exp(static_cast<long double>(z[i])) / denom) < 1e-12L);
}

TEST_CASE("softmax rejects non-finite logits") {
    const double bad[] = {0.0, std::numeric_limits<double>::infinity()};
    CHECK(error_code([&] { softmax(bad); }) == Errc::numeric);
    const double nan[] = {std::numeric_limits<double>::quiet_NaN()};
    CHECK(error_code([&] { softmax(nan); }) == Errc::numeric);
}

TEST_CASE("softmax always yields a valid distribution") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(1 + static_cast<std::size_t>(rng.uniform_int(0, 9)));
        for (auto& v : z) v = rng.uniform(-50.0, 50.0);
        const auto p = softmax(z);
        double s = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("relu and global average pool with their gradients") {
    const Tensor x({1, 1, 4}, std::vector<double>{-1.0, 0.0, 2.0, -3.0});
    CHECK(relu(x).values() == std::vector<double>{0.0, 0.0, 2.0, 0.0});
    const auto gr = relu_backward(x, Tensor({1, 1, 4}, 1.0));
    CHECK(gr.values() == std::vector<double>{0.0, 0.0, 1.0, 0.0});

    const Tensor a({2, 2, 2}, std::vector<double>{1, 2, 3, 4, 10, 10, 10, 10});
    const auto g = global_avg_pool(a);
    CHECK(g.values() == std::vector<double>{2.5, 10.0});
    const auto gb = global_avg_pool_backward(a.shape(), Tensor({2}, std::vector<double>{4.0, 8.0}));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(gb[i] == 1.0);
        CHECK(gb[4 + i] == 2.0);
    }
}

TEST_CASE("conv2d_backward matches finite differences on a small case") {
    const auto in = random_tensor({2, 4, 4}, 51);
    const auto k = random_tensor({2, 2, 3, 3}, 52);
    const Tensor b({2}, 0.1);
    const auto go = random_tensor({2, 4, 4}, 53);
    const auto g = conv2d_backward(in, k, go, 1, 1);
    auto objective = [&](const Tensor& i, const Tensor& kk) {
        const auto o = conv2d(i, kk, b, 1, 1);
        double s = 0.0;
        for (std::size_t n = 0; n < o.size(); ++n) s += o[n] * go[n];
        return s;
    };
    const double eps = 1e-6;
    for (std::size_t idx : {0u, 7u, 19u, 31u}) {
        auto plus = in, minus = in;
        plus[idx] += eps;
        minus[idx] -= eps;
        CHECK(g.input[idx] == doctest::Approx((objective(plus, k) - objective(minus, k)) / (2 * eps)).epsilon(1e-6));
    }
    for (std::size_t idx : {0u, 5u, 17u, 35u}) {
        auto plus = k, minus = k;
        plus[idx] += eps;
        minus[idx] -= eps;
        CHECK(g.kernels[idx] == doctest::Approx((objective(in, plus) - objective(in, minus)) / (2 * eps)).epsilon(1e-6));
    }
    const auto skipped = conv2d_backward(in, k, go, 1, 1, false);
    CHECK(skipped.input.empty());
    CHECK(skipped.kernels == g.kernels);
}
