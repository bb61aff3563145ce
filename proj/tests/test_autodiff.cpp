#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "bgdepth/autodiff.hpp"
#include "bgdepth/rng.hpp"
#include "bgdepth/tensor.hpp"

using namespace bgdepth;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Independent reference: six nested loops straight from the definition of a
// strided, zero-padded cross-correlation.
Tensor conv3d_reference(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const std::int64_t N = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::int64_t F = ws[0], KD = ws[2], KH = ws[3], KW = ws[4];
    const std::int64_t OD = (D + 2 * pad - KD) / stride + 1;
    const std::int64_t OH = (H + 2 * pad - KH) / stride + 1;
    const std::int64_t OW = (W + 2 * pad - KW) / stride + 1;
    Tensor out({N, F, OD, OH, OW});
    auto xat = [&](std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h, std::int64_t ww) {
        if (d < 0 || d >= D || h < 0 || h >= H || ww < 0 || ww >= W) return 0.0;
        return x.data()[(((n * C + c) * D + d) * H + h) * W + ww];
    };
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t f = 0; f < F; ++f)
            for (std::int64_t od = 0; od < OD; ++od)
                for (std::int64_t oh = 0; oh < OH; ++oh)
                    for (std::int64_t ow = 0; ow < OW; ++ow) {
                        double acc = b.data()[f];
                        for (std::int64_t c = 0; c < C; ++c)
                            for (std::int64_t kd = 0; kd < KD; ++kd)
                                for (std::int64_t kh = 0; kh < KH; ++kh)
                                    for (std::int64_t kw = 0; kw < KW; ++kw)
                                        acc += w.data()[(((f * C + c) * KD + kd) * KH + kh) * KW + kw] *
                                               xat(n, c, od * stride - pad + kd, oh * stride - pad + kh,
                                                   ow * stride - pad + kw);
                        out.data()[(((n * F + f) * OD + od) * OH + oh) * OW + ow] = acc;
                    }
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
    return acc;
}

}  // namespace

TEST_CASE("conv3d of all-ones by an all-ones 5^3 kernel has 27 at the center") {
    Tensor x({1, 1, 3, 3, 3}, 1.0);
    Tensor w({1, 1, 5, 5, 5}, 1.0);
    Tensor b({1}, 0.0);
    Tensor y = conv3d(x, w, b, 1, 2);
    REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 3, 3, 3});
    CHECK(y.data()[(1 * 3 + 1) * 3 + 1] == doctest::Approx(27.0).epsilon(1e-15));
}

TEST_CASE("conv3d with a centered delta kernel is the identity") {
    Rng rng(1);
    Tensor x = random_tensor({1, 1, 4, 5, 6}, rng);
    Tensor w({1, 1, 5, 5, 5}, 0.0);
    w.data()[(2 * 5 + 2) * 5 + 2] = 1.0;
    Tensor b({1}, 0.0);
    Tensor y = conv3d(x, w, b, 1, 2);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-15));
}

TEST_CASE("conv3d matches the brute-force oracle and finite differences") {
    Rng rng(2);
    Tensor x = random_tensor({2, 3, 4, 4, 3}, rng);
    Tensor w = random_tensor({2, 3, 3, 3, 3}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor y = conv3d(x, w, b, 1, 1);
    Tensor ref = conv3d_reference(x, w, b, 1, 1);
    REQUIRE(y.shape() == ref.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i)
        REQUIRE(std::abs(y.data()[i] - ref.data()[i]) <= 1e-12);

    // Small case for the gradient check.
    Tensor x2 = random_tensor({1, 2, 3, 3, 3}, rng);
    Tensor w2 = random_tensor({2, 2, 3, 3, 3}, rng);
    Tensor b2 = random_tensor({2}, rng);
    Tensor t2 = random_tensor({1, 2, 3, 3, 3}, rng);
    for (Tensor* t : {&x2, &w2, &b2}) t->set_requires_grad(true);
    std::vector<Tensor> inputs{x2, w2, b2};
    const double err = grad_check([&] { return mse(conv3d(x2, w2, b2, 1, 1), t2); },
                                  std::span<Tensor>(inputs), 1e-5);
    CHECK(err <= 1e-6);
}

TEST_CASE("conv3d stride-2 matches the oracle") {
    Rng rng(3);
    Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 4, 4, 4}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y = conv3d(x, w, b, 2, 1);
    Tensor ref = conv3d_reference(x, w, b, 2, 1);
    REQUIRE(y.shape() == ref.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(std::abs(y.data()[i] - ref.data()[i]) <= 1e-12);
}

TEST_CASE("conv3d rejects non-integer output extents") {
    Tensor x({1, 1, 5, 5, 5});
    Tensor w({1, 1, 2, 2, 2});
    Tensor b({1});
    CHECK_THROWS_AS(conv3d(x, w, b, 2, 0), std::invalid_argument);
}

TEST_CASE("conv2d basics: ones kernel center and delta identity") {
    Tensor x({1, 1, 3, 3}, 1.0);
    Tensor w({1, 1, 3, 3}, 1.0);
    Tensor b({1}, 0.0);
    Tensor y = conv2d(x, w, b, 1, 1);
    CHECK(y.data()[1 * 3 + 1] == doctest::Approx(9.0));

    Rng rng(4);
    Tensor x2 = random_tensor({1, 2, 5, 4}, rng);
    Tensor wd({2, 2, 3, 3}, 0.0);
    wd.data()[((0 * 2 + 0) * 3 + 1) * 3 + 1] = 1.0;
    wd.data()[((1 * 2 + 1) * 3 + 1) * 3 + 1] = 1.0;
    Tensor y2 = conv2d(x2, wd, b.numel() == 2 ? b : Tensor({2}, 0.0), 1, 1);
    for (std::int64_t i = 0; i < x2.numel(); ++i)
        CHECK(y2.data()[i] == doctest::Approx(x2.data()[i]).epsilon(1e-15));
}

TEST_CASE("conv2d gradient check") {
    Rng rng(5);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor t = random_tensor({1, 3, 4, 4}, rng);
    for (Tensor* q : {&x, &w, &b}) q->set_requires_grad(true);
    std::vector<Tensor> inputs{x, w, b};
    CHECK(grad_check([&] { return mse(conv2d(x, w, b, 1, 1), t); }, std::span<Tensor>(inputs)) <= 1e-6);
}

TEST_CASE("conv_transpose3d doubles extents under the (4,2,1) recipe") {
    Rng rng(6);
    Tensor x = random_tensor({1, 3, 4, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 4, 4, 4}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor y = conv_transpose3d(x, w, b, 2, 1);
    CHECK(y.shape() == std::vector<std::int64_t>{1, 2, 8, 8, 8});
}

TEST_CASE("conv3d / conv_transpose3d adjoint identity") {
    Rng rng(7);
    for (int iter = 0; iter < 5; ++iter) {
        Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
        Tensor w = random_tensor({3, 2, 4, 4, 4}, rng);
        Tensor zerob3({3}, 0.0), zerob2({2}, 0.0);
        Tensor cx = conv3d(x, w, zerob3, 2, 1);  // (1,3,2,2,2)
        Tensor y = random_tensor({1, 3, 2, 2, 2}, rng);
        Tensor cty = conv_transpose3d(y, w, zerob2, 2, 1);  // (1,2,4,4,4)
        const double lhs = dot(cx, y);
        const double rhs = dot(x, cty);
        REQUIRE(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("conv_transpose3d gradient check") {
    Rng rng(8);
    Tensor x = random_tensor({1, 2, 2, 2, 2}, rng);
    Tensor w = random_tensor({2, 2, 4, 4, 4}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor t = random_tensor({1, 2, 4, 4, 4}, rng);
    for (Tensor* q : {&x, &w, &b}) q->set_requires_grad(true);
    std::vector<Tensor> inputs{x, w, b};
    CHECK(grad_check([&] { return mse(conv_transpose3d(x, w, b, 2, 1), t); }, std::span<Tensor>(inputs)) <=
          1e-6);
}

TEST_CASE("conv_transpose2d gradient check and shape doubling") {
    Rng rng(9);
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Tensor w = random_tensor({2, 1, 4, 4}, rng);
    Tensor b = random_tensor({1}, rng);
    Tensor y = conv_transpose2d(x, w, b, 2, 1);
    CHECK(y.shape() == std::vector<std::int64_t>{1, 1, 6, 6});
    Tensor t = random_tensor({1, 1, 6, 6}, rng);
    for (Tensor* q : {&x, &w, &b}) q->set_requires_grad(true);
    std::vector<Tensor> inputs{x, w, b};
    CHECK(grad_check([&] { return mse(conv_transpose2d(x, w, b, 2, 1), t); }, std::span<Tensor>(inputs)) <=
          1e-6);
}

TEST_CASE("maxpool3d picks block maxima and routes gradient to the first max") {
    // A 2x2x2 block flattened as [1,5,3,2,...]: the maximum 5 sits at flat
    // index 1 and must receive the whole gradient.
    Tensor x({1, 1, 2, 2, 2}, 0.0);
    const double vals[8] = {1, 5, 3, 2, 4, 0, 2, 2};
    for (int i = 0; i < 8; ++i) x.data()[i] = vals[i];
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = maxpool3d(x, 2);
    REQUIRE(y.numel() == 1);
    CHECK(y.data()[0] == 5.0);
    Tensor s = sum(y);
    tape.backward(s);
    for (int i = 0; i < 8; ++i) CHECK(x.grad()[i] == (i == 1 ? 1.0 : 0.0));
}

TEST_CASE("maxpool on a constant field routes gradient to the first index of each window") {
    Tensor x({1, 1, 2, 2, 2}, 3.14);
    x.set_requires_grad(true);
    Tape tape;
    Tensor s = sum(maxpool3d(x, 2));
    tape.backward(s);
    CHECK(x.grad()[0] == 1.0);
    for (int i = 1; i < 8; ++i) CHECK(x.grad()[i] == 0.0);
}

TEST_CASE("maxpool of a strictly increasing ramp returns each block's last corner") {
    Tensor x({1, 1, 2, 4, 4}, 0.0);
    for (int i = 0; i < 32; ++i) x.data()[i] = i;
    Tensor y = maxpool3d(x, 2);
    REQUIRE(y.shape() == std::vector<std::int64_t>{1, 1, 1, 2, 2});
    // Block (0,0): indices d in {0,1}, h in {0,1}, w in {0,1}: max at (1,1,1) = 21.
    CHECK(y.data()[0] == 21.0);
    CHECK(y.data()[1] == 23.0);
    CHECK(y.data()[2] == 29.0);
    CHECK(y.data()[3] == 31.0);
}

TEST_CASE("maxpool rejects odd extents") {
    Tensor x({1, 1, 3, 4, 4});
    CHECK_THROWS_AS(maxpool3d(x, 2), std::invalid_argument);
}

TEST_CASE("maxpool gradient check on distinct values") {
    Rng rng(10);
    Tensor x = random_tensor({1, 2, 4, 4}, rng);
    Tensor t = random_tensor({1, 2, 2, 2}, rng);
    x.set_requires_grad(true);
    std::vector<Tensor> inputs{x};
    CHECK(grad_check([&] { return mse(maxpool2d(x, 2), t); }, std::span<Tensor>(inputs)) <= 1e-6);
}

TEST_CASE("batchnorm training output has zero mean, unit variance per channel") {
    Rng rng(11);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor gamma({3}, 1.0), beta({3}, 0.0), rm({3}, 0.0), rv({3}, 1.0);
    Tensor y = batchnorm(x, gamma, beta, rm, rv, {});
    const std::size_t plane = 16;
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < plane; ++i) mean += y.data()[(n * 3 + c) * plane + i];
        mean /= 32.0;
        for (int n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = y.data()[(n * 3 + c) * plane + i] - mean;
                var += d * d;
            }
        var /= 32.0;
        CHECK(std::abs(mean) <= 1e-9);
        CHECK(std::abs(var - 1.0) <= 1e-4);  // eps shifts variance slightly below 1
    }
}

TEST_CASE("batchnorm eval mode with unit running stats is the identity") {
    Rng rng(12);
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Tensor gamma({2}, 1.0), beta({2}, 0.0), rm({2}, 0.0), rv({2}, 1.0);
    BatchNormOpts opts;
    opts.training = false;
    opts.eps = 0.0;
    Tensor y = batchnorm(x, gamma, beta, rm, rv, opts);
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("batchnorm rejects degenerate training batches") {
    Tensor x({1, 2, 1, 1, 1});
    Tensor gamma({2}, 1.0), beta({2}, 0.0), rm({2}, 0.0), rv({2}, 1.0);
    CHECK_THROWS_AS(batchnorm(x, gamma, beta, rm, rv, {}), std::invalid_argument);
}

TEST_CASE("batchnorm gradient check for x, gamma, beta") {
    Rng rng(13);
    Tensor x = random_tensor({2, 2, 3, 3}, rng);
    Tensor gamma = random_tensor({2}, rng, 0.5, 1.5);
    Tensor beta = random_tensor({2}, rng);
    Tensor rm({2}, 0.0), rv({2}, 1.0);
    Tensor t = random_tensor({2, 2, 3, 3}, rng);
    for (Tensor* q : {&x, &gamma, &beta}) q->set_requires_grad(true);
    BatchNormOpts opts;
    opts.update_running = false;
    std::vector<Tensor> inputs{x, gamma, beta};
    CHECK(grad_check([&] { return mse(batchnorm(x, gamma, beta, rm, rv, opts), t); },
                     std::span<Tensor>(inputs)) <= 1e-5);

    BatchNormOpts eval_opts;
    eval_opts.training = false;
    std::vector<Tensor> inputs2{x, gamma, beta};
    CHECK(grad_check([&] { return mse(batchnorm(x, gamma, beta, rm, rv, eval_opts), t); },
                     std::span<Tensor>(inputs2)) <= 1e-5);
}

TEST_CASE("elementwise ops: values and gradients") {
    CHECK(sigmoid(Tensor({1}, 0.0)).data()[0] == doctest::Approx(0.5).epsilon(1e-15));
    Tensor a = Tensor::from_vector({2}, {1.0, 0.0});
    Tensor z({2}, 0.0);
    CHECK(mse(a, z).item() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(mse(a, a).item() == 0.0);

    Rng rng(14);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor t = random_tensor({2, 3, 4}, rng);
    x.set_requires_grad(true);
    std::vector<Tensor> inputs{x};
    CHECK(grad_check([&] { return mse(sigmoid(x), t); }, std::span<Tensor>(inputs)) <= 1e-6);
    std::vector<Tensor> inputs2{x};
    // Keep ReLU away from the kink: inputs are bounded off zero.
    Tensor xr = random_tensor({2, 3, 4}, rng);
    for (std::int64_t i = 0; i < xr.numel(); ++i)
        xr.data()[i] += xr.data()[i] >= 0.0 ? 0.2 : -0.2;
    xr.set_requires_grad(true);
    std::vector<Tensor> inputs3{xr};
    CHECK(grad_check([&] { return mse(relu(xr), t); }, std::span<Tensor>(inputs3)) <= 1e-6);
    std::vector<Tensor> inputs4{x};
    CHECK(grad_check([&] { return mse(add(scale(x, 1.7), t), t); }, std::span<Tensor>(inputs4)) <= 1e-6);
}

TEST_CASE("masked mse restricts the sum and the denominator") {
    Tensor pred = Tensor::from_vector({4}, {1.0, 2.0, 3.0, 4.0});
    Tensor target({4}, 0.0);
    Tensor mask = Tensor::from_vector({4}, {1.0, 0.0, 1.0, 0.0});
    CHECK(mse(pred, target, &mask).item() == doctest::Approx((1.0 + 9.0) / 2.0).epsilon(1e-15));
    Tensor empty_mask({4}, 0.0);
    CHECK_THROWS_AS(mse(pred, target, &empty_mask), std::invalid_argument);
}

TEST_CASE("concat joins along the channel axis and splits recover the inputs") {
    Rng rng(15);
    Tensor a = random_tensor({1, 2, 3, 3}, rng);
    Tensor b = random_tensor({1, 3, 3, 3}, rng);
    Tensor c = concat({a, b}, 1);
    REQUIRE(c.shape() == std::vector<std::int64_t>{1, 5, 3, 3});
    Tensor a2 = narrow(c, 1, 0, 2);
    Tensor b2 = narrow(c, 1, 2, 3);
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a2.data()[i] == a.data()[i]);
    for (std::int64_t i = 0; i < b.numel(); ++i) CHECK(b2.data()[i] == b.data()[i]);

    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor t = random_tensor({1, 5, 3, 3}, rng);
    std::vector<Tensor> inputs{a, b};
    CHECK(grad_check([&] { return mse(concat({a, b}, 1), t); }, std::span<Tensor>(inputs)) <= 1e-6);
}

TEST_CASE("channel_weighted_sum applies fixed per-channel weights") {
    Rng rng(16);
    Tensor x = random_tensor({1, 3, 4, 4}, rng);
    const double w[3] = {0.299, 0.587, 0.114};
    Tensor y = channel_weighted_sum(x, std::span<const double>(w, 3));
    for (int i = 0; i < 16; ++i) {
        const double want = w[0] * x.data()[i] + w[1] * x.data()[16 + i] + w[2] * x.data()[32 + i];
        CHECK(y.data()[i] == doctest::Approx(want).epsilon(1e-15));
    }
    x.set_requires_grad(true);
    Tensor t = random_tensor({1, 1, 4, 4}, rng);
    std::vector<Tensor> inputs{x};
    CHECK(grad_check([&] { return mse(channel_weighted_sum(x, std::span<const double>(w, 3)), t); },
                     std::span<Tensor>(inputs)) <= 1e-6);
}

TEST_CASE("backward of a plain sum yields all-ones gradient") {
    Tensor x({2, 3}, 0.5);
    x.set_requires_grad(true);
    Tape tape;
    Tensor s = sum(x);
    tape.backward(s);
    for (int i = 0; i < 6; ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("backward rejects non-scalar losses and consumed tapes") {
    Tensor x({2, 2}, 1.0);
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = relu(x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    Tensor s = sum(y);
    tape.backward(s);
    CHECK_THROWS_AS(tape.backward(s), std::logic_error);
    CHECK_THROWS_AS(relu(x), std::logic_error);  // recording onto a consumed tape
}

TEST_CASE("forward passes are bit-deterministic") {
    Rng rng(17);
    Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 3, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor y1 = conv3d(x, w, b, 1, 1);
    Tensor y2 = conv3d(x, w, b, 1, 1);
    for (std::int64_t i = 0; i < y1.numel(); ++i) REQUIRE(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("slice_grid interpolates with fixed weights and scatters gradient") {
    // Two-voxel grid along the range axis; plan reads halfway between them.
    Tensor grid({1, 1, 2, 1, 1});
    grid.data()[0] = 0.2;
    grid.data()[1] = 0.8;
    SlicePlan plan;
    plan.channels = 1;
    plan.width = 1;
    plan.height = 1;
    plan.nx = 1;
    plan.ny = 1;
    plan.nb = 2;
    plan.corner_index = {0, 1, 0, 0, 0, 0, 0, 0};
    plan.corner_weight = {0.5, 0.5, 0, 0, 0, 0, 0, 0};
    Tensor out = slice_grid(grid, plan);
    CHECK(out.data()[0] == doctest::Approx(0.5).epsilon(1e-15));

    grid.set_requires_grad(true);
    Tensor t({1, 1, 1, 1}, 0.0);
    std::vector<Tensor> inputs{grid};
    CHECK(grad_check([&] { return mse(slice_grid(grid, plan), t); }, std::span<Tensor>(inputs)) <= 1e-6);
}
