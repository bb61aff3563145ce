#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "bgdepth/bgunet.hpp"
#include "bgdepth/rng.hpp"
#include "test_support.hpp"

using namespace bgdepth;

namespace {

BGUNetConfig small_cfg(int in_channels = 1, int depth = 1, int base = 2) {
    BGUNetConfig cfg;
    cfg.in_channels = in_channels;
    cfg.base_channels = base;
    cfg.depth = depth;
    cfg.grid = GridParams{1, 8};
    return cfg;
}

Tensor random_grid_tensor(int c, int nx, int ny, int nb, Rng& rng) {
    Tensor t({1, c, nx, ny, nb});
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform();
    return t;
}

void zero_head(BGUNet& model) {
    for (auto& item : model.params().items()) {
        if (item.name == "head.w" || item.name == "head.b") {
            for (std::int64_t i = 0; i < item.value.numel(); ++i) item.value.data()[i] = 0.0;
        }
    }
}

}  // namespace

TEST_CASE("grid extent divisibility: depth 2 accepts 16^3, depth 5 rejects it") {
    BGUNet m2(small_cfg(1, 2, 2), 1);
    CHECK_NOTHROW(m2.check_grid_extents(16, 16, 16));
    BGUNetConfig c5 = small_cfg(1, 5, 1);
    c5.grid.n_bins = 16;
    CHECK_THROWS_AS(BGUNet(c5, 1), std::invalid_argument);
    BGUNetConfig c3 = small_cfg(1, 3, 1);
    c3.grid.n_bins = 16;
    BGUNet m3(c3, 1);
    CHECK_THROWS_AS(m3.check_grid_extents(16, 16, 12), std::invalid_argument);
}

TEST_CASE("in_channels 1 vs 3 differ only in the first conv and the head") {
    BGUNet m1(small_cfg(1, 2, 4), 7);
    BGUNet m3(small_cfg(3, 2, 4), 7);
    const auto& a = m1.params().items();
    const auto& b = m3.params().items();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].name == b[i].name);
        if (a[i].name == "enc0.s1.w" || a[i].name == "head.w" || a[i].name == "head.b") {
            CHECK(a[i].value.shape() != b[i].value.shape());
        } else {
            CHECK(a[i].value.shape() == b[i].value.shape());
        }
    }
}

TEST_CASE("two builds from one seed are bit-identical") {
    BGUNet m1(small_cfg(1, 2, 4), 99);
    BGUNet m2(small_cfg(1, 2, 4), 99);
    const auto& a = m1.params().items();
    const auto& b = m2.params().items();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::int64_t j = 0; j < a[i].value.numel(); ++j)
            REQUIRE(a[i].value.data()[j] == b[i].value.data()[j]);
    BGUNet m3(small_cfg(1, 2, 4), 100);
    bool differs = false;
    for (std::size_t i = 0; i < a.size() && !differs; ++i)
        for (std::int64_t j = 0; j < a[i].value.numel(); ++j)
            if (a[i].value.data()[j] != m3.params().items()[i].value.data()[j]) {
                differs = true;
                break;
            }
    CHECK(differs);
}

TEST_CASE("forward preserves shape and stays in (0,1) across configs") {
    Rng rng(3);
    for (int depth : {1, 2, 3}) {
        for (int extent : {8, 16, 32}) {
            if (extent % (1 << depth) != 0) continue;
            BGUNetConfig cfg = small_cfg(1, depth, 2);
            cfg.grid.n_bins = extent;
            BGUNet model(cfg, 5);
            Tensor x = random_grid_tensor(1, extent, extent, extent, rng);
            // Eval mode: the contract must hold even when the bottom level
            // shrinks to a single voxel, where training-mode batch stats
            // are undefined.
            Tensor y = model.forward(x, false);
            REQUIRE(y.shape() == x.shape());
            for (std::int64_t i = 0; i < y.numel(); ++i) {
                REQUIRE(y.data()[i] > 0.0);
                REQUIRE(y.data()[i] < 1.0);
            }
        }
    }
}

TEST_CASE("zeroed head gives exactly 0.5 everywhere") {
    BGUNet model(small_cfg(1, 2, 2), 11);
    zero_head(model);
    Rng rng(4);
    Tensor x = random_grid_tensor(1, 8, 8, 8, rng);
    Tensor y = model.forward(x, false);
    for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == 0.5);
}

TEST_CASE("occupancy flag doubles the network input channels") {
    BGUNetConfig cfg = small_cfg(1, 1, 2);
    cfg.include_occupancy = true;
    BGUNet model(cfg, 2);
    CHECK(model.input_channels() == 2);
    ImageGray img(8, 8, 0.5);
    Tensor x = lift_input(img, GridParams{1, 8}, true);
    CHECK(x.dim(1) == 2);
    CHECK_NOTHROW(model.forward(x, false));
}

TEST_CASE("sliced_gray_map of a constant grid is that constant") {
    Tensor grid({1, 1, 8, 4, 4}, 0.37);
    ImageGray ref(8, 8);
    Rng rng(5);
    for (double& v : ref.data) v = rng.uniform();
    SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&ref, 1), GridParams{2, 8}, 4, 4, 8);
    Tensor map = sliced_gray_map(grid, plan);
    REQUIRE(map.shape() == std::vector<std::int64_t>{1, 1, 8, 8});
    for (std::int64_t i = 0; i < map.numel(); ++i)
        REQUIRE(map.data()[i] == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("geometry_map values stay in [0,1] and match the non-diff slice path") {
    BGUNetConfig cfg = small_cfg(1, 1, 2);
    cfg.grid = GridParams{1, 8};
    BGUNet model(cfg, 21);
    Rng rng(6);
    ImageGray ref = testsupport::random_gray(8, 8, rng);
    ImageGray map = geometry_map(model, ref);
    REQUIRE(map.width == 8);
    REQUIRE(map.height == 8);
    for (double v : map.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // Cross-check against bilateral_grid::slice on the same output values;
    // the tensor is (nb, ny, nx)-ordered, the DenseGrid (x, y, b)-ordered.
    Tensor input = lift_input(ref, cfg.grid, false);
    Tensor out = model.forward(input, false);
    DenseGrid dg(8, 8, 8);
    for (int b = 0; b < 8; ++b)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                dg.value[dg.idx(x, y, b)] = out.data()[(static_cast<std::size_t>(b) * 8 + y) * 8 + x];
    std::fill(dg.occupancy.begin(), dg.occupancy.end(), std::uint8_t{1});
    ImageGray expect = slice(dg, ref, cfg.grid);
    for (std::size_t i = 0; i < map.pixel_count(); ++i)
        REQUIRE(map.data[i] == doctest::Approx(expect.data[i]).epsilon(1e-12));
}

TEST_CASE("loss is 0 when the map equals the normalized ground truth, 0.25 a half away") {
    BGUNet model(small_cfg(1, 1, 2), 31);
    zero_head(model);  // map is exactly 0.5 everywhere
    ImageGray ref(8, 8, 0.5);
    Tensor input = lift_input(ref, GridParams{1, 8}, false);
    SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&ref, 1), GridParams{1, 8}, 8, 8, 8);

    DepthMap gt_match(8, 8);
    for (std::size_t i = 0; i < gt_match.pixel_count(); ++i) {
        gt_match.data[i] = 5.0;
        gt_match.mask[i] = 1;
    }
    CHECK(bgunet_loss(model, input, plan, gt_match, 10.0, false).item() == 0.0);

    DepthMap gt_far(8, 8);
    for (std::size_t i = 0; i < gt_far.pixel_count(); ++i) {
        gt_far.data[i] = 10.0;
        gt_far.mask[i] = 1;
    }
    CHECK(bgunet_loss(model, input, plan, gt_far, 10.0, false).item() ==
          doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("loss rejects all-invalid ground truth") {
    BGUNet model(small_cfg(1, 1, 2), 32);
    ImageGray ref(8, 8, 0.5);
    Tensor input = lift_input(ref, GridParams{1, 8}, false);
    SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&ref, 1), GridParams{1, 8}, 8, 8, 8);
    DepthMap gt(8, 8);  // mask all false
    CHECK_THROWS_AS(bgunet_loss(model, input, plan, gt, 10.0, false), std::invalid_argument);
}

TEST_CASE("head-weight gradient matches finite differences through the slice") {
    BGUNetConfig cfg = small_cfg(1, 1, 2);
    BGUNet model(cfg, 41);
    Rng rng(7);
    ImageGray ref = testsupport::random_gray(8, 8, rng);
    Tensor input = lift_input(ref, cfg.grid, false);
    SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&ref, 1), cfg.grid, 8, 8, 8);
    DepthMap gt = testsupport::random_depth(8, 8, rng, 1.0, 9.0);

    Tensor head_w;
    for (auto& item : model.params().items())
        if (item.name == "head.w") head_w = item.value;
    std::vector<Tensor> inputs{head_w};
    const double err = grad_check(
        [&] { return bgunet_loss(model, input, plan, gt, 10.0, true); }, std::span<Tensor>(inputs), 1e-5);
    CHECK(err <= 1e-5);
}

TEST_CASE("end-to-end gradient check on an 8^3 instance over all parameters") {
    BGUNetConfig cfg = small_cfg(1, 1, 2);
    BGUNet model(cfg, 43);
    Rng rng(8);
    // Zero biases sit exactly on the ReLU kink wherever the lifted grid is
    // empty; check at a generic parameter point.
    for (auto& item : model.params().items())
        if (item.name.ends_with(".b"))
            for (std::int64_t i = 0; i < item.value.numel(); ++i)
                item.value.data()[i] = rng.uniform(0.02, 0.08);
    ImageGray ref = testsupport::random_gray(8, 8, rng);
    Tensor input = lift_input(ref, cfg.grid, false);
    SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&ref, 1), cfg.grid, 8, 8, 8);
    DepthMap gt = testsupport::random_depth(8, 8, rng, 1.0, 9.0);

    std::vector<Tensor> inputs;
    for (auto& item : model.params().items())
        if (item.trainable) inputs.push_back(item.value);
    const double err = grad_check(
        [&] { return bgunet_loss(model, input, plan, gt, 10.0, true); }, std::span<Tensor>(inputs), 1e-5);
    CHECK(err <= 1e-5);
}

TEST_CASE("edge locality: perturbing targets in region A leaves region-B bin gradients untouched") {
    // Step reference: left half intensity 0.1 (bins 0/1), right half 0.9
    // (bins 6/7); the gap spans more than two bins, so the trilinear weights
    // of right-half pixels are zero in the left bins and vice versa.
    const int W = 8, H = 8, B = 8;
    ImageGray ref(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) ref.at(x, y) = x < W / 2 ? 0.1 : 0.9;
    SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&ref, 1), GridParams{1, B}, W, H, B);

    Tensor target_a({1, 1, H, W}, 0.5);
    Tensor target_b({1, 1, H, W}, 0.5);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W / 2; ++x) target_b.data()[y * W + x] = 0.9;  // perturb region A only

    auto grid_grad = [&](const Tensor& target) {
        Tensor grid({1, 1, B, H, W}, 0.3);
        grid.set_requires_grad(true);
        Tape tape;
        Tensor loss = mse(slice_grid(grid, plan), target);
        tape.backward(loss);
        return std::vector<double>(grid.grad(), grid.grad() + grid.numel());
    };
    const auto ga = grid_grad(target_a);
    const auto gb = grid_grad(target_b);

    // Region B (right-half pixels) only touches bins 6 and 7.
    bool any_b_nonzero = false;
    for (int gx = 0; gx < W; ++gx)
        for (int gy = 0; gy < H; ++gy)
            for (int bin : {6, 7}) {
                const std::size_t i = (static_cast<std::size_t>(bin) * H + gy) * W + gx;
                REQUIRE(ga[i] == gb[i]);  // bitwise equal
                if (ga[i] != 0.0) any_b_nonzero = true;
            }
    CHECK(any_b_nonzero);
    // And the perturbation must actually change region-A bin gradients.
    bool a_changed = false;
    for (int gx = 0; gx < W; ++gx)
        for (int gy = 0; gy < H; ++gy)
            for (int bin : {0, 1}) {
                const std::size_t i = (static_cast<std::size_t>(bin) * H + gy) * W + gx;
                if (ga[i] != gb[i]) a_changed = true;
            }
    CHECK(a_changed);
}

TEST_CASE("grid-space loss variant runs and hits zero on a perfect match") {
    BGUNetConfig cfg = small_cfg(1, 1, 2);
    BGUNet model(cfg, 51);
    zero_head(model);
    ImageGray ref(8, 8, 0.5);
    Tensor input = lift_input(ref, cfg.grid, false);
    SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&ref, 1), cfg.grid, 8, 8, 8);
    DepthMap gt(8, 8);
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        gt.data[i] = 5.0;
        gt.mask[i] = 1;
    }
    Tensor loss = bgunet_loss(model, input, plan, gt, 10.0, false, &ref, true);
    CHECK(loss.item() == doctest::Approx(0.0));
}

TEST_CASE("identical forward passes produce bit-identical losses") {
    BGUNetConfig cfg = small_cfg(1, 2, 2);
    cfg.grid = GridParams{2, 8};
    BGUNet model(cfg, 61);
    Rng rng(9);
    ImageGray ref = testsupport::random_gray(16, 16, rng);
    Tensor input = lift_input(ref, cfg.grid, false);
    SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&ref, 1), cfg.grid, 8, 8, 8);
    DepthMap gt = testsupport::random_depth(16, 16, rng, 1.0, 9.0);
    const double l1 = bgunet_loss(model, input, plan, gt, 10.0, false).item();
    const double l2 = bgunet_loss(model, input, plan, gt, 10.0, false).item();
    REQUIRE(l1 == l2);
}
