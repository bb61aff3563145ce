#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "bgdepth/bilateral_grid.hpp"
#include "bgdepth/rng.hpp"
#include "test_support.hpp"

using namespace bgdepth;

TEST_CASE("lift places a 2x2 image into the hand-splatted bins") {
    // Pixels 0.0, 0.3, 0.6, 0.9 with B=4: bins round(v*3) = 0, 1, 2, 3.
    ImageGray img(2, 2);
    img.at(0, 0) = 0.0;
    img.at(1, 0) = 0.3;
    img.at(0, 1) = 0.6;
    img.at(1, 1) = 0.9;
    GridParams p{1, 4};
    BilateralGrid g = lift_gray(img, p);
    REQUIRE(g.nx == 2);
    REQUIRE(g.ny == 2);
    REQUIRE(g.nb == 4);
    CHECK(g.weight[g.idx(0, 0, 0)] == 1.0);
    CHECK(g.value_sum[g.idx(0, 0, 0)] == 0.0);
    CHECK(g.weight[g.idx(1, 0, 1)] == 1.0);
    CHECK(g.value_sum[g.idx(1, 0, 1)] == doctest::Approx(0.3));
    CHECK(g.weight[g.idx(0, 1, 2)] == 1.0);
    CHECK(g.value_sum[g.idx(0, 1, 2)] == doctest::Approx(0.6));
    CHECK(g.weight[g.idx(1, 1, 3)] == 1.0);
    CHECK(g.value_sum[g.idx(1, 1, 3)] == doctest::Approx(0.9));
    double total_w = 0.0;
    for (double w : g.weight) total_w += w;
    CHECK(total_w == 4.0);
}

TEST_CASE("constant image concentrates all weight in one range bin") {
    const double c = 0.4;
    ImageGray img(6, 5, c);
    GridParams p{2, 8};
    BilateralGrid g = lift_gray(img, p);
    const int bin = static_cast<int>(std::lround(c * (p.n_bins - 1)));
    double in_bin = 0.0, total = 0.0;
    for (int x = 0; x < g.nx; ++x)
        for (int y = 0; y < g.ny; ++y)
            for (int b = 0; b < g.nb; ++b) {
                total += g.weight[g.idx(x, y, b)];
                if (b == bin) in_bin += g.weight[g.idx(x, y, b)];
            }
    CHECK(total == 30.0);
    CHECK(in_bin == 30.0);
}

TEST_CASE("480x640 at sr_s=4, B=32 yields a 120x160x32 grid") {
    ImageGray img(480, 640, 0.0);
    GridParams p{4, 32};
    BilateralGrid g = lift_gray(img, p);
    CHECK(g.nx == 120);
    CHECK(g.ny == 160);
    CHECK(g.nb == 32);
}

TEST_CASE("lift_rgb separates channels") {
    ImageRGB img(4, 4);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) img.data[i * 3] = 1.0;  // pure red
    GridParams p{1, 8};
    auto grids = lift_rgb(img, p);
    double red_top = 0.0, green_bot = 0.0, blue_bot = 0.0;
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y) {
            red_top += grids[0].weight[grids[0].idx(x, y, 7)];
            green_bot += grids[1].weight[grids[1].idx(x, y, 0)];
            blue_bot += grids[2].weight[grids[2].idx(x, y, 0)];
        }
    CHECK(red_top == 16.0);
    CHECK(green_bot == 16.0);
    CHECK(blue_bot == 16.0);
}

TEST_CASE("lift_rgb channel grids equal lift_gray of extracted channels") {
    Rng rng(5);
    ImageRGB img = testsupport::random_rgb(13, 9, rng);
    GridParams p{2, 16};
    auto grids = lift_rgb(img, p);
    for (int c = 0; c < 3; ++c) {
        BilateralGrid direct = lift_gray(img.channel(c), p);
        REQUIRE(grids[c].value_sum == direct.value_sum);
        REQUIRE(grids[c].weight == direct.weight);
        double w = 0.0;
        for (double v : grids[c].weight) w += v;
        CHECK(w == static_cast<double>(img.pixel_count()));
    }
}

TEST_CASE("normalize divides and flags occupancy") {
    BilateralGrid g(1, 1, 4);
    g.value_sum[g.idx(0, 0, 3)] = 0.9;
    g.weight[g.idx(0, 0, 3)] = 3.0;
    DenseGrid d = normalize(g);
    CHECK(d.value[d.idx(0, 0, 3)] == doctest::Approx(0.3));
    CHECK(d.occupancy[d.idx(0, 0, 3)] == 1);
    CHECK(d.value[d.idx(0, 0, 0)] == 0.0);
    CHECK(d.occupancy[d.idx(0, 0, 0)] == 0);
}

TEST_CASE("normalized values stay within the contributing pixels' range") {
    // Oracle: recompute each voxel's contributor set directly.
    Rng rng(11);
    ImageGray img = testsupport::random_gray(15, 11, rng);
    GridParams p{3, 8};
    BilateralGrid g = lift_gray(img, p);
    DenseGrid d = normalize(g);
    std::map<std::size_t, std::pair<double, double>> bounds;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double v = img.at(x, y);
            const int gx = std::clamp<long>(std::lround(double(x) / p.sr_s), 0, g.nx - 1);
            const int gy = std::clamp<long>(std::lround(double(y) / p.sr_s), 0, g.ny - 1);
            const int gb = std::clamp<long>(std::lround(v * (p.n_bins - 1)), 0, g.nb - 1);
            const std::size_t i = g.idx(gx, gy, gb);
            auto it = bounds.find(i);
            if (it == bounds.end()) bounds[i] = {v, v};
            else {
                it->second.first = std::min(it->second.first, v);
                it->second.second = std::max(it->second.second, v);
            }
        }
    for (std::size_t i = 0; i < d.voxel_count(); ++i) {
        if (!d.occupancy[i]) continue;
        REQUIRE(bounds.count(i) == 1);
        CHECK(d.value[i] >= bounds[i].first - 1e-12);
        CHECK(d.value[i] <= bounds[i].second + 1e-12);
    }
}

TEST_CASE("slicing a constant image's grid reproduces the constant exactly") {
    ImageGray img(9, 7, 0.35);
    GridParams p{2, 16};
    ImageGray out = slice(normalize(lift_gray(img, p)), img, p);
    for (double v : out.data) CHECK(v == doctest::Approx(0.35).epsilon(1e-15));
}

TEST_CASE("slice/normalize/lift at sr_s=1 reconstructs within the bin quantization bound") {
    Rng rng(3);
    for (int B : {8, 16, 32}) {
        ImageGray img = testsupport::random_gray(12, 10, rng);
        GridParams p{1, B};
        ImageGray out = slice(normalize(lift_gray(img, p)), img, p);
        const double bound = 1.0 / (2.0 * (B - 1));
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                REQUIRE(std::abs(out.at(x, y) - img.at(x, y)) <= bound + 1e-12);
    }
}

TEST_CASE("slicing an all-ones grid gives an all-ones image") {
    DenseGrid d(3, 3, 4);
    std::fill(d.value.begin(), d.value.end(), 1.0);
    std::fill(d.occupancy.begin(), d.occupancy.end(), std::uint8_t{1});
    Rng rng(8);
    ImageGray ref = testsupport::random_gray(6, 6, rng);
    GridParams p{2, 4};
    ImageGray out = slice(d, ref, p);
    for (double v : out.data) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("slice rejects mismatched reference dimensions") {
    DenseGrid d(3, 3, 4);
    ImageGray ref(50, 50, 0.0);
    GridParams p{2, 4};
    CHECK_THROWS_AS(slice(d, ref, p), std::invalid_argument);
}

TEST_CASE("grid_blur with zero sigmas is the identity") {
    Rng rng(21);
    ImageGray img = testsupport::random_gray(8, 8, rng);
    BilateralGrid g = lift_gray(img, GridParams{2, 8});
    BilateralGrid b = grid_blur(g, 0.0, 0.0);
    CHECK(b.value_sum == g.value_sum);
    CHECK(b.weight == g.weight);
}

TEST_CASE("grid_blur preserves total mass") {
    Rng rng(22);
    ImageGray img = testsupport::random_gray(20, 16, rng);
    BilateralGrid g = lift_gray(img, GridParams{2, 16});
    double w0 = 0.0, v0 = 0.0;
    for (std::size_t i = 0; i < g.voxel_count(); ++i) {
        w0 += g.weight[i];
        v0 += g.value_sum[i];
    }
    BilateralGrid b = grid_blur(g, 1.7, 2.3);
    double w1 = 0.0, v1 = 0.0;
    for (std::size_t i = 0; i < b.voxel_count(); ++i) {
        w1 += b.weight[i];
        v1 += b.value_sum[i];
    }
    CHECK(std::abs(w1 - w0) / w0 <= 1e-9);
    CHECK(std::abs(v1 - v0) / v0 <= 1e-9);
}

TEST_CASE("blurring a single voxel matches the tabulated Gaussian outer product") {
    BilateralGrid g(9, 9, 5);
    g.weight[g.idx(4, 4, 2)] = 1.0;
    g.value_sum[g.idx(4, 4, 2)] = 0.5;
    const double sigma = 1.0;
    BilateralGrid b = grid_blur(g, sigma, 0.0);
    // Tabulate the truncated, renormalized 1D kernel by hand.
    const int r = 3;
    double k[7], sum = 0.0;
    for (int t = -r; t <= r; ++t) {
        k[t + r] = std::exp(-0.5 * t * t / (sigma * sigma));
        sum += k[t + r];
    }
    for (double& v : k) v /= sum;
    for (int x = 0; x < 9; ++x)
        for (int y = 0; y < 9; ++y) {
            const int dx = x - 4, dy = y - 4;
            double want = 0.0;
            if (std::abs(dx) <= r && std::abs(dy) <= r) want = k[dx + r] * k[dy + r];
            REQUIRE(b.weight[b.idx(x, y, 2)] == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("bilateral filter keeps a constant image constant") {
    ImageGray img(16, 16, 0.62);
    ImageGray out = bilateral_filter(img, GridParams{2, 16}, 2.0, 1.0);
    for (double v : out.data) CHECK(std::abs(v - 0.62) <= 1e-6);
}

TEST_CASE("bilateral filter preserves a step edge across a wide intensity gap") {
    // Two-region step; gap 19 bins >> 3*sigma_r bins. Region means must stay
    // within 0.02 of the originals (checked with a direct loop).
    const int W = 32, H = 16;
    ImageGray img(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) img.at(x, y) = x < W / 2 ? 0.2 : 0.8;
    GridParams p{2, 32};
    ImageGray out = bilateral_filter(img, p, 2.0, 2.0);
    double left = 0.0, right = 0.0;
    int nl = 0, nr = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (x < W / 2) {
                left += out.at(x, y);
                ++nl;
            } else {
                right += out.at(x, y);
                ++nr;
            }
        }
    CHECK(std::abs(left / nl - 0.2) <= 0.02);
    CHECK(std::abs(right / nr - 0.8) <= 0.02);
    // And pointwise too: no pixel of either region drifts past the tolerance.
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            CHECK(std::abs(out.at(x, y) - (x < W / 2 ? 0.2 : 0.8)) <= 0.02);
}

TEST_CASE("bilateral filter with zero sigmas is identity within the slice bound") {
    Rng rng(31);
    ImageGray img = testsupport::random_gray(10, 10, rng);
    GridParams p{1, 32};
    ImageGray out = bilateral_filter(img, p, 0.0, 0.0);
    for (std::size_t i = 0; i < img.pixel_count(); ++i)
        CHECK(std::abs(out.data[i] - img.data[i]) <= 1.0 / 62.0 + 1e-12);
}

TEST_CASE("property: mass conservation across sampling rates and bin counts") {
    Rng rng(77);
    for (int sr : {1, 2, 4}) {
        for (int B : {8, 16, 32, 64}) {
            ImageGray img = testsupport::random_gray(17 + sr, 13 + B % 3, rng);
            BilateralGrid g = lift_gray(img, GridParams{sr, B});
            double w = 0.0, v = 0.0, vi = 0.0;
            for (std::size_t i = 0; i < g.voxel_count(); ++i) {
                w += g.weight[i];
                v += g.value_sum[i];
            }
            for (double pv : img.data) vi += pv;
            REQUIRE(w == static_cast<double>(img.pixel_count()));
            REQUIRE(std::abs(v - vi) / std::max(vi, 1e-12) <= 1e-9);
        }
    }
}

TEST_CASE("property: pixel permutation leaves per-cell bin contents invariant when one cell covers the image") {
    Rng rng(88);
    const int W = 8, H = 8;
    ImageGray img = testsupport::random_gray(W, H, rng);
    GridParams p{16, 16};  // sr_s > image extent: single spatial cell
    BilateralGrid a = lift_gray(img, p);
    ImageGray shuffled = img;
    bgdepth::shuffle(shuffled.data.data(), shuffled.data.size(), rng);
    BilateralGrid b = lift_gray(shuffled, p);
    REQUIRE(a.nx == 1);
    REQUIRE(a.ny == 1);
    for (int bin = 0; bin < p.n_bins; ++bin) {
        CHECK(a.weight[a.idx(0, 0, bin)] == b.weight[b.idx(0, 0, bin)]);
        CHECK(a.value_sum[a.idx(0, 0, bin)] ==
              doctest::Approx(b.value_sum[b.idx(0, 0, bin)]).epsilon(1e-12));
    }
}

TEST_CASE("property: intensities more than two bin widths apart never share a bin") {
    Rng rng(99);
    const int B = 16;
    const double gap = 2.0 / (B - 1);
    for (int iter = 0; iter < 2000; ++iter) {
        const double a = rng.uniform();
        const double b = rng.uniform();
        if (std::abs(a - b) <= gap) continue;
        const long ba = std::lround(a * (B - 1));
        const long bb = std::lround(b * (B - 1));
        REQUIRE(ba != bb);
    }
}

TEST_CASE("property: grid_blur commutes with translation away from boundaries") {
    BilateralGrid g(16, 16, 8);
    Rng rng(13);
    // Content confined to the interior so a (1,1,0) shift stays clear of edges.
    for (int x = 6; x < 9; ++x)
        for (int y = 6; y < 9; ++y)
            for (int b = 2; b < 5; ++b) {
                g.weight[g.idx(x, y, b)] = rng.uniform();
                g.value_sum[g.idx(x, y, b)] = rng.uniform();
            }
    BilateralGrid shifted(16, 16, 8);
    for (int x = 0; x < 15; ++x)
        for (int y = 0; y < 15; ++y)
            for (int b = 0; b < 8; ++b) {
                shifted.weight[shifted.idx(x + 1, y + 1, b)] = g.weight[g.idx(x, y, b)];
                shifted.value_sum[shifted.idx(x + 1, y + 1, b)] = g.value_sum[g.idx(x, y, b)];
            }
    BilateralGrid bg = grid_blur(g, 1.0, 1.0);
    BilateralGrid bs = grid_blur(shifted, 1.0, 1.0);
    for (int x = 0; x < 12; ++x)
        for (int y = 0; y < 12; ++y)
            for (int b = 0; b < 8; ++b) {
                REQUIRE(bs.weight[bs.idx(x + 1, y + 1, b)] ==
                        doctest::Approx(bg.weight[bg.idx(x, y, b)]).epsilon(1e-12));
            }
}

TEST_CASE("grid dump round-trips through the binary format") {
    testsupport::TempDir dir("griddump");
    Rng rng(4);
    ImageGray img = testsupport::random_gray(10, 8, rng);
    BilateralGrid g = lift_gray(img, GridParams{2, 8});
    save_grid(g, 2, dir.file("g.bgrd"));
    int sr = 0;
    BilateralGrid back = load_grid(dir.file("g.bgrd"), &sr);
    CHECK(sr == 2);
    CHECK(back.nx == g.nx);
    CHECK(back.value_sum == g.value_sum);
    CHECK(back.weight == g.weight);
    CHECK(grid_summary(g).find("dims=5x4x8") != std::string::npos);
}
