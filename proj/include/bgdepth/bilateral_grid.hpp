#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bgdepth/image.hpp"

namespace bgdepth {

// Sampling rates for the lift. sr_s is pixels per spatial cell; n_bins is
// the size of the range (intensity) axis. The range bin of a normalized
// intensity i is round(i * (n_bins - 1)), which for 8-bit data matches the
// classic "divide by sr_r and round" construction with sr_r = 256 / n_bins.
struct GridParams {
    int sr_s = 2;
    int n_bins = 16;

    int cells_x(int image_width) const { return (image_width + sr_s - 1) / sr_s; }
    int cells_y(int image_height) const { return (image_height + sr_s - 1) / sr_s; }
};

// Homogeneous accumulator grid over (spatial x, spatial y, range). Each
// voxel holds the sum of splatted intensities and the splat count, so a
// later divide yields a weighted average and any linear processing commutes
// with the divide.
struct BilateralGrid {
    int nx = 0, ny = 0, nb = 0;
    std::vector<double> value_sum;
    std::vector<double> weight;

    BilateralGrid() = default;
    BilateralGrid(int nx_, int ny_, int nb_)
        : nx(nx_), ny(ny_), nb(nb_),
          value_sum(static_cast<std::size_t>(nx_) * ny_ * nb_, 0.0),
          weight(static_cast<std::size_t>(nx_) * ny_ * nb_, 0.0) {}

    std::size_t idx(int x, int y, int b) const {
        return (static_cast<std::size_t>(x) * ny + y) * nb + b;
    }
    std::size_t voxel_count() const { return static_cast<std::size_t>(nx) * ny * nb; }
};

// Normalized grid: value = value_sum / weight where weight > 0, and an
// occupancy flag so downstream consumers can tell "dark" from "empty".
struct DenseGrid {
    int nx = 0, ny = 0, nb = 0;
    std::vector<double> value;
    std::vector<std::uint8_t> occupancy;

    DenseGrid() = default;
    DenseGrid(int nx_, int ny_, int nb_)
        : nx(nx_), ny(ny_), nb(nb_),
          value(static_cast<std::size_t>(nx_) * ny_ * nb_, 0.0),
          occupancy(static_cast<std::size_t>(nx_) * ny_ * nb_, 0) {}

    std::size_t idx(int x, int y, int b) const {
        return (static_cast<std::size_t>(x) * ny + y) * nb + b;
    }
    std::size_t voxel_count() const { return static_cast<std::size_t>(nx) * ny * nb; }
};

// Splat: every pixel (x, y) with intensity i accumulates (i, 1) into the
// voxel at (round(x/sr_s), round(y/sr_s), round(i*(n_bins-1))). Spatial
// indices clamp to the grid bounds.
BilateralGrid lift_gray(const ImageGray& img, const GridParams& p);

// Per-channel lift; index order r, g, b.
std::array<BilateralGrid, 3> lift_rgb(const ImageRGB& img, const GridParams& p);

DenseGrid normalize(const BilateralGrid& g);

// Read a 2D map back out of the grid: per pixel, interpolate g.value at the
// continuous coordinate (x/sr_s, y/sr_s, I(x,y)*(n_bins-1)). Interpolation
// is trilinear with corner weights multiplied by occupancy and renormalized,
// so holes in a sparse grid do not bleed zeros into the result; on a fully
// occupied grid this is plain trilinear interpolation. Coordinates clamp to
// the grid, output clamps to [0,1].
ImageGray slice(const DenseGrid& g, const ImageGray& reference, const GridParams& p);

// Separable Gaussian blur applied identically to value_sum and weight.
// Kernels truncate at 3 sigma and renormalize to unit sum; mass is scattered
// with clamp-to-edge so the grid totals are preserved exactly. sigma_s is in
// grid cells (x and y), sigma_r in range bins; sigma 0 disables that axis.
BilateralGrid grid_blur(const BilateralGrid& g, double sigma_s, double sigma_r);

// Classic splat-blur-slice bilateral filter, kept as a correctness oracle
// for the grid machinery.
ImageGray bilateral_filter(const ImageGray& img, const GridParams& p, double sigma_s, double sigma_r);

// Debug dump of a grid: magic "BGRD", u16 version, u32 dims and sr_s,
// little-endian float64 value_sum then weight.
void save_grid(const BilateralGrid& g, int sr_s, const std::filesystem::path& path);
BilateralGrid load_grid(const std::filesystem::path& path, int* sr_s_out = nullptr);

// One-line-per-field text summary (dims, occupancy fraction, mass totals).
std::string grid_summary(const BilateralGrid& g);

}  // namespace bgdepth
