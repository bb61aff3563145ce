#include "bgdepth/bilateral_grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bgdepth {

namespace {

int clampi(long v, int lo, int hi) {
    if (v < lo) return lo;
    if (v > hi) return hi;
    return static_cast<int>(v);
}

void check_params(const GridParams& p) {
    if (p.sr_s < 1) throw std::invalid_argument("sr_s must be >= 1");
    if (p.n_bins < 2) throw std::invalid_argument("n_bins must be >= 2");
}

// Unit-sum Gaussian taps for offsets [-radius, radius], radius = ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma) {
    if (sigma <= 0.0) return {1.0};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        k[t + radius] = std::exp(-0.5 * (t / sigma) * (t / sigma));
        sum += k[t + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

// One separable pass along the given axis. Scatter form with the target
// index clamped into bounds: every source tap lands somewhere, so the total
// over the field is preserved for a unit-sum kernel.
void blur_axis(std::vector<double>& field, int nx, int ny, int nb, int axis,
               const std::vector<double>& kernel) {
    if (kernel.size() == 1) return;
    const int radius = static_cast<int>(kernel.size() / 2);
    const int dims[3] = {nx, ny, nb};
    const int n = dims[axis];
    const std::size_t strides[3] = {static_cast<std::size_t>(ny) * nb, static_cast<std::size_t>(nb), 1};
    const std::size_t stride = strides[axis];

    // Iterate over all lines parallel to the axis.
    std::vector<double> line(static_cast<std::size_t>(n));
    std::vector<double> out(static_cast<std::size_t>(n));
    const int o1 = (axis + 1) % 3, o2 = (axis + 2) % 3;
    for (int i1 = 0; i1 < dims[o1]; ++i1) {
        for (int i2 = 0; i2 < dims[o2]; ++i2) {
            const std::size_t base = static_cast<std::size_t>(i1) * strides[o1] +
                                     static_cast<std::size_t>(i2) * strides[o2];
            for (int i = 0; i < n; ++i) line[i] = field[base + i * stride];
            std::fill(out.begin(), out.end(), 0.0);
            for (int i = 0; i < n; ++i) {
                const double v = line[i];
                if (v == 0.0) continue;
                for (int t = -radius; t <= radius; ++t) {
                    int j = i + t;
                    if (j < 0) j = 0;
                    if (j >= n) j = n - 1;
                    out[j] += v * kernel[t + radius];
                }
            }
            for (int i = 0; i < n; ++i) field[base + i * stride] = out[i];
        }
    }
}

}  // namespace

BilateralGrid lift_gray(const ImageGray& img, const GridParams& p) {
    check_params(p);
    BilateralGrid g(p.cells_x(img.width), p.cells_y(img.height), p.n_bins);
    const double bin_scale = static_cast<double>(p.n_bins - 1);
    for (int y = 0; y < img.height; ++y) {
        const int gy = clampi(std::lround(static_cast<double>(y) / p.sr_s), 0, g.ny - 1);
        for (int x = 0; x < img.width; ++x) {
            const int gx = clampi(std::lround(static_cast<double>(x) / p.sr_s), 0, g.nx - 1);
            const double v = img.at(x, y);
            const int gb = clampi(std::lround(v * bin_scale), 0, g.nb - 1);
            const std::size_t i = g.idx(gx, gy, gb);
            g.value_sum[i] += v;
            g.weight[i] += 1.0;
        }
    }
    return g;
}

std::array<BilateralGrid, 3> lift_rgb(const ImageRGB& img, const GridParams& p) {
    return {lift_gray(img.channel(0), p), lift_gray(img.channel(1), p), lift_gray(img.channel(2), p)};
}

DenseGrid normalize(const BilateralGrid& g) {
    DenseGrid d(g.nx, g.ny, g.nb);
    for (std::size_t i = 0; i < g.voxel_count(); ++i) {
        if (g.weight[i] > 0.0) {
            d.value[i] = g.value_sum[i] / g.weight[i];
            d.occupancy[i] = 1;
        }
    }
    return d;
}

ImageGray slice(const DenseGrid& g, const ImageGray& reference, const GridParams& p) {
    check_params(p);
    if (p.cells_x(reference.width) != g.nx || p.cells_y(reference.height) != g.ny || p.n_bins != g.nb) {
        throw std::invalid_argument("slice: reference dimensions inconsistent with grid dims");
    }
    ImageGray out(reference.width, reference.height);
    const double bin_scale = static_cast<double>(g.nb - 1);
    for (int y = 0; y < reference.height; ++y) {
        double fy = static_cast<double>(y) / p.sr_s;
        fy = std::clamp(fy, 0.0, static_cast<double>(g.ny - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, g.ny - 1);
        const double wy = fy - y0;
        for (int x = 0; x < reference.width; ++x) {
            double fx = static_cast<double>(x) / p.sr_s;
            fx = std::clamp(fx, 0.0, static_cast<double>(g.nx - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, g.nx - 1);
            const double wx = fx - x0;

            double fb = reference.at(x, y) * bin_scale;
            fb = std::clamp(fb, 0.0, bin_scale);
            const int b0 = static_cast<int>(fb);
            const int b1 = std::min(b0 + 1, g.nb - 1);
            const double wb = fb - b0;

            double num = 0.0, den = 0.0;
            for (int cx = 0; cx < 2; ++cx) {
                const int gx = cx ? x1 : x0;
                const double ax = cx ? wx : 1.0 - wx;
                if (ax == 0.0) continue;
                for (int cy = 0; cy < 2; ++cy) {
                    const int gy = cy ? y1 : y0;
                    const double ay = cy ? wy : 1.0 - wy;
                    if (ay == 0.0) continue;
                    for (int cb = 0; cb < 2; ++cb) {
                        const int gb = cb ? b1 : b0;
                        const double ab = cb ? wb : 1.0 - wb;
                        if (ab == 0.0) continue;
                        const std::size_t i = g.idx(gx, gy, gb);
                        if (!g.occupancy[i]) continue;
                        const double w = ax * ay * ab;
                        num += w * g.value[i];
                        den += w;
                    }
                }
            }
            out.at(x, y) = den > 0.0 ? std::clamp(num / den, 0.0, 1.0) : 0.0;
        }
    }
    return out;
}

BilateralGrid grid_blur(const BilateralGrid& g, double sigma_s, double sigma_r) {
    if (sigma_s < 0.0 || sigma_r < 0.0) throw std::invalid_argument("grid_blur: sigmas must be >= 0");
    BilateralGrid out = g;
    const std::vector<double> ks = gaussian_kernel(sigma_s);
    const std::vector<double> kr = gaussian_kernel(sigma_r);
    blur_axis(out.value_sum, out.nx, out.ny, out.nb, 0, ks);
    blur_axis(out.weight, out.nx, out.ny, out.nb, 0, ks);
    blur_axis(out.value_sum, out.nx, out.ny, out.nb, 1, ks);
    blur_axis(out.weight, out.nx, out.ny, out.nb, 1, ks);
    blur_axis(out.value_sum, out.nx, out.ny, out.nb, 2, kr);
    blur_axis(out.weight, out.nx, out.ny, out.nb, 2, kr);
    return out;
}

ImageGray bilateral_filter(const ImageGray& img, const GridParams& p, double sigma_s, double sigma_r) {
    return slice(normalize(grid_blur(lift_gray(img, p), sigma_s, sigma_r)), img, p);
}

namespace {

constexpr char kGridMagic[4] = {'B', 'G', 'R', 'D'};
constexpr std::uint16_t kGridVersion = 1;

template <typename T>
void write_le(std::ofstream& out, T v) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

}  // namespace

void save_grid(const BilateralGrid& g, int sr_s, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write grid dump " + path.string());
    out.write(kGridMagic, 4);
    write_le<std::uint16_t>(out, kGridVersion);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.nx));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.ny));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.nb));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(sr_s));
    for (double v : g.value_sum) write_le<double>(out, v);
    for (double v : g.weight) write_le<double>(out, v);
    if (!out) throw IoError("grid dump write failed for " + path.string());
}

BilateralGrid load_grid(const std::filesystem::path& path, int* sr_s_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open grid dump " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kGridMagic, 4) != 0)
        throw UnsupportedMagicError("not a grid dump: " + path.string());
    const auto version = read_le<std::uint16_t>(in);
    if (version != kGridVersion)
        throw MalformedHeaderError("unknown grid dump version in " + path.string());
    const auto nx = read_le<std::uint32_t>(in);
    const auto ny = read_le<std::uint32_t>(in);
    const auto nb = read_le<std::uint32_t>(in);
    const auto sr_s = read_le<std::uint32_t>(in);
    if (!in || nx == 0 || ny == 0 || nb < 2)
        throw MalformedHeaderError("bad grid dims in " + path.string());
    BilateralGrid g(static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nb));
    for (std::size_t i = 0; i < g.voxel_count(); ++i) g.value_sum[i] = read_le<double>(in);
    for (std::size_t i = 0; i < g.voxel_count(); ++i) g.weight[i] = read_le<double>(in);
    if (!in) throw TruncatedPayloadError("truncated grid dump " + path.string());
    if (sr_s_out) *sr_s_out = static_cast<int>(sr_s);
    return g;
}

std::string grid_summary(const BilateralGrid& g) {
    std::size_t occupied = 0;
    double mass = 0.0, value_mass = 0.0;
    for (std::size_t i = 0; i < g.voxel_count(); ++i) {
        if (g.weight[i] > 0.0) ++occupied;
        mass += g.weight[i];
        value_mass += g.value_sum[i];
    }
    std::ostringstream os;
    os << "dims=" << g.nx << "x" << g.ny << "x" << g.nb << "\n"
       << "occupancy=" << (g.voxel_count() ? static_cast<double>(occupied) / g.voxel_count() : 0.0) << "\n"
       << "weight_total=" << mass << "\n"
       << "value_total=" << value_mass << "\n";
    return os.str();
}

}  // namespace bgdepth
