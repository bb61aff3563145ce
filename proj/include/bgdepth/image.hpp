#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace bgdepth {

// I/O errors, one type per failure class so callers can discriminate.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedMagicError : IoError {
    using IoError::IoError;
};
struct MalformedHeaderError : IoError {
    using IoError::IoError;
};
struct TruncatedPayloadError : IoError {
    using IoError::IoError;
};

// Single-channel raster, values normalized to [0, 1], row-major.
struct ImageGray {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    ImageGray() = default;
    ImageGray(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// Interleaved RGB raster, each channel in [0, 1], row-major.
struct ImageRGB {
    int width = 0;
    int height = 0;
    std::vector<double> data;  // 3 * width * height, (r,g,b) per pixel

    ImageRGB() = default;
    ImageRGB(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

    double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

    // Extract one channel as a grayscale plane.
    ImageGray channel(int c) const;
};

// Metric depth raster. data holds meters; mask marks pixels with a valid
// measurement. Invalid pixels carry data == 0.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> data;
    std::vector<std::uint8_t> mask;

    DepthMap() = default;
    DepthMap(int w, int h)
        : width(w),
          height(h),
          data(static_cast<std::size_t>(w) * h, 0.0),
          mask(static_cast<std::size_t>(w) * h, 0) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    bool valid(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// Binary Netpbm (P5/P6) reader. Maxval 255 or 65535 payloads (two-byte
// samples are big-endian per the format). P5 input is promoted to RGB by
// channel replication. Integer sample p maps to p / maxval.
ImageRGB load_image(const std::filesystem::path& path);

// Writers quantize with round-half-away-from-zero; values must be in [0,1].
// maxval selects 8- or 16-bit samples (255 or 65535).
void save_image(const ImageGray& img, const std::filesystem::path& path, int maxval = 255);
void save_image(const ImageRGB& img, const std::filesystem::path& path, int maxval = 255);

// Rec.601 luma: 0.299 r + 0.587 g + 0.114 b.
ImageGray to_gray(const ImageRGB& img);

// Depth maps are stored as 16-bit PGM where stored integer d encodes
// d * scale meters; d == 0 marks an invalid pixel. The scale lives in a
// sidecar key=value file next to the image (path with extension replaced
// by .scale), defaulting to 1/1000 when the sidecar is absent.
//
// Valid depths below scale/2 are written as one quantum rather than 0 so
// the validity mask survives a round-trip; depths above 65535*scale clamp.
DepthMap load_depth(const std::filesystem::path& path);
void save_depth(const DepthMap& depth, const std::filesystem::path& path, double scale = 0.001);

std::filesystem::path depth_sidecar_path(const std::filesystem::path& depth_path);

}  // namespace bgdepth
