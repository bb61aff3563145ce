#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bgdepth/image.hpp"

namespace bgdepth {

// One dataset entry: color image plus ground-truth depth, with optional
// precomputed segmentation and edge maps. All present rasters share W x H.
struct Sample {
    std::string id;
    ImageRGB rgb;
    DepthMap depth;
    std::optional<ImageRGB> seg;
    std::optional<ImageGray> edge;
};

struct SynthOptions {
    int width = 64;
    int height = 64;
    int n_objects = 3;
    double min_depth_gap = 0.5;  // meters across every silhouette
};

// Deterministic indoor-style scene: a background plane with a vertical depth
// gradient and axis-aligned rectangles/ellipses at distinct depths. Image
// luma is an exact monotone function of depth (shading correlates with
// depth); chroma varies per object at zero net luma. Emits exact per-object
// segmentation colors and an exact silhouette edge map.
Sample synth_scene(std::uint64_t seed, const SynthOptions& opts);

// Files written per sample: <id>.ppm, <id>.depth.pgm (+ .depth.scale),
// <id>.seg.ppm, <id>.edge.pgm.
void write_sample(const Sample& sample, const std::filesystem::path& dir, double depth_scale = 0.001);

// count scenes named scene0000..; per-scene seeds derive from the root seed.
void synth_dataset(const std::filesystem::path& dir, std::uint64_t seed, int count,
                   const SynthOptions& opts);

// Loads <stem>.ppm (+ required <stem>.depth.pgm, optional seg/edge) in
// lexicographic stem order. Orphaned auxiliary files and per-stem dimension
// mismatches are errors naming the stem.
std::vector<Sample> load_dataset(const std::filesystem::path& dir);

}  // namespace bgdepth
