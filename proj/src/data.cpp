#include "bgdepth/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

#include "bgdepth/rng.hpp"

namespace bgdepth {

namespace {

struct Chroma {
    double r, g, b;
};

// Zero-luma chroma drawn from the rng and scaled so luma +- chroma stays in
// range. Rec.601 weighted sum of the offsets is exactly zero.
Chroma make_chroma(Rng& rng, double luma) {
    const double ar = rng.uniform(-1.0, 1.0);
    const double ag = rng.uniform(-1.0, 1.0);
    const double ab = -(0.299 * ar + 0.587 * ag) / 0.114;
    const double amax = std::max({std::abs(ar), std::abs(ag), std::abs(ab)});
    const double room = std::min(luma, 1.0 - luma);
    const double s = std::min(0.12, 0.9 * room) / amax;
    return {ar * s, ag * s, ab * s};
}

struct SceneObject {
    bool ellipse;
    double cx, cy, rx, ry;
    double depth;
    Chroma chroma;
};

}  // namespace

Sample synth_scene(std::uint64_t seed, const SynthOptions& opts) {
    if (opts.width < 16 || opts.height < 16) throw std::invalid_argument("synth_scene: dims must be >= 16");
    if (opts.n_objects < 1) throw std::invalid_argument("synth_scene: n_objects must be >= 1");
    const int w = opts.width, h = opts.height, n = opts.n_objects;
    Rng rng = Rng(seed).split("synth");

    // Object depths step by max(1, 2*min_gap) meters; the background plane
    // starts one full step behind the deepest object.
    const double step = std::max(1.0, 2.0 * opts.min_depth_gap);
    const double bg_near = 1.0 + step * n;
    const double bg_far = bg_near + 2.0;
    const double luma_slope = 0.84 / bg_far;
    auto luma_of = [&](double depth) { return 0.92 - luma_slope * depth; };

    std::vector<SceneObject> objects;
    for (int i = 0; i < n; ++i) {
        SceneObject o;
        o.ellipse = (i % 2) == 1;
        o.depth = 1.0 + step * i;
        o.cx = rng.uniform(0.2, 0.8) * w;
        o.cy = rng.uniform(0.2, 0.8) * h;
        o.rx = rng.uniform(0.08, 0.22) * w;
        o.ry = rng.uniform(0.08, 0.22) * h;
        o.chroma = make_chroma(rng, luma_of(o.depth));
        objects.push_back(o);
    }
    // The background luma spans [luma_of(bg_far), luma_of(bg_near)]; size its
    // chroma for the darkest row so every channel stays in range.
    const Chroma bg_chroma = make_chroma(rng, luma_of(bg_far));

    Sample s;
    s.id = "scene";
    s.rgb = ImageRGB(w, h);
    s.depth = DepthMap(w, h);
    s.seg = ImageRGB(w, h);
    s.edge = ImageGray(w, h);

    auto seg_color = [&](int id, int channel) {
        if (id < 0) {
            const double bg[3] = {0.08, 0.08, 0.08};
            return bg[channel];
        }
        // Low-discrepancy hue walk keeps object colors distinct and exact.
        const double t = std::fmod(0.13 + 0.61803398875 * id, 1.0);
        const double c[3] = {0.15 + 0.7 * t, 0.9 - 0.7 * t, 0.25 + 0.5 * std::fmod(3.0 * t, 1.0)};
        return c[channel];
    };

    std::vector<int> id_map(static_cast<std::size_t>(w) * h, -1);
    for (int y = 0; y < h; ++y) {
        const double bg_depth = bg_far - (bg_far - bg_near) * (static_cast<double>(y) / (h - 1));
        for (int x = 0; x < w; ++x) {
            double depth = bg_depth;
            int id = -1;
            for (int i = n - 1; i >= 0; --i) {  // near objects drawn last
                const auto& o = objects[static_cast<std::size_t>(i)];
                const double dx = (x + 0.5 - o.cx) / o.rx;
                const double dy = (y + 0.5 - o.cy) / o.ry;
                const bool inside = o.ellipse ? (dx * dx + dy * dy <= 1.0)
                                              : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
                if (inside) {
                    depth = o.depth;
                    id = i;
                }
            }
            id_map[static_cast<std::size_t>(y) * w + x] = id;
            s.depth.at(x, y) = depth;
            s.depth.mask[static_cast<std::size_t>(y) * w + x] = 1;
            const double L = luma_of(depth);
            const Chroma& c = id >= 0 ? objects[static_cast<std::size_t>(id)].chroma : bg_chroma;
            s.rgb.at(x, y, 0) = L + c.r;
            s.rgb.at(x, y, 1) = L + c.g;
            s.rgb.at(x, y, 2) = L + c.b;
            for (int ch = 0; ch < 3; ++ch) s.seg->at(x, y, ch) = seg_color(id, ch);
        }
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int id = id_map[static_cast<std::size_t>(y) * w + x];
            const bool boundary =
                (x > 0 && id_map[static_cast<std::size_t>(y) * w + x - 1] != id) ||
                (x + 1 < w && id_map[static_cast<std::size_t>(y) * w + x + 1] != id) ||
                (y > 0 && id_map[(static_cast<std::size_t>(y) - 1) * w + x] != id) ||
                (y + 1 < h && id_map[(static_cast<std::size_t>(y) + 1) * w + x] != id);
            s.edge->at(x, y) = boundary ? 1.0 : 0.0;
        }
    return s;
}

void write_sample(const Sample& sample, const std::filesystem::path& dir, double depth_scale) {
    std::filesystem::create_directories(dir);
    save_image(sample.rgb, dir / (sample.id + ".ppm"));
    save_depth(sample.depth, dir / (sample.id + ".depth.pgm"), depth_scale);
    if (sample.seg) save_image(*sample.seg, dir / (sample.id + ".seg.ppm"));
    if (sample.edge) save_image(*sample.edge, dir / (sample.id + ".edge.pgm"));
}

void synth_dataset(const std::filesystem::path& dir, std::uint64_t seed, int count,
                   const SynthOptions& opts) {
    if (count < 0) throw std::invalid_argument("synth_dataset: count must be >= 0");
    Rng root(seed);
    for (int i = 0; i < count; ++i) {
        Sample s = synth_scene(root.split(static_cast<std::uint64_t>(i)).next_u64(), opts);
        char name[32];
        std::snprintf(name, sizeof(name), "scene%04d", i);
        s.id = name;
        write_sample(s, dir);
    }
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw IoError("dataset directory does not exist: " + dir.string());
    std::set<std::string> rgb, depth, seg, edge;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (ends_with(name, ".seg.ppm")) seg.insert(name.substr(0, name.size() - 8));
        else if (ends_with(name, ".edge.pgm")) edge.insert(name.substr(0, name.size() - 9));
        else if (ends_with(name, ".depth.pgm")) depth.insert(name.substr(0, name.size() - 10));
        else if (ends_with(name, ".depth.scale")) continue;  // sidecar, read via load_depth
        else if (ends_with(name, ".ppm")) rgb.insert(name.substr(0, name.size() - 4));
        // Anything else is not part of the dataset convention.
    }
    for (const auto& s : depth)
        if (!rgb.count(s)) throw IoError("orphaned depth map for stem '" + s + "'");
    for (const auto& s : seg)
        if (!rgb.count(s)) throw IoError("orphaned segmentation map for stem '" + s + "'");
    for (const auto& s : edge)
        if (!rgb.count(s)) throw IoError("orphaned edge map for stem '" + s + "'");
    for (const auto& s : rgb)
        if (!depth.count(s)) throw IoError("stem '" + s + "' has no depth map");

    std::vector<Sample> out;
    for (const auto& stem : rgb) {  // std::set iterates lexicographically
        Sample s;
        s.id = stem;
        s.rgb = load_image(dir / (stem + ".ppm"));
        s.depth = load_depth(dir / (stem + ".depth.pgm"));
        if (s.depth.width != s.rgb.width || s.depth.height != s.rgb.height)
            throw IoError("stem '" + stem + "': depth dimensions do not match the image");
        if (seg.count(stem)) {
            s.seg = load_image(dir / (stem + ".seg.ppm"));
            if (s.seg->width != s.rgb.width || s.seg->height != s.rgb.height)
                throw IoError("stem '" + stem + "': segmentation dimensions do not match the image");
        }
        if (edge.count(stem)) {
            ImageRGB e = load_image(dir / (stem + ".edge.pgm"));
            if (e.width != s.rgb.width || e.height != s.rgb.height)
                throw IoError("stem '" + stem + "': edge dimensions do not match the image");
            s.edge = e.channel(0);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace bgdepth
