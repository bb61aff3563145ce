#include "bgdepth/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <stdexcept>

#include "bgdepth/metrics.hpp"

namespace bgdepth {

int mode_channel_count(AblationMode mode) {
    switch (mode) {
        case AblationMode::kFull: return 5;
        case AblationMode::kRgbSegEdge: return 5;
        case AblationMode::kRgbSeg: return 6;
        case AblationMode::kRgbEdge: return 4;
    }
    throw std::invalid_argument("bad ablation mode");
}

std::string mode_name(AblationMode mode) {
    switch (mode) {
        case AblationMode::kFull: return "full";
        case AblationMode::kRgbSegEdge: return "rgb-seg-edge";
        case AblationMode::kRgbSeg: return "rgb-seg";
        case AblationMode::kRgbEdge: return "rgb-edge";
    }
    throw std::invalid_argument("bad ablation mode");
}

AblationMode mode_from_string(const std::string& name) {
    if (name == "full") return AblationMode::kFull;
    if (name == "rgb-seg-edge") return AblationMode::kRgbSegEdge;
    if (name == "rgb-seg") return AblationMode::kRgbSeg;
    if (name == "rgb-edge") return AblationMode::kRgbEdge;
    throw std::invalid_argument("unknown ablation mode '" + name + "'");
}

namespace {

void append_gray_plane(std::vector<double>& out, const ImageGray& img) {
    out.insert(out.end(), img.data.begin(), img.data.end());
}

void append_rgb_planes(std::vector<double>& out, const ImageRGB& img) {
    for (int c = 0; c < 3; ++c) {
        ImageGray plane = img.channel(c);
        out.insert(out.end(), plane.data.begin(), plane.data.end());
    }
}

void require_dims(int w, int h, int ow, int oh, const char* what) {
    if (w != ow || h != oh)
        throw std::invalid_argument(std::string("assemble: ") + what + " dimensions mismatch");
}

}  // namespace

Tensor assemble(AblationMode mode, const ImageRGB& rgb, const ImageGray* geometry,
                const ImageRGB* segmentation, const ImageGray* edge) {
    const int w = rgb.width, h = rgb.height;
    const bool need_geometry = mode == AblationMode::kFull;
    const bool need_seg = mode == AblationMode::kFull || mode == AblationMode::kRgbSegEdge ||
                          mode == AblationMode::kRgbSeg;
    const bool need_edge = mode != AblationMode::kRgbSeg;
    if (need_geometry && !geometry) throw std::invalid_argument("assemble: mode requires a geometry map");
    if (need_seg && !segmentation) throw std::invalid_argument("assemble: mode requires a segmentation map");
    if (need_edge && !edge) throw std::invalid_argument("assemble: mode requires an edge map");

    std::vector<double> planes;
    planes.reserve(static_cast<std::size_t>(mode_channel_count(mode)) * w * h);
    switch (mode) {
        case AblationMode::kFull:
            require_dims(geometry->width, geometry->height, w, h, "geometry");
            append_gray_plane(planes, *geometry);
            break;
        case AblationMode::kRgbSegEdge:
            append_gray_plane(planes, to_gray(rgb));
            break;
        case AblationMode::kRgbSeg:
        case AblationMode::kRgbEdge:
            append_rgb_planes(planes, rgb);
            break;
    }
    if (need_seg) {
        require_dims(segmentation->width, segmentation->height, w, h, "segmentation");
        append_rgb_planes(planes, *segmentation);
    }
    if (need_edge) {
        require_dims(edge->width, edge->height, w, h, "edge");
        append_gray_plane(planes, *edge);
    }
    return Tensor::from_vector({1, mode_channel_count(mode), h, w}, std::move(planes));
}

Tensor assemble(const FusionInput& input, AblationMode mode, const ImageRGB& rgb) {
    return assemble(mode, rgb, &input.geometry, &input.segmentation, &input.edge);
}

FusionNet::ConvBN FusionNet::make_conv(const std::string& name, int cin, int cout, int k, Rng& rng) {
    ConvBN c;
    c.w = params_.add(name + ".w", he_uniform({cout, cin, k, k},
                                              static_cast<std::int64_t>(cin) * k * k, rng));
    c.b = params_.add(name + ".b", Tensor({cout}, 0.0));
    c.gamma = params_.add(name + ".bn.gamma", Tensor({cout}, 1.0));
    c.beta = params_.add(name + ".bn.beta", Tensor({cout}, 0.0));
    c.run_mean = params_.add(name + ".bn.run_mean", Tensor({cout}, 0.0), false);
    c.run_var = params_.add(name + ".bn.run_var", Tensor({cout}, 1.0), false);
    return c;
}

FusionNet::FusionNet(const FusionConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.stages < 1) throw std::invalid_argument("FusionNet: stages must be >= 1");
    if (cfg.blocks_per_stage < 1) throw std::invalid_argument("FusionNet: blocks_per_stage must be >= 1");
    if (cfg.base_channels < 1) throw std::invalid_argument("FusionNet: base_channels must be >= 1");
    Rng rng = Rng(seed).split("fusion.init");

    const int cin = mode_channel_count(cfg.mode);
    stem_ = make_conv("stem", cin, cfg.base_channels, 3, rng);

    int ch = cfg.base_channels;
    for (int s = 0; s < cfg.stages; ++s) {
        const int out_ch = cfg.base_channels << (s + 1);
        std::vector<ResBlock> blocks;
        for (int bidx = 0; bidx < cfg.blocks_per_stage; ++bidx) {
            const std::string nm = "stage" + std::to_string(s) + ".block" + std::to_string(bidx);
            ResBlock blk;
            if (bidx == 0) {
                blk.stride = 2;
                blk.c1 = make_conv(nm + ".c1", ch, out_ch, 4, rng);
                blk.c2 = make_conv(nm + ".c2", out_ch, out_ch, 3, rng);
                blk.shortcut = make_conv(nm + ".proj", ch, out_ch, 2, rng);
            } else {
                blk.c1 = make_conv(nm + ".c1", out_ch, out_ch, 3, rng);
                blk.c2 = make_conv(nm + ".c2", out_ch, out_ch, 3, rng);
            }
            blocks.push_back(std::move(blk));
        }
        stages_.push_back(std::move(blocks));
        ch = out_ch;
    }
    for (int s = cfg.stages - 1; s >= 0; --s) {
        const int skip_ch = cfg.base_channels << s;
        const std::string nm = "up" + std::to_string(s);
        DecoderLevel lvl;
        lvl.up_w = params_.add(nm + ".up.w", he_uniform({ch, skip_ch, 4, 4},
                                                        static_cast<std::int64_t>(skip_ch) * 16, rng));
        lvl.up_b = params_.add(nm + ".up.b", Tensor({skip_ch}, 0.0));
        lvl.c1 = make_conv(nm + ".c1", 2 * skip_ch, skip_ch, 3, rng);
        lvl.c2 = make_conv(nm + ".c2", skip_ch, skip_ch, 3, rng);
        decoder_.push_back(std::move(lvl));
        ch = skip_ch;
    }
    head_w_ = params_.add("head.w", he_uniform({1, cfg.base_channels, 1, 1}, cfg.base_channels, rng));
    head_b_ = params_.add("head.b", Tensor({1}, 0.0));
    params_.quantize_f32();
}

Tensor FusionNet::run_conv_bn(const ConvBN& c, const Tensor& x, int stride, int pad, bool training,
                              bool with_relu) {
    BatchNormOpts bn;
    bn.training = training;
    bn.update_running = training;
    Tensor h = conv2d(x, c.w, c.b, stride, pad);
    h = batchnorm(h, c.gamma, c.beta, c.run_mean, c.run_var, bn);
    return with_relu ? relu(h) : h;
}

Tensor FusionNet::run_res_block(const ResBlock& blk, Tensor x, bool training) {
    Tensor main;
    if (blk.stride == 2) {
        main = run_conv_bn(blk.c1, x, 2, 1, training, true);
    } else {
        main = run_conv_bn(blk.c1, x, 1, 1, training, true);
    }
    main = run_conv_bn(blk.c2, main, 1, 1, training, false);
    Tensor skip = x;
    if (blk.shortcut) skip = run_conv_bn(*blk.shortcut, x, 2, 0, training, false);
    return relu(add(main, skip));
}

Tensor FusionNet::forward(const Tensor& x, bool training) {
    if (x.rank() != 4) throw std::invalid_argument("FusionNet::forward expects (1,C,H,W)");
    if (x.dim(1) != mode_channel_count(cfg_.mode))
        throw std::invalid_argument("FusionNet::forward channel count mismatch for the mode");
    const int q = 1 << cfg_.stages;
    if (x.dim(2) % q != 0 || x.dim(3) % q != 0)
        throw std::invalid_argument("FusionNet::forward spatial extents must divide 2^stages");

    Tensor h = run_conv_bn(stem_, x, 1, 1, training, true);
    std::vector<Tensor> skips;
    for (const auto& blocks : stages_) {
        skips.push_back(h);
        for (const auto& blk : blocks) h = run_res_block(blk, h, training);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const auto& lvl = decoder_[i];
        h = conv_transpose2d(h, lvl.up_w, lvl.up_b, 2, 1);
        h = concat({h, skips[skips.size() - 1 - i]}, 1);
        h = run_conv_bn(lvl.c1, h, 1, 1, training, true);
        h = run_conv_bn(lvl.c2, h, 1, 1, training, true);
    }
    h = conv2d(h, head_w_, head_b_, 1, 0);
    return sigmoid(h);
}

ImageGray fusion_forward_map(FusionNet& net, const Tensor& x) {
    Tensor out = net.forward(x, false);
    ImageGray map(static_cast<int>(out.dim(3)), static_cast<int>(out.dim(2)));
    std::memcpy(map.data.data(), out.data(), map.data.size() * sizeof(double));
    return map;
}

DepthMap fusion_predict_depth(FusionNet& net, const Tensor& x, double depth_norm) {
    ImageGray map = fusion_forward_map(net, x);
    DepthMap d(map.width, map.height);
    for (std::size_t i = 0; i < map.pixel_count(); ++i) {
        d.data[i] = map.data[i] * depth_norm;
        d.mask[i] = 1;
    }
    return d;
}

ImageRGB pseudo_segmentation(const ImageRGB& img, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("pseudo_segmentation: k must be >= 2");
    const std::size_t n = img.pixel_count();
    std::set<std::array<double, 3>> distinct;
    for (std::size_t i = 0; i < n; ++i)
        distinct.insert({img.data[i * 3], img.data[i * 3 + 1], img.data[i * 3 + 2]});
    if (static_cast<std::size_t>(k) > distinct.size())
        throw std::invalid_argument("pseudo_segmentation: k exceeds the number of distinct colors");

    Rng rng = Rng(seed).split("kmeans");
    std::vector<std::array<double, 3>> centroids;
    centroids.reserve(static_cast<std::size_t>(k));
    auto pixel = [&](std::size_t i) {
        return std::array<double, 3>{img.data[i * 3], img.data[i * 3 + 1], img.data[i * 3 + 2]};
    };
    auto dist2 = [](const std::array<double, 3>& a, const std::array<double, 3>& b) {
        const double dr = a[0] - b[0], dg = a[1] - b[1], db = a[2] - b[2];
        return dr * dr + dg * dg + db * db;
    };

    // k-means++ seeding: D^2 sampling guarantees distinct starting colors.
    centroids.push_back(pixel(rng.uniform_int(n)));
    std::vector<double> d2(n);
    while (centroids.size() < static_cast<std::size_t>(k)) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = dist2(pixel(i), centroids[0]);
            for (std::size_t c = 1; c < centroids.size(); ++c)
                best = std::min(best, dist2(pixel(i), centroids[c]));
            d2[i] = best;
            total += best;
        }
        double r = rng.uniform() * total;
        std::size_t chosen = 0;
        for (std::size_t i = 0; i < n; ++i) {
            r -= d2[i];
            if (r <= 0.0) {
                chosen = i;
                break;
            }
            chosen = i;
        }
        centroids.push_back(pixel(chosen));
    }

    std::vector<int> assign(n, 0);
    for (int iter = 0; iter < 20; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = dist2(pixel(i), centroids[0]);
            for (int c = 1; c < k; ++c) {
                const double d = dist2(pixel(i), centroids[static_cast<std::size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            assign[i] = best;
        }
        std::vector<std::array<double, 3>> sums(static_cast<std::size_t>(k), {0, 0, 0});
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto p = pixel(i);
            auto& s = sums[static_cast<std::size_t>(assign[i])];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
            ++counts[static_cast<std::size_t>(assign[i])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) continue;  // keep the previous centroid
            for (int j = 0; j < 3; ++j)
                centroids[static_cast<std::size_t>(c)][j] =
                    sums[static_cast<std::size_t>(c)][j] / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        }
    }
    ImageRGB out(img.width, img.height);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& c = centroids[static_cast<std::size_t>(assign[i])];
        out.data[i * 3] = c[0];
        out.data[i * 3 + 1] = c[1];
        out.data[i * 3 + 2] = c[2];
    }
    return out;
}

ImageGray edge_map(const ImageGray& img) {
    ImageGray mag = sobel_magnitude(img);
    double hi = 0.0;
    for (double v : mag.data) hi = std::max(hi, v);
    if (hi > 0.0)
        for (double& v : mag.data) v /= hi;
    return mag;
}

}  // namespace bgdepth
