#include "bgdepth/bgunet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace bgdepth {

namespace {

int pow2(int e) { return 1 << e; }

}  // namespace

BGUNet::Block BGUNet::make_block(const std::string& name, int cin, int cout, Rng& rng) {
    auto make_sub = [&](const std::string& sub, int ci) {
        SubBlock s;
        s.w = params_.add(name + "." + sub + ".w",
                          he_uniform({cout, ci, 5, 5, 5}, static_cast<std::int64_t>(ci) * 125, rng));
        s.b = params_.add(name + "." + sub + ".b", Tensor({cout}, 0.0));
        s.gamma = params_.add(name + "." + sub + ".bn.gamma", Tensor({cout}, 1.0));
        s.beta = params_.add(name + "." + sub + ".bn.beta", Tensor({cout}, 0.0));
        s.run_mean = params_.add(name + "." + sub + ".bn.run_mean", Tensor({cout}, 0.0), false);
        s.run_var = params_.add(name + "." + sub + ".bn.run_var", Tensor({cout}, 1.0), false);
        return s;
    };
    Block blk;
    blk.s1 = make_sub("s1", cin);
    blk.s2 = make_sub("s2", cout);
    return blk;
}

BGUNet::BGUNet(const BGUNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.in_channels != 1 && cfg.in_channels != 3)
        throw std::invalid_argument("BGUNet: in_channels must be 1 or 3");
    if (cfg.depth < 1) throw std::invalid_argument("BGUNet: depth must be >= 1");
    if (cfg.base_channels < 1) throw std::invalid_argument("BGUNet: base_channels must be >= 1");
    if (cfg.grid.n_bins % pow2(cfg.depth) != 0)
        throw std::invalid_argument("BGUNet: n_bins must be divisible by 2^depth");
    Rng rng = Rng(seed).split("bgunet.init");

    const int cin_net = input_channels();
    for (int i = 0; i < cfg.depth; ++i) {
        const int ci = i == 0 ? cin_net : cfg.base_channels * pow2(i - 1);
        const int co = cfg.base_channels * pow2(i);
        enc_.push_back(make_block("enc" + std::to_string(i), ci, co, rng));
    }
    bottom_ = make_block("bottom", cfg.base_channels * pow2(cfg.depth - 1),
                         cfg.base_channels * pow2(cfg.depth), rng);
    ups_.resize(static_cast<std::size_t>(cfg.depth));
    dec_.resize(static_cast<std::size_t>(cfg.depth));
    for (int i = cfg.depth - 1; i >= 0; --i) {
        const int above = cfg.base_channels * pow2(i + 1);
        const int co = cfg.base_channels * pow2(i);
        const std::string nm = "dec" + std::to_string(i);
        UpLayer up;
        up.w = params_.add(nm + ".up.w", he_uniform({above, co, 4, 4, 4},
                                                    static_cast<std::int64_t>(co) * 64, rng));
        up.b = params_.add(nm + ".up.b", Tensor({co}, 0.0));
        ups_[static_cast<std::size_t>(i)] = up;
        dec_[static_cast<std::size_t>(i)] = make_block(nm, 2 * co, co, rng);
    }
    head_w_ = params_.add("head.w", he_uniform({cfg.in_channels, cfg.base_channels, 1, 1, 1},
                                               cfg.base_channels, rng));
    head_b_ = params_.add("head.b", Tensor({cfg.in_channels}, 0.0));
    params_.quantize_f32();
}

int BGUNet::input_channels() const {
    return cfg_.in_channels * (cfg_.include_occupancy ? 2 : 1);
}

void BGUNet::check_grid_extents(int nx, int ny, int nb) const {
    const int q = pow2(cfg_.depth);
    if (nx % q != 0 || ny % q != 0 || nb % q != 0)
        throw std::invalid_argument("grid extents must be divisible by 2^depth");
}

namespace {

void note_relu_margin(const Tensor& t, ActivationMargins* margins) {
    if (!margins) return;
    const double* p = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i)
        margins->min_relu_abs = std::min(margins->min_relu_abs, std::abs(p[i]));
}

// Smallest (winner - runner-up) over all 2x2x2 pooling windows.
void note_pool_margin(const Tensor& t, ActivationMargins* margins) {
    if (!margins) return;
    const auto& s = t.shape();
    const int d = static_cast<int>(s[2]), h = static_cast<int>(s[3]), w = static_cast<int>(s[4]);
    const double* p = t.data();
    const std::int64_t planes = s[0] * s[1];
    for (std::int64_t nc = 0; nc < planes; ++nc) {
        const double* base = p + nc * d * h * w;
        for (int od = 0; od + 1 < d; od += 2)
            for (int oh = 0; oh + 1 < h; oh += 2)
                for (int ow = 0; ow + 1 < w; ow += 2) {
                    double best = -1e300, second = -1e300;
                    for (int dd = 0; dd < 2; ++dd)
                        for (int dh = 0; dh < 2; ++dh)
                            for (int dw = 0; dw < 2; ++dw) {
                                const double v = base[(static_cast<std::size_t>(od + dd) * h + (oh + dh)) * w +
                                                      (ow + dw)];
                                if (v > best) {
                                    second = best;
                                    best = v;
                                } else if (v > second) {
                                    second = v;
                                }
                            }
                    margins->min_pool_gap = std::min(margins->min_pool_gap, best - second);
                }
    }
}

}  // namespace

Tensor BGUNet::run_block(const Block& blk, Tensor x, bool training, ActivationMargins* margins) {
    BatchNormOpts bn;
    bn.training = training;
    bn.update_running = training;
    for (const SubBlock* s : {&blk.s1, &blk.s2}) {
        x = conv3d(x, s->w, s->b, 1, 2);
        if (cfg_.bn_before_act) {
            x = batchnorm(x, s->gamma, s->beta, s->run_mean, s->run_var, bn);
            note_relu_margin(x, margins);
            x = relu(x);
        } else {
            note_relu_margin(x, margins);
            x = relu(x);
            x = batchnorm(x, s->gamma, s->beta, s->run_mean, s->run_var, bn);
        }
    }
    return x;
}

Tensor BGUNet::forward(const Tensor& x, bool training, ActivationMargins* margins) {
    if (x.rank() != 5) throw std::invalid_argument("BGUNet::forward expects (N,C,nb,ny,nx)");
    if (x.dim(1) != input_channels()) throw std::invalid_argument("BGUNet::forward channel mismatch");
    check_grid_extents(static_cast<int>(x.dim(2)), static_cast<int>(x.dim(3)),
                       static_cast<int>(x.dim(4)));
    std::vector<Tensor> skips;
    Tensor h = x;
    for (auto& blk : enc_) {
        h = run_block(blk, h, training, margins);
        skips.push_back(h);
        note_pool_margin(h, margins);
        h = maxpool3d(h, 2);
    }
    h = run_block(bottom_, h, training, margins);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
        const auto& up = ups_[static_cast<std::size_t>(i)];
        h = conv_transpose3d(h, up.w, up.b, 2, 1);
        h = concat({h, skips[static_cast<std::size_t>(i)]}, 1);
        h = run_block(dec_[static_cast<std::size_t>(i)], h, training, margins);
    }
    h = conv3d(h, head_w_, head_b_, 1, 0);
    return sigmoid(h);
}

Tensor grids_to_tensor(std::span<const DenseGrid> grids, bool include_occupancy) {
    if (grids.empty()) throw std::invalid_argument("grids_to_tensor: no grids");
    const int nx = grids[0].nx, ny = grids[0].ny, nb = grids[0].nb;
    for (const DenseGrid& g : grids)
        if (g.nx != nx || g.ny != ny || g.nb != nb)
            throw std::invalid_argument("grids_to_tensor: mismatched grid dims");
    const int c = static_cast<int>(grids.size());
    const int channels = include_occupancy ? 2 * c : c;
    // Tensor layout is (1, C, nb, ny, nx): the largest extent lands on the
    // contiguous axis, which keeps the convolution inner loops wide.
    Tensor t({1, channels, nb, ny, nx});
    const std::size_t voxels = grids[0].voxel_count();
    for (int i = 0; i < c; ++i) {
        const DenseGrid& g = grids[static_cast<std::size_t>(i)];
        double* dst = t.data() + static_cast<std::size_t>(i) * voxels;
        for (int b = 0; b < nb; ++b)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x)
                    dst[(static_cast<std::size_t>(b) * ny + y) * nx + x] = g.value[g.idx(x, y, b)];
    }
    if (include_occupancy) {
        for (int i = 0; i < c; ++i) {
            const DenseGrid& g = grids[static_cast<std::size_t>(i)];
            double* dst = t.data() + static_cast<std::size_t>(c + i) * voxels;
            for (int b = 0; b < nb; ++b)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x)
                        dst[(static_cast<std::size_t>(b) * ny + y) * nx + x] =
                            g.occupancy[g.idx(x, y, b)] ? 1.0 : 0.0;
        }
    }
    return t;
}

Tensor lift_input(const ImageGray& img, const GridParams& p, bool include_occupancy) {
    const DenseGrid g = normalize(lift_gray(img, p));
    return grids_to_tensor(std::span<const DenseGrid>(&g, 1), include_occupancy);
}

Tensor lift_input(const ImageRGB& img, const GridParams& p, bool include_occupancy) {
    const auto grids = lift_rgb(img, p);
    std::vector<DenseGrid> dense;
    dense.reserve(3);
    for (const auto& g : grids) dense.push_back(normalize(g));
    return grids_to_tensor(dense, include_occupancy);
}

SlicePlan make_slice_plan(std::span<const ImageGray> reference_channels, const GridParams& p,
                          int nx, int ny, int nb) {
    if (reference_channels.empty()) throw std::invalid_argument("make_slice_plan: no reference channels");
    const int w = reference_channels[0].width, h = reference_channels[0].height;
    if (p.cells_x(w) != nx || p.cells_y(h) != ny || p.n_bins != nb)
        throw std::invalid_argument("make_slice_plan: reference inconsistent with grid dims");
    SlicePlan plan;
    plan.channels = static_cast<int>(reference_channels.size());
    plan.width = w;
    plan.height = h;
    plan.nx = nx;
    plan.ny = ny;
    plan.nb = nb;
    const std::size_t n = static_cast<std::size_t>(plan.channels) * w * h * 8;
    plan.corner_index.resize(n);
    plan.corner_weight.resize(n);
    const double bin_scale = static_cast<double>(nb - 1);
    std::size_t pos = 0;
    for (const ImageGray& ref : reference_channels) {
        if (ref.width != w || ref.height != h)
            throw std::invalid_argument("make_slice_plan: reference channel dims differ");
        for (int y = 0; y < h; ++y) {
            const double fy = std::clamp(static_cast<double>(y) / p.sr_s, 0.0, static_cast<double>(ny - 1));
            const int y0 = static_cast<int>(fy);
            const int y1 = std::min(y0 + 1, ny - 1);
            const double wy = fy - y0;
            for (int x = 0; x < w; ++x) {
                const double fx = std::clamp(static_cast<double>(x) / p.sr_s, 0.0, static_cast<double>(nx - 1));
                const int x0 = static_cast<int>(fx);
                const int x1 = std::min(x0 + 1, nx - 1);
                const double wx = fx - x0;
                const double fb = std::clamp(ref.at(x, y) * bin_scale, 0.0, bin_scale);
                const int b0 = static_cast<int>(fb);
                const int b1 = std::min(b0 + 1, nb - 1);
                const double wb = fb - b0;
                for (int cx = 0; cx < 2; ++cx)
                    for (int cy = 0; cy < 2; ++cy)
                        for (int cb = 0; cb < 2; ++cb) {
                            const int gx = cx ? x1 : x0;
                            const int gy = cy ? y1 : y0;
                            const int gb = cb ? b1 : b0;
                            // Grid tensors are (nb, ny, nx)-ordered.
                            plan.corner_index[pos] =
                                (static_cast<std::int64_t>(gb) * ny + gy) * nx + gx;
                            plan.corner_weight[pos] = (cx ? wx : 1.0 - wx) * (cy ? wy : 1.0 - wy) *
                                                      (cb ? wb : 1.0 - wb);
                            ++pos;
                        }
            }
        }
    }
    return plan;
}

Tensor sliced_gray_map(const Tensor& output_grids, const SlicePlan& plan) {
    Tensor maps = slice_grid(output_grids, plan);
    if (plan.channels == 1) return maps;
    if (plan.channels == 3) {
        static constexpr double kLuma[3] = {0.299, 0.587, 0.114};
        return channel_weighted_sum(maps, std::span<const double>(kLuma, 3));
    }
    throw std::invalid_argument("sliced_gray_map: expected 1 or 3 channels");
}

namespace {

ImageGray map_from_tensor(const Tensor& t) {
    ImageGray out(static_cast<int>(t.dim(3)), static_cast<int>(t.dim(2)));
    const double* p = t.data();
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.at(x, y) = std::clamp(p[static_cast<std::size_t>(y) * out.width + x], 0.0, 1.0);
    return out;
}

}  // namespace

ImageGray geometry_map(BGUNet& model, const ImageGray& reference) {
    if (model.config().in_channels != 1)
        throw std::invalid_argument("geometry_map: model expects RGB input");
    const GridParams& p = model.config().grid;
    Tensor input = lift_input(reference, p, model.config().include_occupancy);
    Tensor out = model.forward(input, false);
    const SlicePlan plan = make_slice_plan(std::span<const ImageGray>(&reference, 1), p,
                                           static_cast<int>(input.dim(4)), static_cast<int>(input.dim(3)),
                                           static_cast<int>(input.dim(2)));
    return map_from_tensor(sliced_gray_map(out, plan));
}

ImageGray geometry_map(BGUNet& model, const ImageRGB& reference) {
    if (model.config().in_channels != 3)
        throw std::invalid_argument("geometry_map: model expects grayscale input");
    const GridParams& p = model.config().grid;
    Tensor input = lift_input(reference, p, model.config().include_occupancy);
    Tensor out = model.forward(input, false);
    const ImageGray chans[3] = {reference.channel(0), reference.channel(1), reference.channel(2)};
    const SlicePlan plan = make_slice_plan(std::span<const ImageGray>(chans, 3), p,
                                           static_cast<int>(input.dim(4)), static_cast<int>(input.dim(3)),
                                           static_cast<int>(input.dim(2)));
    return map_from_tensor(sliced_gray_map(out, plan));
}

std::pair<Tensor, Tensor> depth_target(const DepthMap& gt, double depth_norm) {
    if (depth_norm <= 0.0) throw std::invalid_argument("depth_norm must be positive");
    Tensor target({1, 1, gt.height, gt.width});
    Tensor mask({1, 1, gt.height, gt.width});
    bool any = false;
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        if (!gt.mask[i]) continue;
        target.data()[i] = gt.data[i] / depth_norm;
        mask.data()[i] = 1.0;
        any = true;
    }
    if (!any) throw std::invalid_argument("depth_target: ground truth has no valid pixels");
    return {target, mask};
}

Tensor bgunet_loss(BGUNet& model, const Tensor& input, const SlicePlan& plan, const DepthMap& gt,
                   double depth_norm, bool training, const ImageGray* reference_for_grid_space,
                   bool grid_space) {
    Tensor out = model.forward(input, training);
    if (!grid_space) {
        Tensor map = sliced_gray_map(out, plan);
        auto [target, mask] = depth_target(gt, depth_norm);
        return mse(map, target, &mask);
    }
    // Grid-space objective: splat gt/depth_norm at the reference's bins and
    // compare over occupied voxels. Supported for single-channel models.
    if (model.config().in_channels != 1 || !reference_for_grid_space)
        throw std::invalid_argument("grid-space loss needs a grayscale reference and in_channels == 1");
    const GridParams& p = model.config().grid;
    const ImageGray& ref = *reference_for_grid_space;
    BilateralGrid acc(static_cast<int>(input.dim(4)), static_cast<int>(input.dim(3)),
                      static_cast<int>(input.dim(2)));
    const double bin_scale = static_cast<double>(acc.nb - 1);
    for (int y = 0; y < ref.height; ++y)
        for (int x = 0; x < ref.width; ++x) {
            if (!gt.valid(x, y)) continue;
            const int gx = std::clamp<long>(std::lround(static_cast<double>(x) / p.sr_s), 0, acc.nx - 1);
            const int gy = std::clamp<long>(std::lround(static_cast<double>(y) / p.sr_s), 0, acc.ny - 1);
            const int gb = std::clamp<long>(std::lround(ref.at(x, y) * bin_scale), 0, acc.nb - 1);
            acc.value_sum[acc.idx(gx, gy, gb)] += gt.at(x, y) / depth_norm;
            acc.weight[acc.idx(gx, gy, gb)] += 1.0;
        }
    const DenseGrid target_grid = normalize(acc);
    Tensor target({1, 1, acc.nb, acc.ny, acc.nx});
    Tensor mask({1, 1, acc.nb, acc.ny, acc.nx});
    for (int b = 0; b < acc.nb; ++b)
        for (int y = 0; y < acc.ny; ++y)
            for (int x = 0; x < acc.nx; ++x) {
                const std::size_t dst = (static_cast<std::size_t>(b) * acc.ny + y) * acc.nx + x;
                const std::size_t src = target_grid.idx(x, y, b);
                target.data()[dst] = target_grid.value[src];
                mask.data()[dst] = target_grid.occupancy[src] ? 1.0 : 0.0;
            }
    // Model output channel 0 against the occupied target voxels.
    return mse(out, target, &mask);
}

}  // namespace bgdepth
