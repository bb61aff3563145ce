#include "bgdepth/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "bgdepth/rng.hpp"

namespace bgdepth {

Adam::Adam(std::vector<NamedTensor> targets, const AdamConfig& cfg) : targets_(std::move(targets)), cfg_(cfg) {
    m_.resize(targets_.size());
    v_.resize(targets_.size());
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(targets_[i].value.numel()), 0.0);
        v_[i].assign(static_cast<std::size_t>(targets_[i].value.numel()), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        Tensor& p = targets_[i].value;
        const double* g = p.grad();
        double* pv = p.data();
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            m_[i][static_cast<std::size_t>(j)] =
                cfg_.beta1 * m_[i][static_cast<std::size_t>(j)] + (1.0 - cfg_.beta1) * g[j];
            v_[i][static_cast<std::size_t>(j)] =
                cfg_.beta2 * v_[i][static_cast<std::size_t>(j)] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m_[i][static_cast<std::size_t>(j)] / bc1;
            const double vhat = v_[i][static_cast<std::size_t>(j)] / bc2;
            pv[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

std::vector<Checkpoint::AdamSlot> Adam::slots() const {
    std::vector<Checkpoint::AdamSlot> out;
    for (std::size_t i = 0; i < targets_.size(); ++i)
        out.push_back({targets_[i].name, m_[i], v_[i]});
    return out;
}

void Adam::restore(std::uint64_t t, const std::vector<Checkpoint::AdamSlot>& slots) {
    t_ = t;
    for (std::size_t i = 0; i < targets_.size(); ++i) {
        const Checkpoint::AdamSlot* found = nullptr;
        for (const auto& s : slots)
            if (s.name == targets_[i].name) found = &s;
        if (!found) throw std::invalid_argument("optimizer state missing for " + targets_[i].name);
        if (found->m.size() != m_[i].size())
            throw std::invalid_argument("optimizer state size mismatch for " + targets_[i].name);
        m_[i] = found->m;
        v_[i] = found->v;
    }
}

BGUNetConfig bgunet_config_from(const Config& cfg) {
    BGUNetConfig b;
    b.in_channels = cfg.get_int("bgunet.in_channels", 1);
    b.base_channels = cfg.get_int("bgunet.base_channels", 8);
    b.depth = cfg.get_int("bgunet.depth", 2);
    b.grid.sr_s = cfg.get_int("grid.sr_s", 2);
    b.grid.n_bins = cfg.get_int("grid.n_bins", 16);
    b.include_occupancy = cfg.get_bool("bgunet.include_occupancy", false);
    b.bn_before_act = cfg.get_bool("bgunet.bn_before_act", false);
    return b;
}

FusionConfig fusion_config_from(const Config& cfg) {
    FusionConfig f;
    f.mode = mode_from_string(cfg.get_str("fusion.mode", "full"));
    f.base_channels = cfg.get_int("fusion.base_channels", 16);
    f.stages = cfg.get_int("fusion.stages", 4);
    f.blocks_per_stage = cfg.get_int("fusion.blocks_per_stage", 2);
    return f;
}

namespace {

AdamConfig adam_config_from(const Config& cfg) {
    AdamConfig a;
    a.lr = cfg.get_double("optim.lr", 1e-4);
    a.beta1 = cfg.get_double("optim.beta1", 0.9);
    a.beta2 = cfg.get_double("optim.beta2", 0.999);
    a.eps = cfg.get_double("optim.eps", 1e-8);
    if (a.lr < 0.0) throw std::invalid_argument("optim.lr must be >= 0");
    return a;
}

std::uint64_t total_steps_from(const Config& cfg, std::size_t n_samples, int batch) {
    const int steps = cfg.get_int("train.steps", 200);
    if (steps > 0) return static_cast<std::uint64_t>(steps);
    const int epochs = cfg.get_int("train.epochs", 150);
    const std::size_t spe = (n_samples + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch);
    return static_cast<std::uint64_t>(epochs) * spe;
}

// Architecture keys must agree between a checkpoint and the run that
// consumes it; the step budget and the learning rate are schedule knobs and
// may differ (that is how runs resume and decay).
Config strip_schedule(const Config& cfg) {
    Config out = cfg;
    Config res;
    for (const auto& [k, v] : out.values())
        if (k != "train.steps" && k != "train.epochs" && k != "optim.lr") res.set(k, v);
    return res;
}

void require_compatible(const Config& a, const Config& b, const char* what) {
    if (!(strip_schedule(a) == strip_schedule(b)))
        throw std::invalid_argument(std::string(what) + ": checkpoint config conflicts with the requested one");
}

}  // namespace

std::vector<NamedTensor> ModelBundle::named_state() const {
    std::vector<NamedTensor> out;
    if (bg)
        for (const auto& it : bg->params().items()) out.push_back({"bg." + it.name, it.value, it.trainable});
    if (fusion)
        for (const auto& it : fusion->params().items())
            out.push_back({"fusion." + it.name, it.value, it.trainable});
    return out;
}

ModelBundle build_bundle(const Config& cfg) {
    ModelBundle b;
    b.config = cfg;
    b.type = cfg.get_str("model.type", "bgunet");
    b.depth_norm = cfg.get_double("train.depth_norm", 10.0);
    const std::uint64_t seed = cfg.get_u64("train.seed", 0);
    if (b.type == "bgunet") {
        b.bg = std::make_unique<BGUNet>(bgunet_config_from(cfg), seed);
    } else if (b.type == "fusion") {
        const FusionConfig fc = fusion_config_from(cfg);
        b.fusion = std::make_unique<FusionNet>(fc, seed);
        if (fc.mode == AblationMode::kFull)
            b.bg = std::make_unique<BGUNet>(bgunet_config_from(cfg), seed);
    } else {
        throw std::invalid_argument("model.type must be 'bgunet' or 'fusion'");
    }
    return b;
}

namespace {

void restore_tensors(ModelBundle& bundle, const Checkpoint& ckpt) {
    const auto state = bundle.named_state();
    if (state.size() != ckpt.tensors.size())
        throw std::invalid_argument("checkpoint tensor count does not match the model");
    for (const auto& item : state) {
        const Checkpoint::TensorEntry* e = ckpt.find(item.name);
        if (!e) throw std::invalid_argument("checkpoint is missing tensor " + item.name);
        if (e->shape != item.value.shape())
            throw std::invalid_argument("checkpoint shape mismatch for " + item.name);
        double* p = const_cast<Tensor&>(item.value).data();
        for (std::size_t i = 0; i < e->data.size(); ++i) p[i] = static_cast<double>(e->data[i]);
    }
}

Checkpoint make_checkpoint(const ModelBundle& bundle, const Adam* adam, const Rng& rng,
                           std::uint64_t step) {
    Checkpoint ckpt;
    ckpt.config = bundle.config;
    for (const auto& item : bundle.named_state()) {
        Checkpoint::TensorEntry e;
        e.name = item.name;
        e.shape = item.value.shape();
        e.trainable = item.trainable;
        e.data.resize(static_cast<std::size_t>(item.value.numel()));
        const double* p = item.value.data();
        for (std::size_t i = 0; i < e.data.size(); ++i) e.data[i] = static_cast<float>(p[i]);
        ckpt.tensors.push_back(std::move(e));
    }
    if (adam) {
        ckpt.adam_step = adam->step_count();
        ckpt.adam_slots = adam->slots();
    }
    ckpt.rng_key = rng.key();
    ckpt.rng_counter = rng.counter();
    ckpt.step = step;
    return ckpt;
}

}  // namespace

ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt) {
    ModelBundle bundle = build_bundle(ckpt.config);
    restore_tensors(bundle, ckpt);
    return bundle;
}

ImageRGB sample_segmentation(const Sample& sample, const Config& cfg) {
    if (sample.seg) return *sample.seg;
    int k = cfg.get_int("data.seg_k", 6);
    std::set<std::array<double, 3>> distinct;
    for (std::size_t i = 0; i < sample.rgb.pixel_count() && distinct.size() < static_cast<std::size_t>(k);
         ++i)
        distinct.insert({sample.rgb.data[i * 3], sample.rgb.data[i * 3 + 1], sample.rgb.data[i * 3 + 2]});
    k = std::min<int>(k, static_cast<int>(distinct.size()));
    if (k < 2) return sample.rgb;  // flat image segments to itself
    return pseudo_segmentation(sample.rgb, k, cfg.get_u64("data.seg_seed", 0));
}

ImageGray sample_edge(const Sample& sample) {
    if (sample.edge) return *sample.edge;
    return edge_map(to_gray(sample.rgb));
}

namespace {

ImageGray geometry_for_sample(ModelBundle& bundle, const Sample& sample) {
    if (!bundle.bg) throw std::invalid_argument("full-mode fusion needs the geometry network");
    if (bundle.bg->config().in_channels == 3) return geometry_map(*bundle.bg, sample.rgb);
    return geometry_map(*bundle.bg, to_gray(sample.rgb));
}

}  // namespace

DepthMap predict_sample(ModelBundle& bundle, const Sample& sample) {
    if (bundle.type == "bgunet") {
        ImageGray map = bundle.bg->config().in_channels == 3
                            ? geometry_map(*bundle.bg, sample.rgb)
                            : geometry_map(*bundle.bg, to_gray(sample.rgb));
        DepthMap d(map.width, map.height);
        for (std::size_t i = 0; i < map.pixel_count(); ++i) {
            d.data[i] = map.data[i] * bundle.depth_norm;
            d.mask[i] = 1;
        }
        return d;
    }
    const AblationMode mode = bundle.fusion->config().mode;
    ImageGray geom, edge;
    ImageRGB seg;
    const ImageGray* geom_p = nullptr;
    const ImageRGB* seg_p = nullptr;
    const ImageGray* edge_p = nullptr;
    if (mode == AblationMode::kFull) {
        geom = geometry_for_sample(bundle, sample);
        geom_p = &geom;
    }
    if (mode != AblationMode::kRgbEdge) {
        seg = sample_segmentation(sample, bundle.config);
        seg_p = &seg;
    }
    if (mode != AblationMode::kRgbSeg) {
        edge = sample_edge(sample);
        edge_p = &edge;
    }
    Tensor x = assemble(mode, sample.rgb, geom_p, seg_p, edge_p);
    return fusion_predict_depth(*bundle.fusion, x, bundle.depth_norm);
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step, std::size_t n_samples,
                                       int batch_size) {
    if (n_samples == 0) throw std::invalid_argument("batch_indices: empty dataset");
    const std::size_t bs = static_cast<std::size_t>(std::max(batch_size, 1));
    const std::size_t spe = (n_samples + bs - 1) / bs;
    const std::uint64_t epoch = step / spe;
    const std::size_t pos = static_cast<std::size_t>(step % spe) * bs;
    std::vector<std::size_t> perm(n_samples);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = Rng(seed).split("shuffle").split(epoch);
    shuffle(perm.data(), perm.size(), rng);
    std::vector<std::size_t> out;
    for (std::size_t i = pos; i < std::min(pos + bs, n_samples); ++i) out.push_back(perm[i]);
    return out;
}

namespace {

struct BgSampleCtx {
    Tensor input;
    SlicePlan plan;
    ImageGray gray_ref;
    const Sample* sample;
};

struct FusionSampleCtx {
    Tensor full_input;  // complete input when geometry is frozen or absent
    Tensor rest;        // channels after the geometry slot (joint mode)
    Tensor bg_input;    // grid tensor for the geometry network (joint mode)
    SlicePlan plan;     // slice plan for the geometry network (joint mode)
    Tensor target, mask;
};

BgSampleCtx make_bg_ctx(const Sample& s, const BGUNetConfig& bc, bool occupancy) {
    BgSampleCtx ctx;
    ctx.sample = &s;
    ctx.gray_ref = to_gray(s.rgb);
    // Grid tensors are (1, C, nb, ny, nx)-ordered.
    if (bc.in_channels == 3) {
        ctx.input = lift_input(s.rgb, bc.grid, occupancy);
        const ImageGray chans[3] = {s.rgb.channel(0), s.rgb.channel(1), s.rgb.channel(2)};
        ctx.plan = make_slice_plan(std::span<const ImageGray>(chans, 3), bc.grid,
                                   static_cast<int>(ctx.input.dim(4)), static_cast<int>(ctx.input.dim(3)),
                                   static_cast<int>(ctx.input.dim(2)));
    } else {
        ctx.input = lift_input(ctx.gray_ref, bc.grid, occupancy);
        ctx.plan = make_slice_plan(std::span<const ImageGray>(&ctx.gray_ref, 1), bc.grid,
                                   static_cast<int>(ctx.input.dim(4)), static_cast<int>(ctx.input.dim(3)),
                                   static_cast<int>(ctx.input.dim(2)));
    }
    return ctx;
}

}  // namespace

TrainResult train_model(const Config& cfg_in, const std::vector<Sample>& data, const Checkpoint* resume,
                        const Checkpoint* frozen_bg, const std::function<bool(std::uint64_t, double)>& callback) {
    if (data.empty()) throw std::invalid_argument("train_model: empty dataset");
    Config cfg = cfg_in;
    const std::string type = cfg.get_str("model.type", "bgunet");
    const bool joint = cfg.get_bool("train.joint_fusion", false);
    const bool grid_space = cfg.get_bool("train.grid_space_loss", false);
    const int batch = std::max(1, cfg.get_int("train.batch_size", 1));
    const std::uint64_t seed = cfg.get_u64("train.seed", 0);
    const double depth_norm = cfg.get_double("train.depth_norm", 10.0);

    // Full-mode fusion adopts the geometry network's architecture keys so the
    // checkpoint echo always reconstructs the embedded network.
    if (type == "fusion" && fusion_config_from(cfg).mode == AblationMode::kFull && frozen_bg && !resume) {
        for (const auto& [k, v] : frozen_bg->config.values())
            if (k.rfind("bgunet.", 0) == 0 || k.rfind("grid.", 0) == 0) cfg.set(k, v);
    }

    ModelBundle bundle;
    if (resume) {
        require_compatible(resume->config, cfg, "resume");
        Config merged = resume->config;
        merged.set("train.steps", std::to_string(cfg.get_int("train.steps", 200)));
        if (cfg.has("train.epochs")) merged.set("train.epochs", cfg.get_str("train.epochs", ""));
        if (cfg.has("optim.lr")) merged.set("optim.lr", cfg.get_str("optim.lr", ""));
        bundle = bundle_from_checkpoint(*resume);
        bundle.config = merged;
    } else {
        bundle = build_bundle(cfg);
        if (bundle.type == "fusion" && bundle.fusion->config().mode == AblationMode::kFull) {
            if (!frozen_bg)
                throw std::invalid_argument("full-mode fusion training needs a geometry checkpoint");
            ModelBundle bg_bundle = bundle_from_checkpoint(*frozen_bg);
            if (!bg_bundle.bg) throw std::invalid_argument("geometry checkpoint holds no grid network");
            bundle.bg = std::move(bg_bundle.bg);
        }
    }

    // Trainable set: the predictor's parameters; the geometry network joins
    // only under joint fine-tuning.
    std::vector<NamedTensor> trainable;
    const bool train_bg = bundle.type == "bgunet" || (bundle.type == "fusion" && joint && bundle.bg);
    if (bundle.bg) {
        for (auto& it : bundle.bg->params().items()) {
            it.value.set_requires_grad(it.trainable && train_bg);
            if (it.trainable && train_bg) trainable.push_back({"bg." + it.name, it.value, true});
        }
    }
    if (bundle.fusion)
        for (const auto& it : bundle.fusion->params().items())
            if (it.trainable) trainable.push_back({"fusion." + it.name, it.value, true});

    Adam adam(trainable, adam_config_from(cfg));
    Rng run_rng = Rng(seed).split("run");
    std::uint64_t start_step = 0;
    if (resume) {
        adam.restore(resume->adam_step, resume->adam_slots);
        run_rng = Rng(resume->rng_key, resume->rng_counter, true);
        start_step = resume->step;
    }

    // Per-sample precomputation.
    std::vector<BgSampleCtx> bg_ctx;
    std::vector<FusionSampleCtx> fu_ctx;
    if (bundle.type == "bgunet") {
        const BGUNetConfig bc = bundle.bg->config();
        for (const Sample& s : data) bg_ctx.push_back(make_bg_ctx(s, bc, bc.include_occupancy));
    } else {
        const AblationMode mode = bundle.fusion->config().mode;
        for (const Sample& s : data) {
            FusionSampleCtx ctx;
            auto [target, mask] = depth_target(s.depth, depth_norm);
            ctx.target = target;
            ctx.mask = mask;
            ImageGray geom, edge;
            ImageRGB seg;
            const ImageGray* geom_p = nullptr;
            const ImageRGB* seg_p = nullptr;
            const ImageGray* edge_p = nullptr;
            if (mode != AblationMode::kRgbEdge) {
                seg = sample_segmentation(s, cfg);
                seg_p = &seg;
            }
            if (mode != AblationMode::kRgbSeg) {
                edge = sample_edge(s);
                edge_p = &edge;
            }
            if (mode == AblationMode::kFull) {
                if (joint) {
                    BgSampleCtx b = make_bg_ctx(s, bundle.bg->config(), bundle.bg->config().include_occupancy);
                    ctx.bg_input = b.input;
                    ctx.plan = b.plan;
                    // Channels after the geometry slot.
                    ImageGray dummy(s.rgb.width, s.rgb.height, 0.0);
                    Tensor full = assemble(mode, s.rgb, &dummy, seg_p, edge_p);
                    ctx.rest = narrow(full, 1, 1, full.dim(1) - 1);
                } else {
                    geom = geometry_for_sample(bundle, s);
                    geom_p = &geom;
                    ctx.full_input = assemble(mode, s.rgb, geom_p, seg_p, edge_p);
                }
            } else {
                ctx.full_input = assemble(mode, s.rgb, nullptr, seg_p, edge_p);
            }
            fu_ctx.push_back(std::move(ctx));
        }
    }

    const std::uint64_t total = total_steps_from(cfg, data.size(), batch);
    TrainResult result;
    const std::size_t spe = (data.size() + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch);
    double epoch_acc = 0.0;
    std::size_t epoch_n = 0;

    for (std::uint64_t t = start_step; t < total; ++t) {
        const auto idx = batch_indices(seed, t, data.size(), batch);
        double loss_value = 0.0;
        {
            Tape tape;
            Tensor loss;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                Tensor li;
                if (bundle.type == "bgunet") {
                    BgSampleCtx& c = bg_ctx[idx[k]];
                    li = bgunet_loss(*bundle.bg, c.input, c.plan, c.sample->depth, depth_norm, true,
                                     &c.gray_ref, grid_space);
                } else {
                    FusionSampleCtx& c = fu_ctx[idx[k]];
                    Tensor x;
                    if (bundle.fusion->config().mode == AblationMode::kFull && joint) {
                        Tensor geom = sliced_gray_map(bundle.bg->forward(c.bg_input, true), c.plan);
                        x = concat({geom, c.rest}, 1);
                    } else {
                        x = c.full_input;
                    }
                    li = mse(bundle.fusion->forward(x, true), c.target, &c.mask);
                }
                loss = k == 0 ? li : add(loss, li);
            }
            if (idx.size() > 1) loss = scale(loss, 1.0 / static_cast<double>(idx.size()));
            loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw NumericalError("non-finite loss at step " + std::to_string(t), t);
            tape.backward(loss);
        }
        adam.step();
        if (bundle.bg) bundle.bg->params().zero_grads();
        if (bundle.fusion) bundle.fusion->params().zero_grads();
        if (bundle.bg) bundle.bg->params().quantize_f32();
        if (bundle.fusion) bundle.fusion->params().quantize_f32();
        run_rng.next_u64();  // one draw per step keeps the serialized state moving

        result.step_losses.push_back(loss_value);
        epoch_acc += loss_value;
        ++epoch_n;
        if ((t + 1) % spe == 0 || t + 1 == total) {
            result.epoch_losses.push_back(epoch_acc / static_cast<double>(epoch_n));
            epoch_acc = 0.0;
            epoch_n = 0;
        }
        if (callback && !callback(t, loss_value)) {
            result.checkpoint = make_checkpoint(bundle, &adam, run_rng, t + 1);
            return result;
        }
    }
    result.checkpoint = make_checkpoint(bundle, &adam, run_rng, total);
    return result;
}

EvalResult evaluate_dataset(const std::function<DepthMap(const Sample&)>& predict,
                            const std::vector<Sample>& data) {
    if (data.empty()) throw std::invalid_argument("evaluate_dataset: empty dataset");
    EvalResult out;
    double rm = 0, lg = 0, ms = 0, dm = 0;
    std::size_t nv = 0;
    for (const Sample& s : data) {
        const DepthMap pred = predict(s);
        MetricReport r = evaluate_pair(s.depth, pred);
        rm += r.rmse;
        lg += r.log10_err;
        ms += r.mssim;
        dm += r.derm;
        nv += r.n_valid;
        out.per_sample.push_back({s.id, r});
    }
    const double n = static_cast<double>(data.size());
    out.mean.rmse = rm / n;
    out.mean.log10_err = lg / n;
    out.mean.mssim = ms / n;
    out.mean.derm = dm / n;
    out.mean.n_valid = nv;
    return out;
}

EvalResult evaluate_bundle(ModelBundle& bundle, const std::vector<Sample>& data) {
    return evaluate_dataset([&](const Sample& s) { return predict_sample(bundle, s); }, data);
}

std::string eval_report_tsv(const EvalResult& result) {
    std::ostringstream os;
    os << "id\t" << MetricReport::tsv_header() << "\n";
    for (const auto& [id, r] : result.per_sample) os << id << "\t" << r.to_tsv() << "\n";
    os << "mean\t" << result.mean.to_tsv() << "\n";
    return os.str();
}

std::vector<AblationRow> run_ablation(const Config& base_cfg, const std::vector<Sample>& train_set,
                                      const std::vector<Sample>& test_set,
                                      std::vector<Checkpoint>* checkpoints_out,
                                      const std::function<void(const std::string&)>& progress) {
    Config bg_cfg = base_cfg;
    bg_cfg.set("model.type", "bgunet");
    if (base_cfg.has("ablation.bg_steps"))
        bg_cfg.set("train.steps", base_cfg.get_str("ablation.bg_steps", ""));
    if (base_cfg.has("ablation.bg_batch_size"))
        bg_cfg.set("train.batch_size", base_cfg.get_str("ablation.bg_batch_size", ""));
    if (progress) progress("training geometry network");
    TrainResult bg_res = train_model(bg_cfg, train_set);

    std::vector<AblationRow> rows;
    for (AblationMode mode : {AblationMode::kFull, AblationMode::kRgbSegEdge, AblationMode::kRgbSeg,
                              AblationMode::kRgbEdge}) {
        Config cfg = base_cfg;
        cfg.set("model.type", "fusion");
        cfg.set("fusion.mode", mode_name(mode));
        if (progress) progress("training fusion variant " + mode_name(mode));
        TrainResult res = train_model(cfg, train_set, nullptr, &bg_res.checkpoint);
        ModelBundle bundle = bundle_from_checkpoint(res.checkpoint);
        EvalResult ev = evaluate_bundle(bundle, test_set);
        rows.push_back({mode_name(mode), ev.mean});
        if (checkpoints_out) checkpoints_out->push_back(std::move(res.checkpoint));
    }
    return rows;
}

}  // namespace bgdepth
