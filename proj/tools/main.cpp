// bgdepth command line: grid inspection, the classic bilateral filter,
// synthetic dataset generation, training, prediction and evaluation.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "bgdepth/bilateral_grid.hpp"
#include "bgdepth/checkpoint.hpp"
#include "bgdepth/config.hpp"
#include "bgdepth/data.hpp"
#include "bgdepth/diagnostics.hpp"
#include "bgdepth/metrics.hpp"
#include "bgdepth/train.hpp"

namespace fs = std::filesystem;
using namespace bgdepth;

namespace {

ImageGray channel_of(const ImageRGB& img, const std::string& channel) {
    if (channel == "gray") return to_gray(img);
    if (channel == "r") return img.channel(0);
    if (channel == "g") return img.channel(1);
    if (channel == "b") return img.channel(2);
    throw std::invalid_argument("channel must be gray, r, g or b");
}

void write_loss_log(const std::string& path, const TrainResult& res) {
    if (path.empty()) return;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write loss log " + path);
    out << "step\tloss\n";
    char buf[64];
    for (std::size_t i = 0; i < res.step_losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu\t%.12e\n", i, res.step_losses[i]);
        out << buf;
    }
}

void print_epochs(const TrainResult& res) {
    char buf[64];
    for (std::size_t i = 0; i < res.epoch_losses.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "epoch %zu\tloss %.12e", i, res.epoch_losses[i]);
        std::cout << buf << "\n";
    }
}

Config load_base_config(const std::string& config_path) {
    return config_path.empty() ? Config() : Config::from_file(config_path);
}

struct TrainCliArgs {
    std::string data_dir, out_path, config_path, log_path, resume_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int steps = 0;
    bool steps_set = false;
};

void add_train_options(CLI::App* cmd, TrainCliArgs& args) {
    cmd->add_option("--data", args.data_dir, "dataset directory")->required();
    cmd->add_option("--out", args.out_path, "output checkpoint path")->required();
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--log", args.log_path, "per-step loss log (TSV)");
    cmd->add_option("--resume", args.resume_path, "checkpoint to resume from");
    cmd->add_option("--seed", args.seed, "training seed")->each([&](const std::string&) {
        args.seed_set = true;
    });
    cmd->add_option("--steps", args.steps, "total training steps")->each([&](const std::string&) {
        args.steps_set = true;
    });
}

Config make_train_config(const TrainCliArgs& args, const std::string& type) {
    Config cfg = load_base_config(args.config_path);
    cfg.set("model.type", type);
    if (args.seed_set) cfg.set("train.seed", std::to_string(args.seed));
    if (args.steps_set) cfg.set("train.steps", std::to_string(args.steps));
    return cfg;
}

int run_train(const TrainCliArgs& args, const std::string& type, const std::string& mode,
              const std::string& bg_ckpt_path) {
    Config cfg = make_train_config(args, type);
    if (!mode.empty()) cfg.set("fusion.mode", mode);
    auto data = load_dataset(args.data_dir);
    Checkpoint resume, bg;
    const Checkpoint* resume_p = nullptr;
    const Checkpoint* bg_p = nullptr;
    if (!args.resume_path.empty()) {
        resume = load_checkpoint(args.resume_path);
        resume_p = &resume;
    }
    if (!bg_ckpt_path.empty()) {
        bg = load_checkpoint(bg_ckpt_path);
        bg_p = &bg;
    }
    TrainResult res = train_model(cfg, data, resume_p, bg_p);
    print_epochs(res);
    write_loss_log(args.log_path, res);
    save_checkpoint(res.checkpoint, args.out_path);
    std::cout << "checkpoint written to " << args.out_path << " at step " << res.checkpoint.step << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bilateral-grid depth estimation toolkit"};
    app.require_subcommand(1);

    // lift
    auto* lift_cmd = app.add_subcommand("lift", "lift an image into a bilateral grid dump");
    std::string lift_image, lift_out, lift_channel = "gray";
    int lift_sr = 2, lift_bins = 16;
    lift_cmd->add_option("--image", lift_image)->required();
    lift_cmd->add_option("--out", lift_out)->required();
    lift_cmd->add_option("--sr-s", lift_sr, "spatial sampling rate");
    lift_cmd->add_option("--bins", lift_bins, "range bins");
    lift_cmd->add_option("--channel", lift_channel, "gray|r|g|b");

    // slice
    auto* slice_cmd = app.add_subcommand("slice", "slice a grid dump back into an image");
    std::string slice_grid_path, slice_ref, slice_out, slice_channel = "gray";
    slice_cmd->add_option("--grid", slice_grid_path)->required();
    slice_cmd->add_option("--reference", slice_ref)->required();
    slice_cmd->add_option("--out", slice_out)->required();
    slice_cmd->add_option("--channel", slice_channel, "reference channel: gray|r|g|b");

    // filter
    auto* filter_cmd = app.add_subcommand("filter", "classic splat-blur-slice bilateral filter");
    std::string filter_image, filter_out;
    int filter_sr = 2, filter_bins = 32;
    double filter_ss = 2.0, filter_sr_sigma = 1.0;
    filter_cmd->add_option("--image", filter_image)->required();
    filter_cmd->add_option("--out", filter_out)->required();
    filter_cmd->add_option("--sr-s", filter_sr);
    filter_cmd->add_option("--bins", filter_bins);
    filter_cmd->add_option("--sigma-s", filter_ss, "spatial sigma in grid cells");
    filter_cmd->add_option("--sigma-r", filter_sr_sigma, "range sigma in bins");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out;
    std::uint64_t synth_seed = 0;
    int synth_count = 8, synth_w = 64, synth_h = 64, synth_objects = 3;
    synth_cmd->add_option("--out", synth_out)->required();
    synth_cmd->add_option("--seed", synth_seed);
    synth_cmd->add_option("--count", synth_count);
    synth_cmd->add_option("--width", synth_w);
    synth_cmd->add_option("--height", synth_h);
    synth_cmd->add_option("--objects", synth_objects);

    // train-bg / train-fusion
    auto* train_bg_cmd = app.add_subcommand("train-bg", "train the 3D grid network");
    TrainCliArgs bg_args;
    add_train_options(train_bg_cmd, bg_args);

    auto* train_fu_cmd = app.add_subcommand("train-fusion", "train the 2D refinement network");
    TrainCliArgs fu_args;
    add_train_options(train_fu_cmd, fu_args);
    std::string fu_mode = "full", fu_bg_ckpt;
    train_fu_cmd->add_option("--mode", fu_mode, "full|rgb-seg-edge|rgb-seg|rgb-edge");
    train_fu_cmd->add_option("--bg-checkpoint", fu_bg_ckpt, "geometry checkpoint for full mode");

    // predict
    auto* predict_cmd = app.add_subcommand("predict", "predict depth maps for images");
    std::string predict_ckpt, predict_out;
    std::vector<std::string> predict_images;
    predict_cmd->add_option("--checkpoint", predict_ckpt)->required();
    predict_cmd->add_option("--out", predict_out, "output directory")->required();
    predict_cmd->add_option("images", predict_images, "input PPM/PGM images")->required();

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_out;
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--data", eval_data)->required();
    eval_cmd->add_option("--out", eval_out, "also write the TSV report here");

    // gradcheck
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::uint64_t grad_seed = 12345;
    grad_cmd->add_option("--seed", grad_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (lift_cmd->parsed()) {
            const ImageRGB img = load_image(lift_image);
            const GridParams p{lift_sr, lift_bins};
            const BilateralGrid grid = lift_gray(channel_of(img, lift_channel), p);
            save_grid(grid, lift_sr, lift_out);
            std::cout << grid_summary(grid);
            return 0;
        }
        if (slice_cmd->parsed()) {
            int sr = 0;
            const BilateralGrid grid = load_grid(slice_grid_path, &sr);
            const ImageRGB ref = load_image(slice_ref);
            const GridParams p{sr, grid.nb};
            const ImageGray out = slice(normalize(grid), channel_of(ref, slice_channel), p);
            save_image(out, slice_out);
            return 0;
        }
        if (filter_cmd->parsed()) {
            const ImageRGB img = load_image(filter_image);
            const GridParams p{filter_sr, filter_bins};
            const ImageGray out = bilateral_filter(to_gray(img), p, filter_ss, filter_sr_sigma);
            save_image(out, filter_out);
            return 0;
        }
        if (synth_cmd->parsed()) {
            SynthOptions opts;
            opts.width = synth_w;
            opts.height = synth_h;
            opts.n_objects = synth_objects;
            synth_dataset(synth_out, synth_seed, synth_count, opts);
            std::cout << "wrote " << synth_count << " scenes to " << synth_out << "\n";
            return 0;
        }
        if (train_bg_cmd->parsed()) return run_train(bg_args, "bgunet", "", "");
        if (train_fu_cmd->parsed()) return run_train(fu_args, "fusion", fu_mode, fu_bg_ckpt);
        if (predict_cmd->parsed()) {
            const Checkpoint ckpt = load_checkpoint(predict_ckpt);
            ModelBundle bundle = bundle_from_checkpoint(ckpt);
            fs::create_directories(predict_out);
            for (const std::string& path : predict_images) {
                Sample s;
                s.rgb = load_image(path);
                fs::path p(path);
                s.id = p.stem().string();
                const fs::path seg_path = p.parent_path() / (s.id + ".seg.ppm");
                const fs::path edge_path = p.parent_path() / (s.id + ".edge.pgm");
                if (fs::exists(seg_path)) s.seg = load_image(seg_path);
                if (fs::exists(edge_path)) s.edge = load_image(edge_path).channel(0);
                const DepthMap pred = predict_sample(bundle, s);
                save_depth(pred, fs::path(predict_out) / (s.id + ".depth.pgm"));
                save_image(depth_visualization(pred), fs::path(predict_out) / (s.id + ".vis.pgm"));
                std::cout << s.id << " done\n";
            }
            return 0;
        }
        if (eval_cmd->parsed()) {
            const Checkpoint ckpt = load_checkpoint(eval_ckpt);
            ModelBundle bundle = bundle_from_checkpoint(ckpt);
            const auto data = load_dataset(eval_data);
            const EvalResult result = evaluate_bundle(bundle, data);
            const std::string tsv = eval_report_tsv(result);
            std::cout << tsv;
            if (!eval_out.empty()) {
                std::ofstream out(eval_out);
                if (!out) throw IoError("cannot write report " + eval_out);
                out << tsv;
            }
            return 0;
        }
        if (grad_cmd->parsed()) {
            const auto results = run_gradient_suite(grad_seed);
            char buf[96];
            for (const auto& [name, err] : results) {
                std::snprintf(buf, sizeof(buf), "%-24s max_rel_err %.3e", name.c_str(), err);
                std::cout << buf << "\n";
            }
            const double worst = gradient_suite_max_error(results);
            std::snprintf(buf, sizeof(buf), "worst %.3e (threshold 1e-5)", worst);
            std::cout << buf << "\n";
            return worst <= 1e-5 ? 0 : 3;
        }
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
