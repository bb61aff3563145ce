#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "bgdepth/bgunet.hpp"
#include "bgdepth/checkpoint.hpp"
#include "bgdepth/config.hpp"
#include "bgdepth/data.hpp"
#include "bgdepth/fusion.hpp"
#include "bgdepth/metrics.hpp"

namespace bgdepth {

// Raised when a training step produces a non-finite loss; carries the step.
struct NumericalError : std::runtime_error {
    NumericalError(const std::string& msg, std::uint64_t at_step)
        : std::runtime_error(msg), step(at_step) {}
    std::uint64_t step;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a fixed list of named parameters. Moments are float64; the
// caller re-quantizes parameter values to the float32 grid after each step.
class Adam {
public:
    Adam(std::vector<NamedTensor> targets, const AdamConfig& cfg);

    void step();
    std::uint64_t step_count() const { return t_; }

    std::vector<Checkpoint::AdamSlot> slots() const;
    void restore(std::uint64_t t, const std::vector<Checkpoint::AdamSlot>& slots);

private:
    std::vector<NamedTensor> targets_;
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// The models needed to predict with one checkpoint: the 3D grid network, the
// 2D refinement network, or both (full-mode fusion keeps its geometry source
// bundled so the artifact is self-contained).
struct ModelBundle {
    Config config;
    std::string type;  // "bgunet" | "fusion"
    std::unique_ptr<BGUNet> bg;
    std::unique_ptr<FusionNet> fusion;
    double depth_norm = 10.0;

    // Checkpoint view of all model state, names prefixed "bg." / "fusion.".
    std::vector<NamedTensor> named_state() const;
};

BGUNetConfig bgunet_config_from(const Config& cfg);
FusionConfig fusion_config_from(const Config& cfg);

// Fresh bundle from hyperparameters (init seeds derive from train.seed).
ModelBundle build_bundle(const Config& cfg);
// Rebuild from a checkpoint's config echo and restore every tensor;
// missing/extra/mismatched names are errors.
ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt);

// End-to-end prediction for one sample (mask all-true, meters).
DepthMap predict_sample(ModelBundle& bundle, const Sample& sample);

// Fusion input channels: precomputed maps when the sample carries them,
// synthetic substitutes otherwise (k-means pseudo-segmentation, Sobel edges).
ImageRGB sample_segmentation(const Sample& sample, const Config& cfg);
ImageGray sample_edge(const Sample& sample);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> step_losses;   // one entry per executed step
    std::vector<double> epoch_losses;  // mean loss per completed epoch
};

// Deterministic training driver. Step t draws its batch from a permutation
// that is a pure function of (seed, epoch), so runs resume exactly from a
// checkpoint. The callback (step, loss) may return false to stop early.
// frozen_bg supplies the geometry network for full-mode fusion training.
TrainResult train_model(const Config& cfg, const std::vector<Sample>& data,
                        const Checkpoint* resume = nullptr, const Checkpoint* frozen_bg = nullptr,
                        const std::function<bool(std::uint64_t, double)>& callback = {});

struct EvalResult {
    std::vector<std::pair<std::string, MetricReport>> per_sample;
    MetricReport mean;
};

EvalResult evaluate_dataset(const std::function<DepthMap(const Sample&)>& predict,
                            const std::vector<Sample>& data);
EvalResult evaluate_bundle(ModelBundle& bundle, const std::vector<Sample>& data);

// Renders the TSV report: id column, one row per sample, then the mean row.
std::string eval_report_tsv(const EvalResult& result);

struct AblationRow {
    std::string mode;
    MetricReport mean;
};

// Trains the grid network once, then the four input variants with identical
// seeds and step counts, and evaluates each on the test set.
std::vector<AblationRow> run_ablation(const Config& base_cfg, const std::vector<Sample>& train_set,
                                      const std::vector<Sample>& test_set,
                                      std::vector<Checkpoint>* checkpoints_out = nullptr,
                                      const std::function<void(const std::string&)>& progress = {});

// Batch for step t: a slice of the epoch's seeded permutation.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t step, std::size_t n_samples,
                                       int batch_size);

}  // namespace bgdepth
