#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bgdepth/autodiff.hpp"
#include "bgdepth/bilateral_grid.hpp"
#include "bgdepth/image.hpp"
#include "bgdepth/nn.hpp"

namespace bgdepth {

// 3D encoder-decoder over bilateral grids. Encoder blocks are two sub-blocks
// of conv3d(k5,s1,p2) -> ReLU -> batchnorm (order swappable), each block
// followed by 2x max pooling; the decoder mirrors them with k4/s2/p1
// transposed convolutions and skip concatenation; a 1x1 head plus sigmoid
// emits one grid per input channel with values in (0,1).
struct BGUNetConfig {
    int in_channels = 1;  // 1 (grayscale grid) or 3 (per-channel RGB grids)
    int base_channels = 8;
    int depth = 2;  // encoder blocks == pooling stages
    GridParams grid{2, 16};
    bool include_occupancy = false;  // concatenate occupancy input channels
    bool bn_before_act = false;      // false: conv->ReLU->BN, true: conv->BN->ReLU
};

// Distance of the forward pass from its nondifferentiable points: the
// smallest |ReLU input| and the smallest max-pool window winner margin.
// Finite-difference checks are only meaningful when these margins exceed
// the probe step.
struct ActivationMargins {
    double min_relu_abs = 1e300;
    double min_pool_gap = 1e300;
};

class BGUNet {
public:
    BGUNet(const BGUNetConfig& cfg, std::uint64_t seed);

    // x: (1 or N, C_in, nb, ny, nx) with every grid extent divisible by
    // 2^depth. Returns the same shape with in_channels output channels.
    Tensor forward(const Tensor& x, bool training, ActivationMargins* margins = nullptr);

    const BGUNetConfig& config() const { return cfg_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }
    int input_channels() const;  // in_channels, doubled when occupancy is on

    void check_grid_extents(int nx, int ny, int nb) const;

private:
    struct SubBlock {
        Tensor w, b, gamma, beta, run_mean, run_var;
    };
    struct Block {
        SubBlock s1, s2;
    };
    struct UpLayer {
        Tensor w, b;
    };

    Tensor run_block(const Block& blk, Tensor x, bool training, ActivationMargins* margins);
    Block make_block(const std::string& name, int cin, int cout, Rng& rng);

    BGUNetConfig cfg_;
    ParamRegistry params_;
    std::vector<Block> enc_;
    Block bottom_;
    std::vector<UpLayer> ups_;  // decoder level i upsamples into level i's block
    std::vector<Block> dec_;
    Tensor head_w_, head_b_;
};

// Network input from normalized grids: shape (1, C(*2), nb, ny, nx). With
// occupancy on, the occupancy planes follow the value planes.
Tensor grids_to_tensor(std::span<const DenseGrid> grids, bool include_occupancy);

// Lift + normalize an image into the network input tensor.
Tensor lift_input(const ImageGray& img, const GridParams& p, bool include_occupancy);
Tensor lift_input(const ImageRGB& img, const GridParams& p, bool include_occupancy);

// Trilinear read plan at (x/sr_s, y/sr_s, I_c(x,y)*(nb-1)) for every pixel of
// every reference channel; plain trilinear, weights fixed by the reference.
SlicePlan make_slice_plan(std::span<const ImageGray> reference_channels, const GridParams& p,
                          int nx, int ny, int nb);

// Differentiable slice of the network output plus Rec.601 combine when the
// reference has three channels: (1,C,H,W) -> (1,1,H,W).
Tensor sliced_gray_map(const Tensor& output_grids, const SlicePlan& plan);

// Eval-mode geometry map for a single image.
ImageGray geometry_map(BGUNet& model, const ImageGray& reference);
ImageGray geometry_map(BGUNet& model, const ImageRGB& reference);

// Masked MSE between the sliced geometry map and gt/depth_norm. When
// grid_space is set, the target is instead the ground truth splatted into a
// grid at the reference's bins and the loss runs over occupied voxels.
Tensor bgunet_loss(BGUNet& model, const Tensor& input, const SlicePlan& plan, const DepthMap& gt,
                   double depth_norm, bool training, const ImageGray* reference_for_grid_space = nullptr,
                   bool grid_space = false);

// Target/mask tensors for the map-space loss: gt/depth_norm and validity.
std::pair<Tensor, Tensor> depth_target(const DepthMap& gt, double depth_norm);

}  // namespace bgdepth
