#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bgdepth/autodiff.hpp"
#include "bgdepth/image.hpp"
#include "bgdepth/nn.hpp"

namespace bgdepth {

// Input variants for the refinement network. Channel budgets are fixed:
//   FULL          geometry(1) + seg(3) + edge(1) = 5
//   RGB_SEG_EDGE  luma(1)     + seg(3) + edge(1) = 5
//   RGB_SEG       rgb(3)      + seg(3)           = 6
//   RGB_EDGE      rgb(3)      + edge(1)          = 4
// The RGB substitute for the geometry channel enters as Rec.601 luma so the
// first variant keeps the 5-channel budget of the full model.
enum class AblationMode { kFull, kRgbSegEdge, kRgbSeg, kRgbEdge };

int mode_channel_count(AblationMode mode);
std::string mode_name(AblationMode mode);
AblationMode mode_from_string(const std::string& name);

// Geometry / segmentation / edge maps sharing one raster size.
struct FusionInput {
    ImageGray geometry;
    ImageRGB segmentation;
    ImageGray edge;
};

// Channel-axis concatenation in the fixed order (geometry|rgb, seg, edge),
// layout (1, C, H, W). Pieces not used by the mode may be empty; pieces the
// mode requires must be present and dimension-consistent.
Tensor assemble(AblationMode mode, const ImageRGB& rgb, const ImageGray* geometry,
                const ImageRGB* segmentation, const ImageGray* edge);
Tensor assemble(const FusionInput& input, AblationMode mode, const ImageRGB& rgb);

// 2D UNet with a residual-block encoder. Each stage halves the spatial
// extents (k4/s2/p1 main path, k2/s2/p0 projection shortcut, so the halving
// is exact); the decoder mirrors with k4/s2/p1 transposed convolutions and
// skip concatenation; 1x1 head plus sigmoid.
struct FusionConfig {
    AblationMode mode = AblationMode::kFull;
    int base_channels = 16;
    int stages = 4;
    int blocks_per_stage = 2;
};

class FusionNet {
public:
    FusionNet(const FusionConfig& cfg, std::uint64_t seed);

    // x: (1, mode_channel_count(mode), H, W), H and W divisible by 2^stages.
    // Returns (1, 1, H, W) with values in (0,1).
    Tensor forward(const Tensor& x, bool training);

    const FusionConfig& config() const { return cfg_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

private:
    struct ConvBN {
        Tensor w, b, gamma, beta, run_mean, run_var;
    };
    struct ResBlock {
        ConvBN c1, c2;
        std::optional<ConvBN> shortcut;  // present in downsampling blocks
        int stride = 1;
    };
    struct DecoderLevel {
        Tensor up_w, up_b;
        ConvBN c1, c2;
    };

    ConvBN make_conv(const std::string& name, int cin, int cout, int k, Rng& rng);
    Tensor run_conv_bn(const ConvBN& c, const Tensor& x, int stride, int pad, bool training,
                       bool with_relu);
    Tensor run_res_block(const ResBlock& blk, Tensor x, bool training);

    FusionConfig cfg_;
    ParamRegistry params_;
    ConvBN stem_;
    std::vector<std::vector<ResBlock>> stages_;
    std::vector<DecoderLevel> decoder_;
    Tensor head_w_, head_b_;
};

// Normalized depth map from a forward pass; multiply by depth_norm for
// meters. The mask is all-true.
ImageGray fusion_forward_map(FusionNet& net, const Tensor& x);
DepthMap fusion_predict_depth(FusionNet& net, const Tensor& x, double depth_norm);

// k-means (k-means++ seeding, 20 iterations, fixed seed) over RGB pixels;
// each pixel is recolored with its centroid. k must not exceed the number
// of distinct colors.
ImageRGB pseudo_segmentation(const ImageRGB& img, int k, std::uint64_t seed = 0);

// Sobel gradient magnitude normalized by its maximum (all zeros when flat).
ImageGray edge_map(const ImageGray& img);

}  // namespace bgdepth
