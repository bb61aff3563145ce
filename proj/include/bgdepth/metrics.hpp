#pragma once

#include <string>

#include "bgdepth/image.hpp"

namespace bgdepth {

// Evaluation scores for one prediction / ground-truth pair. Lower is better
// for rmse and log10_err, higher for mssim and derm.
struct MetricReport {
    double rmse = 0.0;      // meters
    double log10_err = 0.0;
    double mssim = 0.0;
    double derm = 0.0;
    std::size_t n_valid = 0;

    // Tab-separated record matching tsv_header().
    std::string to_tsv() const;
    static std::string tsv_header();
    std::string to_key_values() const;
};

// Root mean squared difference over jointly valid pixels.
double rmse(const DepthMap& gt, const DepthMap& pred);

// Mean |log10(gt) - log10(pred)| over jointly valid pixels; all jointly
// valid depths must be positive.
double log10_error(const DepthMap& gt, const DepthMap& pred);

// Mean local SSIM over all positions where the full 11x11 window fits.
// Gaussian window sigma 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1.
double mssim(const ImageGray& gt_vis, const ImageGray& pred_vis);

// sqrt(Gx^2 + Gy^2) with the standard 3x3 Sobel stencils, clamp-to-edge
// borders. Values are raw magnitudes, not normalized.
ImageGray sobel_magnitude(const ImageGray& img);

// Depth-edge reliability: min-max normalize both depth maps, take Sobel
// magnitudes, min-max normalize those, threshold, and score the prediction
// mask against the ground-truth mask with F1. Both masks empty scores 1,
// exactly one empty scores 0.
double derm(const DepthMap& gt, const DepthMap& pred, double threshold = 0.5);

// Min-max normalization of the valid depths into [0,1]; invalid pixels and
// constant maps map to 0. This is the grayscale visualization used for
// mssim and derm.
ImageGray depth_visualization(const DepthMap& depth);

MetricReport evaluate_pair(const DepthMap& gt, const DepthMap& pred);

}  // namespace bgdepth
