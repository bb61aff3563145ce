#include "bgdepth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace bgdepth {

namespace {

void check_same_dims(const DepthMap& a, const DepthMap& b, const char* op) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument(std::string(op) + ": dimension mismatch");
}

}  // namespace

double rmse(const DepthMap& gt, const DepthMap& pred) {
    check_same_dims(gt, pred, "rmse");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        if (!gt.mask[i] || !pred.mask[i]) continue;
        const double d = gt.data[i] - pred.data[i];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("rmse: no jointly valid pixels");
    return std::sqrt(acc / static_cast<double>(n));
}

double log10_error(const DepthMap& gt, const DepthMap& pred) {
    check_same_dims(gt, pred, "log10_error");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.pixel_count(); ++i) {
        if (!gt.mask[i] || !pred.mask[i]) continue;
        if (gt.data[i] <= 0.0 || pred.data[i] <= 0.0)
            throw std::invalid_argument("log10_error: nonpositive depth among valid pixels");
        acc += std::abs(std::log10(gt.data[i]) - std::log10(pred.data[i]));
        ++n;
    }
    if (n == 0) throw std::invalid_argument("log10_error: no jointly valid pixels");
    return acc / static_cast<double>(n);
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;  // (K1 * L)^2 with L = 1
constexpr double kSsimC2 = 0.03 * 0.03;

std::vector<double> ssim_window_1d() {
    std::vector<double> w(kSsimWindow);
    double sum = 0.0;
    const int r = kSsimWindow / 2;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - r;
        w[i] = std::exp(-0.5 * d * d / (kSsimSigma * kSsimSigma));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Valid-mode separable Gaussian filter: output is (h-10) x (w-10).
std::vector<double> gauss_valid(const std::vector<double>& img, int w, int h,
                                const std::vector<double>& k) {
    const int r = kSsimWindow - 1;
    const int ow = w - r, oh = h - r;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kSsimWindow; ++t) acc += k[t] * img[static_cast<std::size_t>(y) * w + x + t];
            tmp[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kSsimWindow; ++t) acc += k[t] * tmp[static_cast<std::size_t>(y + t) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

}  // namespace

double mssim(const ImageGray& gt_vis, const ImageGray& pred_vis) {
    if (gt_vis.width != pred_vis.width || gt_vis.height != pred_vis.height)
        throw std::invalid_argument("mssim: dimension mismatch");
    if (gt_vis.width < kSsimWindow || gt_vis.height < kSsimWindow)
        throw std::invalid_argument("mssim: images smaller than the 11x11 window");
    const int w = gt_vis.width, h = gt_vis.height;
    const std::vector<double> k = ssim_window_1d();

    const std::size_t n = gt_vis.pixel_count();
    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = gt_vis.data[i] * gt_vis.data[i];
        yy[i] = pred_vis.data[i] * pred_vis.data[i];
        xy[i] = gt_vis.data[i] * pred_vis.data[i];
    }
    const std::vector<double> mu_x = gauss_valid(gt_vis.data, w, h, k);
    const std::vector<double> mu_y = gauss_valid(pred_vis.data, w, h, k);
    const std::vector<double> m_xx = gauss_valid(xx, w, h, k);
    const std::vector<double> m_yy = gauss_valid(yy, w, h, k);
    const std::vector<double> m_xy = gauss_valid(xy, w, h, k);

    double acc = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
        const double mx = mu_x[i], my = mu_y[i];
        const double sx = m_xx[i] - mx * mx;
        const double sy = m_yy[i] - my * my;
        const double sxy = m_xy[i] - mx * my;
        const double num = (2.0 * mx * my + kSsimC1) * (2.0 * sxy + kSsimC2);
        const double den = (mx * mx + my * my + kSsimC1) * (sx + sy + kSsimC2);
        acc += num / den;
    }
    return acc / static_cast<double>(mu_x.size());
}

ImageGray sobel_magnitude(const ImageGray& img) {
    if (img.width < 3 || img.height < 3)
        throw std::invalid_argument("sobel_magnitude: image smaller than the 3x3 stencil");
    ImageGray out(img.width, img.height);
    auto px = [&](int x, int y) {
        x = std::clamp(x, 0, img.width - 1);
        y = std::clamp(y, 0, img.height - 1);
        return img.at(x, y);
    };
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)) -
                              (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            const double gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)) -
                              (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            out.at(x, y) = std::sqrt(gx * gx + gy * gy);
        }
    return out;
}

ImageGray depth_visualization(const DepthMap& depth) {
    ImageGray out(depth.width, depth.height);
    double lo = 0.0, hi = 0.0;
    bool seen = false;
    for (std::size_t i = 0; i < depth.pixel_count(); ++i) {
        if (!depth.mask[i]) continue;
        if (!seen) {
            lo = hi = depth.data[i];
            seen = true;
        } else {
            lo = std::min(lo, depth.data[i]);
            hi = std::max(hi, depth.data[i]);
        }
    }
    if (!seen || hi <= lo) return out;
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < depth.pixel_count(); ++i)
        if (depth.mask[i]) out.data[i] = (depth.data[i] - lo) * inv;
    return out;
}

namespace {

ImageGray minmax_normalize(const ImageGray& img) {
    ImageGray out(img.width, img.height);
    double lo = img.data[0], hi = img.data[0];
    for (double v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi <= lo) return out;
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) out.data[i] = (img.data[i] - lo) * inv;
    return out;
}

}  // namespace

double derm(const DepthMap& gt, const DepthMap& pred, double threshold) {
    check_same_dims(gt, pred, "derm");
    const ImageGray gm = minmax_normalize(sobel_magnitude(depth_visualization(gt)));
    const ImageGray pm = minmax_normalize(sobel_magnitude(depth_visualization(pred)));
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gm.pixel_count(); ++i) {
        const bool g = gm.data[i] > threshold;
        const bool p = pm.data[i] > threshold;
        if (g && p) ++tp;
        else if (!g && p) ++fp;
        else if (g && !p) ++fn;
    }
    if (tp + fn == 0 && tp + fp == 0) return 1.0;  // both masks empty
    if (tp + fn == 0 || tp + fp == 0) return 0.0;  // exactly one empty
    return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

MetricReport evaluate_pair(const DepthMap& gt, const DepthMap& pred) {
    MetricReport r;
    r.rmse = rmse(gt, pred);
    r.log10_err = log10_error(gt, pred);
    r.mssim = mssim(depth_visualization(gt), depth_visualization(pred));
    r.derm = derm(gt, pred);
    for (std::size_t i = 0; i < gt.pixel_count(); ++i)
        if (gt.mask[i] && pred.mask[i]) ++r.n_valid;
    return r;
}

std::string MetricReport::tsv_header() { return "rmse(down)\tlog10(down)\tmssim(up)\tderm(up)\tn_valid"; }

std::string MetricReport::to_tsv() const {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.9f\t%.9f\t%.9f\t%.9f\t%zu", rmse, log10_err, mssim, derm, n_valid);
    return buf;
}

std::string MetricReport::to_key_values() const {
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", rmse);
    os << "rmse=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.9f", log10_err);
    os << "log10=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.9f", mssim);
    os << "mssim=" << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.9f", derm);
    os << "derm=" << buf << "\n";
    os << "n_valid=" << n_valid << "\n";
    return os.str();
}

}  // namespace bgdepth
