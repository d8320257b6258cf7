#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfield {

inline constexpr double kMetricCap = 99.0;

struct MetricError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// One evaluation row. Pixel counts record what the averages ran over.
struct MetricBundle {
  double psnr = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
  double epsnr = 0.0;
  std::size_t pixels = 0;
  std::size_t normal_pixels = 0;

  bool operator==(const MetricBundle&) const = default;
};

namespace detail {

inline double psnr_from_mse(double mse) {
  if (mse < 1e-10) return kMetricCap;
  return std::min(kMetricCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace detail

/// Peak signal-to-noise ratio for values in [0, 1], capped at 99 dB.
inline double psnr(std::span<const double> pred, std::span<const double> gt) {
  if (pred.size() != gt.size()) {
    throw MetricError("psnr: size mismatch " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  }
  if (pred.empty()) throw MetricError("psnr: empty images");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) se += (pred[i] - gt[i]) * (pred[i] - gt[i]);
  if (!std::isfinite(se)) throw MetricError("psnr: non-finite pixel values");
  return detail::psnr_from_mse(se / static_cast<double>(pred.size()));
}

/// Single-scale SSIM on the channel-mean of two H x W x C images: 11x11
/// Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, range 1, averaged over
/// every position where the window fits.
inline double ssim(std::span<const double> pred, std::span<const double> gt, std::size_t height, std::size_t width,
                   std::size_t channels = 3) {
  constexpr std::size_t kWin = 11;
  constexpr double kSigma = 1.5, C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  if (pred.size() != gt.size() || pred.size() != height * width * channels) throw MetricError("ssim: size mismatch");
  if (height < kWin || width < kWin) throw MetricError("ssim: image smaller than the 11x11 window");

  auto gray = [&](std::span<const double> img) {
    std::vector<double> g(height * width);
    for (std::size_t p = 0; p < g.size(); ++p) {
      double s = 0.0;
      for (std::size_t c = 0; c < channels; ++c) s += img[p * channels + c];
      g[p] = s / static_cast<double>(channels);
    }
    return g;
  };
  const auto x = gray(pred), y = gray(gt);

  std::vector<double> w(kWin);
  double total = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    w[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;

  // Separable filtering of x, y, x^2, y^2, xy over valid positions.
  const std::size_t oh = height - kWin + 1, ow = width - kWin + 1;
  auto filter = [&](auto&& value) {
    std::vector<double> rows(height * ow), out(oh * ow);
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < kWin; ++t) s += w[t] * value(i * width + j + t);
        rows[i * ow + j] = s;
      }
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < kWin; ++t) s += w[t] * rows[(i + t) * ow + j];
        out[i * ow + j] = s;
      }
    return out;
  };
  const auto mx = filter([&](std::size_t p) { return x[p]; });
  const auto my = filter([&](std::size_t p) { return y[p]; });
  const auto xx = filter([&](std::size_t p) { return x[p] * x[p]; });
  const auto yy = filter([&](std::size_t p) { return y[p] * y[p]; });
  const auto xy = filter([&](std::size_t p) { return x[p] * y[p]; });

  double sum = 0.0;
  for (std::size_t p = 0; p < mx.size(); ++p) {
    const double vx = xx[p] - mx[p] * mx[p], vy = yy[p] - my[p] * my[p], cxy = xy[p] - mx[p] * my[p];
    sum += ((2 * mx[p] * my[p] + C1) * (2 * cxy + C2)) /
           ((mx[p] * mx[p] + my[p] * my[p] + C1) * (vx + vy + C2));
  }
  return std::clamp(sum / static_cast<double>(mx.size()), -1.0, 1.0);
}

/// Mean angle in degrees between normal fields (3 per pixel) over `mask`.
inline double mae_normals(std::span<const double> pred, std::span<const double> gt, const std::vector<bool>& mask) {
  if (pred.size() != gt.size() || pred.size() != mask.size() * 3) throw MetricError("mae: size mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    double d = 0.0;
    for (int k = 0; k < 3; ++k) d += pred[p * 3 + k] * gt[p * 3 + k];
    sum += std::acos(std::clamp(d, -1.0, 1.0)) * 180.0 / std::numbers::pi;
    ++count;
  }
  if (count == 0) throw MetricError("mae: empty mask");
  return sum / static_cast<double>(count);
}

/// Bilinear resampling of an H x W x 3 image to h x w, texel-center aligned,
/// edges clamped.
inline std::vector<double> resample_bilinear(std::span<const double> img, std::size_t H, std::size_t W, std::size_t h,
                                             std::size_t w) {
  if (img.size() != H * W * 3) throw MetricError("resample: size mismatch");
  if (H == h && W == w) return {img.begin(), img.end()};
  std::vector<double> out(h * w * 3);
  for (std::size_t i = 0; i < h; ++i) {
    const double sy = std::clamp((static_cast<double>(i) + 0.5) * H / h - 0.5, 0.0, static_cast<double>(H - 1));
    const std::size_t y0 = static_cast<std::size_t>(sy), y1 = std::min(y0 + 1, H - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < w; ++j) {
      const double sx = std::clamp((static_cast<double>(j) + 0.5) * W / w - 0.5, 0.0, static_cast<double>(W - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx), x1 = std::min(x0 + 1, W - 1);
      const double fx = sx - static_cast<double>(x0);
      for (int c = 0; c < 3; ++c) {
        auto at = [&](std::size_t y, std::size_t x) { return img[(y * W + x) * 3 + c]; };
        out[(i * w + j) * 3 + c] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                   fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      }
    }
  }
  return out;
}

/// PSNR between environment maps: pred is resampled to the gt resolution and
/// both are clamped to [0, 1]. No exposure or rotation alignment.
inline double epsnr(std::span<const double> pred, std::size_t pred_h, std::size_t pred_w, std::span<const double> gt,
                    std::size_t gt_h, std::size_t gt_w) {
  auto p = resample_bilinear(pred, pred_h, pred_w, gt_h, gt_w);
  if (gt.size() != gt_h * gt_w * 3) throw MetricError("epsnr: size mismatch");
  std::vector<double> g(gt.begin(), gt.end());
  for (auto& v : p) v = std::clamp(v, 0.0, 1.0);
  for (auto& v : g) v = std::clamp(v, 0.0, 1.0);
  return psnr(p, g);
}

}  // namespace mfield
