#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "mfield/ad/rng.hpp"
#include "mfield/metrics/metrics.hpp"
#include "mfield/vec3.hpp"

using namespace mfield;

namespace {

std::vector<double> random_image(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, "img");
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

/// Rodrigues rotation of v about unit axis k by angle t.
Vec3 rotate(const Vec3& v, const Vec3& k, double t) {
  return v * std::cos(t) + cross(k, v) * std::sin(t) + k * (dot(k, v) * (1 - std::cos(t)));
}

std::vector<double> random_normals(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, "normals");
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 v = normalize(Vec3{rng.normal(), rng.normal(), rng.normal()});
    out.insert(out.end(), {v[0], v[1], v[2]});
  }
  return out;
}

}  // namespace

TEST(Psnr, IdenticalImagesHitCap) {
  const auto a = random_image(300, 1);
  EXPECT_EQ(psnr(a, a), 99.0);
}

TEST(Psnr, UniformOffsetIsTwentyDecibels) {
  const auto a = random_image(3 * 16 * 16, 2);
  std::vector<double> b(a);
  for (auto& v : b) v = v > 0.5 ? v - 0.1 : v + 0.1;
  EXPECT_NEAR(psnr(a, b), 20.0, 0.01);
}

TEST(Psnr, HalfCheckerboard) {
  std::vector<double> a(3 * 8 * 8, 0.0), b(a.size(), 0.0);
  for (std::size_t p = 0; p < 64; ++p)
    if ((p / 8 + p % 8) % 2 == 0)
      for (int c = 0; c < 3; ++c) b[p * 3 + c] = 1.0;
  EXPECT_NEAR(psnr(a, b), 10.0 * std::log10(2.0), 1e-12);
  EXPECT_NEAR(psnr(a, b), 3.0103, 1e-4);
}

TEST(Psnr, SymmetricAndDecreasingInNoise) {
  const auto a = random_image(3 * 20 * 20, 3);
  const auto n = random_image(a.size(), 4);
  double prev = 1e9;
  for (double amp : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    std::vector<double> b(a);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += amp * (n[i] - 0.5);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_LT(psnr(a, b), prev);
    prev = psnr(a, b);
  }
}

TEST(Psnr, ShapeMismatchThrows) {
  std::vector<double> a(6), b(9);
  EXPECT_THROW(psnr(a, b), MetricError);
}

TEST(Ssim, IdenticalIsOne) {
  const auto a = random_image(3 * 24 * 20, 5);
  EXPECT_NEAR(ssim(a, a, 24, 20), 1.0, 1e-12);
}

TEST(Ssim, InvertedBinaryIsNegative) {
  std::vector<double> a(3 * 16 * 16), b(a.size());
  for (std::size_t p = 0; p < 256; ++p) {
    const double v = (p / 16 + p % 16) % 2 ? 1.0 : 0.0;
    for (int c = 0; c < 3; ++c) {
      a[p * 3 + c] = v;
      b[p * 3 + c] = 1.0 - v;
    }
  }
  EXPECT_LT(ssim(a, b, 16, 16), 0.0);
}

TEST(Ssim, ConstantImagesReduceToLuminance) {
  const double x = 0.3, y = 0.7, C1 = 1e-4;
  std::vector<double> a(3 * 12 * 12, x), b(a.size(), y);
  EXPECT_NEAR(ssim(a, b, 12, 12), (2 * x * y + C1) / (x * x + y * y + C1), 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
  const auto a = random_image(3 * 16 * 18, 6), b = random_image(3 * 16 * 18, 7);
  const double s = ssim(a, b, 16, 18);
  EXPECT_NEAR(s, ssim(b, a, 16, 18), 1e-14);
  EXPECT_GE(s, -1.0);
  EXPECT_LE(s, 1.0);
}

TEST(Ssim, TooSmallThrows) {
  std::vector<double> a(3 * 10 * 10, 0.5);
  EXPECT_THROW(ssim(a, a, 10, 10), MetricError);
}

TEST(Mae, IdenticalIsZero) {
  const auto n = random_normals(50, 1);
  EXPECT_NEAR(mae_normals(n, n, std::vector<bool>(50, true)), 0.0, 1e-5);
}

TEST(Mae, UniformThirtyDegreeRotation) {
  const auto n = random_normals(200, 2);
  std::vector<double> r;
  for (std::size_t p = 0; p < 200; ++p) {
    const Vec3 v{n[p * 3], n[p * 3 + 1], n[p * 3 + 2]};
    // rotate about an axis perpendicular to v
    const Vec3 axis = normalize(cross(v, std::abs(v[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0}));
    const Vec3 w = rotate(v, axis, std::numbers::pi / 6);
    r.insert(r.end(), {w[0], w[1], w[2]});
  }
  EXPECT_NEAR(mae_normals(r, n, std::vector<bool>(200, true)), 30.0, 0.01);
}

TEST(Mae, HalfRightAngleAveragesToFortyFive) {
  std::vector<double> gt, pred;
  for (int p = 0; p < 10; ++p) {
    gt.insert(gt.end(), {0, 0, 1});
    if (p % 2) pred.insert(pred.end(), {0, 0, 1});
    else pred.insert(pred.end(), {1, 0, 0});
  }
  EXPECT_NEAR(mae_normals(pred, gt, std::vector<bool>(10, true)), 45.0, 1e-9);
}

TEST(Mae, MaskSelectsPixels) {
  std::vector<double> gt{0, 0, 1, 0, 0, 1}, pred{0, 0, 1, 0, 1, 0};
  EXPECT_NEAR(mae_normals(pred, gt, {true, false}), 0.0, 1e-9);
  EXPECT_NEAR(mae_normals(pred, gt, {false, true}), 90.0, 1e-9);
  EXPECT_THROW(mae_normals(pred, gt, {false, false}), MetricError);
}

TEST(Mae, SymmetricAndRotationInvariant) {
  const auto a = random_normals(64, 3), b = random_normals(64, 4);
  const std::vector<bool> mask(64, true);
  const double m = mae_normals(a, b, mask);
  EXPECT_NEAR(m, mae_normals(b, a, mask), 1e-12);
  const Vec3 axis = normalize(Vec3{0.3, -0.5, 0.8});
  auto rot = [&](const std::vector<double>& n) {
    std::vector<double> out;
    for (std::size_t p = 0; p < 64; ++p) {
      const Vec3 w = rotate({n[p * 3], n[p * 3 + 1], n[p * 3 + 2]}, axis, 1.1);
      out.insert(out.end(), {w[0], w[1], w[2]});
    }
    return out;
  };
  EXPECT_NEAR(mae_normals(rot(a), rot(b), mask), m, 1e-9);
}

TEST(Epsnr, IdenticalAndOffset) {
  const auto a = random_image(8 * 16 * 3, 8);
  EXPECT_EQ(epsnr(a, 8, 16, a, 8, 16), 99.0);
  std::vector<double> b(a);
  for (auto& v : b) v = v > 0.5 ? v - 0.1 : v + 0.1;
  EXPECT_NEAR(epsnr(a, 8, 16, b, 8, 16), 20.0, 0.01);
  EXPECT_NEAR(epsnr(b, 8, 16, a, 8, 16), epsnr(a, 8, 16, b, 8, 16), 1e-12);
}

TEST(Epsnr, ClampsHighDynamicRange) {
  std::vector<double> a(4 * 8 * 3, 5.0), b(a.size(), 1.0);
  EXPECT_EQ(epsnr(a, 4, 8, b, 4, 8), 99.0);
}

TEST(Epsnr, ResamplesToGroundTruthResolution) {
  std::vector<double> lo(4 * 8 * 3, 0.25), hi(16 * 32 * 3, 0.25);
  EXPECT_EQ(epsnr(lo, 4, 8, hi, 16, 32), 99.0);
  // linear ramp survives bilinear upsampling away from the clamped edges
  std::vector<double> ramp(4 * 8 * 3);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j)
      for (int c = 0; c < 3; ++c) ramp[(i * 8 + j) * 3 + c] = 0.1 * j;
  const auto up = resample_bilinear(ramp, 4, 8, 4, 16);
  EXPECT_NEAR(up[(0 * 16 + 5) * 3], 0.1 * ((5 + 0.5) / 2 - 0.5), 1e-12);
}

TEST(Epsnr, BlurLowersScoreOnNonConstantMaps) {
  const auto gt = random_image(8 * 16 * 3, 9);
  std::vector<double> blurred(gt.size());
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 16; ++j)
      for (int c = 0; c < 3; ++c)
        blurred[(i * 16 + j) * 3 + c] =
            (gt[(i * 16 + (j + 15) % 16) * 3 + c] + gt[(i * 16 + j) * 3 + c] + gt[(i * 16 + (j + 1) % 16) * 3 + c]) / 3;
  EXPECT_LT(epsnr(blurred, 8, 16, gt, 8, 16), 99.0);
  EXPECT_LT(epsnr(blurred, 8, 16, gt, 8, 16), 20.0);
}
