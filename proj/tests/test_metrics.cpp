#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "bsrn/errors.hpp"
#include "bsrn/metrics.hpp"
#include "bsrn/rng.hpp"
#include "support/test_util.hpp"

using namespace bsrn;
using namespace test_util;

namespace {

Eigen::ArrayXXd random_plane(int h, int w, Rng& rng, double lo = 16.0, double hi = 235.0) {
  Eigen::ArrayXXd a(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) a(y, x) = lo + (hi - lo) * rng.u01();
  return a;
}

// Second SSIM implementation: direct per-window double summation with
// explicitly materialized 11x11 weights. Same statistics, different shape of
// computation.
double ssim_direct(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) {
  double w1d[11];
  double norm = 0.0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5.0;
    w1d[i] = std::exp(-d * d / (2.0 * 2.25));
    norm += w1d[i];
  }
  for (double& w : w1d) w /= norm;

  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0.0;
  long count = 0;
  for (long wy = 0; wy + 11 <= a.rows(); ++wy)
    for (long wx = 0; wx + 11 <= a.cols(); ++wx) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double w = w1d[i] * w1d[j];
          const double x = a(wy + i, wx + j);
          const double y = b(wy + i, wx + j);
          mx += w * x;
          my += w * y;
          mxx += w * x * x;
          myy += w * y * y;
          mxy += w * x * y;
        }
      const double vx = mxx - mx * mx;
      const double vy = myy - my * my;
      const double cov = mxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace

TEST_CASE("rgb_to_y: closed-form values and range") {
  FeatureMap img(3, 1, 3);
  // Pixel 0: mid gray. Pixel 1: black. Pixel 2: white.
  img.array() << 0.5f, 0.0f, 1.0f, 0.5f, 0.0f, 1.0f, 0.5f, 0.0f, 1.0f;
  const Eigen::ArrayXXd y = rgb_to_y(img);
  CHECK(y(0, 0) == doctest::Approx(125.5).epsilon(1e-12));
  CHECK(y(0, 1) == doctest::Approx(16.0).epsilon(1e-12));
  CHECK(y(0, 2) == doctest::Approx(235.0).epsilon(1e-9));

  Rng rng(90);
  const FeatureMap rnd = random_map(3, 5, 5, rng, 0.0, 1.0);
  const Eigen::ArrayXXd yr = rgb_to_y(rnd);
  CHECK(yr.minCoeff() >= 16.0);
  CHECK(yr.maxCoeff() <= 235.0 + 1e-9);
  CHECK_THROWS_AS(rgb_to_y(FeatureMap(1, 5, 5)), MetricError);
}

TEST_CASE("psnr: closed forms") {
  Eigen::ArrayXXd a = Eigen::ArrayXXd::Constant(20, 20, 100.0);

  SUBCASE("uniform error of one unit gives 48.1308 dB") {
    const Eigen::ArrayXXd b = a + 1.0;
    CHECK(psnr(a, b, 0) == doctest::Approx(48.13080361).epsilon(1e-7));
    // 20 log10(255): the textbook value to 4 decimals.
    CHECK(std::abs(psnr(a, b, 0) - 48.1308) < 1e-3);
    CHECK(std::abs(psnr(a, b, 3) - 48.1308) < 1e-3);  // error is uniform: shave changes nothing
  }

  SUBCASE("doubling the error costs 6.0206 dB") {
    const Eigen::ArrayXXd b1 = a + 1.0;
    const Eigen::ArrayXXd b2 = a + 2.0;
    CHECK(psnr(a, b1, 0) - psnr(a, b2, 0) == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-9));
  }

  SUBCASE("identical inputs hit the infinity sentinel") {
    CHECK(psnr(a, a, 0) == std::numeric_limits<double>::infinity());
  }

  SUBCASE("shave really drops the border") {
    Eigen::ArrayXXd b = a;
    b(0, 0) = 180.0;  // corrupt one border pixel
    CHECK(psnr(a, b, 0) < 60.0);
    CHECK(psnr(a, b, 1) == std::numeric_limits<double>::infinity());
  }

  SUBCASE("error cases") {
    CHECK_THROWS_AS(psnr(a, Eigen::ArrayXXd::Zero(20, 19), 0), MetricError);
    CHECK_THROWS_AS(psnr(a, a, -1), MetricError);
    CHECK_THROWS_AS(psnr(a, a, 10), MetricError);  // nothing left after shaving
  }
}

TEST_CASE("ssim: perfect match is exactly one") {
  Rng rng(91);
  const Eigen::ArrayXXd a = random_plane(25, 30, rng);
  CHECK(ssim(a, a, 0) == 1.0);
  CHECK(ssim(a, a, 2) == 1.0);
}

TEST_CASE("ssim: agrees with a direct per-window implementation") {
  Rng rng(92);
  for (int trial = 0; trial < 3; ++trial) {
    const Eigen::ArrayXXd a = random_plane(18, 21, rng);
    Eigen::ArrayXXd b = a;
    // Structured + random corruption so SSIM lands strictly inside (0, 1).
    for (long y = 0; y < b.rows(); ++y)
      for (long x = 0; x < b.cols(); ++x) b(y, x) += 12.0 * rng.u01() + 3.0 * ((x + y) % 2);
    const double got = ssim(a, b, 0);
    CHECK(got == doctest::Approx(ssim_direct(a, b)).epsilon(1e-6));
    CHECK(got > 0.0);
    CHECK(got < 1.0);
  }
}

TEST_CASE("ssim: shave drops the border before filtering") {
  Rng rng(93);
  const Eigen::ArrayXXd a = random_plane(24, 24, rng);
  Eigen::ArrayXXd b = a;
  b.row(0) += 50.0;  // corrupt only the border
  CHECK(ssim(a, b, 0) < 1.0);
  CHECK(ssim(a, b, 1) == 1.0);

  // Shaved SSIM equals SSIM of the pre-cropped arrays.
  Eigen::ArrayXXd c = a + 5.0;
  const Eigen::ArrayXXd ai = a.block(2, 2, 20, 20);
  const Eigen::ArrayXXd ci = c.block(2, 2, 20, 20);
  CHECK(ssim(a, c, 2) == doctest::Approx(ssim(ai, ci, 0)).epsilon(1e-12));
}

TEST_CASE("ssim: window too small after shaving throws") {
  Rng rng(94);
  const Eigen::ArrayXXd a = random_plane(12, 12, rng);
  CHECK_NOTHROW(ssim(a, a, 0));
  CHECK_THROWS_AS(ssim(a, a, 1), MetricError);  // 10 < 11
  const Eigen::ArrayXXd tiny = random_plane(10, 10, rng);
  CHECK_THROWS_AS(ssim(tiny, tiny, 0), MetricError);
}

TEST_CASE("both metrics are symmetric in their arguments") {
  Rng rng(95);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::ArrayXXd a = random_plane(16, 16, rng);
    Eigen::ArrayXXd b = random_plane(16, 16, rng);
    const double pa = psnr(a, b, 1);
    const double pb = psnr(b, a, 1);
    CHECK(pa == pb);
    const double sa = ssim(a, b, 1);
    const double sb = ssim(b, a, 1);
    CHECK(sa == doctest::Approx(sb).epsilon(1e-12));
  }
}
