#include "bsrn/metrics.hpp"

#include <cmath>
#include <limits>

#include "bsrn/errors.hpp"

namespace bsrn {

Eigen::ArrayXXd rgb_to_y(const FeatureMap& image) {
  if (image.channels() != 3)
    throw MetricError("rgb_to_y: expected 3 channels, got " + image.shape_str());
  Eigen::ArrayXXd y(image.height(), image.width());
  for (int row = 0; row < image.height(); ++row) {
    const float* r = image.row_ptr(0, row);
    const float* g = image.row_ptr(1, row);
    const float* b = image.row_ptr(2, row);
    for (int col = 0; col < image.width(); ++col)
      y(row, col) = 16.0 + 65.481 * r[col] + 128.553 * g[col] + 24.966 * b[col];
  }
  return y;
}

namespace {

void check_pair(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, int shave, int min_dim,
                const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw MetricError(std::string(op) + ": size mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  if (shave < 0) throw MetricError(std::string(op) + ": negative shave");
  if (a.rows() - 2 * static_cast<long>(shave) < min_dim ||
      a.cols() - 2 * static_cast<long>(shave) < min_dim)
    throw MetricError(std::string(op) + ": crop after shave " + std::to_string(shave) +
                      " is smaller than " + std::to_string(min_dim) + " pixels");
}

Eigen::ArrayXXd shaved(const Eigen::ArrayXXd& a, int shave) {
  return a.block(shave, shave, a.rows() - 2 * shave, a.cols() - 2 * shave);
}

// Normalized 11-tap Gaussian, sigma 1.5.
Eigen::Array<double, 11, 1> ssim_window() {
  Eigen::Array<double, 11, 1> w;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5.0;
    w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
  }
  return w / w.sum();
}

// Separable valid-mode correlation with the SSIM window.
Eigen::ArrayXXd ssim_filter(const Eigen::ArrayXXd& img) {
  const Eigen::Array<double, 11, 1> w = ssim_window();
  const long rows = img.rows(), cols = img.cols();
  Eigen::ArrayXXd horiz(rows, cols - 10);
  for (long y = 0; y < rows; ++y)
    for (long x = 0; x + 10 < cols; ++x) {
      double s = 0.0;
      for (int k = 0; k < 11; ++k) s += w[k] * img(y, x + k);
      horiz(y, x) = s;
    }
  Eigen::ArrayXXd out(rows - 10, cols - 10);
  for (long y = 0; y + 10 < rows; ++y)
    for (long x = 0; x < cols - 10; ++x) {
      double s = 0.0;
      for (int k = 0; k < 11; ++k) s += w[k] * horiz(y + k, x);
      out(y, x) = s;
    }
  return out;
}

}  // namespace

double psnr(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, int shave) {
  check_pair(a, b, shave, 1, "psnr");
  const Eigen::ArrayXXd diff = shaved(a, shave) - shaved(b, shave);
  const double mse = diff.square().sum() / static_cast<double>(diff.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, int shave) {
  check_pair(a, b, shave, 11, "ssim");
  const Eigen::ArrayXXd x = shaved(a, shave);
  const Eigen::ArrayXXd y = shaved(b, shave);

  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);

  const Eigen::ArrayXXd mu_x = ssim_filter(x);
  const Eigen::ArrayXXd mu_y = ssim_filter(y);
  const Eigen::ArrayXXd xx = ssim_filter(x * x);
  const Eigen::ArrayXXd yy = ssim_filter(y * y);
  const Eigen::ArrayXXd xy = ssim_filter(x * y);

  const Eigen::ArrayXXd var_x = xx - mu_x * mu_x;
  const Eigen::ArrayXXd var_y = yy - mu_y * mu_y;
  const Eigen::ArrayXXd cov = xy - mu_x * mu_y;

  const Eigen::ArrayXXd num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
  const Eigen::ArrayXXd den = (mu_x.square() + mu_y.square() + c1) * (var_x + var_y + c2);
  return (num / den).sum() / static_cast<double>(num.size());
}

}  // namespace bsrn
