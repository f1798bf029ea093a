#pragma once

#include <Eigen/Dense>

#include "bsrn/tensor.hpp"

namespace bsrn {

// BT.601 studio-swing luma of an RGB map in [0, 1], producing values in
// [16, 235] as doubles: Y = 16 + 65.481 R + 128.553 G + 24.966 B.
Eigen::ArrayXXd rgb_to_y(const FeatureMap& image);

// Peak signal-to-noise ratio against peak 255 after shaving `shave` pixels
// from every border. Identical inputs return +infinity.
double psnr(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, int shave);

// Mean structural similarity over all fully-valid 11x11 windows (Gaussian
// sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 255), after shaving.
double ssim(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b, int shave);

}  // namespace bsrn
