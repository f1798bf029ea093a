#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsrn/rng.hpp"
#include "bsrn/tensor.hpp"

namespace bsrn {

// 8-bit RGB image, interleaved row-major.
struct ImageRGB8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

// Binary PPM (P6, maxval 255). Parse failures report the byte offset.
ImageRGB8 load_ppm(const std::string& path);
void save_ppm(const ImageRGB8& image, const std::string& path);

// u8 -> [0, 1] float map with 3 channels, and the clamping/rounding inverse.
FeatureMap to_feature_map(const ImageRGB8& image);
ImageRGB8 to_image(const FeatureMap& map);

// Catmull-Rom-flavoured cubic resampling (a = -0.5), separable, with source
// coordinates (dst + 0.5) * in/out - 0.5 and edge clamping. Weights and
// accumulation are double precision; the result is cast to float per pixel.
FeatureMap bicubic_resize(const FeatureMap& src, int out_height, int out_width);

// Cubic kernel weight at distance d (a = -0.5).
double cubic_kernel(double d);

// Crop so both dims are multiples of factor (top-left anchored).
FeatureMap modcrop(const FeatureMap& image, int factor);

// One training image prepared for one scale: modcropped ground truth plus its
// precomputed bicubic low-resolution counterpart (clamped back to [0, 1]).
struct ScaledImage {
  std::string name;
  FeatureMap hr;
  FeatureMap lr;
};

struct PatchPair {
  FeatureMap lr;
  FeatureMap hr;
  int scale = 0;
};

// Loads every .ppm in a directory (lexicographic by filename) and prepares
// HR/LR pairs for each requested scale.
class Dataset {
 public:
  Dataset(const std::string& dir, const std::vector<int>& scales);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const ScaledImage& at(std::size_t index, int scale) const;

  // Smallest LR dimension across all images for a scale; patches must fit it.
  int min_lr_dim(int scale) const;

 private:
  std::vector<std::string> names_;
  std::vector<int> scales_;
  // per scale, per image
  std::vector<std::vector<ScaledImage>> prepared_;

  int scale_index(int scale) const;
};

// Random aligned crop: offsets are drawn on the LR grid (x then y), so the HR
// crop origin is an exact multiple of the scale.
PatchPair sample_patch(const ScaledImage& image, int scale, int patch, Rng& rng);

// One of the 8 dihedral transforms of a square map: bit 2 flips horizontally,
// bits 0-1 count 90-degree counter-clockwise rotations (flip first).
FeatureMap dihedral(const FeatureMap& square, int transform);

// Applies one random dihedral transform (single draw) to both halves.
PatchPair augment(const PatchPair& pair, Rng& rng);

// Picks one scale uniformly.
int sample_scale(Rng& rng, const std::vector<int>& scales);

}  // namespace bsrn
