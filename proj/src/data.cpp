#include "bsrn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "bsrn/errors.hpp"

namespace bsrn {

namespace {

struct PpmReader {
  const std::string& path;
  std::string buf;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path + ": " + what + " (offset " + std::to_string(pos) + ")");
  }

  bool eof() const { return pos >= buf.size(); }

  // PPM allows '#' comments anywhere whitespace is allowed in the header.
  void skip_separators() {
    while (!eof()) {
      const char ch = buf[pos];
      if (std::isspace(static_cast<unsigned char>(ch))) {
        ++pos;
      } else if (ch == '#') {
        while (!eof() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  int read_int(const char* field) {
    skip_separators();
    if (eof() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
      fail(std::string("expected ") + field);
    long v = 0;
    while (!eof() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1000000000L) fail(std::string(field) + " out of range");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

}  // namespace

ImageRGB8 load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(path + ": cannot open file");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  PpmReader rd{path, std::move(buf)};
  if (rd.buf.size() < 2 || rd.buf[0] != 'P' || rd.buf[1] != '6') rd.fail("not a P6 file");
  rd.pos = 2;

  ImageRGB8 img;
  img.width = rd.read_int("width");
  img.height = rd.read_int("height");
  const int maxval = rd.read_int("maxval");
  if (img.width < 1 || img.height < 1) rd.fail("bad image dimensions");
  if (maxval != 255) rd.fail("unsupported maxval " + std::to_string(maxval) + ", want 255");
  if (rd.eof() || !std::isspace(static_cast<unsigned char>(rd.buf[rd.pos])))
    rd.fail("expected whitespace before pixel data");
  ++rd.pos;

  const std::size_t need = static_cast<std::size_t>(img.width) * img.height * 3;
  const std::size_t have = rd.buf.size() - rd.pos;
  if (have < need)
    rd.fail("payload truncated: need " + std::to_string(need) + " bytes, have " +
            std::to_string(have));
  if (have > need)
    rd.fail("trailing data: " + std::to_string(have - need) + " bytes past the payload");
  img.pixels.resize(need);
  std::memcpy(img.pixels.data(), rd.buf.data() + rd.pos, need);
  return img;
}

void save_ppm(const ImageRGB8& image, const std::string& path) {
  if (image.height < 1 || image.width < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3)
    throw ShapeError("save_ppm: inconsistent image");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path + ": cannot open for writing");
  f << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(image.pixels.data()),
          static_cast<std::streamsize>(image.pixels.size()));
  if (!f) throw std::runtime_error(path + ": write failed");
}

FeatureMap to_feature_map(const ImageRGB8& image) {
  FeatureMap map(3, image.height, image.width);
  const std::size_t plane = static_cast<std::size_t>(image.height) * image.width;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      map.data()[c * plane + p] = static_cast<float>(image.pixels[p * 3 + c]) / 255.0f;
  return map;
}

ImageRGB8 to_image(const FeatureMap& map) {
  if (map.channels() != 3) throw ShapeError("to_image: expected 3 channels, got " + map.shape_str());
  ImageRGB8 img;
  img.height = map.height();
  img.width = map.width();
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  img.pixels.resize(plane * 3);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < 3; ++c) {
      const float v = map.data()[c * plane + p];
      const long q = std::lround(std::fmin(std::fmax(v, 0.0f), 1.0f) * 255.0f);
      img.pixels[p * 3 + c] = static_cast<std::uint8_t>(q);
    }
  }
  return img;
}

double cubic_kernel(double d) {
  constexpr double a = -0.5;
  d = std::abs(d);
  if (d < 1.0) return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0;
  if (d < 2.0) return ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a;
  return 0.0;
}

namespace {

struct TapSet {
  std::vector<int> index;      // 4 clamped source indices per output position
  std::vector<double> weight;  // matching kernel weights
};

TapSet make_taps(int in_size, int out_size) {
  TapSet taps;
  taps.index.resize(static_cast<std::size_t>(out_size) * 4);
  taps.weight.resize(static_cast<std::size_t>(out_size) * 4);
  const double step = static_cast<double>(in_size) / out_size;
  for (int j = 0; j < out_size; ++j) {
    const double src = (j + 0.5) * step - 0.5;
    const double base = std::floor(src);
    for (int m = 0; m < 4; ++m) {
      const int p = static_cast<int>(base) - 1 + m;
      taps.index[j * 4 + m] = std::clamp(p, 0, in_size - 1);
      taps.weight[j * 4 + m] = cubic_kernel(src - p);
    }
  }
  return taps;
}

}  // namespace

FeatureMap bicubic_resize(const FeatureMap& src, int out_height, int out_width) {
  if (src.height() < 1 || src.width() < 1)
    throw ShapeError("bicubic_resize: empty source " + src.shape_str());
  if (out_height < 1 || out_width < 1)
    throw ShapeError("bicubic_resize: bad target size " + std::to_string(out_height) + "x" +
                     std::to_string(out_width));

  const TapSet xt = make_taps(src.width(), out_width);
  const TapSet yt = make_taps(src.height(), out_height);

  FeatureMap out(src.channels(), out_height, out_width);
  // Horizontal pass in doubles for one source row at a time, then the
  // vertical pass combines four such rows per output row.
  std::vector<double> rows(static_cast<std::size_t>(src.height()) * out_width);
  for (int c = 0; c < src.channels(); ++c) {
    for (int y = 0; y < src.height(); ++y) {
      const float* s = src.row_ptr(c, y);
      double* r = rows.data() + static_cast<std::size_t>(y) * out_width;
      for (int j = 0; j < out_width; ++j) {
        const int* ix = xt.index.data() + j * 4;
        const double* wx = xt.weight.data() + j * 4;
        r[j] = wx[0] * s[ix[0]] + wx[1] * s[ix[1]] + wx[2] * s[ix[2]] + wx[3] * s[ix[3]];
      }
    }
    for (int i = 0; i < out_height; ++i) {
      const int* iy = yt.index.data() + i * 4;
      const double* wy = yt.weight.data() + i * 4;
      float* dst = out.row_ptr(c, i);
      for (int j = 0; j < out_width; ++j) {
        const double v = wy[0] * rows[static_cast<std::size_t>(iy[0]) * out_width + j] +
                         wy[1] * rows[static_cast<std::size_t>(iy[1]) * out_width + j] +
                         wy[2] * rows[static_cast<std::size_t>(iy[2]) * out_width + j] +
                         wy[3] * rows[static_cast<std::size_t>(iy[3]) * out_width + j];
        dst[j] = static_cast<float>(v);
      }
    }
  }
  return out;
}

FeatureMap modcrop(const FeatureMap& image, int factor) {
  if (factor < 1) throw ShapeError("modcrop: factor must be >= 1");
  const int h = image.height() - image.height() % factor;
  const int w = image.width() - image.width() % factor;
  if (h < 1 || w < 1)
    throw ShapeError("modcrop: image " + image.shape_str() + " smaller than factor " +
                     std::to_string(factor));
  FeatureMap out(image.channels(), h, w);
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < h; ++y)
      std::copy_n(image.row_ptr(c, y), w, out.row_ptr(c, y));
  return out;
}

Dataset::Dataset(const std::string& dir, const std::vector<int>& scales) : scales_(scales) {
  namespace fs = std::filesystem;
  if (scales_.empty()) throw ConfigError("Dataset: no scales requested");
  if (!fs::is_directory(dir)) throw ParseError(dir + ": not a directory");

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".ppm")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  if (files.empty()) throw ParseError(dir + ": no .ppm images found");

  prepared_.resize(scales_.size());
  for (const auto& path : files) {
    const FeatureMap full = to_feature_map(load_ppm(path.string()));
    names_.push_back(path.filename().string());
    for (std::size_t si = 0; si < scales_.size(); ++si) {
      const int f = scales_[si];
      ScaledImage prep;
      prep.name = names_.back();
      prep.hr = modcrop(full, f);
      prep.lr = bicubic_resize(prep.hr, prep.hr.height() / f, prep.hr.width() / f);
      prep.lr.array() = prep.lr.array().min(1.0f).max(0.0f);
      prepared_[si].push_back(std::move(prep));
    }
  }
}

int Dataset::scale_index(int scale) const {
  for (std::size_t i = 0; i < scales_.size(); ++i)
    if (scales_[i] == scale) return static_cast<int>(i);
  throw ConfigError("Dataset: scale x" + std::to_string(scale) + " was not prepared");
}

const ScaledImage& Dataset::at(std::size_t index, int scale) const {
  if (index >= names_.size()) throw SamplingError("Dataset: image index out of range");
  return prepared_[scale_index(scale)][index];
}

int Dataset::min_lr_dim(int scale) const {
  const auto& imgs = prepared_[scale_index(scale)];
  int m = imgs.front().lr.height();
  for (const auto& img : imgs) m = std::min({m, img.lr.height(), img.lr.width()});
  return m;
}

namespace {

FeatureMap crop(const FeatureMap& src, int y0, int x0, int h, int w) {
  FeatureMap out(src.channels(), h, w);
  for (int c = 0; c < src.channels(); ++c)
    for (int y = 0; y < h; ++y) std::copy_n(src.row_ptr(c, y0 + y) + x0, w, out.row_ptr(c, y));
  return out;
}

}  // namespace

PatchPair sample_patch(const ScaledImage& image, int scale, int patch, Rng& rng) {
  if (patch < 1) throw SamplingError("sample_patch: patch must be >= 1");
  const int lw = image.lr.width();
  const int lh = image.lr.height();
  if (lw < patch || lh < patch)
    throw SamplingError("sample_patch: patch " + std::to_string(patch) + " exceeds " + image.name +
                        " (LR " + std::to_string(lh) + "x" + std::to_string(lw) + ")");
  const int x0 = rng.uniform_int(lw - patch + 1);
  const int y0 = rng.uniform_int(lh - patch + 1);
  PatchPair pair;
  pair.scale = scale;
  pair.lr = crop(image.lr, y0, x0, patch, patch);
  pair.hr = crop(image.hr, y0 * scale, x0 * scale, patch * scale, patch * scale);
  return pair;
}

namespace {

FeatureMap flip_horizontal(const FeatureMap& t) {
  FeatureMap out = zeros_like(t);
  const int n = t.width();
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < t.height(); ++y) {
      const float* s = t.row_ptr(c, y);
      float* d = out.row_ptr(c, y);
      for (int x = 0; x < n; ++x) d[x] = s[n - 1 - x];
    }
  return out;
}

FeatureMap rot90_ccw(const FeatureMap& t) {
  FeatureMap out = zeros_like(t);
  const int n = t.width();
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < n; ++y) {
      float* d = out.row_ptr(c, y);
      for (int x = 0; x < n; ++x) d[x] = t(c, x, n - 1 - y);
    }
  return out;
}

}  // namespace

FeatureMap dihedral(const FeatureMap& square, int transform) {
  if (square.height() != square.width())
    throw ShapeError("dihedral: map is not square " + square.shape_str());
  if (transform < 0 || transform > 7)
    throw ShapeError("dihedral: transform index " + std::to_string(transform) + " outside 0..7");
  FeatureMap out = (transform & 4) ? flip_horizontal(square) : square;
  for (int k = 0; k < (transform & 3); ++k) out = rot90_ccw(out);
  return out;
}

PatchPair augment(const PatchPair& pair, Rng& rng) {
  const int t = rng.uniform_int(8);
  PatchPair out;
  out.scale = pair.scale;
  out.lr = dihedral(pair.lr, t);
  out.hr = dihedral(pair.hr, t);
  return out;
}

int sample_scale(Rng& rng, const std::vector<int>& scales) {
  if (scales.empty()) throw ConfigError("sample_scale: empty scale list");
  return scales[rng.uniform_int(static_cast<int>(scales.size()))];
}

}  // namespace bsrn
