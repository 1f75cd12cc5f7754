#pragma once

// Raw images -> whitened 256x256 patches, leakage-free splitting at the
// source-image level, and a procedural stand-in dataset.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gemini/common.hpp"
#include "gemini/tensor.hpp"

namespace gemini::data {

enum class View { SUR, SEC };

inline std::string to_string(View v) { return v == View::SUR ? "SUR" : "SEC"; }

inline View parse_view(const std::string& s) {
  if (s == "SUR") return View::SUR;
  if (s == "SEC") return View::SEC;
  throw ConfigError("unknown view '" + s + "' (expected SUR or SEC)");
}

struct ClassLabel {
  std::string name;
  int index = 0;
  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

/// Contiguous bijection between class names and indices [0, c).
class ClassSet {
 public:
  ClassSet() = default;
  explicit ClassSet(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.size() < 2) throw ConfigError("need at least 2 classes");
    std::set<std::string> unique(names_.begin(), names_.end());
    if (unique.size() != names_.size()) throw ConfigError("duplicate class names");
  }

  /// WW, WD, UA, STR, BRU, CYS.
  static ClassSet kidney_stone_subtypes() { return ClassSet({"WW", "WD", "UA", "STR", "BRU", "CYS"}); }

  /// The first n default names, extended with C6, C7, ... if n > 6.
  static ClassSet with_size(int n) {
    if (n < 2) throw ConfigError("need at least 2 classes, got " + std::to_string(n));
    std::vector<std::string> names = kidney_stone_subtypes().names_;
    names.resize(static_cast<std::size_t>(std::min(n, 6)));
    for (int i = 6; i < n; ++i) names.push_back("C" + std::to_string(i));
    return ClassSet(std::move(names));
  }

  [[nodiscard]] int size() const { return static_cast<int>(names_.size()); }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }

  [[nodiscard]] ClassLabel label(int index) const {
    if (index < 0 || index >= size()) throw InvalidInputError("class index " + std::to_string(index) + " out of range");
    return {names_[static_cast<std::size_t>(index)], index};
  }

  [[nodiscard]] ClassLabel label(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ConfigError("unknown class '" + name + "'");
    return {name, static_cast<int>(it - names_.begin())};
  }

 private:
  std::vector<std::string> names_;
};

/// An RGB image, row-major H x W x 3 bytes.
struct SourceImage {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
  ClassLabel label;
  View view = View::SUR;
  std::optional<std::vector<std::uint8_t>> fragment_mask;  // H x W, nonzero = fragment

  [[nodiscard]] std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  void validate(int min_size = 256) const {
    if (width < min_size || height < min_size) {
      throw InvalidInputError("image " + image_id + " is " + std::to_string(width) + "x" + std::to_string(height) +
                              ", smaller than the " + std::to_string(min_size) + " px patch");
    }
    if (pixels.size() != static_cast<std::size_t>(width) * height * 3) {
      throw InvalidInputError("image " + image_id + " pixel buffer has wrong size");
    }
    if (fragment_mask && fragment_mask->size() != static_cast<std::size_t>(width) * height) {
      throw InvalidInputError("image " + image_id + " mask does not match image size");
    }
  }
};

struct GridPosition {
  int row = 0;
  int col = 0;
  friend bool operator==(const GridPosition&, const GridPosition&) = default;
};

struct PatchRecord {
  std::string patch_id;
  Tensor<float> values;  // (3, 256, 256)
  ClassLabel label;
  View view = View::SUR;
  std::string source_image_id;
  GridPosition grid_position;
  int origin_y = 0;  // pixel offset of the patch's top-left corner
  int origin_x = 0;
};

struct DatasetSplit {
  std::vector<PatchRecord> train;
  std::vector<PatchRecord> test;
  std::uint64_t seed = 0;
};

struct ExtractOptions {
  int patch_size = 256;
  int max_overlap = 20;
  double mask_threshold = 0.5;
  bool whiten = true;
};

constexpr double kWhitenEpsilon = 1e-8;

/// Per-channel (x - mean) / max(std, eps) with population std, computed in double.
inline Tensor<float> whiten(const Tensor<float>& patch) {
  Tensor<float> out(patch.shape());
  const std::size_t plane = static_cast<std::size_t>(patch.height()) * patch.width();
  for (int c = 0; c < patch.channels(); ++c) {
    const float* src = patch.channel(c);
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += src[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = src[i] - mean;
      var += d * d;
    }
    const double sd = std::max(std::sqrt(var / static_cast<double>(plane)), kWhitenEpsilon);
    float* dst = out.channel(c);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<float>((src[i] - mean) / sd);
  }
  return out;
}

/// Number of grid positions along one axis: floor((dim - patch) / stride) + 1.
inline int grid_count(int dim, int patch_size, int stride) { return (dim - patch_size) / stride + 1; }

/// Patches on a regular grid with stride patch_size - max_overlap. No extra
/// edge-aligned patch is added, so neighbours overlap by exactly max_overlap.
inline std::vector<PatchRecord> extract_patches(const SourceImage& img, const ExtractOptions& opt = {}) {
  if (opt.patch_size <= 0 || opt.max_overlap < 0 || opt.max_overlap >= opt.patch_size) {
    throw ConfigError("invalid patch geometry: size " + std::to_string(opt.patch_size) + ", overlap " +
                      std::to_string(opt.max_overlap));
  }
  img.validate(opt.patch_size);
  const int stride = opt.patch_size - opt.max_overlap;
  const int rows = grid_count(img.height, opt.patch_size, stride);
  const int cols = grid_count(img.width, opt.patch_size, stride);
  const int ps = opt.patch_size;
  std::vector<PatchRecord> out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int y0 = r * stride;
      const int x0 = c * stride;
      if (img.fragment_mask) {
        std::size_t covered = 0;
        for (int y = 0; y < ps; ++y) {
          for (int x = 0; x < ps; ++x) {
            covered += (*img.fragment_mask)[static_cast<std::size_t>(y0 + y) * img.width + x0 + x] != 0;
          }
        }
        const double coverage = static_cast<double>(covered) / (static_cast<double>(ps) * ps);
        if (coverage < opt.mask_threshold || covered == 0) continue;
      }
      Tensor<float> values(3, ps, ps);
      for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < ps; ++y) {
          for (int x = 0; x < ps; ++x) values(ch, y, x) = static_cast<float>(img.at(y0 + y, x0 + x, ch));
        }
      }
      PatchRecord p;
      p.patch_id = img.image_id + "_r" + std::to_string(r) + "_c" + std::to_string(c);
      p.values = opt.whiten ? whiten(values) : std::move(values);
      p.label = img.label;
      p.view = img.view;
      p.source_image_id = img.image_id;
      p.grid_position = {r, c};
      p.origin_y = y0;
      p.origin_x = x0;
      out.push_back(std::move(p));
    }
  }
  return out;
}

/// Source-image ids assigned to each side of a split.
struct ImageSplit {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;
};

/// Per-class shuffle, then the first round(fraction * n) images (clamped to
/// [1, n-1]) go to train. Classes are visited in index order so the result
/// only depends on (images, fraction, seed).
inline ImageSplit split_images(const std::vector<SourceImage>& images, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0,1), got " + std::to_string(train_fraction));
  }
  std::map<int, std::vector<const SourceImage*>> by_class;
  std::map<int, std::string> class_names;
  std::set<std::string> seen;
  for (const auto& img : images) {
    if (!seen.insert(img.image_id).second) throw InvalidInputError("duplicate image id " + img.image_id);
    by_class[img.label.index].push_back(&img);
    class_names[img.label.index] = img.label.name;
  }
  ImageSplit out;
  out.seed = seed;
  for (auto& [cls, members] : by_class) {
    if (members.size() < 2) {
      throw ConfigError("class " + class_names[cls] + " has " + std::to_string(members.size()) +
                        " image(s); at least 2 are needed to split");
    }
    std::sort(members.begin(), members.end(),
              [](const SourceImage* a, const SourceImage* b) { return a->image_id < b->image_id; });
    Rng rng = make_rng(seed, stream::kSplit, static_cast<std::uint64_t>(cls));
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<long>(members.size());
    const long n_train = std::clamp(std::lround(train_fraction * static_cast<double>(n)), 1L, n - 1);
    for (long i = 0; i < n; ++i) {
      (i < n_train ? out.train_ids : out.test_ids).push_back(members[static_cast<std::size_t>(i)]->image_id);
    }
  }
  return out;
}

inline DatasetSplit split_dataset(const std::vector<SourceImage>& images, double train_fraction, std::uint64_t seed,
                                  const ExtractOptions& opt = {}) {
  const ImageSplit ids = split_images(images, train_fraction, seed);
  const std::set<std::string> train_set(ids.train_ids.begin(), ids.train_ids.end());
  DatasetSplit split;
  split.seed = seed;
  for (const auto& img : images) {
    auto patches = extract_patches(img, opt);
    auto& dst = train_set.contains(img.image_id) ? split.train : split.test;
    for (auto& p : patches) dst.push_back(std::move(p));
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic stand-in dataset.
//
// Each class has a base colour and a texture made of two oriented gratings at
// class-specific angle and period. Every image adds nuisance structure that
// whitening does not remove: a distractor grating with random orientation at
// a coarse period, a smooth illumination gradient, per-image jitter of the
// class texture, and pixel noise.

struct ClassTexture {
  std::array<double, 3> base_color{};
  std::array<double, 3> color_gain{};  // per-channel weight of the class texture
  double orientation = 0.0;            // radians
  double period = 32.0;                // pixels
  double second_orientation = 0.0;
  double second_period = 20.0;
};

inline ClassTexture class_texture(int class_index, int n_classes, View view) {
  ClassTexture t;
  const double frac = static_cast<double>(class_index) / static_cast<double>(n_classes);
  const double hue = 2.0 * std::numbers::pi * frac;
  for (int ch = 0; ch < 3; ++ch) {
    const double phase = hue + 2.0 * std::numbers::pi * ch / 3.0;
    t.base_color[static_cast<std::size_t>(ch)] = 128.0 + 60.0 * std::cos(phase);
    t.color_gain[static_cast<std::size_t>(ch)] = 0.6 + 0.4 * std::sin(phase + 0.7);
  }
  const double view_shift = view == View::SUR ? 0.0 : 0.35;
  t.orientation = std::numbers::pi * (frac + view_shift);
  t.period = 14.0 + 10.0 * static_cast<double>(class_index % 3) + (view == View::SUR ? 0.0 : 4.0);
  t.second_orientation = t.orientation + std::numbers::pi / 2.0 * (class_index % 2 == 0 ? 1.0 : 0.5);
  t.second_period = 11.0 + 6.0 * static_cast<double>((class_index / 3) % 2);
  return t;
}

struct SyntheticOptions {
  int n_classes = 6;
  int images_per_class = 20;
  int width = 512;
  int height = 512;
  std::uint64_t seed = 0;
  View view = View::SUR;
  double orientation_jitter = 0.12;  // radians
  double period_jitter = 0.08;       // relative
  double distractor_amplitude = 0.9; // relative to the class texture
  double noise_sigma = 18.0;         // gray levels
};

inline std::vector<SourceImage> generate_synthetic_dataset(const SyntheticOptions& opt) {
  if (opt.n_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (opt.images_per_class < 1) throw ConfigError("images_per_class must be >= 1");
  const ClassSet classes = ClassSet::with_size(opt.n_classes);
  std::vector<SourceImage> out;
  out.reserve(static_cast<std::size_t>(opt.n_classes) * opt.images_per_class);
  for (int k = 0; k < opt.n_classes; ++k) {
    const ClassTexture tex = class_texture(k, opt.n_classes, opt.view);
    for (int n = 0; n < opt.images_per_class; ++n) {
      Rng rng = make_rng(opt.seed, stream::kSynthetic, static_cast<std::uint64_t>(opt.view == View::SUR ? 0 : 1),
                         static_cast<std::uint64_t>(k) * 100000u + static_cast<std::uint64_t>(n));
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      std::normal_distribution<double> gauss(0.0, 1.0);
      const double th1 = tex.orientation + opt.orientation_jitter * gauss(rng);
      const double th2 = tex.second_orientation + opt.orientation_jitter * gauss(rng);
      const double p1 = tex.period * (1.0 + opt.period_jitter * gauss(rng));
      const double p2 = tex.second_period * (1.0 + opt.period_jitter * gauss(rng));
      const double ph1 = 2.0 * std::numbers::pi * u01(rng);
      const double ph2 = 2.0 * std::numbers::pi * u01(rng);
      const double amp = 38.0 * (0.75 + 0.5 * u01(rng));
      const double mix = 0.35 + 0.3 * u01(rng);
      const double th_d = std::numbers::pi * u01(rng);
      const double p_d = 40.0 + 30.0 * u01(rng);
      const double ph_d = 2.0 * std::numbers::pi * u01(rng);
      const double amp_d = amp * opt.distractor_amplitude * (0.5 + u01(rng));
      std::array<double, 3> dgain{};
      for (auto& g : dgain) g = 0.3 + 0.7 * u01(rng);
      const double grad_angle = 2.0 * std::numbers::pi * u01(rng);
      const double grad_strength = 30.0 * u01(rng);
      std::array<double, 3> color = tex.base_color;
      for (auto& c : color) c += 6.0 * gauss(rng);

      SourceImage img;
      img.image_id = to_string(opt.view) + "_" + classes.names()[static_cast<std::size_t>(k)] + "_" +
                     std::to_string(n);
      img.width = opt.width;
      img.height = opt.height;
      img.label = classes.label(k);
      img.view = opt.view;
      img.pixels.resize(static_cast<std::size_t>(opt.width) * opt.height * 3);
      const double k1x = 2.0 * std::numbers::pi / p1 * std::cos(th1);
      const double k1y = 2.0 * std::numbers::pi / p1 * std::sin(th1);
      const double k2x = 2.0 * std::numbers::pi / p2 * std::cos(th2);
      const double k2y = 2.0 * std::numbers::pi / p2 * std::sin(th2);
      const double kdx = 2.0 * std::numbers::pi / p_d * std::cos(th_d);
      const double kdy = 2.0 * std::numbers::pi / p_d * std::sin(th_d);
      const double gx = std::cos(grad_angle) / opt.width;
      const double gy = std::sin(grad_angle) / opt.height;
      for (int y = 0; y < opt.height; ++y) {
        for (int x = 0; x < opt.width; ++x) {
          const double t1 = std::sin(k1x * x + k1y * y + ph1);
          const double t2 = std::sin(k2x * x + k2y * y + ph2);
          const double td = std::sin(kdx * x + kdy * y + ph_d);
          const double illum = grad_strength * ((x - opt.width / 2.0) * gx + (y - opt.height / 2.0) * gy);
          for (int ch = 0; ch < 3; ++ch) {
            const auto c = static_cast<std::size_t>(ch);
            const double v = color[c] + amp * tex.color_gain[c] * ((1.0 - mix) * t1 + mix * t2) +
                             amp_d * dgain[c] * td + illum + opt.noise_sigma * gauss(rng);
            img.pixels[(static_cast<std::size_t>(y) * opt.width + x) * 3 + c] =
                static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
          }
        }
      }
      out.push_back(std::move(img));
    }
  }
  return out;
}

inline std::vector<SourceImage> generate_synthetic_dataset(int n_classes, int images_per_class, int width, int height,
                                                           std::uint64_t seed) {
  SyntheticOptions opt;
  opt.n_classes = n_classes;
  opt.images_per_class = images_per_class;
  opt.width = width;
  opt.height = height;
  opt.seed = seed;
  return generate_synthetic_dataset(opt);
}

/// Mean RGB of an image.
inline std::array<double, 3> mean_color(const SourceImage& img) {
  std::array<double, 3> sum{};
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) sum[static_cast<std::size_t>(c)] += img.pixels[i * 3 + c];
  }
  for (auto& s : sum) s /= static_cast<double>(n);
  return sum;
}

}  // namespace gemini::data
