#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cbamnet/tensor.hpp"
#include "cbamnet/tensor_io.hpp"

namespace cbamnet {

/// Planar RGB image, values in [0,1] straight from decoding.
struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;  // [C,H,W]

  static Image blank(std::size_t h, std::size_t w, float value = 0.0f, std::size_t c = 3);
  float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }
  bool operator==(const Image&) const = default;
};

/// Binary P6 with maxval 255; '#' comments allowed anywhere in the header.
Image decode_ppm(std::string_view bytes);
/// Values are clamped to [0,1] and rounded to the nearest 8-bit level.
std::string encode_ppm(const Image& img);
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);

struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  void validate() const;
  bool operator==(const Normalization&) const = default;
};

Image normalize(const Image& img, const Normalization& norm);
Image denormalize(const Image& img, const Normalization& norm);

struct AugmentOptions {
  bool hflip = true;
  bool vflip = true;
  bool rotate = true;
  double max_degrees = 10.0;
};

struct AugmentParams {
  bool hflip = false;
  bool vflip = false;
  double degrees = 0.0;
};

/// Draws in a fixed order: hflip, vflip, angle. Disabled options still
/// consume their draw so toggles do not shift the other decisions.
AugmentParams draw_augment(Rng& rng, const AugmentOptions& options);
Image apply_augment(const Image& img, const AugmentParams& params);
Image augment(const Image& img, Rng& rng, const AugmentOptions& options = {});

Image flip_horizontal(const Image& img);
Image flip_vertical(const Image& img);
/// Rotation about the image center, bilinear sampling, zero outside.
Image rotate(const Image& img, double degrees);

// ---------------------------------------------------------------------------
// Datasets.

struct Sample {
  std::string path;
  std::size_t label = 0;
  std::shared_ptr<const Image> image;  // decoded copy, shared between splits
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::vector<std::size_t> class_counts() const;
  /// Throws when a label is outside [0, classes.size()).
  void validate() const;
};

struct CleaningReport {
  struct Skip {
    std::string path;
    std::string reason;
  };
  std::vector<Skip> skipped;

  std::string to_text() const;
};

/// Layout root/<class>/*.ppm. Classes and files are taken in lexicographic
/// order. In strict mode an unreadable file throws; in lenient mode it is
/// skipped and recorded in `report`.
Dataset scan_directory(const std::filesystem::path& root, bool lenient = false,
                       CleaningReport* report = nullptr);

struct SplitResult {
  Dataset first;   // train (or fit)
  Dataset second;  // test (or validation)
};

/// Stratified: each class is shuffled with its own seeded stream and the first
/// floor(ratio * n) members go to `first`. Both halves keep dataset order.
SplitResult split_dataset(const Dataset& ds, double ratio, std::uint64_t seed);
/// Holds out `fraction` of each class for validation.
SplitResult validation_split(const Dataset& train, double fraction, std::uint64_t seed);

/// Keeps a class iff n - floor(ratio * n) > threshold; survivors keep their
/// relative order and are re-indexed densely.
Dataset exclude_small_classes(const Dataset& ds, double ratio = 0.8, std::size_t threshold = 100);

/// Per-channel mean and standard deviation over every pixel of `ds`, at
/// `height` x `width` after resizing.
Normalization channel_stats(const Dataset& ds, std::size_t height, std::size_t width);

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t per_class = 250;
  std::size_t size = 64;
  std::uint64_t seed = 42;
};

const std::vector<std::string>& synthetic_class_names();
/// Renders one image of family `cls`; a pure function of its arguments.
Image render_ship(std::size_t cls, std::size_t size, std::uint64_t seed, std::size_t index);
/// Writes out/<class>/img_XXXX.ppm and returns the dataset (with images).
Dataset generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out);

// ---------------------------------------------------------------------------
// Batches.

struct BatchOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  Normalization norm;
  bool augment = false;
  AugmentOptions augment_options;
  std::size_t workers = 1;
};

template <class T>
struct Batch {
  Tensor<T> images;  // [N,3,H,W], normalized
  std::vector<std::size_t> labels;
};

/// Resize -> augment -> normalize for each listed sample. The augmentation
/// stream of sample i is seeded from (seed, i), so the result does not depend
/// on the worker count.
template <class T>
Batch<T> assemble_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                        const BatchOptions& options, std::uint64_t seed);

/// Single-sample preprocessing without augmentation.
template <class T>
Tensor<T> image_to_input(const Image& img, const BatchOptions& options);

}  // namespace cbamnet
