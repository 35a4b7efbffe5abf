#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scws/losses.hpp"
#include "scws/tensor.hpp"

namespace scws {

/// Missing files, unreadable or malformed image data, bad manifests.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ground-truth mask, values in {0,1}.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  std::size_t positives() const;
};

struct Sample {
  std::string id;
  Tensor image;  // [3,H,W] in [0,1]
  ScribbleMask scribble;
  std::optional<BinaryMask> mask;  // evaluation only

  std::size_t height() const { return image.dim(1); }
  std::size_t width() const { return image.dim(2); }
};

// ---------------------------------------------------------------------------
// Binary PPM (P6) and PGM (P5), maxval 255.

Tensor load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Tensor& image);
/// Bytes 0, 128, 255 map to Unlabeled, Background, Foreground; anything else is rejected.
ScribbleMask load_scribble(const std::filesystem::path& path);
void save_scribble(const std::filesystem::path& path, const ScribbleMask& mask);
/// Bytes >= 128 are foreground.
BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const BinaryMask& mask);
/// Values are written as round(255 v), clamped to [0,1] first.
void save_map(const std::filesystem::path& path, const SaliencyMap& map);
SaliencyMap load_map(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest: one sample per line, "image<TAB>scribble[<TAB>mask]", paths
// relative to the manifest's directory.

struct ManifestEntry {
  std::string id;  // image file stem
  std::filesystem::path image, scribble;
  std::optional<std::filesystem::path> mask;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;  // manifest file stem
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool has_masks() const;
};

/// Validates that the manifest is non-empty and every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
Sample load_sample(const DatasetManifest& manifest, std::size_t index);

// ---------------------------------------------------------------------------
// Synthetic scribble-annotated dataset.

struct SynthObject {
  BinaryMask region;
  std::size_t scribbled = 0;  // foreground scribble pixels on this object
};

struct SynthSample {
  Sample sample;
  std::vector<SynthObject> objects;
};

/// One generated sample; a pure function of (size, seed, index).
SynthSample synth_sample(std::size_t size, std::uint64_t seed, std::size_t index);

/// Writes images/, scribbles/, masks/ and manifest.tsv under `out_dir`.
DatasetManifest synth_generate(const std::filesystem::path& out_dir, std::size_t count, std::size_t size,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Augmentation: resize to a ~10% margin, random crop, random horizontal flip.

struct AugmentParams {
  std::size_t resized = 0;  // square side before cropping
  std::size_t y0 = 0, x0 = 0;
  bool flip = false;
};

/// train_size + ceil(train_size / 10), rounded up to even.
std::size_t augment_resize_side(std::size_t train_size);
AugmentParams draw_augment(std::uint64_t seed, std::size_t train_size, std::size_t attempt);

/// Bilinear for the image, nearest-neighbour for scribble and mask.
Sample resize_sample(const Sample& s, std::size_t height, std::size_t width);
Sample crop_sample(const Sample& s, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width);
Sample flip_sample(const Sample& s);
Sample apply_augment(const Sample& s, const AugmentParams& p, std::size_t train_size);

/// Re-rolls up to 10 times when a crop drops every foreground scribble pixel.
Sample augment(const Sample& s, std::uint64_t seed, std::size_t train_size);

}  // namespace scws
