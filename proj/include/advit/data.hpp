#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit::data {

enum class Split { train, test };

std::string to_string(Split split);

/// Images [count, channels, H, W] with pixels in [0, 1] and one class index
/// per image. Iteration order is storage order.
struct Dataset {
  Tensor<float> images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  Shape image_shape() const { return {channels(), height(), width()}; }

  /// Throws ValidationError if any invariant (pixel range, label range,
  /// non-empty, rank 4 images) is violated.
  void validate() const;

  /// Images and labels at `indices`, in that order.
  Tensor<float> gather_images(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> gather_labels(std::span<const std::size_t> indices) const;
};

struct SyntheticSpec {
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::uint64_t seed = 0;
  Split split = Split::train;
  /// Total example count; 0 means classes * per_class.
  std::size_t count = 0;
};

/// Class c draws from one pattern family (filled rectangle, stripes,
/// checkerboard, cycling with c) in a class-specific colour, shifted by a
/// per-image jitter of up to one pixel, plus N(0, 0.05^2) pixel noise,
/// clamped to [0, 1]. Example i has label i % classes, so a count that is
/// not a multiple of the class count leaves the first classes one larger.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// Little-endian container: "AVD1" | u32 count | u32 channels | u32 H |
/// u32 W | u32 classes | count x u8 label | count*channels*H*W x u8 pixel.
/// Pixels are stored as round(255 * x).
std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes, Split split = Split::train);

void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
/// Throws DataError whose kind distinguishes unreadable file, bad magic,
/// truncation and out-of-range labels; messages name the byte offset.
Dataset load_dataset(const std::filesystem::path& path, Split split = Split::train);

/// Zero-pads `image` [C, H, W] by `pad`, takes the H x W window whose
/// top-left corner is (top, left) in padded coordinates, then mirrors it
/// horizontally if `flip`.
Tensor<float> crop_flip(const Tensor<float>& image, std::size_t pad, std::size_t top, std::size_t left, bool flip);

/// Random crop with zero padding and, if enabled, a horizontal flip with
/// probability 0.5.
Tensor<float> augment_basic(const Tensor<float>& image, std::size_t pad, Rng& rng, bool flip_enabled);

}  // namespace advit::data
