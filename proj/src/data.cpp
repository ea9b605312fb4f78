#include "advit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "advit/errors.hpp"
#include "byte_io.hpp"

namespace advit::data {

namespace {

constexpr char kMagic[4] = {'A', 'V', 'D', '1'};
constexpr float kBackground = 0.1f;
constexpr double kNoiseStd = 0.05;

// Foreground intensity of `channel` for class c: a colour wheel over the
// classes so every class has a distinct tint.
float tint(std::size_t c, std::size_t classes, std::size_t channel, std::size_t channels) {
  if (channels == 1) {
    return 0.9f;
  }
  const double phase = static_cast<double>(c) / static_cast<double>(classes) -
                       static_cast<double>(channel) / static_cast<double>(channels);
  return static_cast<float>(0.25 + 0.65 * (0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * phase)));
}

// Whether pixel (y, x) belongs to the foreground of class c's pattern,
// already shifted by the per-image jitter.
bool foreground(std::size_t c, std::size_t size, long y, long x) {
  const long s = static_cast<long>(size);
  const long variant = static_cast<long>(c / 3);
  switch (c % 3) {
    case 0: {
      const long margin = std::min(s / 4 + variant, s / 2 - 1);
      return y >= margin && y < s - margin && x >= margin && x < s - margin;
    }
    case 1: {
      const long period = std::max(1L, s / 8) * (1 + variant / 2);
      const long coord = variant % 2 == 0 ? y : x;
      return ((coord + s) / period) % 2 == 0;
    }
    default: {
      const long cell = std::max(1L, s / 4) >> std::min(variant, 2L);
      return (((y + s) / std::max(1L, cell)) + ((x + s) / std::max(1L, cell))) % 2 == 0;
    }
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(DataError::Kind::io, 0, "cannot open dataset file " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw ValidationError("dataset: images must be [count, channels, H, W], got " + shape_str(images.shape()));
  }
  if (labels.empty() || labels.size() != images.dim(0)) {
    throw ValidationError("dataset: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(images.dim(0)) + " images");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw ValidationError("dataset: label " + std::to_string(labels[i]) + " of example " + std::to_string(i) +
                            " is not below class count " + std::to_string(classes));
    }
  }
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ValidationError("dataset: pixel outside [0, 1]");
    }
  }
}

Tensor<float> Dataset::gather_images(std::span<const std::size_t> indices) const {
  const std::size_t stride = shape_numel(image_shape());
  Shape shape = image_shape();
  shape.insert(shape.begin(), indices.size());
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = images.data().subspan(indices[i] * stride, stride);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

std::vector<std::size_t> Dataset::gather_labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    out.push_back(labels.at(i));
  }
  return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) {
    throw ContractError("generate_synthetic: need at least 2 classes");
  }
  const std::size_t count = spec.count > 0 ? spec.count : spec.classes * spec.per_class;
  if (count == 0 || spec.image_size == 0 || spec.channels == 0) {
    throw ContractError("generate_synthetic: count, image_size and channels must be positive");
  }
  const std::size_t s = spec.image_size;
  Dataset ds;
  ds.images = Tensor<float>({count, spec.channels, s, s});
  ds.labels.resize(count);
  ds.classes = spec.classes;
  ds.split = spec.split;
  const Rng root(spec.seed);
  auto px = ds.images.data();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = i % spec.classes;
    ds.labels[i] = c;
    Rng rng = root.substream(i);
    const long jy = static_cast<long>(rng.below(3)) - 1;
    const long jx = static_cast<long>(rng.below(3)) - 1;
    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
      const float fg = tint(c, spec.classes, ch, spec.channels);
      for (std::size_t y = 0; y < s; ++y) {
        for (std::size_t x = 0; x < s; ++x) {
          const bool on = foreground(c, s, static_cast<long>(y) - jy, static_cast<long>(x) - jx);
          const double v = (on ? fg : kBackground) + kNoiseStd * rng.normal();
          px[((i * spec.channels + ch) * s + y) * s + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  return ds;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  dataset.validate();
  if (dataset.classes > 256) {
    throw ContractError("encode_dataset: labels are stored as u8; at most 256 classes");
  }
  detail::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(static_cast<std::uint32_t>(dataset.size()));
  w.u32(static_cast<std::uint32_t>(dataset.channels()));
  w.u32(static_cast<std::uint32_t>(dataset.height()));
  w.u32(static_cast<std::uint32_t>(dataset.width()));
  w.u32(static_cast<std::uint32_t>(dataset.classes));
  for (std::size_t label : dataset.labels) {
    w.u8(static_cast<std::uint8_t>(label));
  }
  for (float v : dataset.images.data()) {
    w.u8(static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0)));
  }
  return std::move(w.bytes());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes, Split split) {
  detail::ByteReader r(bytes, [](std::uint64_t offset, const std::string& what) {
    throw DataError(DataError::Kind::truncated, offset,
                    "dataset truncated at byte " + std::to_string(offset) + " while reading " + what);
  });
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw DataError(DataError::Kind::magic, 0, "dataset magic mismatch at byte 0 (expected \"AVD1\")");
  }
  r.raw(4, "magic");
  const std::uint32_t count = r.u32("count");
  const std::uint32_t channels = r.u32("channels");
  const std::uint32_t height = r.u32("height");
  const std::uint32_t width = r.u32("width");
  const std::uint64_t class_offset = r.offset();
  const std::uint32_t classes = r.u32("class count");
  if (count == 0 || channels == 0 || height == 0 || width == 0) {
    throw DataError(DataError::Kind::invalid_header, 4, "dataset header at byte 4 declares an empty dimension");
  }
  if (classes == 0) {
    throw DataError(DataError::Kind::invalid_header, class_offset,
                    "dataset header at byte " + std::to_string(class_offset) + " declares zero classes");
  }
  Dataset ds;
  ds.classes = classes;
  ds.split = split;
  ds.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t at = r.offset();
    const std::uint8_t label = r.u8("label " + std::to_string(i));
    if (label >= classes) {
      throw DataError(DataError::Kind::bad_label, at,
                      "label " + std::to_string(label) + " at byte " + std::to_string(at) +
                          " is not below class count " + std::to_string(classes));
    }
    ds.labels[i] = label;
  }
  const std::uint64_t pixels = std::uint64_t{count} * channels * height * width;
  const auto raw = r.raw(pixels, "pixel payload (" + std::to_string(pixels) + " bytes)");
  ds.images = Tensor<float>({count, channels, height, width});
  auto px = ds.images.data();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    px[i] = static_cast<float>(raw[i]) / 255.0f;
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  const auto bytes = encode_dataset(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw DataError(DataError::Kind::io, 0, "cannot write dataset file " + path.string());
  }
}

Dataset load_dataset(const std::filesystem::path& path, Split split) {
  const auto bytes = read_file(path);
  return decode_dataset(bytes, split);
}

Tensor<float> crop_flip(const Tensor<float>& image, std::size_t pad, std::size_t top, std::size_t left, bool flip) {
  if (image.rank() != 3) {
    throw DimensionError("crop_flip: expected [C, H, W], got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (top > 2 * pad || left > 2 * pad) {
    throw ContractError("crop_flip: window outside the padded image");
  }
  Tensor<float> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        // Source coordinates in the unpadded image; outside means zero padding.
        const long sy = static_cast<long>(y + top) - static_cast<long>(pad);
        const std::size_t ox = flip ? w - 1 - x : x;
        const long sx = static_cast<long>(ox + left) - static_cast<long>(pad);
        float v = 0.0f;
        if (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w)) {
          v = image[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
        }
        out[(ch * h + y) * w + x] = v;
      }
    }
  }
  return out;
}

Tensor<float> augment_basic(const Tensor<float>& image, std::size_t pad, Rng& rng, bool flip_enabled) {
  const std::size_t top = rng.below(2 * pad + 1);
  const std::size_t left = rng.below(2 * pad + 1);
  const bool flip = flip_enabled && rng.bernoulli(0.5);
  return crop_flip(image, pad, top, left, flip);
}

}  // namespace advit::data
