#include "advit/warmup.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advit/errors.hpp"

namespace advit::warmup {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::off:
      return "off";
    case Mode::combined:
      return "combined";
    case Mode::ard_only:
      return "ard-only";
    case Mode::prm_only:
      return "prm-only";
  }
  return "off";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::off, Mode::combined, Mode::ard_only, Mode::prm_only}) {
    if (name == to_string(m)) {
      return m;
    }
  }
  throw ValidationError("unknown warm-up mode \"" + name + "\" (expected off, combined, ard-only or prm-only)");
}

namespace {

double decay(const Schedule& s, std::size_t epoch, std::size_t batch) {
  if (batch >= s.batches_per_epoch) {
    throw ContractError("warm-up schedule: batch index " + std::to_string(batch) + " is not below R = " +
                        std::to_string(s.batches_per_epoch));
  }
  if (s.mode == Mode::off || s.warmup_epochs == 0) {
    return 0.0;
  }
  const double nw = static_cast<double>(s.warmup_epochs);
  const double r = static_cast<double>(s.batches_per_epoch);
  const double progress = static_cast<double>(epoch) / nw + static_cast<double>(batch + 1) / (r * nw);
  return 1.0 - std::min(progress, 1.0);
}

}  // namespace

double Schedule::drop_prob(std::size_t epoch, std::size_t batch) const {
  const double p = decay(*this, epoch, batch);
  return mode == Mode::prm_only ? 0.0 : p;
}

double Schedule::mask_fraction(std::size_t epoch, std::size_t batch) const {
  const double k = decay(*this, epoch, batch);
  return mode == Mode::ard_only ? 0.0 : k;
}

vit::GateVector sample_gates(double p, std::size_t depth, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ContractError("sample_gates: p must lie in [0, 1]");
  }
  std::vector<int> gates(depth);
  for (auto& u : gates) {
    u = rng.uniform() < p ? 0 : 1;
  }
  return vit::GateVector(std::move(gates));
}

std::size_t PatchMask::count() const { return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), true)); }

std::size_t masked_patch_count(double k, std::size_t num_patches) {
  if (!(k >= 0.0 && k <= 1.0)) {
    throw ContractError("patch mask: k must lie in [0, 1]");
  }
  return static_cast<std::size_t>(std::floor(static_cast<double>(num_patches) * k));
}

PatchMask sample_patch_mask(double k, std::size_t num_patches, Rng& rng) {
  const std::size_t count = masked_patch_count(k, num_patches);
  PatchMask mask{std::vector<bool>(num_patches, false)};
  if (count == 0) {
    return mask;
  }
  std::vector<std::size_t> order(num_patches);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(num_patches - i));
    std::swap(order[i], order[j]);
    mask.masked[order[i]] = true;
  }
  return mask;
}

template <typename T>
Tensor<T> expand_mask(const PatchMask& mask, const vit::ViTConfig& config) {
  if (mask.size() != config.num_patches()) {
    throw ContractError("expand_mask: mask has " + std::to_string(mask.size()) + " patches, config has " +
                        std::to_string(config.num_patches()));
  }
  const std::size_t s = config.image_size, p = config.patch_size, grid = config.grid();
  Tensor<T> out = Tensor<T>::full(config.image_shape(), T{1});
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (!mask.masked[j]) {
      continue;
    }
    const std::size_t y0 = (j / grid) * p, x0 = (j % grid) * p;
    for (std::size_t ch = 0; ch < config.channels; ++ch) {
      for (std::size_t y = y0; y < y0 + p; ++y) {
        std::fill_n(out.data().begin() + static_cast<std::ptrdiff_t>((ch * s + y) * s + x0), p, T{0});
      }
    }
  }
  return out;
}

template Tensor<float> expand_mask(const PatchMask&, const vit::ViTConfig&);
template Tensor<double> expand_mask(const PatchMask&, const vit::ViTConfig&);

}  // namespace advit::warmup
