#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "advit/rng.hpp"
#include "advit/tensor.hpp"
#include "advit/vit.hpp"

namespace advit::warmup {

/// combined: ARD and PRM with k = p; ard_only: k = 0; prm_only: p = 0.
enum class Mode { off, combined, ard_only, prm_only };

std::string to_string(Mode mode);
/// Accepts "off", "combined", "ard-only", "prm-only"; throws ValidationError.
Mode parse_mode(const std::string& name);

/// Linear decay of the ARD drop probability p and PRM mask fraction k from 1
/// to 0 over the first `warmup_epochs` epochs, interpolated per batch.
struct Schedule {
  std::size_t warmup_epochs = 0;
  std::size_t batches_per_epoch = 1;
  Mode mode = Mode::off;

  /// p = 1 - min(t / n_w + (a + 1) / (R * n_w), 1), or 0 when the schedule
  /// is off, n_w = 0, or the mode disables ARD. Throws ContractError if
  /// a >= R.
  double drop_prob(std::size_t epoch, std::size_t batch) const;
  /// The same decay for PRM: equals p in combined mode, 0 in ard_only.
  double mask_fraction(std::size_t epoch, std::size_t batch) const;
};

/// Each of `depth` gates is 0 with probability p and 1 otherwise; consumes
/// exactly `depth` words of `rng`.
vit::GateVector sample_gates(double p, std::size_t depth, Rng& rng);

/// masked[j] == true removes the perturbation on patch j.
struct PatchMask {
  std::vector<bool> masked;

  std::size_t size() const { return masked.size(); }
  std::size_t count() const;
};

/// floor(J * k), with the product taken in double.
std::size_t masked_patch_count(double k, std::size_t num_patches);

/// Exactly masked_patch_count(k, J) distinct patches, uniformly without
/// replacement (partial Fisher-Yates). Draws nothing when the count is 0.
PatchMask sample_patch_mask(double k, std::size_t num_patches, Rng& rng);

/// [C, H, W] tensor of ones with each masked patch's pixel block zeroed in
/// every channel; patch j covers grid cell (j / grid, j % grid), the order
/// patch_embed uses. Throws ContractError if the mask length is not J.
template <typename T>
Tensor<T> expand_mask(const PatchMask& mask, const vit::ViTConfig& config);

}  // namespace advit::warmup
