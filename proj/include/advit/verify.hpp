#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "advit/graph.hpp"
#include "advit/rng.hpp"
#include "advit/vit.hpp"

// Finite-difference verification of the full model, shared by the gradcheck
// command and the test suites.
namespace advit::verify {

struct GradcheckSettings {
  std::size_t batch = 2;
  /// Coordinates sampled per parameter tensor (0 = all).
  std::size_t max_coords = 24;
  double h = 1e-5;
  /// Std of the random weights; larger than training init so that every
  /// gradient is well above finite-difference noise.
  double param_scale = 0.3;
  double threshold = 1e-4;
  /// A tensor whose analytic and numeric gradients are both below this at
  /// every checked coordinate is structurally zero (the key bias: softmax
  /// ignores a per-query constant shift). The relative error of such a
  /// tensor only measures finite-difference rounding, so it is judged on
  /// this absolute bound instead.
  double zero_floor = 1e-9;
  std::uint64_t seed = 0;
  /// Block whose gate is set to 0 for the detached-branch comparison.
  std::size_t gated_block = 0;
};

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_gradient = 0.0;
  std::size_t checked = 0;
  bool structurally_zero = false;
};

struct GradcheckReport {
  std::vector<TensorCheck> checks;
  /// Max |gated input grad - detached-oracle input grad|.
  double ard_oracle_max_abs_diff = 0.0;
  /// Worst relative error over tensors that are not structurally zero.
  double worst_error = 0.0;
  std::string worst_name;

  bool passed(double threshold) const { return worst_error < threshold && ard_oracle_max_abs_diff < 1e-10; }
};

/// Random weights of the given scale; layer-norm gains are 1 + 0.1 * N(0, 1).
vit::ModelParams<double> random_params(const vit::ViTConfig& config, Rng& rng, double scale);

/// The model with block `detached_block`'s attention branch replaced by a
/// constant of the same value. Built from the block pieces directly rather
/// than through the gate, so it is an independent route to the ARD gradient.
Var detached_branch_forward(Graph<double>& g, const vit::ViTConfig& config, const vit::BoundParams& p, Var images,
                            std::size_t detached_block);

/// d(mean CE)/d(images) with the given gates (nullptr = ungated model).
Tensor<double> input_gradient(const vit::ModelParams<double>& params, const Tensor<double>& images,
                              const Tensor<double>& labels, const vit::GateVector* gates);

/// Same, through detached_branch_forward.
Tensor<double> detached_input_gradient(const vit::ModelParams<double>& params, const Tensor<double>& images,
                                       const Tensor<double>& labels, std::size_t detached_block);

GradcheckReport run_model_gradcheck(const vit::ViTConfig& config, const GradcheckSettings& settings);

}  // namespace advit::verify
