#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "advit/data.hpp"
#include "advit/graph.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"
#include "advit/vit.hpp"

namespace advit::attacks {

enum class LossKind { cross_entropy, cw_margin };

std::string to_string(LossKind kind);
/// Accepts "ce" / "cross-entropy" and "cw" / "cw-margin".
LossKind parse_loss(const std::string& name);

/// l-inf PGD in pixel units (images live in [0, 1]).
struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  std::size_t steps = 10;
  LossKind loss = LossKind::cross_entropy;
  bool random_init = true;

  /// Throws ValidationError unless 0 <= step_size and 0 <= epsilon <= 1.
  void validate() const;

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

/// Mean over the batch of max_{i != y} z_i - z_y. At ties the runner-up is
/// the smallest such index. Throws ContractError if there are fewer than two
/// classes or a label is out of range.
template <typename T>
Var cw_margin_loss(Graph<T>& g, Var logits, std::span<const std::size_t> labels);

/// Mean cross-entropy against one-hot labels, or the CW margin.
template <typename T>
Var attack_loss(Graph<T>& g, Var logits, std::span<const std::size_t> labels, LossKind kind);

/// delta <- clamp(delta, -eps, eps); delta <- clamp(x + delta, 0, 1) - x.
template <typename T>
Tensor<T> project(const Tensor<T>& delta, const Tensor<T>& x, double epsilon);

/// What an attack needs from a model: logits, and the input gradient of the
/// batch-mean attack loss with optional per-block ARD gates.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual Tensor<float> logits(const Tensor<float>& images) const = 0;
  /// `gates == nullptr` means the ungated model.
  virtual Tensor<float> input_gradient(const Tensor<float>& images, std::span<const std::size_t> labels,
                                       LossKind loss, const vit::GateVector* gates) const = 0;
  /// Patch layout used for PRM masks; nullptr if the model has none, in
  /// which case only mask fraction 0 is accepted.
  virtual const vit::ViTConfig* patch_layout() const { return nullptr; }
};

/// Frozen view of ViT parameters; `params` must outlive the classifier.
class VitClassifier final : public Classifier {
 public:
  explicit VitClassifier(const vit::ModelParams<float>& params) : params_(params) {}

  Tensor<float> logits(const Tensor<float>& images) const override;
  Tensor<float> input_gradient(const Tensor<float>& images, std::span<const std::size_t> labels, LossKind loss,
                               const vit::GateVector* gates) const override;
  const vit::ViTConfig* patch_layout() const override { return &params_.config; }

 private:
  const vit::ModelParams<float>& params_;
};

/// One PGD iteration as seen by an observer: the masked perturbation the
/// gradient was taken at, the pixel masks used, and that gradient.
struct AttackStep {
  std::size_t iteration;
  const Tensor<float>& delta_prime;
  const Tensor<float>& pixel_masks;
  const Tensor<float>& gradient;
};

struct AttackOptions {
  /// ARD gates for the gradient passes; nullptr = ungated.
  const vit::GateVector* gates = nullptr;
  /// PRM fraction k; each example gets floor(J k) masked patches, resampled
  /// every iteration.
  double mask_fraction = 0.0;
  /// Example b of the batch uses substream (stream_offset + b) of the rng,
  /// so results do not depend on how a dataset is split into batches.
  std::uint64_t stream_offset = 0;
  std::function<void(const AttackStep&)> observer;
};

/// Returns delta for the batch x [B, C, H, W]. delta starts at
/// Uniform(-eps, eps) (or 0) and is projected; each iteration forms
/// delta' = M (.) delta, takes the gradient of the loss at x + delta' and
/// sets delta <- project(delta' + alpha sign(grad)). Throws NumericError
/// naming the iteration if a gradient is not finite.
Tensor<float> pgd_attack(const Classifier& model, const Tensor<float>& x, std::span<const std::size_t> labels,
                         const AttackConfig& config, const Rng& rng, const AttackOptions& options = {});

struct NamedAttack {
  std::string name;
  AttackConfig config;
};

/// "pgdN" (cross-entropy) or "cwN" (CW margin) with N steps, alpha = 2/255,
/// random init. Throws ValidationError on anything else.
NamedAttack parse_attack(const std::string& name, double epsilon);

struct AttackAccuracy {
  NamedAttack attack;
  double robust_acc = 0.0;
};

struct EvalReport {
  double clean_acc = 0.0;
  std::vector<AttackAccuracy> attacks;
};

/// Fraction of rows whose argmax (smallest index on ties) equals the label.
double accuracy(const Tensor<float>& logits, std::span<const std::size_t> labels);

/// Clean accuracy plus accuracy at x + delta for each attack, run ungated
/// and unmasked. Attack i draws from rng.substream(i); the result does not
/// depend on batch_size.
EvalReport robust_eval(const Classifier& model, const data::Dataset& dataset, std::span<const NamedAttack> attacks,
                       const Rng& rng, std::size_t batch_size = 64);

}  // namespace advit::attacks
