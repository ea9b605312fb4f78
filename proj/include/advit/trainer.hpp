#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advit/attacks.hpp"
#include "advit/data.hpp"
#include "advit/errors.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"
#include "advit/vit.hpp"
#include "advit/warmup.hpp"

namespace advit::train {

enum class OptimizerKind { sgd, adamw };
std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.1;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class ScheduleKind { piecewise, cyclic };
std::string to_string(ScheduleKind kind);
ScheduleKind parse_schedule(const std::string& name);

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::piecewise;
  /// Epochs at which the rate is multiplied by `factor` (piecewise).
  std::vector<std::size_t> milestones;
  double factor = 0.1;
  /// Fraction of all steps spent rising (cyclic).
  double peak_fraction = 0.4;
};

struct AugmentConfig {
  bool crop_pad = false;
  std::size_t pad = 4;
  bool hflip = false;
  bool mixup = false;
  double mixup_alpha = 1.0;
  bool cutmix = false;
  double cutmix_alpha = 1.0;
};

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer;
  LrSchedule lr_schedule;
  /// Unset disables clipping.
  std::optional<double> clip_norm = 1.0;
  attacks::AttackConfig attack;
  warmup::Mode warmup_mode = warmup::Mode::off;
  std::size_t warmup_epochs = 0;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  /// R: batches per epoch, the last one possibly short.
  std::size_t batches_per_epoch(std::size_t dataset_size) const;
};

/// Optimizer buffers, one per parameter tensor in ModelParams::named()
/// order. SGD uses `first` for momentum; AdamW uses `first`/`second` for the
/// moment estimates and `step` for bias correction.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  std::uint64_t step = 0;
  std::vector<Tensor<float>> first;
  std::vector<Tensor<float>> second;

  static OptimizerState zeros(OptimizerKind kind, const vit::ModelParams<float>& params);
};

/// Every parameter tensor in ModelParams::named() order.
std::vector<Tensor<float>*> parameter_list(vit::ModelParams<float>& params);

struct ClipResult {
  double pre_norm = 0.0;
  double post_norm = 0.0;
};

/// Scales all gradients by max_norm / ||g|| when the global l2 norm exceeds
/// max_norm. Norms are accumulated in double. Throws NumericError if the norm
/// is not finite and ContractError unless max_norm > 0.
ClipResult clip_global_norm(std::span<Tensor<float>* const> params, double max_norm);
/// Global l2 norm of the gradients.
double global_grad_norm(std::span<Tensor<float>* const> params);

/// g' = g + wd p; buf = momentum buf + g'; p -= lr buf.
void sgd_step(std::span<Tensor<float>* const> params, OptimizerState& state, double lr, double momentum,
              double weight_decay);

/// p -= lr wd p, then the bias-corrected Adam update.
void adamw_step(std::span<Tensor<float>* const> params, OptimizerState& state, double lr, double beta1, double beta2,
                double eps, double weight_decay);

/// Piecewise: base * factor^(milestones <= epoch). Cyclic: a triangle over
/// epochs * R steps, 0 -> base on [0, peak) and base -> 0 on [peak, total).
double lr_at(const LrSchedule& schedule, double base_lr, std::size_t epoch, std::size_t batch,
             std::size_t batches_per_epoch, std::size_t epochs);

/// One-hot rows [B, classes].
Tensor<float> one_hot(std::span<const std::size_t> labels, std::size_t classes);

struct MixResult {
  Tensor<float> images;
  Tensor<float> labels;
  /// Weight of the original example in the mixed label.
  double label_weight = 1.0;
};

/// x~ = lambda x + (1 - lambda) x[perm]; likewise for the labels.
MixResult mixup_with(const Tensor<float>& x, const Tensor<float>& y, double lambda,
                     std::span<const std::size_t> perm);
/// lambda ~ Beta(alpha, alpha) and a random pairing; batches of fewer than
/// two examples pass through unchanged.
MixResult mixup(const Tensor<float>& x, const Tensor<float>& y, double alpha, Rng& rng);

/// Pastes from x[perm] a box of sides floor(H sqrt(1 - lambda)) x
/// floor(W sqrt(1 - lambda)) whose top-left is (cy - h/2, cx - w/2), clipped
/// to the image. The label weight is 1 - pasted / (H W).
MixResult cutmix_with(const Tensor<float>& x, const Tensor<float>& y, double lambda,
                      std::span<const std::size_t> perm, std::size_t cy, std::size_t cx);
MixResult cutmix(const Tensor<float>& x, const Tensor<float>& y, double alpha, Rng& rng);

/// Everything a checkpoint carries: weights, optimizer buffers, the root
/// generator and the number of completed epochs.
struct TrainState {
  vit::ModelParams<float> params;
  OptimizerState optimizer;
  RngState rng;
  std::size_t epoch = 0;
};

/// Fresh parameters from the config seed and zeroed optimizer buffers.
TrainState initial_state(const vit::ViTConfig& model, const TrainConfig& config);

struct StepRecord {
  std::size_t epoch;
  std::size_t batch;
  double loss;
  double pre_clip_norm;
  double post_clip_norm;
  double lr;
  double p;
  double k;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_robust_acc = 0.0;
  /// Learning rate at batch 0 of the epoch.
  double lr = 0.0;
  /// Mean pre-clip gradient norm.
  double grad_norm_mean = 0.0;
  /// Drop probability at batch 0 of the epoch.
  double p = 0.0;
  double wall_ms = 0.0;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochMetrics&, const TrainState&)> on_epoch;
};

/// Thrown when the loss, a gradient or an attack turns non-finite.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t epoch, std::size_t batch, const std::string& what)
      : NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + what),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

/// Adversarial training from `state.epoch` up to config.epochs.
///
/// Random streams, all derived from Rng::from_state(state.rng): epoch t uses
/// E = root.substream(t); E.substream(0) shuffles the example order; batch a
/// uses B = E.substream(a + 1) with B.substream(0) for the ARD gates,
/// B.substream(1).substream(i) for crop/flip of the batch's i-th example,
/// B.substream(2) for the attack and B.substream(3) for Mixup/CutMix.
///
/// Per batch: p and k from the warm-up schedule, gates sampled once,
/// crop/flip on clean images, masked/gated PGD, Mixup/CutMix on the
/// adversarial batch, ungated cross-entropy step, clipping, optimizer step.
TrainState train(const TrainConfig& config, const data::Dataset& dataset, TrainState state,
                 const TrainHooks& hooks = {});

}  // namespace advit::train
