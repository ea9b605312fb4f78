#include "advit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "advit/ops.hpp"

namespace advit::train {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adamw"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") {
    return OptimizerKind::sgd;
  }
  if (name == "adamw") {
    return OptimizerKind::adamw;
  }
  throw ValidationError("unknown optimizer \"" + name + "\" (expected sgd or adamw)");
}

std::string to_string(ScheduleKind kind) { return kind == ScheduleKind::piecewise ? "piecewise" : "cyclic"; }

ScheduleKind parse_schedule(const std::string& name) {
  if (name == "piecewise") {
    return ScheduleKind::piecewise;
  }
  if (name == "cyclic") {
    return ScheduleKind::cyclic;
  }
  throw ValidationError("unknown lr schedule \"" + name + "\" (expected piecewise or cyclic)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("train config: " + msg); };
  if (batch_size == 0) {
    fail("batch_size must be positive");
  }
  const auto& o = optimizer;
  if (!(o.lr >= 0.0) || !(o.weight_decay >= 0.0) || !std::isfinite(o.lr) || !std::isfinite(o.weight_decay)) {
    fail("lr and weight_decay must be finite and non-negative");
  }
  if (!(o.momentum >= 0.0 && o.momentum < 1.0)) {
    fail("momentum must lie in [0, 1)");
  }
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    fail("betas must lie in [0, 1)");
  }
  if (!(o.eps > 0.0)) {
    fail("eps must be positive");
  }
  const auto& m = lr_schedule.milestones;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] >= epochs || (i > 0 && m[i] <= m[i - 1])) {
      fail("milestones must be strictly increasing and below epochs");
    }
  }
  if (!(lr_schedule.factor >= 0.0)) {
    fail("schedule factor must be non-negative");
  }
  if (!(lr_schedule.peak_fraction > 0.0 && lr_schedule.peak_fraction < 1.0)) {
    fail("peak_fraction must lie in (0, 1)");
  }
  if (clip_norm && !(*clip_norm > 0.0)) {
    fail("clip_norm must be positive");
  }
  attack.validate();
  if ((augment.mixup && !(augment.mixup_alpha > 0.0)) || (augment.cutmix && !(augment.cutmix_alpha > 0.0))) {
    fail("mixup/cutmix alpha must be positive");
  }
}

std::size_t TrainConfig::batches_per_epoch(std::size_t dataset_size) const {
  return (dataset_size + batch_size - 1) / batch_size;
}

OptimizerState OptimizerState::zeros(OptimizerKind kind, const vit::ModelParams<float>& params) {
  OptimizerState s;
  s.kind = kind;
  for (const auto& nt : params.named()) {
    s.first.emplace_back(nt.tensor->shape());
    if (kind == OptimizerKind::adamw) {
      s.second.emplace_back(nt.tensor->shape());
    }
  }
  return s;
}

std::vector<Tensor<float>*> parameter_list(vit::ModelParams<float>& params) {
  std::vector<Tensor<float>*> out;
  for (auto& nt : params.named()) {
    out.push_back(nt.tensor);
  }
  return out;
}

double global_grad_norm(std::span<Tensor<float>* const> params) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (float g : p->grad()) {
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  return std::sqrt(sq);
}

ClipResult clip_global_norm(std::span<Tensor<float>* const> params, double max_norm) {
  if (!(max_norm > 0.0)) {
    throw ContractError("clip_global_norm: max_norm must be positive");
  }
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) {
    throw NumericError("clip_global_norm: gradient norm is not finite");
  }
  if (norm <= max_norm) {
    return {norm, norm};
  }
  const double scale = max_norm / norm;
  for (auto* p : params) {
    for (float& g : p->grad()) {
      g = static_cast<float>(static_cast<double>(g) * scale);
    }
  }
  return {norm, global_grad_norm(params)};
}

namespace {

void check_state(std::span<Tensor<float>* const> params, const OptimizerState& state, OptimizerKind kind) {
  if (state.kind != kind) {
    throw ContractError("optimizer state was created for " + to_string(state.kind));
  }
  const bool adam = kind == OptimizerKind::adamw;
  if (state.first.size() != params.size() || (adam && state.second.size() != params.size())) {
    throw DimensionError("optimizer state does not mirror the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first[i].shape() != params[i]->shape() || (adam && state.second[i].shape() != params[i]->shape())) {
      throw DimensionError("optimizer buffer " + std::to_string(i) + " does not match its parameter shape");
    }
    if (!params[i]->has_grad()) {
      throw ContractError("optimizer step on a parameter without gradient");
    }
  }
}

}  // namespace

void sgd_step(std::span<Tensor<float>* const> params, OptimizerState& state, double lr, double momentum,
              double weight_decay) {
  check_state(params, state, OptimizerKind::sgd);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = params[i]->grad();
    auto buf = state.first[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]) + weight_decay * static_cast<double>(p[j]);
      buf[j] = static_cast<float>(momentum * static_cast<double>(buf[j]) + gj);
      p[j] = static_cast<float>(static_cast<double>(p[j]) - lr * static_cast<double>(buf[j]));
    }
  }
  ++state.step;
}

void adamw_step(std::span<Tensor<float>* const> params, OptimizerState& state, double lr, double beta1, double beta2,
                double eps, double weight_decay) {
  check_state(params, state, OptimizerKind::adamw);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = params[i]->grad();
    auto m = state.first[i].data();
    auto v = state.second[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = beta1 * m[j] + (1.0 - beta1) * gj;
      const double vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double decayed = static_cast<double>(p[j]) * (1.0 - lr * weight_decay);
      p[j] = static_cast<float>(decayed - lr * (mj / c1) / (std::sqrt(vj / c2) + eps));
    }
  }
}

double lr_at(const LrSchedule& schedule, double base_lr, std::size_t epoch, std::size_t batch,
             std::size_t batches_per_epoch, std::size_t epochs) {
  if (epoch >= epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " is not below " + std::to_string(epochs));
  }
  if (batch >= batches_per_epoch) {
    throw ContractError("lr_at: batch index out of range");
  }
  if (schedule.kind == ScheduleKind::piecewise) {
    const auto passed = std::count_if(schedule.milestones.begin(), schedule.milestones.end(),
                                      [&](std::size_t m) { return m <= epoch; });
    double lr = base_lr;
    for (long i = 0; i < passed; ++i) {
      lr *= schedule.factor;
    }
    return lr;
  }
  const double total = static_cast<double>(epochs * batches_per_epoch);
  const double step = static_cast<double>(epoch * batches_per_epoch + batch);
  const double peak = schedule.peak_fraction * total;
  if (step < peak) {
    return base_lr * step / peak;
  }
  return base_lr * (total - step) / (total - peak);
}

Tensor<float> one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor<float> out({labels.size(), classes});
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= classes) {
      throw ContractError("one_hot: label " + std::to_string(labels[b]) + " out of range");
    }
    out[b * classes + labels[b]] = 1.0f;
  }
  return out;
}

namespace {

void check_mix_inputs(const Tensor<float>& x, const Tensor<float>& y, std::span<const std::size_t> perm) {
  if (x.rank() != 4 || y.rank() != 2 || y.dim(0) != x.dim(0) || perm.size() != x.dim(0)) {
    throw DimensionError("mix: images " + shape_str(x.shape()) + ", labels " + shape_str(y.shape()) +
                         " and pairing of " + std::to_string(perm.size()) + " disagree");
  }
}

Tensor<float> mix_labels(const Tensor<float>& y, double w, std::span<const std::size_t> perm) {
  const std::size_t c = y.dim(1);
  Tensor<float> out(y.shape());
  for (std::size_t b = 0; b < y.dim(0); ++b) {
    for (std::size_t j = 0; j < c; ++j) {
      out[b * c + j] = static_cast<float>(w * y[b * c + j] + (1.0 - w) * y[perm[b] * c + j]);
    }
  }
  return out;
}

std::vector<std::size_t> random_pairing(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span(perm));
  return perm;
}

}  // namespace

MixResult mixup_with(const Tensor<float>& x, const Tensor<float>& y, double lambda,
                     std::span<const std::size_t> perm) {
  check_mix_inputs(x, y, perm);
  const std::size_t stride = x.numel() / x.dim(0);
  MixResult r{Tensor<float>(x.shape()), mix_labels(y, lambda, perm), lambda};
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t i = 0; i < stride; ++i) {
      r.images[b * stride + i] =
          static_cast<float>(lambda * x[b * stride + i] + (1.0 - lambda) * x[perm[b] * stride + i]);
    }
  }
  return r;
}

MixResult mixup(const Tensor<float>& x, const Tensor<float>& y, double alpha, Rng& rng) {
  if (x.dim(0) < 2) {
    return {x.detached(), y.detached(), 1.0};
  }
  const double lambda = rng.beta(alpha, alpha);
  const auto perm = random_pairing(x.dim(0), rng);
  return mixup_with(x, y, lambda, perm);
}

MixResult cutmix_with(const Tensor<float>& x, const Tensor<float>& y, double lambda,
                      std::span<const std::size_t> perm, std::size_t cy, std::size_t cx) {
  check_mix_inputs(x, y, perm);
  const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double ratio = std::sqrt(std::max(0.0, 1.0 - lambda));
  const auto cut_h = static_cast<long>(std::floor(static_cast<double>(h) * ratio));
  const auto cut_w = static_cast<long>(std::floor(static_cast<double>(w) * ratio));
  const long y0 = std::clamp(static_cast<long>(cy) - cut_h / 2, 0L, static_cast<long>(h));
  const long y1 = std::clamp(static_cast<long>(cy) - cut_h / 2 + cut_h, 0L, static_cast<long>(h));
  const long x0 = std::clamp(static_cast<long>(cx) - cut_w / 2, 0L, static_cast<long>(w));
  const long x1 = std::clamp(static_cast<long>(cx) - cut_w / 2 + cut_w, 0L, static_cast<long>(w));
  const auto pasted = static_cast<double>((y1 - y0) * (x1 - x0));
  const double weight = 1.0 - pasted / static_cast<double>(h * w);
  MixResult r{x.detached(), mix_labels(y, weight, perm), weight};
  const std::size_t stride = c * h * w;
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (long yy = y0; yy < y1; ++yy) {
        for (long xx = x0; xx < x1; ++xx) {
          const std::size_t off = (ch * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx);
          r.images[b * stride + off] = x[perm[b] * stride + off];
        }
      }
    }
  }
  return r;
}

MixResult cutmix(const Tensor<float>& x, const Tensor<float>& y, double alpha, Rng& rng) {
  if (x.dim(0) < 2) {
    return {x.detached(), y.detached(), 1.0};
  }
  const double lambda = rng.beta(alpha, alpha);
  const auto perm = random_pairing(x.dim(0), rng);
  const std::size_t cy = rng.below(x.dim(2));
  const std::size_t cx = rng.below(x.dim(3));
  return cutmix_with(x, y, lambda, perm, cy, cx);
}

TrainState initial_state(const vit::ViTConfig& model, const TrainConfig& config) {
  const Rng root(config.seed);
  // Substreams 0.. are per-epoch streams; initialisation uses a distant id.
  Rng init = root.substream(0xFFFF'FFFF'0000'0001ULL);
  TrainState s;
  s.params = vit::init_params<float>(model, init);
  s.optimizer = OptimizerState::zeros(config.optimizer.kind, s.params);
  s.rng = root.state();
  s.epoch = 0;
  return s;
}

namespace {

Tensor<float> augment_batch(const Tensor<float>& x, const AugmentConfig& aug, const Rng& rng) {
  if (!aug.crop_pad && !aug.hflip) {
    return x.detached();
  }
  const std::size_t stride = x.numel() / x.dim(0);
  const Shape image{x.dim(1), x.dim(2), x.dim(3)};
  Tensor<float> out(x.shape());
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    Rng r = rng.substream(b);
    const Tensor<float> img(image, std::vector<float>(x.data().begin() + static_cast<std::ptrdiff_t>(b * stride),
                                                      x.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * stride)));
    const auto aug_img = data::augment_basic(img, aug.crop_pad ? aug.pad : 0, r, aug.hflip);
    std::copy(aug_img.data().begin(), aug_img.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * stride));
  }
  return out;
}

}  // namespace

TrainState train(const TrainConfig& config, const data::Dataset& dataset, TrainState state, const TrainHooks& hooks) {
  config.validate();
  dataset.validate();
  const auto& mc = state.params.config;
  mc.validate();
  if (dataset.image_shape() != mc.image_shape() || dataset.classes != mc.num_classes) {
    throw ValidationError("train: dataset images " + shape_str(dataset.image_shape()) + " with " +
                          std::to_string(dataset.classes) + " classes do not fit the model (" +
                          shape_str(mc.image_shape()) + ", " + std::to_string(mc.num_classes) + " classes)");
  }
  const std::size_t n = dataset.size();
  const std::size_t batches = config.batches_per_epoch(n);
  const warmup::Schedule schedule{config.warmup_epochs, batches, config.warmup_mode};
  const Rng root = Rng::from_state(state.rng);
  const auto params = parameter_list(state.params);
  state.params.set_requires_grad(true);
  const attacks::VitClassifier classifier(state.params);

  for (std::size_t t = state.epoch; t < config.epochs; ++t) {
    const auto started = std::chrono::steady_clock::now();
    const Rng epoch_rng = root.substream(t);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = epoch_rng.substream(0);
    shuffle_rng.shuffle(std::span(order));

    EpochMetrics metrics;
    metrics.epoch = t;
    metrics.lr = lr_at(config.lr_schedule, config.optimizer.lr, t, 0, batches, config.epochs);
    metrics.p = schedule.drop_prob(t, 0);
    double loss_sum = 0.0, norm_sum = 0.0;
    std::size_t robust_hits = 0;

    for (std::size_t a = 0; a < batches; ++a) {
      const std::size_t begin = a * config.batch_size;
      const std::span<const std::size_t> idx(order.data() + begin, std::min(config.batch_size, n - begin));
      const Rng batch_rng = epoch_rng.substream(a + 1);
      const double p = schedule.drop_prob(t, a);
      const double k = schedule.mask_fraction(t, a);
      const double lr = lr_at(config.lr_schedule, config.optimizer.lr, t, a, batches, config.epochs);
      try {
        Rng gate_rng = batch_rng.substream(0);
        const vit::GateVector gates = warmup::sample_gates(p, mc.depth, gate_rng);
        const auto labels = dataset.gather_labels(idx);
        const Tensor<float> x = augment_batch(dataset.gather_images(idx), config.augment, batch_rng.substream(1));

        attacks::AttackOptions opts;
        opts.gates = &gates;
        opts.mask_fraction = k;
        const Tensor<float> delta = attacks::pgd_attack(classifier, x, labels, config.attack, batch_rng.substream(2), opts);
        Tensor<float> adv(x.shape());
        for (std::size_t i = 0; i < adv.numel(); ++i) {
          adv[i] = x[i] + delta[i];
        }

        Tensor<float> targets = one_hot(labels, mc.num_classes);
        Tensor<float> inputs = adv;
        bool mixed = false;
        const bool use_mixup = config.augment.mixup, use_cutmix = config.augment.cutmix;
        if ((use_mixup || use_cutmix) && idx.size() >= 2) {
          Rng mix_rng = batch_rng.substream(3);
          const bool pick_mixup = use_mixup && (!use_cutmix || mix_rng.bernoulli(0.5));
          auto mix = pick_mixup ? mixup(adv, targets, config.augment.mixup_alpha, mix_rng)
                                  : cutmix(adv, targets, config.augment.cutmix_alpha, mix_rng);
          inputs = std::move(mix.images);
          targets = std::move(mix.labels);
          mixed = true;
        }

        state.params.zero_grad();
        double loss = 0.0;
        Tensor<float> logits;
        {
          Graph<float> g;
          const vit::BoundParams bound = vit::bind_trainable(g, state.params);
          const Var out = vit::model_forward(g, mc, bound, g.constant(inputs), nullptr);
          const Var l = ops::cross_entropy(g, out, targets);
          loss = g.value(l).item();
          logits = g.value(out).detached();
          g.backward(l);
        }
        if (!std::isfinite(loss)) {
          throw NumericError("non-finite loss");
        }
        robust_hits += static_cast<std::size_t>(
            attacks::accuracy(mixed ? vit::predict_logits(state.params, adv) : logits, labels) *
                static_cast<double>(idx.size()) +
            0.5);

        ClipResult clip;
        if (config.clip_norm) {
          clip = clip_global_norm(params, *config.clip_norm);
        } else {
          clip.pre_norm = clip.post_norm = global_grad_norm(params);
          if (!std::isfinite(clip.pre_norm)) {
            throw NumericError("gradient norm is not finite");
          }
        }
        const auto& o = config.optimizer;
        if (o.kind == OptimizerKind::sgd) {
          sgd_step(params, state.optimizer, lr, o.momentum, o.weight_decay);
        } else {
          adamw_step(params, state.optimizer, lr, o.beta1, o.beta2, o.eps, o.weight_decay);
        }
        loss_sum += loss * static_cast<double>(idx.size());
        norm_sum += clip.pre_norm;
        if (hooks.on_step) {
          hooks.on_step({t, a, loss, clip.pre_norm, clip.post_norm, lr, p, k});
        }
      } catch (const TrainingAborted&) {
        throw;
      } catch (const NumericError& e) {
        throw TrainingAborted(t, a, e.what());
      }
    }
    state.epoch = t + 1;
    metrics.train_loss = loss_sum / static_cast<double>(n);
    metrics.train_robust_acc = static_cast<double>(robust_hits) / static_cast<double>(n);
    metrics.grad_norm_mean = norm_sum / static_cast<double>(batches);
    metrics.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    if (hooks.on_epoch) {
      hooks.on_epoch(metrics, state);
    }
  }
  for (auto* p : params) {
    p->clear_grad();
  }
  state.params.set_requires_grad(false);
  return state;
}

}  // namespace advit::train
