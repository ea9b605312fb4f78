#include "advit/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advit/errors.hpp"
#include "advit/ops.hpp"
#include "advit/warmup.hpp"

namespace advit::attacks {

std::string to_string(LossKind kind) { return kind == LossKind::cross_entropy ? "cross-entropy" : "cw-margin"; }

LossKind parse_loss(const std::string& name) {
  if (name == "ce" || name == "cross-entropy") {
    return LossKind::cross_entropy;
  }
  if (name == "cw" || name == "cw-margin") {
    return LossKind::cw_margin;
  }
  throw ValidationError("unknown attack loss \"" + name + "\" (expected cross-entropy or cw-margin)");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw ValidationError("attack: epsilon must lie in [0, 1]");
  }
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw ValidationError("attack: step_size must be finite and non-negative");
  }
}

namespace {

void check_labels(std::size_t batch, std::size_t classes, std::span<const std::size_t> labels, const char* who) {
  if (labels.size() != batch) {
    throw DimensionError(std::string(who) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw ContractError(std::string(who) + ": label " + std::to_string(y) + " out of range for " +
                          std::to_string(classes) + " classes");
    }
  }
}

}  // namespace

template <typename T>
Var cw_margin_loss(Graph<T>& g, Var logits, std::span<const std::size_t> labels) {
  const auto& z = g.value(logits);
  if (z.rank() != 2) {
    throw DimensionError("cw_margin_loss: logits must be [B, C], got " + shape_str(z.shape()));
  }
  const std::size_t batch = z.dim(0), c = z.dim(1);
  if (c < 2) {
    throw ContractError("cw_margin_loss: needs at least 2 classes");
  }
  check_labels(batch, c, labels, "cw_margin_loss");
  std::vector<std::size_t> runner_up(batch);
  T total{0};
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = z.data().data() + b * c;
    std::size_t best = labels[b] == 0 ? 1 : 0;
    for (std::size_t i = 0; i < c; ++i) {
      if (i != labels[b] && row[i] > row[best]) {
        best = i;
      }
    }
    runner_up[b] = best;
    total += row[best] - row[labels[b]];
  }
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return g.record("cw_margin", Tensor<T>::scalar(total / static_cast<T>(batch)), {logits},
                  [=, runner_up = std::move(runner_up), targets = std::move(targets)](Graph<T>& gr,
                                                                                        std::span<const T> dout) {
                    auto dz = gr.adjoint_buffer(logits);
                    const T s = dout[0] / static_cast<T>(batch);
                    for (std::size_t b = 0; b < batch; ++b) {
                      dz[b * c + runner_up[b]] += s;
                      dz[b * c + targets[b]] -= s;
                    }
                  });
}

template <typename T>
Var attack_loss(Graph<T>& g, Var logits, std::span<const std::size_t> labels, LossKind kind) {
  if (kind == LossKind::cw_margin) {
    return cw_margin_loss(g, logits, labels);
  }
  const auto& z = g.value(logits);
  if (z.rank() != 2) {
    throw DimensionError("attack_loss: logits must be [B, C], got " + shape_str(z.shape()));
  }
  check_labels(z.dim(0), z.dim(1), labels, "attack_loss");
  Tensor<T> one_hot(z.shape());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    one_hot[b * z.dim(1) + labels[b]] = T{1};
  }
  return ops::cross_entropy(g, logits, one_hot);
}

template <typename T>
Tensor<T> project(const Tensor<T>& delta, const Tensor<T>& x, double epsilon) {
  if (delta.shape() != x.shape()) {
    throw DimensionError("project: delta " + shape_str(delta.shape()) + " vs image " + shape_str(x.shape()));
  }
  const T eps = static_cast<T>(epsilon);
  Tensor<T> out(delta.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T d = std::clamp(delta[i], -eps, eps);
    out[i] = std::clamp(x[i] + d, T{0}, T{1}) - x[i];
  }
  return out;
}

Tensor<float> VitClassifier::logits(const Tensor<float>& images) const { return vit::predict_logits(params_, images); }

Tensor<float> VitClassifier::input_gradient(const Tensor<float>& images, std::span<const std::size_t> labels,
                                            LossKind loss, const vit::GateVector* gates) const {
  Tensor<float> x = images.detached();
  x.set_requires_grad(true);
  {
    Graph<float> g;
    const vit::BoundParams p = vit::bind_frozen(g, params_);
    const Var logits = vit::model_forward(g, params_.config, p, g.leaf(x), gates);
    g.backward(attack_loss(g, logits, labels, loss));
  }
  x.ensure_grad();
  return Tensor<float>(x.shape(), std::vector<float>(x.grad().begin(), x.grad().end()));
}

Tensor<float> pgd_attack(const Classifier& model, const Tensor<float>& x, std::span<const std::size_t> labels,
                         const AttackConfig& config, const Rng& rng, const AttackOptions& options) {
  config.validate();
  if (x.rank() != 4) {
    throw DimensionError("pgd_attack: expected images [B, C, H, W], got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t stride = x.numel() / batch;
  if (labels.size() != batch) {
    throw DimensionError("pgd_attack: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  }
  const vit::ViTConfig* layout = model.patch_layout();
  const std::size_t num_patches = layout ? layout->num_patches() : 0;
  const std::size_t masked = warmup::masked_patch_count(options.mask_fraction, num_patches);
  if (options.mask_fraction > 0.0 && !layout) {
    throw ContractError("pgd_attack: patch masking needs a model with a patch layout");
  }
  if (layout && stride != shape_numel(layout->image_shape())) {
    throw DimensionError("pgd_attack: image shape does not match the model's patch layout");
  }

  std::vector<Rng> mask_rngs;
  mask_rngs.reserve(batch);
  Tensor<float> delta(x.shape());
  const auto eps = static_cast<float>(config.epsilon);
  for (std::size_t b = 0; b < batch; ++b) {
    const Rng example = rng.substream(options.stream_offset + b);
    if (config.random_init) {
      Rng init = example.substream(0);
      for (std::size_t i = 0; i < stride; ++i) {
        delta[b * stride + i] = static_cast<float>(init.uniform(-eps, eps));
      }
    }
    mask_rngs.push_back(example.substream(1));
  }
  delta = project(delta, x, config.epsilon);

  Tensor<float> masks = Tensor<float>::full(x.shape(), 1.0f);
  const auto alpha = static_cast<float>(config.step_size);
  for (std::size_t n = 0; n < config.steps; ++n) {
    Tensor<float> delta_prime = delta;
    if (masked > 0) {
      for (std::size_t b = 0; b < batch; ++b) {
        const auto m = warmup::expand_mask<float>(warmup::sample_patch_mask(options.mask_fraction, num_patches,
                                                                            mask_rngs[b]),
                                                  *layout);
        std::copy(m.data().begin(), m.data().end(), masks.data().begin() + static_cast<std::ptrdiff_t>(b * stride));
      }
      for (std::size_t i = 0; i < delta.numel(); ++i) {
        delta_prime[i] = masks[i] * delta[i];
      }
    }
    Tensor<float> input(x.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) {
      input[i] = x[i] + delta_prime[i];
    }
    const Tensor<float> grad = model.input_gradient(input, labels, config.loss, options.gates);
    if (!grad.all_finite()) {
      throw NumericError("pgd_attack: non-finite input gradient at iteration " + std::to_string(n));
    }
    if (options.observer) {
      options.observer(AttackStep{n, delta_prime, masks, grad});
    }
    for (std::size_t i = 0; i < delta.numel(); ++i) {
      const float g = grad[i];
      const float sign = g > 0.0f ? 1.0f : (g < 0.0f ? -1.0f : 0.0f);
      delta_prime[i] += alpha * sign;
    }
    delta = project(delta_prime, x, config.epsilon);
  }
  return delta;
}

NamedAttack parse_attack(const std::string& name, double epsilon) {
  LossKind loss;
  std::string digits;
  if (name.starts_with("pgd")) {
    loss = LossKind::cross_entropy;
    digits = name.substr(3);
  } else if (name.starts_with("cw")) {
    loss = LossKind::cw_margin;
    digits = name.substr(2);
  } else {
    throw ValidationError("unknown attack \"" + name + "\" (expected pgdN or cwN)");
  }
  if (digits.empty() || digits.size() > 6 ||
      !std::all_of(digits.begin(), digits.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
    throw ValidationError("attack \"" + name + "\" needs a step count, e.g. pgd20");
  }
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.step_size = 2.0 / 255.0;
  cfg.steps = std::stoul(digits);
  cfg.loss = loss;
  cfg.random_init = true;
  cfg.validate();
  return {name, cfg};
}

double accuracy(const Tensor<float>& logits, std::span<const std::size_t> labels) {
  const auto pred = vit::argmax_rows(logits);
  if (pred.size() != labels.size() || labels.empty()) {
    throw DimensionError("accuracy: prediction/label count mismatch");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    hits += pred[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

EvalReport robust_eval(const Classifier& model, const data::Dataset& dataset, std::span<const NamedAttack> attacks,
                       const Rng& rng, std::size_t batch_size) {
  dataset.validate();
  if (batch_size == 0) {
    throw ContractError("robust_eval: batch_size must be positive");
  }
  const std::size_t n = dataset.size();
  std::vector<std::size_t> clean_hits(1 + attacks.size(), 0);
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, n - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<float> x = dataset.gather_images(idx);
    const auto y = dataset.gather_labels(idx);
    auto count_hits = [&](const Tensor<float>& images) {
      const auto pred = vit::argmax_rows(model.logits(images));
      std::size_t hits = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        hits += pred[i] == y[i] ? 1 : 0;
      }
      return hits;
    };
    clean_hits[0] += count_hits(x);
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      AttackOptions opts;
      opts.stream_offset = start;
      const Tensor<float> delta = pgd_attack(model, x, y, attacks[a].config, rng.substream(a), opts);
      Tensor<float> adv(x.shape());
      for (std::size_t i = 0; i < adv.numel(); ++i) {
        adv[i] = x[i] + delta[i];
      }
      clean_hits[a + 1] += count_hits(adv);
    }
  }
  EvalReport report;
  report.clean_acc = static_cast<double>(clean_hits[0]) / static_cast<double>(n);
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    report.attacks.push_back({attacks[a], static_cast<double>(clean_hits[a + 1]) / static_cast<double>(n)});
  }
  return report;
}

template Var cw_margin_loss(Graph<float>&, Var, std::span<const std::size_t>);
template Var cw_margin_loss(Graph<double>&, Var, std::span<const std::size_t>);
template Var attack_loss(Graph<float>&, Var, std::span<const std::size_t>, LossKind);
template Var attack_loss(Graph<double>&, Var, std::span<const std::size_t>, LossKind);
template Tensor<float> project(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> project(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace advit::attacks
