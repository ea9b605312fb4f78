#include "advit/verify.hpp"

#include <algorithm>
#include <cmath>

#include "advit/errors.hpp"
#include "advit/grad_check.hpp"
#include "advit/ops.hpp"

namespace advit::verify {

using vit::BoundParams;
using vit::GateVector;
using vit::ModelParams;
using vit::ViTConfig;

vit::ModelParams<double> random_params(const ViTConfig& config, Rng& rng, double scale) {
  auto params = vit::zero_params<double>(config);
  for (auto& nt : params.named()) {
    const bool gain = nt.name.ends_with("gamma");
    for (auto& v : nt.tensor->data()) {
      v = gain ? 1.0 + 0.1 * rng.normal() : scale * rng.normal();
    }
  }
  return params;
}

Var detached_branch_forward(Graph<double>& g, const ViTConfig& c, const BoundParams& p, Var images,
                            std::size_t detached_block) {
  const std::size_t batch = g.shape(images).at(0);
  Var z = vit::patch_embed(g, c, p, images);
  for (std::size_t i = 0; i < c.depth; ++i) {
    const auto& b = p.blocks[i];
    Var attn = vit::attention_forward(g, c, b, ops::layer_norm(g, z, b.norm1_gamma, b.norm1_beta));
    if (i == detached_block) {
      attn = ops::detach(g, attn);
    }
    Var mid = ops::add(g, attn, z);
    z = ops::add(g, vit::mlp_forward(g, b, ops::layer_norm(g, mid, b.norm2_gamma, b.norm2_beta)), mid);
  }
  Var cls = ops::reshape(g, ops::slice(g, z, 1, 0, 1), {batch, c.embed_dim});
  cls = ops::layer_norm(g, cls, p.norm_gamma, p.norm_beta);
  return ops::add(g, ops::matmul(g, cls, p.head_weight), p.head_bias);
}

namespace {

template <typename Build>
Tensor<double> gradient_wrt_images(const Tensor<double>& images, Build&& build) {
  Tensor<double> x = images.detached();
  x.set_requires_grad(true);
  Graph<double> g;
  g.backward(build(g, g.leaf(x)));
  x.ensure_grad();
  return Tensor<double>(x.shape(), std::vector<double>(x.grad().begin(), x.grad().end()));
}

Tensor<double> random_one_hot(std::size_t batch, std::size_t classes, Rng& rng) {
  Tensor<double> labels({batch, classes});
  for (std::size_t b = 0; b < batch; ++b) {
    labels[b * classes + rng.below(classes)] = 1.0;
  }
  return labels;
}

}  // namespace

Tensor<double> input_gradient(const ModelParams<double>& params, const Tensor<double>& images,
                              const Tensor<double>& labels, const GateVector* gates) {
  return gradient_wrt_images(images, [&](Graph<double>& g, Var x) {
    const BoundParams b = vit::bind_frozen(g, params);
    return ops::cross_entropy(g, vit::model_forward(g, params.config, b, x, gates), labels);
  });
}

Tensor<double> detached_input_gradient(const ModelParams<double>& params, const Tensor<double>& images,
                                       const Tensor<double>& labels, std::size_t detached_block) {
  return gradient_wrt_images(images, [&](Graph<double>& g, Var x) {
    const BoundParams b = vit::bind_frozen(g, params);
    return ops::cross_entropy(g, detached_branch_forward(g, params.config, b, x, detached_block), labels);
  });
}

GradcheckReport run_model_gradcheck(const ViTConfig& config, const GradcheckSettings& settings) {
  config.validate();
  if (settings.gated_block >= config.depth) {
    throw ContractError("gradcheck: gated_block out of range");
  }
  Rng rng(settings.seed);
  Rng param_rng = rng.substream(0);
  Rng data_rng = rng.substream(1);
  ModelParams<double> params = random_params(config, param_rng, settings.param_scale);
  params.set_requires_grad(false);
  Shape image_shape = config.image_shape();
  image_shape.insert(image_shape.begin(), settings.batch);
  Tensor<double> images(image_shape);
  for (auto& v : images.data()) {
    v = data_rng.uniform();
  }
  const Tensor<double> labels = random_one_hot(settings.batch, config.num_classes, data_rng);

  GradCheckOptions opts;
  opts.h = settings.h;
  opts.max_coords = settings.max_coords;
  GradcheckReport report;
  auto record = [&](const std::string& name, const GradCheckResult& r) {
    const double magnitude = std::max(r.max_abs_analytic, r.max_abs_numeric);
    const bool zero = magnitude < settings.zero_floor;
    report.checks.push_back({name, r.max_rel_error, magnitude, r.checked, zero});
    if (!zero && (report.worst_name.empty() || r.max_rel_error > report.worst_error)) {
      report.worst_error = r.max_rel_error;
      report.worst_name = name;
    }
  };

  std::uint64_t salt = 0;
  for (auto& nt : params.named()) {
    opts.seed = settings.seed + (++salt);
    auto f = [&](Graph<double>& g) {
      const BoundParams b = vit::bind_trainable(g, params);
      return ops::cross_entropy(g, vit::model_forward(g, config, b, g.constant(images), nullptr), labels);
    };
    record(nt.name, grad_check(f, *nt.tensor, opts));
  }
  opts.seed = settings.seed + (++salt);
  opts.max_coords = 0;
  auto f_input = [&](Graph<double>& g) {
    const BoundParams b = vit::bind_frozen(g, params);
    return ops::cross_entropy(g, vit::model_forward(g, config, b, g.leaf(images), nullptr), labels);
  };
  record("input", grad_check(f_input, images, opts));

  std::vector<int> gates(config.depth, 1);
  gates[settings.gated_block] = 0;
  const GateVector gv(gates);
  const auto gated = input_gradient(params, images, labels, &gv);
  const auto oracle = detached_input_gradient(params, images, labels, settings.gated_block);
  report.ard_oracle_max_abs_diff = max_abs_diff(gated, oracle);
  return report;
}

}  // namespace advit::verify
