#include "advit/vit.hpp"

#include <cmath>
#include <string>

#include "advit/errors.hpp"
#include "advit/ops.hpp"

namespace advit::vit {

void ViTConfig::validate() const {
  auto fail = [](const std::string& what) { throw ContractError("ViTConfig: " + what); };
  if (image_size == 0 || channels == 0 || patch_size == 0 || embed_dim == 0 || num_heads == 0 || depth == 0) {
    fail("all sizes must be positive");
  }
  if (image_size % patch_size != 0) {
    fail("patch_size " + std::to_string(patch_size) + " must divide image_size " + std::to_string(image_size));
  }
  if (embed_dim % num_heads != 0) {
    fail("num_heads " + std::to_string(num_heads) + " must divide embed_dim " + std::to_string(embed_dim));
  }
  if (!(mlp_ratio > 0.0) || mlp_hidden() == 0) {
    fail("mlp_ratio must give a positive hidden width");
  }
  if (num_classes < 2) {
    fail("num_classes must be at least 2");
  }
}

std::size_t ViTConfig::mlp_hidden() const {
  return static_cast<std::size_t>(std::floor(mlp_ratio * static_cast<double>(embed_dim)));
}

GateVector::GateVector(std::vector<int> values) : values_(std::move(values)) {
  for (int u : values_) {
    if (u != 0 && u != 1) {
      throw ContractError("GateVector entries must be 0 or 1");
    }
  }
}

bool GateVector::all_ones() const {
  for (int u : values_) {
    if (u != 1) {
      return false;
    }
  }
  return true;
}

namespace {

template <typename Params, typename Fn>
void visit(Params& p, Fn&& fn) {
  fn("patch_embed.weight", p.patch_weight);
  fn("patch_embed.bias", p.patch_bias);
  fn("cls_token", p.cls_token);
  fn("pos_embed", p.pos_embed);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "blocks." + std::to_string(i) + ".";
    fn(pre + "norm1.gamma", b.norm1_gamma);
    fn(pre + "norm1.beta", b.norm1_beta);
    fn(pre + "attn.q.weight", b.q_weight);
    fn(pre + "attn.q.bias", b.q_bias);
    fn(pre + "attn.k.weight", b.k_weight);
    fn(pre + "attn.k.bias", b.k_bias);
    fn(pre + "attn.v.weight", b.v_weight);
    fn(pre + "attn.v.bias", b.v_bias);
    fn(pre + "attn.proj.weight", b.proj_weight);
    fn(pre + "attn.proj.bias", b.proj_bias);
    fn(pre + "norm2.gamma", b.norm2_gamma);
    fn(pre + "norm2.beta", b.norm2_beta);
    fn(pre + "mlp.fc1.weight", b.fc1_weight);
    fn(pre + "mlp.fc1.bias", b.fc1_bias);
    fn(pre + "mlp.fc2.weight", b.fc2_weight);
    fn(pre + "mlp.fc2.bias", b.fc2_bias);
  }
  fn("norm.gamma", p.norm_gamma);
  fn("norm.beta", p.norm_beta);
  fn("head.weight", p.head_weight);
  fn("head.bias", p.head_bias);
}

template <typename T>
Tensor<T> truncated_normal(Shape shape, Rng& rng, double std) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) {
      z = rng.normal();
    }
    v = static_cast<T>(z * std);
  }
  return t;
}

Shape image_shape_for(const ViTConfig& c, std::size_t batch) { return {batch, c.channels, c.image_size, c.image_size}; }

}  // namespace

template <typename T>
std::vector<NamedTensor<Tensor<T>>> ModelParams<T>::named() {
  std::vector<NamedTensor<Tensor<T>>> out;
  visit(*this, [&](const std::string& name, Tensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
std::vector<NamedTensor<const Tensor<T>>> ModelParams<T>::named() const {
  std::vector<NamedTensor<const Tensor<T>>> out;
  visit(*this, [&](const std::string& name, const Tensor<T>& t) { out.push_back({name, &t}); });
  return out;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& nt : named()) {
    nt.tensor->zero_grad();
  }
}

template <typename T>
void ModelParams<T>::set_requires_grad(bool flag) {
  for (auto& nt : named()) {
    nt.tensor->set_requires_grad(flag);
  }
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = zero_params<U>(config);
  auto src = named();
  auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i].tensor = src[i].tensor->template cast<U>();
  }
  return out;
}

template <typename T>
ModelParams<T> zero_params(const ViTConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim;
  const std::size_t h = c.mlp_hidden();
  ModelParams<T> p;
  p.config = c;
  p.patch_weight = Tensor<T>({c.patch_dim(), d});
  p.patch_bias = Tensor<T>({d});
  p.cls_token = Tensor<T>({d});
  p.pos_embed = Tensor<T>({c.num_tokens(), d});
  p.blocks.resize(c.depth);
  for (auto& b : p.blocks) {
    b.norm1_gamma = Tensor<T>::full({d}, T{1});
    b.norm1_beta = Tensor<T>({d});
    b.q_weight = Tensor<T>({d, d});
    b.q_bias = Tensor<T>({d});
    b.k_weight = Tensor<T>({d, d});
    b.k_bias = Tensor<T>({d});
    b.v_weight = Tensor<T>({d, d});
    b.v_bias = Tensor<T>({d});
    b.proj_weight = Tensor<T>({d, d});
    b.proj_bias = Tensor<T>({d});
    b.norm2_gamma = Tensor<T>::full({d}, T{1});
    b.norm2_beta = Tensor<T>({d});
    b.fc1_weight = Tensor<T>({d, h});
    b.fc1_bias = Tensor<T>({h});
    b.fc2_weight = Tensor<T>({h, d});
    b.fc2_bias = Tensor<T>({d});
  }
  p.norm_gamma = Tensor<T>::full({d}, T{1});
  p.norm_beta = Tensor<T>({d});
  p.head_weight = Tensor<T>({d, c.num_classes});
  p.head_bias = Tensor<T>({c.num_classes});
  return p;
}

template <typename T>
ModelParams<T> init_params(const ViTConfig& c, Rng& rng) {
  constexpr double kStd = 0.02;
  ModelParams<T> p = zero_params<T>(c);
  auto tn = [&](Tensor<T>& t) { t = truncated_normal<T>(t.shape(), rng, kStd); };
  tn(p.patch_weight);
  tn(p.pos_embed);
  for (auto& b : p.blocks) {
    tn(b.q_weight);
    tn(b.k_weight);
    tn(b.v_weight);
    tn(b.proj_weight);
    tn(b.fc1_weight);
    tn(b.fc2_weight);
  }
  tn(p.head_weight);
  return p;
}

std::size_t parameter_count(const ViTConfig& config) {
  const auto p = zero_params<float>(config);
  std::size_t n = 0;
  for (const auto& nt : p.named()) {
    n += nt.tensor->numel();
  }
  return n;
}

namespace {

template <typename T, typename Params, typename BindFn>
BoundParams bind_with(Params& params, BindFn&& bind) {
  BoundParams b;
  b.patch_weight = bind(params.patch_weight);
  b.patch_bias = bind(params.patch_bias);
  b.cls_token = bind(params.cls_token);
  b.pos_embed = bind(params.pos_embed);
  for (auto& blk : params.blocks) {
    BoundBlock bb;
    bb.norm1_gamma = bind(blk.norm1_gamma);
    bb.norm1_beta = bind(blk.norm1_beta);
    bb.q_weight = bind(blk.q_weight);
    bb.q_bias = bind(blk.q_bias);
    bb.k_weight = bind(blk.k_weight);
    bb.k_bias = bind(blk.k_bias);
    bb.v_weight = bind(blk.v_weight);
    bb.v_bias = bind(blk.v_bias);
    bb.proj_weight = bind(blk.proj_weight);
    bb.proj_bias = bind(blk.proj_bias);
    bb.norm2_gamma = bind(blk.norm2_gamma);
    bb.norm2_beta = bind(blk.norm2_beta);
    bb.fc1_weight = bind(blk.fc1_weight);
    bb.fc1_bias = bind(blk.fc1_bias);
    bb.fc2_weight = bind(blk.fc2_weight);
    bb.fc2_bias = bind(blk.fc2_bias);
    b.blocks.push_back(bb);
  }
  b.norm_gamma = bind(params.norm_gamma);
  b.norm_beta = bind(params.norm_beta);
  b.head_weight = bind(params.head_weight);
  b.head_bias = bind(params.head_bias);
  return b;
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias) {
  return ops::add(g, ops::matmul(g, x, weight), bias);
}

}  // namespace

template <typename T>
BoundParams bind_trainable(Graph<T>& g, ModelParams<T>& params) {
  return bind_with<T>(params, [&](Tensor<T>& t) { return g.leaf(t); });
}

template <typename T>
BoundParams bind_frozen(Graph<T>& g, const ModelParams<T>& params) {
  return bind_with<T>(params, [&](const Tensor<T>& t) { return g.constant(t.detached()); });
}

template <typename T>
Var patch_embed(Graph<T>& g, const ViTConfig& c, const BoundParams& p, Var images) {
  const Shape& s = g.shape(images);
  const bool single = s.size() == 3;
  const std::size_t batch = single ? 1 : (s.empty() ? 0 : s[0]);
  if (!(single || s.size() == 4) || (single ? s : Shape(s.begin() + 1, s.end())) != c.image_shape()) {
    throw DimensionError("patch_embed: image shape " + shape_str(s) + " does not match config " +
                         shape_str(c.image_shape()));
  }
  const std::size_t gsz = c.grid();
  const std::size_t ps = c.patch_size;
  const std::size_t d = c.embed_dim;
  Var x = ops::reshape(g, images, {batch, c.channels, gsz, ps, gsz, ps});
  x = ops::permute(g, x, {0, 2, 4, 1, 3, 5});
  x = ops::reshape(g, x, {batch, c.num_patches(), c.patch_dim()});
  Var tokens = linear(g, x, p.patch_weight, p.patch_bias);
  Var cls = ops::broadcast_leading(g, ops::reshape(g, p.cls_token, {1, d}), {batch});
  const Var parts[] = {cls, tokens};
  Var z = ops::concat(g, std::span<const Var>(parts), 1);
  z = ops::add(g, z, p.pos_embed);
  if (single) {
    z = ops::reshape(g, z, {c.num_tokens(), d});
  }
  return z;
}

template <typename T>
Var attention_forward(Graph<T>& g, const ViTConfig& c, const BoundBlock& p, Var z, Var* weights_out) {
  const Shape& s = g.shape(z);
  if (s.size() != 3 || s[2] != c.embed_dim) {
    throw DimensionError("attention_forward: expected [B, N, " + std::to_string(c.embed_dim) + "], got " + shape_str(s));
  }
  const std::size_t batch = s[0];
  const std::size_t n = s[1];
  const std::size_t heads = c.num_heads;
  const std::size_t hd = c.head_dim();
  auto split = [&](Var w, Var b) {
    Var t = linear(g, z, w, b);
    t = ops::reshape(g, t, {batch, n, heads, hd});
    return ops::permute(g, t, {0, 2, 1, 3});
  };
  Var q = split(p.q_weight, p.q_bias);
  Var k = split(p.k_weight, p.k_bias);
  Var v = split(p.v_weight, p.v_bias);
  Var scores = ops::scale(g, ops::matmul(g, q, ops::transpose_last2(g, k)), T{1} / std::sqrt(static_cast<T>(hd)));
  Var weights = ops::softmax_lastdim(g, scores);
  if (weights_out != nullptr) {
    *weights_out = weights;
  }
  Var ctx = ops::permute(g, ops::matmul(g, weights, v), {0, 2, 1, 3});
  ctx = ops::reshape(g, ctx, {batch, n, c.embed_dim});
  return linear(g, ctx, p.proj_weight, p.proj_bias);
}

template <typename T>
Var mlp_forward(Graph<T>& g, const BoundBlock& p, Var h) {
  return linear(g, ops::gelu(g, linear(g, h, p.fc1_weight, p.fc1_bias)), p.fc2_weight, p.fc2_bias);
}

template <typename T>
Var block_forward(Graph<T>& g, const ViTConfig& c, const BoundBlock& p, Var z, int gate) {
  Var attn = attention_forward(g, c, p, ops::layer_norm(g, z, p.norm1_gamma, p.norm1_beta));
  if (gate >= 0) {
    attn = ops::grad_gate(g, attn, gate);
  }
  Var mid = ops::add(g, attn, z);
  Var mlp = mlp_forward(g, p, ops::layer_norm(g, mid, p.norm2_gamma, p.norm2_beta));
  return ops::add(g, mlp, mid);
}

template <typename T>
Var model_forward(Graph<T>& g, const ViTConfig& c, const BoundParams& p, Var images, const GateVector* gates) {
  if (gates != nullptr && gates->size() != c.depth) {
    throw ContractError("model_forward: gate vector has length " + std::to_string(gates->size()) + ", depth is " +
                        std::to_string(c.depth));
  }
  const bool single = g.shape(images).size() == 3;
  if (single) {
    images = ops::reshape(g, images, image_shape_for(c, 1));
  }
  const std::size_t batch = g.shape(images).at(0);
  Var z = patch_embed(g, c, p, images);
  for (std::size_t i = 0; i < c.depth; ++i) {
    z = block_forward(g, c, p.blocks[i], z, gates != nullptr ? (*gates)[i] : kUngated);
  }
  // Layer norm acts per token, so normalizing only the class token is exact.
  Var cls = ops::reshape(g, ops::slice(g, z, 1, 0, 1), {batch, c.embed_dim});
  cls = ops::layer_norm(g, cls, p.norm_gamma, p.norm_beta);
  Var logits = linear(g, cls, p.head_weight, p.head_bias);
  if (single) {
    logits = ops::reshape(g, logits, {c.num_classes});
  }
  return logits;
}

template <typename T>
Tensor<T> predict_logits(const ModelParams<T>& params, const Tensor<T>& images) {
  Graph<T> g;
  const BoundParams b = bind_frozen(g, params);
  return g.value(model_forward(g, params.config, b, g.constant(images.detached()), nullptr)).detached();
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
  const std::size_t c = logits.shape().back();
  const std::size_t rows = logits.numel() / c;
  std::vector<std::size_t> out(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 1; j < c; ++j) {
      if (logits[r * c + j] > logits[r * c + out[r]]) {
        out[r] = j;
      }
    }
  }
  return out;
}

#define ADVIT_INSTANTIATE_VIT(T)                                                                    \
  template struct ModelParams<T>;                                                                   \
  template ModelParams<T> zero_params<T>(const ViTConfig&);                                        \
  template ModelParams<T> init_params<T>(const ViTConfig&, Rng&);                                  \
  template BoundParams bind_trainable(Graph<T>&, ModelParams<T>&);                                 \
  template BoundParams bind_frozen(Graph<T>&, const ModelParams<T>&);                              \
  template Var patch_embed(Graph<T>&, const ViTConfig&, const BoundParams&, Var);                  \
  template Var attention_forward(Graph<T>&, const ViTConfig&, const BoundBlock&, Var, Var*);       \
  template Var mlp_forward(Graph<T>&, const BoundBlock&, Var);                                     \
  template Var block_forward(Graph<T>&, const ViTConfig&, const BoundBlock&, Var, int);            \
  template Var model_forward(Graph<T>&, const ViTConfig&, const BoundParams&, Var, const GateVector*); \
  template Tensor<T> predict_logits(const ModelParams<T>&, const Tensor<T>&);                      \
  template std::vector<std::size_t> argmax_rows(const Tensor<T>&);

ADVIT_INSTANTIATE_VIT(float)
ADVIT_INSTANTIATE_VIT(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

#undef ADVIT_INSTANTIATE_VIT

}  // namespace advit::vit
