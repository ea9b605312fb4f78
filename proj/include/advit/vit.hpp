#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "advit/graph.hpp"
#include "advit/rng.hpp"
#include "advit/tensor.hpp"

namespace advit::vit {

/// Architecture of a vanilla ViT: patch embedding, `depth` pre-norm encoder
/// blocks, class-token readout.
struct ViTConfig {
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t num_heads = 4;
  std::size_t depth = 2;
  double mlp_ratio = 2.0;
  std::size_t num_classes = 3;

  /// Throws ContractError naming the first violated constraint.
  void validate() const;

  std::size_t grid() const { return image_size / patch_size; }
  /// J, the number of patch tokens.
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const;
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  Shape image_shape() const { return {channels, image_size, image_size}; }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

/// Per-block ARD gates u_1..u_L; each entry is 0 or 1.
class GateVector {
 public:
  GateVector() = default;
  explicit GateVector(std::vector<int> values);
  static GateVector ones(std::size_t depth) { return GateVector(std::vector<int>(depth, 1)); }

  std::size_t size() const { return values_.size(); }
  int operator[](std::size_t i) const { return values_[i]; }
  const std::vector<int>& values() const { return values_; }
  bool all_ones() const;

  friend bool operator==(const GateVector&, const GateVector&) = default;

 private:
  std::vector<int> values_;
};

template <typename T>
struct NamedTensor {
  std::string name;
  T* tensor;
};

template <typename T>
struct BlockParams {
  Tensor<T> norm1_gamma, norm1_beta;
  Tensor<T> q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
  Tensor<T> proj_weight, proj_bias;
  Tensor<T> norm2_gamma, norm2_beta;
  Tensor<T> fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

/// All learnable weights. Linear weights are stored [in, out].
template <typename T>
struct ModelParams {
  ViTConfig config;
  Tensor<T> patch_weight, patch_bias;
  Tensor<T> cls_token;
  Tensor<T> pos_embed;
  std::vector<BlockParams<T>> blocks;
  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> head_weight, head_bias;

  /// Every tensor with its stable dotted name, in a fixed order.
  std::vector<NamedTensor<Tensor<T>>> named();
  std::vector<NamedTensor<const Tensor<T>>> named() const;

  void zero_grad();
  void set_requires_grad(bool flag);

  template <typename U>
  ModelParams<U> cast() const;
};

/// Zero weights, unit layer-norm gains; shapes fully determined by `config`.
template <typename T>
ModelParams<T> zero_params(const ViTConfig& config);

/// Truncated normal (std 0.02, cut at 2 std) for projections and positional
/// embeddings; zeros for biases and the class token.
template <typename T>
ModelParams<T> init_params(const ViTConfig& config, Rng& rng);

std::size_t parameter_count(const ViTConfig& config);

/// Handles of bound parameters inside one graph.
struct BoundBlock {
  Var norm1_gamma, norm1_beta;
  Var q_weight, q_bias, k_weight, k_bias, v_weight, v_bias;
  Var proj_weight, proj_bias;
  Var norm2_gamma, norm2_beta;
  Var fc1_weight, fc1_bias, fc2_weight, fc2_bias;
};

struct BoundParams {
  Var patch_weight, patch_bias, cls_token, pos_embed;
  std::vector<BoundBlock> blocks;
  Var norm_gamma, norm_beta, head_weight, head_bias;
};

/// Binds as leaves: gradients accumulate into tensors that require grad.
template <typename T>
BoundParams bind_trainable(Graph<T>& g, ModelParams<T>& params);

/// Binds as constants: no parameter gradients are computed.
template <typename T>
BoundParams bind_frozen(Graph<T>& g, const ModelParams<T>& params);

/// images [B, C, H, W] -> tokens [B, J+1, d] (or [C, H, W] -> [J+1, d]).
/// Patches are taken in row-major grid order and flattened channel-major;
/// the class token sits at index 0.
template <typename T>
Var patch_embed(Graph<T>& g, const ViTConfig& config, const BoundParams& p, Var images);

/// Multi-head self-attention over z [B, N, d] including the output
/// projection. If `weights_out` is given it receives the [B, heads, N, N]
/// attention matrix.
template <typename T>
Var attention_forward(Graph<T>& g, const ViTConfig& config, const BoundBlock& p, Var z, Var* weights_out = nullptr);

/// linear -> gelu -> linear.
template <typename T>
Var mlp_forward(Graph<T>& g, const BoundBlock& p, Var h);

/// z' = gate(A(LN1(z)), u) + z; out = MLP(LN2(z')) + z'. A negative `gate`
/// builds the block without any gate node.
template <typename T>
Var block_forward(Graph<T>& g, const ViTConfig& config, const BoundBlock& p, Var z, int gate);

inline constexpr int kUngated = -1;

/// Logits [B, classes] (or [classes] for a single [C, H, W] image). With
/// `gates == nullptr` no gate nodes are recorded at all.
template <typename T>
Var model_forward(Graph<T>& g, const ViTConfig& config, const BoundParams& p, Var images, const GateVector* gates);

/// Forward pass only.
template <typename T>
Tensor<T> predict_logits(const ModelParams<T>& params, const Tensor<T>& images);

/// Row-wise argmax with ties broken toward the smallest index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits);

}  // namespace advit::vit
