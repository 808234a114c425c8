#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mmkd/tensor.hpp"

// Attention and transformer building blocks.
//
// A layer exposes two taps used for distillation: the head-averaged attention
// map and the output of the post-attention projection (before the residual).
namespace mmkd {
inline namespace MMKD_ABI {

using Rng = std::mt19937_64;

/// Linear weight [in, out] drawn Glorot-uniform.
Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out, Shape shape);

// Keys carry no bias: it would add a per-query constant to every score of a
// row, which the softmax discards, so it could never receive a gradient.
struct MhaParams {
  Tensor w_q, b_q, w_k, w_v, b_v, w_o, b_o;
  std::size_t heads = 1;

  std::size_t d_model() const { return w_q.dim(0); }
  std::size_t d_head() const { return d_model() / heads; }
  void collect(const std::string& prefix, ParamList& out) const;

  static MhaParams init(Rng& rng, std::size_t d_model, std::size_t heads);
};

struct AttentionResult {
  Tensor out;     // [B, T_q, d] after the output projection
  Tensor map;     // [B, T_q, T_kv], mean over heads
  Tensor logits;  // [B, h, T_q, T_kv], scaled scores before softmax
};

/// Multi-head scaled dot-product attention with queries from `q_src` and
/// keys/values from `kv_src`. `temperature` divides the scores before the
/// softmax (1 for the ordinary forward pass).
AttentionResult multihead_attention(const Tensor& q_src, const Tensor& kv_src, const MhaParams& p,
                                    double temperature = 1.0);

/// Head-averaged attention map recomputed from stored logits at `temperature`.
Tensor attention_map_at(const Tensor& logits, double temperature);

struct TransformerLayerParams {
  MhaParams mha;
  Tensor ln1_g, ln1_b;
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  void collect(const std::string& prefix, ParamList& out) const;
  static TransformerLayerParams init(Rng& rng, std::size_t d_model, std::size_t heads,
                                     std::size_t ffn_ratio);
};

struct LayerTrace {
  Tensor map;
  Tensor logits;
  Tensor post_attention;
};

struct LayerOutput {
  Tensor y;
  LayerTrace trace;
};

/// Pre-norm layer with residuals on the query stream:
///   y = x_q + Attn(norm(x_q), norm(x_kv));  y = y + FFN(norm(y)).
/// Pass the same tensor for both inputs (or leave `x_kv` undefined) for
/// self-attention.
LayerOutput transformer_layer(const Tensor& x_q, const Tensor& x_kv, const TransformerLayerParams& p);

/// Per-layer distillation taps of one stack, ordered first layer to last.
struct AttentionTrace {
  std::vector<Tensor> maps;
  std::vector<Tensor> logits;
  std::vector<Tensor> post_attention;

  std::size_t layers() const { return maps.size(); }
};

struct StackOutput {
  Tensor y;
  AttentionTrace trace;
};

/// Runs every layer of `layers`. For cross-attention the same `x_kv` feeds
/// each layer while the query stream evolves; undefined `x_kv` means
/// self-attention over the evolving stream.
StackOutput stack_forward(const Tensor& x_q, const Tensor& x_kv,
                          const std::vector<TransformerLayerParams>& layers);

/// pe[p, 2i] = sin(p / 10000^(2i/d)), pe[p, 2i+1] = cos(same).
Tensor sinusoidal_pos_emb(std::size_t steps, std::size_t width);

}  // namespace MMKD_ABI
}  // namespace mmkd
