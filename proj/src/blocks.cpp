#include "mmkd/blocks.hpp"

#include <cmath>

#include "mmkd/ops.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out, Shape shape) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(dist(rng));
  return Tensor(std::move(shape), std::move(v), true);
}

namespace {
Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1, true); }
}  // namespace

MhaParams MhaParams::init(Rng& rng, std::size_t d_model, std::size_t heads) {
  if (heads == 0 || d_model % heads != 0) {
    throw Error(ErrorKind::Config, "d_model " + std::to_string(d_model) +
                                       " is not divisible by head count " + std::to_string(heads));
  }
  MhaParams p;
  p.heads = heads;
  p.w_q = glorot(rng, d_model, d_model, {d_model, d_model});
  p.w_k = glorot(rng, d_model, d_model, {d_model, d_model});
  p.w_v = glorot(rng, d_model, d_model, {d_model, d_model});
  p.w_o = glorot(rng, d_model, d_model, {d_model, d_model});
  p.b_q = zeros_param(d_model);
  p.b_v = zeros_param(d_model);
  p.b_o = zeros_param(d_model);
  return p;
}

void MhaParams::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + "w_q", w_q);
  out.emplace_back(prefix + "b_q", b_q);
  out.emplace_back(prefix + "w_k", w_k);
  out.emplace_back(prefix + "w_v", w_v);
  out.emplace_back(prefix + "b_v", b_v);
  out.emplace_back(prefix + "w_o", w_o);
  out.emplace_back(prefix + "b_o", b_o);
}

AttentionResult multihead_attention(const Tensor& q_src, const Tensor& kv_src, const MhaParams& p,
                                    double temperature) {
  if (q_src.rank() != 3 || kv_src.rank() != 3 || q_src.dim(2) != p.d_model() ||
      kv_src.dim(2) != p.d_model() || q_src.dim(0) != kv_src.dim(0)) {
    throw Error(ErrorKind::Dimension, "attention inputs " + shape_string(q_src.shape()) + " / " +
                                          shape_string(kv_src.shape()) + " do not match width " +
                                          std::to_string(p.d_model()));
  }
  const Tensor q = ops::split_heads(ops::linear(q_src, p.w_q, p.b_q), p.heads);
  const Tensor k = ops::split_heads(ops::linear(kv_src, p.w_k, Tensor()), p.heads);
  const Tensor v = ops::split_heads(ops::linear(kv_src, p.w_v, p.b_v), p.heads);

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(p.d_head()));
  AttentionResult r;
  r.logits = ops::scale(ops::matmul(q, k, false, true), inv_sqrt_dk);
  const Tensor per_head = ops::row_softmax(r.logits, temperature);
  r.map = ops::mean_axis(per_head, 1);
  r.out = ops::linear(ops::merge_heads(ops::matmul(per_head, v)), p.w_o, p.b_o);
  return r;
}

Tensor attention_map_at(const Tensor& logits, double temperature) {
  return ops::mean_axis(ops::row_softmax(logits, temperature), 1);
}

TransformerLayerParams TransformerLayerParams::init(Rng& rng, std::size_t d_model, std::size_t heads,
                                                    std::size_t ffn_ratio) {
  TransformerLayerParams p;
  p.mha = MhaParams::init(rng, d_model, heads);
  const std::size_t hidden = ffn_ratio * d_model;
  p.ln1_g = ones_param(d_model);
  p.ln1_b = zeros_param(d_model);
  p.ln2_g = ones_param(d_model);
  p.ln2_b = zeros_param(d_model);
  p.ffn_w1 = glorot(rng, d_model, hidden, {d_model, hidden});
  p.ffn_b1 = zeros_param(hidden);
  p.ffn_w2 = glorot(rng, hidden, d_model, {hidden, d_model});
  p.ffn_b2 = zeros_param(d_model);
  return p;
}

void TransformerLayerParams::collect(const std::string& prefix, ParamList& out) const {
  mha.collect(prefix + "attn.", out);
  out.emplace_back(prefix + "ln1.g", ln1_g);
  out.emplace_back(prefix + "ln1.b", ln1_b);
  out.emplace_back(prefix + "ln2.g", ln2_g);
  out.emplace_back(prefix + "ln2.b", ln2_b);
  out.emplace_back(prefix + "ffn.w1", ffn_w1);
  out.emplace_back(prefix + "ffn.b1", ffn_b1);
  out.emplace_back(prefix + "ffn.w2", ffn_w2);
  out.emplace_back(prefix + "ffn.b2", ffn_b2);
}

LayerOutput transformer_layer(const Tensor& x_q, const Tensor& x_kv, const TransformerLayerParams& p) {
  const bool self = !x_kv.defined() || x_kv.impl() == x_q.impl();
  const Tensor q_in = ops::layer_norm(x_q, p.ln1_g, p.ln1_b);
  const Tensor kv_in = self ? q_in : ops::layer_norm(x_kv, p.ln1_g, p.ln1_b);
  AttentionResult attn = multihead_attention(q_in, kv_in, p.mha);

  LayerOutput out;
  const Tensor h = ops::add(x_q, attn.out);
  const Tensor ff = ops::linear(ops::relu(ops::linear(ops::layer_norm(h, p.ln2_g, p.ln2_b), p.ffn_w1, p.ffn_b1)),
                                p.ffn_w2, p.ffn_b2);
  out.y = ops::add(h, ff);
  out.trace.map = attn.map;
  out.trace.logits = attn.logits;
  out.trace.post_attention = attn.out;
  return out;
}

StackOutput stack_forward(const Tensor& x_q, const Tensor& x_kv,
                          const std::vector<TransformerLayerParams>& layers) {
  if (layers.empty()) throw Error(ErrorKind::Config, "transformer stack needs at least one layer");
  StackOutput out;
  Tensor x = x_q;
  const bool self = !x_kv.defined() || x_kv.impl() == x_q.impl();
  for (const auto& layer : layers) {
    LayerOutput lo = transformer_layer(x, self ? x : x_kv, layer);
    x = lo.y;
    out.trace.maps.push_back(lo.trace.map);
    out.trace.logits.push_back(lo.trace.logits);
    out.trace.post_attention.push_back(lo.trace.post_attention);
  }
  out.y = x;
  return out;
}

Tensor sinusoidal_pos_emb(std::size_t steps, std::size_t width) {
  if (width == 0 || width % 2 != 0) {
    throw Error(ErrorKind::Config, "positional embedding width must be even, got " + std::to_string(width));
  }
  std::vector<Real> pe(steps * width);
  for (std::size_t p = 0; p < steps; ++p) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double angle = static_cast<double>(p) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(width));
      pe[p * width + 2 * i] = static_cast<Real>(std::sin(angle));
      pe[p * width + 2 * i + 1] = static_cast<Real>(std::cos(angle));
    }
  }
  return Tensor({steps, width}, std::move(pe));
}

}  // namespace MMKD_ABI
}  // namespace mmkd
