#pragma once

#include <random>
#include <vector>

#include "hca/tensor.hpp"

namespace hca {

// A set of image-representation entities: one p-dimensional entity per row.
using EntitySet = Tensor;

struct AttentionHeadWeights {
  Tensor wq;  // p x d_q
  Tensor wk;  // p x d_k, d_k == d_q
  Tensor wv;  // p x d_v
};

struct MultiHeadWeights {
  std::vector<AttentionHeadWeights> heads;
  Tensor wo;  // (B * d_v) x d
};

struct FeedForwardWeights {
  Tensor w1;  // d x hidden
  Tensor b1;
  Tensor w2;  // hidden x d
  Tensor b2;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct EncoderLayer {
  MultiHeadWeights self_attn;
  FeedForwardWeights ffn;
  LayerNormParams norm1;
  LayerNormParams norm2;
  double dropout_rate = 0.0;
};

struct DecoderLayer {
  MultiHeadWeights self_attn;
  MultiHeadWeights cross_attn;
  FeedForwardWeights ffn;
  LayerNormParams norm1;
  LayerNormParams norm2;
  LayerNormParams norm3;
  double dropout_rate = 0.0;
};

// Fixed sinusoidal position table, n_max x d, entries in [-1, 1]. Not learnable.
struct PositionalEncoding {
  Tensor table;
};

constexpr double kLayerNormEps = 1e-5;

// Scaled dot-product attention. Q = queries_src * wq, K = memory * wk,
// V = memory * wv, output = softmax(Q K^T / temperature) * V. Each output
// row is a convex combination of V's rows.
Tensor attend(const EntitySet& queries_src, const EntitySet& memory,
              const AttentionHeadWeights& w, double temperature);

// Per-head attend, feature-axis concat, projection through wo.
Tensor multi_head(const EntitySet& queries_src, const EntitySet& memory,
                  const MultiHeadWeights& w, double temperature);

// Logit divisor giving the usual 1/sqrt(d_q) attention scaling.
double dot_product_temperature(const MultiHeadWeights& w);

PositionalEncoding positional_encoding(std::int64_t n_max, std::int64_t d);

// Attention sub-block used inside encoder/decoder layers. The default is
// multi_head with 1/sqrt(d_q) scaling; the Hopfield hybrid swaps in its own
// retrieval block while keeping the residual/norm/FFN scaffolding.
using AttentionBlockFn =
    std::function<Tensor(const EntitySet&, const EntitySet&, const MultiHeadWeights&)>;

AttentionBlockFn default_attention_block();

// Adds the position table to the entities, then runs the layer stack:
// x <- layer_norm(x + dropout(self_attention(x))); x <- layer_norm(x + dropout(ffn(x))).
EntitySet encoder_forward(const EntitySet& entities, const std::vector<EncoderLayer>& layers,
                          const PositionalEncoding& pe, std::mt19937_64& rng);
EntitySet encoder_forward(const EntitySet& entities, const std::vector<EncoderLayer>& layers,
                          const PositionalEncoding& pe, std::mt19937_64& rng,
                          const AttentionBlockFn& block);

// Decodes m learnable queries against the encoded memory; no positional
// encoding inside, so the result is invariant to memory row order.
Tensor decoder_forward(const Tensor& queries, const EntitySet& memory,
                       const std::vector<DecoderLayer>& layers, std::mt19937_64& rng);
Tensor decoder_forward(const Tensor& queries, const EntitySet& memory,
                       const std::vector<DecoderLayer>& layers, std::mt19937_64& rng,
                       const AttentionBlockFn& block);

Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w);

}  // namespace hca
