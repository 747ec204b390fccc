#include "hca/attention.hpp"

#include <cmath>

namespace hca {

Tensor attend(const EntitySet& queries_src, const EntitySet& memory,
              const AttentionHeadWeights& w, double temperature) {
  check_dim(queries_src.rank() == 2 && memory.rank() == 2,
            "attend: entity sets must be 2-D");
  check_dim(queries_src.dim(1) == w.wq.dim(0) && memory.dim(1) == w.wk.dim(0) &&
                memory.dim(1) == w.wv.dim(0),
            "attend: entity dimension does not match projection rows");
  check_dim(w.wq.dim(1) == w.wk.dim(1), "attend: d_q != d_k");
  Tensor q = matmul(queries_src, w.wq);
  Tensor k = matmul(memory, w.wk);
  Tensor v = matmul(memory, w.wv);
  Tensor weights = softmax(matmul(q, transpose(k)), temperature);
  return matmul(weights, v);
}

Tensor multi_head(const EntitySet& queries_src, const EntitySet& memory,
                  const MultiHeadWeights& w, double temperature) {
  check_param(!w.heads.empty(), "multi_head: at least one head required");
  std::vector<Tensor> per_head;
  per_head.reserve(w.heads.size());
  for (const AttentionHeadWeights& h : w.heads)
    per_head.push_back(attend(queries_src, memory, h, temperature));
  Tensor z = w.heads.size() == 1 ? per_head[0] : concat(per_head, 1);
  check_dim(z.dim(1) == w.wo.dim(0), "multi_head: concat width does not match wo rows");
  return matmul(z, w.wo);
}

double dot_product_temperature(const MultiHeadWeights& w) {
  check_param(!w.heads.empty(), "dot_product_temperature: no heads");
  return std::sqrt(static_cast<double>(w.heads[0].wq.dim(1)));
}

PositionalEncoding positional_encoding(std::int64_t n_max, std::int64_t d) {
  check_param(n_max >= 1, "positional_encoding: n_max must be positive");
  check_param(d >= 2 && d % 2 == 0, "positional_encoding: d must be even");
  Tensor table = Tensor::zeros({n_max, d});
  auto tv = table.mutable_data();
  for (std::int64_t pos = 0; pos < n_max; ++pos) {
    for (std::int64_t i = 0; i < d / 2; ++i) {
      const double rate = std::pow(10000.0, 2.0 * static_cast<double>(i) /
                                                static_cast<double>(d));
      const double angle = static_cast<double>(pos) / rate;
      tv[static_cast<std::size_t>(pos * d + 2 * i)] = std::sin(angle);
      tv[static_cast<std::size_t>(pos * d + 2 * i + 1)] = std::cos(angle);
    }
  }
  return PositionalEncoding{std::move(table)};
}

Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w) {
  return add(matmul(relu(add(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

AttentionBlockFn default_attention_block() {
  return [](const EntitySet& q_src, const EntitySet& memory, const MultiHeadWeights& w) {
    return multi_head(q_src, memory, w, dot_product_temperature(w));
  };
}

EntitySet encoder_forward(const EntitySet& entities, const std::vector<EncoderLayer>& layers,
                          const PositionalEncoding& pe, std::mt19937_64& rng) {
  return encoder_forward(entities, layers, pe, rng, default_attention_block());
}

EntitySet encoder_forward(const EntitySet& entities, const std::vector<EncoderLayer>& layers,
                          const PositionalEncoding& pe, std::mt19937_64& rng,
                          const AttentionBlockFn& block) {
  check_dim(entities.rank() == 2, "encoder_forward: entities must be 2-D");
  check_dim(entities.dim(1) == pe.table.dim(1),
            "encoder_forward: entity dim does not match position table");
  check_dim(entities.dim(0) <= pe.table.dim(0),
            "encoder_forward: more entities than position table rows");
  Tensor x = add(entities, take_rows(pe.table, entities.dim(0)));
  for (const EncoderLayer& layer : layers) {
    Tensor a = block(x, x, layer.self_attn);
    x = layer_norm(add(x, dropout(a, layer.dropout_rate, rng)), layer.norm1.gain,
                   layer.norm1.bias, kLayerNormEps);
    Tensor f = feed_forward(x, layer.ffn);
    x = layer_norm(add(x, dropout(f, layer.dropout_rate, rng)), layer.norm2.gain,
                   layer.norm2.bias, kLayerNormEps);
  }
  return x;
}

Tensor decoder_forward(const Tensor& queries, const EntitySet& memory,
                       const std::vector<DecoderLayer>& layers, std::mt19937_64& rng) {
  return decoder_forward(queries, memory, layers, rng, default_attention_block());
}

Tensor decoder_forward(const Tensor& queries, const EntitySet& memory,
                       const std::vector<DecoderLayer>& layers, std::mt19937_64& rng,
                       const AttentionBlockFn& block) {
  check_dim(queries.rank() == 2 && memory.rank() == 2, "decoder_forward: 2-D inputs required");
  check_dim(queries.dim(1) == memory.dim(1),
            "decoder_forward: query dim does not match memory dim");
  Tensor q = queries;
  for (const DecoderLayer& layer : layers) {
    Tensor a = block(q, q, layer.self_attn);
    q = layer_norm(add(q, dropout(a, layer.dropout_rate, rng)), layer.norm1.gain,
                   layer.norm1.bias, kLayerNormEps);
    Tensor c = block(q, memory, layer.cross_attn);
    q = layer_norm(add(q, dropout(c, layer.dropout_rate, rng)), layer.norm2.gain,
                   layer.norm2.bias, kLayerNormEps);
    Tensor f = feed_forward(q, layer.ffn);
    q = layer_norm(add(q, dropout(f, layer.dropout_rate, rng)), layer.norm3.gain,
                   layer.norm3.bias, kLayerNormEps);
  }
  return q;
}

}  // namespace hca
