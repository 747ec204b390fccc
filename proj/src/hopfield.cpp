#include "hca/hopfield.hpp"

#include <cmath>

namespace hca {

namespace {

void check_pattern_dims(const Tensor& patterns, const Tensor& state) {
  check_dim(patterns.rank() == 2, "patterns must be d x n (stored patterns as columns)");
  check_dim(state.rank() == 1 && state.dim(0) == patterns.dim(0),
            "state dimension does not match stored patterns");
}

// X^T p as a 1-D tensor of n logits.
Tensor pattern_logits(const Tensor& patterns, const Tensor& state) {
  const std::int64_t d = patterns.dim(0), n = patterns.dim(1);
  Tensor logits = Tensor::zeros({n});
  auto lv = logits.mutable_data();
  auto xv = patterns.data();
  auto pv = state.data();
  for (std::int64_t j = 0; j < n; ++j) {
    double dot = 0.0;
    for (std::int64_t i = 0; i < d; ++i)
      dot += xv[static_cast<std::size_t>(i * n + j)] * pv[static_cast<std::size_t>(i)];
    lv[static_cast<std::size_t>(j)] = dot;
  }
  return logits;
}

double max_column_norm_sq(const Tensor& patterns) {
  const std::int64_t d = patterns.dim(0), n = patterns.dim(1);
  auto xv = patterns.data();
  double best = 0.0;
  for (std::int64_t j = 0; j < n; ++j) {
    double ss = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      const double v = xv[static_cast<std::size_t>(i * n + j)];
      ss += v * v;
    }
    best = std::max(best, ss);
  }
  return best;
}

}  // namespace

double energy(const Tensor& patterns, const Tensor& state, double beta) {
  check_param(beta > 0.0, "energy: beta must be positive");
  check_pattern_dims(patterns, state);
  const Tensor logits = pattern_logits(patterns.detached(), state.detached());
  const double lse_term = lse(beta, logits).value();
  double pp = 0.0;
  for (double v : state.data()) pp += v * v;
  const double n = static_cast<double>(patterns.dim(1));
  return -lse_term + 0.5 * pp + std::log(n) / beta + 0.5 * max_column_norm_sq(patterns);
}

Tensor update(const Tensor& patterns, const Tensor& state, double beta) {
  check_param(beta > 0.0, "update: beta must be positive");
  check_pattern_dims(patterns, state);
  const Tensor x = patterns.detached();
  const Tensor logits = pattern_logits(x, state.detached());
  Tensor weights = softmax(logits, 1.0 / beta);
  Tensor next = matmul(x, reshape(weights, {weights.dim(0), 1}));
  return reshape(next, {patterns.dim(0)});
}

RetrievalResult retrieve(const Tensor& patterns, const Tensor& initial_state, double beta,
                         int max_iter, double tol) {
  check_param(max_iter >= 1, "retrieve: max_iter must be >= 1");
  check_param(tol > 0.0, "retrieve: tol must be positive");
  Tensor state = initial_state.detached();
  double e_prev = energy(patterns, state, beta);
  int used = 0;
  for (int it = 0; it < max_iter; ++it) {
    Tensor next = update(patterns, state, beta);
    ++used;
    const double e_next = energy(patterns, next, beta);
    check_internal(e_next <= e_prev + 1e-9,
                   "retrieve: energy increased by " + std::to_string(e_next - e_prev));
    double step = 0.0;
    auto nv = next.data();
    auto sv = state.data();
    for (std::size_t i = 0; i < nv.size(); ++i)
      step = std::max(step, std::abs(nv[i] - sv[i]));
    state = std::move(next);
    e_prev = e_next;
    if (step < tol) break;
  }
  return RetrievalResult{std::move(state), used};
}

Tensor hopfield_layer_forward(const Tensor& queries_src, const Tensor& memory,
                              const HopfieldLayerWeights& w) {
  check_param(w.beta > 0.0, "hopfield_layer_forward: beta must be positive");
  check_param(w.n_steps >= 1, "hopfield_layer_forward: n_steps must be >= 1");
  check_dim(queries_src.rank() == 2 && memory.rank() == 2,
            "hopfield_layer_forward: 2-D inputs required");
  check_dim(queries_src.dim(1) == w.wq.dim(0) && memory.dim(1) == w.wk.dim(0) &&
                memory.dim(1) == w.wv.dim(0),
            "hopfield_layer_forward: entity dimension does not match projections");
  check_dim(w.wq.dim(1) == w.wk.dim(1), "hopfield_layer_forward: d_q != d_k");

  Tensor q = matmul(queries_src, w.wq);
  Tensor k = matmul(memory, w.wk);
  Tensor v = matmul(memory, w.wv);
  Tensor weights;
  for (int s = 0; s < w.n_steps; ++s) {
    weights = softmax(matmul(q, transpose(k)), 1.0 / w.beta);
    if (s + 1 < w.n_steps) q = matmul(weights, k);
  }
  return matmul(weights, v);
}

Tensor hopfield_multi_head(const Tensor& queries_src, const Tensor& memory,
                           const MultiHeadWeights& w, double beta, int n_steps) {
  check_param(!w.heads.empty(), "hopfield_multi_head: at least one head required");
  std::vector<Tensor> per_head;
  per_head.reserve(w.heads.size());
  for (const AttentionHeadWeights& h : w.heads) {
    HopfieldLayerWeights hw{h.wq, h.wk, h.wv, beta, n_steps};
    per_head.push_back(hopfield_layer_forward(queries_src, memory, hw));
  }
  Tensor z = w.heads.size() == 1 ? per_head[0] : concat(per_head, 1);
  check_dim(z.dim(1) == w.wo.dim(0),
            "hopfield_multi_head: concat width does not match wo rows");
  return matmul(z, w.wo);
}

}  // namespace hca
