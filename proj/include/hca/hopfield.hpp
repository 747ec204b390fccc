#pragma once

#include <cstdint>
#include <utility>

#include "hca/attention.hpp"
#include "hca/tensor.hpp"

namespace hca {

// Continuous associative-memory layer parameters. Projections mirror the
// attention head weights so the layer can stand in for dot-product attention.
struct HopfieldLayerWeights {
  Tensor wq;  // p x d_q
  Tensor wk;  // p x d_k, d_k == d_q
  Tensor wv;  // p x d_v
  double beta = 1.0;
  int n_steps = 1;
};

struct RetrievalResult {
  Tensor state;
  int iterations = 0;
};

// Energy of a state pattern against stored patterns (columns of `patterns`):
//   E = -lse(beta, X^T p) + p^T p / 2 + log(n) / beta + M^2 / 2
// with M the largest stored-pattern norm. Nonnegative for any finite input.
double energy(const Tensor& patterns, const Tensor& state, double beta);

// One retrieval step: p_new = X softmax(beta X^T p). The result lies in the
// convex hull of the stored patterns and never increases the energy.
Tensor update(const Tensor& patterns, const Tensor& state, double beta);

// Iterates update until the max-norm step drops below tol or max_iter is
// reached. Asserts energy descent along the way (InternalError past 1e-9
// slack).
RetrievalResult retrieve(const Tensor& patterns, const Tensor& initial_state, double beta,
                         int max_iter = 50, double tol = 1e-6);

// Attention-shaped retrieval over projected entities: each query row is a
// state pattern over the key rows; after n_steps updates in key space the
// final attention weights read out the value projection. With n_steps == 1
// this is exactly softmax(beta Q K^T) V.
Tensor hopfield_layer_forward(const Tensor& queries_src, const Tensor& memory,
                              const HopfieldLayerWeights& w);

// Hopfield counterpart of multi_head: one retrieval block per head, feature
// concat, projection through wo. Drop-in replacement inside the encoder and
// decoder scaffolding.
Tensor hopfield_multi_head(const Tensor& queries_src, const Tensor& memory,
                           const MultiHeadWeights& w, double beta, int n_steps);

}  // namespace hca
