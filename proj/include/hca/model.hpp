#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hca/attention.hpp"
#include "hca/backbone.hpp"
#include "hca/hopfield.hpp"
#include "hca/tensor.hpp"

namespace hca {

enum class AttentionKind { None, Transformer, Hopfield };
enum class HeadKind { Pretrain15, Severity2 };
enum class TrainingPhase { Random, Pretrained, Finetuned };

std::string to_string(AttentionKind kind);
std::string to_string(HeadKind kind);
std::string to_string(TrainingPhase phase);
AttentionKind attention_kind_from(const std::string& s);
HeadKind head_kind_from(const std::string& s);
TrainingPhase phase_from(const std::string& s);

std::int64_t head_output_dim(HeadKind kind);

// Full description of one experimental architecture: baseline CNN
// (attention none), Transformer hybrid, or Hopfield hybrid.
struct ModelSpec {
  BackboneSpec backbone;
  AttentionKind attention_kind = AttentionKind::Transformer;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int heads = 4;
  std::int64_t d = 64;       // latent width; equals backbone projection channels
  std::int64_t m = 4;        // learnable query count
  std::int64_t ffn_hidden = 0;  // 0 -> 4 * d
  double beta = 0.0;         // hopfield inverse temperature; 0 -> 1/sqrt(d_q)
  int n_steps = 1;
  double dropout = 0.1;
  HeadKind head_kind = HeadKind::Severity2;
};

// Throws ConfigError on an inconsistent spec.
void validate(const ModelSpec& spec);

std::int64_t ffn_hidden_width(const ModelSpec& spec);
double hopfield_beta(const ModelSpec& spec);

enum class WeightInit { XavierUniform, Zero, One, QueryNormal };

// One entry per named weight, in the fixed creation order shared by init,
// serialization, and optimizers.
struct WeightSlot {
  std::string name;
  Shape shape;
  WeightInit init;
};

std::vector<WeightSlot> weight_plan(const ModelSpec& spec);

struct Checkpoint {
  ModelSpec spec;
  std::vector<std::pair<std::string, Tensor>> weights;
  std::uint64_t seed = 0;
  TrainingPhase phase = TrainingPhase::Random;

  const Tensor& tensor(const std::string& name) const;
  Tensor& tensor(const std::string& name);
  bool has(const std::string& name) const;
};

// Fresh weights: xavier-uniform matrices/kernels, zero biases, unit norm
// gains, queries from normal(0, 0.02). Deterministic in seed.
Checkpoint init(const ModelSpec& spec, std::uint64_t seed);

// Head swap between tasks: non-head weights copied verbatim, head weights
// re-initialized for the new kind with the given seed.
Checkpoint transplant(const Checkpoint& ckpt, HeadKind new_head, std::uint64_t seed);

// Copies every non-head weight whose name and shape match from the donor
// (the knowledge-transfer step from the pre-training phase; attention weights
// absent from the donor stay freshly initialized).
Checkpoint adopt_pretrained(Checkpoint dst, const Checkpoint& donor);

// Checkpoint weights materialized for one graph: recorded leaves when a
// graph is supplied, untracked values otherwise.
struct BoundModel {
  ModelSpec spec;
  BackboneWeights backbone;
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  Tensor irq;
  PositionalEncoding pe;
  FeedForwardWeights head;
  std::vector<Tensor> params;  // checkpoint order
};

BoundModel bind(const Checkpoint& ckpt, Graph* graph);

// backbone -> (hybrids: encoder with positional encoding -> decoder with
// learnable queries) -> mean pooling -> 2-layer MLP head. Pretrain head ends
// in a sigmoid; severity head is linear. Dropout only in train_mode.
Tensor model_forward(const BoundModel& model, const Tensor& image, std::mt19937_64& rng,
                     bool train_mode);

// Directory with spec.json + one tensor file per weight.
void checkpoint_save(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint checkpoint_load(const std::filesystem::path& dir);

}  // namespace hca
