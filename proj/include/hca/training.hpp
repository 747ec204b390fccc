#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <utility>
#include <vector>

#include "hca/data.hpp"
#include "hca/model.hpp"
#include "hca/tensor.hpp"

namespace hca {

// Pre-training phase settings (multi-label proxy task, AdamW + BCE).
struct PretrainConfig {
  double lr = 1e-6;
  double weight_decay = 0.01;
  int epochs = 100;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Severity fine-tuning settings (SGD + momentum, stepped decay, smooth L1).
struct FinetuneConfig {
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 3e-5;
  int epochs = 400;
  double lr_decay = 0.98;
  int lr_decay_every = 2;
  double dropout = 0.1;
  double loss_beta = 1.0;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

// ---- Losses (graph-recorded) -----------------------------------------------

// Mean over elements of the Huber-style loss: quadratic 0.5 diff^2 / beta for
// |diff| < beta, |diff| - 0.5 beta otherwise. Continuous and once
// differentiable across the branch boundary.
Tensor smooth_l1(const Tensor& y, const Tensor& yhat, double beta);

// Mean binary cross-entropy over independent labels; probabilities are
// clamped to [1e-7, 1 - 1e-7] first. Targets must be exactly 0 or 1.
Tensor bce_multilabel(const Tensor& probs, const Tensor& target);

// Binary indicator vector over 15 classes; the empty set encodes the normal
// case.
Tensor label_encode(const std::vector<int>& present_diseases);

// ---- Optimizers ------------------------------------------------------------
// Buffers align with the weight vector by index and are created on first use.
// Both optimizers use decoupled weight decay.

struct SgdState {
  std::vector<Tensor> velocity;
};

struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

void sgd_step(std::vector<std::pair<std::string, Tensor>>& weights,
              const std::vector<Tensor>& grads, SgdState& state, double lr, double momentum,
              double weight_decay);

void adamw_step(std::vector<std::pair<std::string, Tensor>>& weights,
                const std::vector<Tensor>& grads, AdamWState& state, double lr, double beta1,
                double beta2, double eps, double weight_decay);

// lr0 * decay^floor(epoch / every).
double lr_at(int epoch, const FinetuneConfig& cfg);

// ---- Training procedures ----------------------------------------------------

struct LossTraceRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();  // NaN = no validation set
};
using LossTrace = std::vector<LossTraceRow>;

// epoch,train_loss,val_loss; the validation column stays empty when absent.
void write_loss_trace_csv(const LossTrace& trace, const std::filesystem::path& path);

// Shuffled mini-batch AdamW on BCE over the proxy set. Returns a checkpoint
// tagged `pretrained`.
Checkpoint pretrain(const ModelSpec& spec, const Dataset& proxy, const PretrainConfig& cfg,
                    LossTrace* trace = nullptr);

// SGD fine-tuning with the stepped schedule and smooth L1; `val` adds a
// per-epoch validation loss column. The starting checkpoint must carry the
// severity head.
std::pair<Checkpoint, LossTrace> finetune(const Checkpoint& start, const Dataset& train,
                                          const Dataset* val, const FinetuneConfig& cfg);

// Eval-mode predictions, one output vector per sample.
std::vector<std::vector<double>> predict(const Checkpoint& ckpt, const Dataset& dataset);

}  // namespace hca
