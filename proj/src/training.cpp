#include "hca/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace hca {

namespace {

constexpr double kBceClamp = 1e-7;

}  // namespace

Tensor smooth_l1(const Tensor& y, const Tensor& yhat, double beta) {
  check_param(beta > 0.0, "smooth_l1: beta must be positive");
  check_dim(y.shape() == yhat.shape(), "smooth_l1: shapes differ, " + shape_str(y.shape()) +
                                           " vs " + shape_str(yhat.shape()));
  const std::int64_t n = y.numel();
  auto yv = y.data();
  auto pv = yhat.data();
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double diff = std::abs(yv[i] - pv[i]);
    total += diff < beta ? 0.5 * diff * diff / beta : diff - 0.5 * beta;
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));

  Graph* g = common_graph({&y, &yhat});
  if (!g) return out;
  const bool need_y = y.grad_enabled(), need_p = yhat.grad_enabled();
  Tensor yd = y.detached(), pd = yhat.detached();
  return g->record(std::move(out), {&y, &yhat},
                   [yd, pd, beta, n, need_y, need_p](const Tensor& up) {
    std::vector<Tensor> grads(2);
    Tensor gp = Tensor::zeros(pd.shape());
    auto gv = gp.mutable_data();
    auto yv2 = yd.data();
    auto pv2 = pd.data();
    const double scale = up.value() / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double e = pv2[i] - yv2[i];
      const double d = std::abs(e) < beta ? e / beta : (e > 0.0 ? 1.0 : -1.0);
      gv[static_cast<std::size_t>(i)] = scale * d;
    }
    if (need_y) {
      Tensor gy = Tensor::zeros(yd.shape());
      auto gyv = gy.mutable_data();
      for (std::int64_t i = 0; i < n; ++i)
        gyv[static_cast<std::size_t>(i)] = -gv[static_cast<std::size_t>(i)];
      grads[0] = std::move(gy);
    }
    if (need_p) grads[1] = std::move(gp);
    return grads;
  });
}

Tensor bce_multilabel(const Tensor& probs, const Tensor& target) {
  check_dim(probs.shape() == target.shape(), "bce_multilabel: shapes differ");
  const std::int64_t n = probs.numel();
  check_param(n > 0, "bce_multilabel: empty input");
  auto pv = probs.data();
  auto tv = target.data();
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    check_data(tv[i] == 0.0 || tv[i] == 1.0,
               "bce_multilabel: target entries must be binary");
    const double p = std::clamp(pv[i], kBceClamp, 1.0 - kBceClamp);
    total += -(tv[i] * std::log(p) + (1.0 - tv[i]) * std::log(1.0 - p));
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));

  Graph* g = common_graph({&probs, &target});
  if (!g) return out;
  const bool need_p = probs.grad_enabled();
  Tensor pd = probs.detached(), td = target.detached();
  return g->record(std::move(out), {&probs, &target},
                   [pd, td, n, need_p](const Tensor& up) {
    std::vector<Tensor> grads(2);
    if (need_p) {
      Tensor gp = Tensor::zeros(pd.shape());
      auto gv = gp.mutable_data();
      auto pv2 = pd.data();
      auto tv2 = td.data();
      const double scale = up.value() / static_cast<double>(n);
      for (std::int64_t i = 0; i < n; ++i) {
        // The clamp kills the gradient outside its range.
        if (pv2[i] < kBceClamp || pv2[i] > 1.0 - kBceClamp) continue;
        gv[static_cast<std::size_t>(i)] = scale * (pv2[i] - tv2[i]) / (pv2[i] * (1.0 - pv2[i]));
      }
      grads[0] = std::move(gp);
    }
    return grads;
  });
}

Tensor label_encode(const std::vector<int>& present_diseases) {
  Tensor out = Tensor::zeros({15});
  auto ov = out.mutable_data();
  for (int c : present_diseases) {
    check_data(c >= 0 && c < 15, "label_encode: class index " + std::to_string(c) +
                                     " out of range 0..14");
    ov[static_cast<std::size_t>(c)] = 1.0;
  }
  return out;
}

// ---- Optimizers ------------------------------------------------------------

void sgd_step(std::vector<std::pair<std::string, Tensor>>& weights,
              const std::vector<Tensor>& grads, SgdState& state, double lr, double momentum,
              double weight_decay) {
  check_dim(weights.size() == grads.size(), "sgd_step: weight/grad count mismatch");
  if (state.velocity.empty()) state.velocity.resize(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Tensor& w = weights[i].second;
    check_dim(grads[i].shape() == w.shape(), "sgd_step: grad shape mismatch for '" +
                                                 weights[i].first + "'");
    if (!state.velocity[i].defined()) state.velocity[i] = Tensor::zeros(w.shape());
    auto wv = w.mutable_data();
    auto vv = state.velocity[i].mutable_data();
    auto gv = grads[i].data();
    for (std::size_t j = 0; j < wv.size(); ++j) {
      wv[j] -= lr * weight_decay * wv[j];  // decoupled decay
      vv[j] = momentum * vv[j] + gv[j];
      wv[j] -= lr * vv[j];
    }
  }
}

void adamw_step(std::vector<std::pair<std::string, Tensor>>& weights,
                const std::vector<Tensor>& grads, AdamWState& state, double lr, double beta1,
                double beta2, double eps, double weight_decay) {
  check_dim(weights.size() == grads.size(), "adamw_step: weight/grad count mismatch");
  if (state.m.empty()) {
    state.m.resize(weights.size());
    state.v.resize(weights.size());
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Tensor& w = weights[i].second;
    check_dim(grads[i].shape() == w.shape(), "adamw_step: grad shape mismatch for '" +
                                                 weights[i].first + "'");
    if (!state.m[i].defined()) {
      state.m[i] = Tensor::zeros(w.shape());
      state.v[i] = Tensor::zeros(w.shape());
    }
    auto wv = w.mutable_data();
    auto mv = state.m[i].mutable_data();
    auto vv = state.v[i].mutable_data();
    auto gv = grads[i].data();
    for (std::size_t j = 0; j < wv.size(); ++j) {
      mv[j] = beta1 * mv[j] + (1.0 - beta1) * gv[j];
      vv[j] = beta2 * vv[j] + (1.0 - beta2) * gv[j] * gv[j];
      const double mhat = mv[j] / bc1;
      const double vhat = vv[j] / bc2;
      wv[j] -= lr * weight_decay * wv[j];
      wv[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double lr_at(int epoch, const FinetuneConfig& cfg) {
  check_param(epoch >= 0, "lr_at: negative epoch");
  return cfg.lr * std::pow(cfg.lr_decay, epoch / cfg.lr_decay_every);
}

// ---- Training procedures ----------------------------------------------------

void write_loss_trace_csv(const LossTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  check_data(static_cast<bool>(out), "cannot write '" + path.string() + "'");
  out << "epoch,train_loss,val_loss\n";
  char buf[64];
  for (const LossTraceRow& row : trace) {
    std::snprintf(buf, sizeof buf, "%.17g", row.train_loss);
    out << row.epoch << "," << buf << ",";
    if (!std::isnan(row.val_loss)) {
      std::snprintf(buf, sizeof buf, "%.17g", row.val_loss);
      out << buf;
    }
    out << "\n";
  }
}

namespace {

// Per-epoch Fisher-Yates with the run RNG.
void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(idx[i - 1], idx[pick(rng)]);
  }
}

std::vector<Tensor> collect_grads(const BoundModel& bm, const GradientMap& gm) {
  std::vector<Tensor> grads;
  grads.reserve(bm.params.size());
  for (const Tensor& p : bm.params) grads.push_back(gm.at(p));
  return grads;
}

double eval_loss(const Checkpoint& ckpt, const Dataset& ds, double loss_beta) {
  BoundModel bm = bind(ckpt, nullptr);
  std::mt19937_64 rng(0);  // unused, dropout off in eval mode
  double total = 0.0;
  for (const Sample& s : ds.samples) {
    Tensor out = model_forward(bm, s.image, rng, false);
    Tensor target = Tensor::from({static_cast<std::int64_t>(s.labels.size())}, s.labels);
    if (ckpt.spec.head_kind == HeadKind::Pretrain15)
      total += bce_multilabel(out, target).value();
    else
      total += smooth_l1(target, out, loss_beta).value();
  }
  return total / static_cast<double>(ds.samples.size());
}

}  // namespace

Checkpoint pretrain(const ModelSpec& spec, const Dataset& proxy, const PretrainConfig& cfg,
                    LossTrace* trace) {
  check_config(spec.head_kind == HeadKind::Pretrain15,
               "pretrain: model spec must carry the pretrain_15 head");
  check_data(proxy.kind == DatasetKind::Proxy, "pretrain: dataset is not a proxy set");
  check_param(cfg.epochs >= 0 && cfg.batch_size >= 1 && cfg.lr > 0.0,
              "pretrain: bad config");
  for (const Sample& s : proxy.samples)
    check_data(s.labels.size() == 15, "pretrain: proxy labels must be 15-dimensional");

  Checkpoint ckpt = init(spec, cfg.seed);
  std::mt19937_64 rng(cfg.seed);
  AdamWState state;
  std::vector<std::size_t> order(proxy.samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Graph g;
      BoundModel bm = bind(ckpt, &g);
      Tensor batch_loss;
      for (std::size_t i = start; i < stop; ++i) {
        const Sample& s = proxy.samples[order[i]];
        Tensor out = model_forward(bm, s.image, rng, true);
        Tensor target = Tensor::from({15}, s.labels);
        Tensor loss = bce_multilabel(out, target);
        batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
      GradientMap gm = g.backward(batch_loss);
      adamw_step(ckpt.weights, collect_grads(bm, gm), state, cfg.lr, cfg.beta1, cfg.beta2,
                 cfg.eps, cfg.weight_decay);
      epoch_loss += batch_loss.value() * static_cast<double>(stop - start);
    }
    if (trace)
      trace->push_back(
          LossTraceRow{epoch, epoch_loss / static_cast<double>(order.size()),
                       std::numeric_limits<double>::quiet_NaN()});
  }
  ckpt.phase = TrainingPhase::Pretrained;
  return ckpt;
}

std::pair<Checkpoint, LossTrace> finetune(const Checkpoint& start, const Dataset& train,
                                          const Dataset* val, const FinetuneConfig& cfg) {
  check_config(start.spec.head_kind == HeadKind::Severity2,
               "finetune: checkpoint must carry the severity_2 head");
  check_data(train.kind == DatasetKind::Target, "finetune: dataset is not a target set");
  check_param(cfg.epochs >= 0 && cfg.batch_size >= 1 && cfg.lr > 0.0 &&
                  cfg.lr_decay > 0.0 && cfg.lr_decay_every >= 1,
              "finetune: bad config");
  for (const Sample& s : train.samples)
    check_data(s.labels.size() == 2, "finetune: target labels must be 2-dimensional");

  Checkpoint ckpt = start;
  ckpt.spec.dropout = cfg.dropout;
  std::mt19937_64 rng(cfg.seed);
  SgdState state;
  LossTrace trace;
  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    shuffle_indices(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), batch_start + static_cast<std::size_t>(cfg.batch_size));
      Graph g;
      BoundModel bm = bind(ckpt, &g);
      Tensor batch_loss;
      for (std::size_t i = batch_start; i < stop; ++i) {
        const Sample& s = train.samples[order[i]];
        Tensor out = model_forward(bm, s.image, rng, true);
        Tensor target = Tensor::from({2}, s.labels);
        Tensor loss = smooth_l1(target, out, cfg.loss_beta);
        batch_loss = batch_loss.defined() ? add(batch_loss, loss) : loss;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - batch_start));
      GradientMap gm = g.backward(batch_loss);
      sgd_step(ckpt.weights, collect_grads(bm, gm), state, lr, cfg.momentum,
               cfg.weight_decay);
      epoch_loss += batch_loss.value() * static_cast<double>(stop - batch_start);
    }
    LossTraceRow row;
    row.epoch = epoch;
    row.train_loss = epoch_loss / static_cast<double>(order.size());
    if (val) row.val_loss = eval_loss(ckpt, *val, cfg.loss_beta);
    trace.push_back(row);
  }
  ckpt.phase = TrainingPhase::Finetuned;
  if (cfg.epochs == 0) ckpt.phase = start.phase;
  return {std::move(ckpt), std::move(trace)};
}

std::vector<std::vector<double>> predict(const Checkpoint& ckpt, const Dataset& dataset) {
  BoundModel bm = bind(ckpt, nullptr);
  std::mt19937_64 rng(0);
  std::vector<std::vector<double>> out;
  out.reserve(dataset.samples.size());
  for (const Sample& s : dataset.samples) {
    Tensor y = model_forward(bm, s.image, rng, false);
    out.emplace_back(y.data().begin(), y.data().end());
  }
  return out;
}

}  // namespace hca
