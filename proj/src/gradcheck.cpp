#include "hca/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hca/backbone.hpp"
#include "hca/hopfield.hpp"
#include "hca/training.hpp"

namespace hca {

namespace {

constexpr double kStep = 1e-5;

// Uniform values bounded away from zero so relu kinks stay clear of the
// finite-difference probes.
Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  Tensor t = Tensor::uniform(std::move(shape), 0.2, 1.0, rng);
  auto tv = t.mutable_data();
  std::uniform_int_distribution<int> sign(0, 1);
  for (double& v : tv) v = sign(rng) ? v : -v;
  return t;
}

double checked(const std::function<Tensor(Graph&, const Tensor&)>& f, const Tensor& x) {
  return grad_check(f, x, kStep);
}

}  // namespace

std::vector<GradCheckEntry> primitive_grad_checks() {
  std::vector<GradCheckEntry> out;
  std::mt19937_64 rng(7);

  const Tensor a = away_from_zero({3, 4}, rng);
  const Tensor b = away_from_zero({4, 2}, rng);
  const Tensor c = away_from_zero({3, 4}, rng);
  const Tensor bias = away_from_zero({4}, rng);
  const Tensor w34 = away_from_zero({3, 4}, rng);
  const Tensor w32 = away_from_zero({3, 2}, rng);

  auto push = [&out](const std::string& op, double err) {
    out.push_back(GradCheckEntry{op, err});
  };

  push("matmul",
       std::max(checked([&b](Graph&, const Tensor& x) { return mean(matmul(x, b)); }, a),
                checked([&a](Graph&, const Tensor& x) { return mean(matmul(a, x)); }, b)));
  push("add", std::max(
                  checked([&c](Graph&, const Tensor& x) { return mean(mul(add(x, c), c)); }, a),
                  checked([&a, &w34](Graph&, const Tensor& x) {
                    return mean(mul(add(a, x), w34));
                  }, bias)));
  push("sub",
       std::max(checked([&c, &w34](Graph&, const Tensor& x) {
                  return mean(mul(sub(x, c), w34));
                }, a),
                checked([&a, &w34](Graph&, const Tensor& x) {
                  return mean(mul(sub(a, x), w34));
                }, bias)));
  push("mul",
       std::max(checked([&c](Graph&, const Tensor& x) { return mean(mul(x, c)); }, a),
                checked([&a, &w34](Graph&, const Tensor& x) {
                  return mean(mul(mul(a, x), w34));
                }, bias)));
  push("scale", checked([](Graph&, const Tensor& x) { return mean(scale(x, -2.5)); }, a));
  push("relu",
       checked([&w34](Graph&, const Tensor& x) { return mean(mul(relu(x), w34)); }, a));
  push("sigmoid",
       checked([&w34](Graph&, const Tensor& x) { return mean(mul(sigmoid(x), w34)); }, a));
  push("transpose",
       checked([&b](Graph&, const Tensor& x) { return mean(matmul(transpose(x), b)); },
               away_from_zero({4, 3}, rng)));
  push("concat",
       checked([&c, &w34](Graph&, const Tensor& x) {
         std::vector<Tensor> parts{x, c};
         return mean(mul(concat(parts, 1), concat(std::vector<Tensor>{w34, w34}, 1)));
       }, a));
  push("reshape",
       checked([&w32](Graph&, const Tensor& x) {
         return mean(mul(reshape(x, {3, 2}), w32));
       }, away_from_zero({6}, rng)));
  push("mean",
       std::max({checked([](Graph&, const Tensor& x) { return mean(x); }, a),
                 checked([&bias](Graph&, const Tensor& x) {
                   return mean(mul(mean(x, 0), bias));
                 }, a),
                 checked([](Graph&, const Tensor& x) {
                   return mean(mean(x, 1));
                 }, a)}));
  push("softmax", checked([&w34](Graph&, const Tensor& x) {
         return mean(mul(softmax(x, 0.7), w34));
       }, a));
  push("lse",
       checked([](Graph&, const Tensor& x) { return lse(1.7, x); },
               away_from_zero({6}, rng)));
  {
    const Tensor gain = Tensor::uniform({4}, 0.5, 1.5, rng);
    const Tensor lb = away_from_zero({4}, rng);
    push("layer_norm",
         std::max({checked([&gain, &lb, &w34](Graph&, const Tensor& x) {
                     return mean(mul(layer_norm(x, gain, lb, 1e-5), w34));
                   }, a),
                   checked([&a, &lb, &w34](Graph&, const Tensor& x) {
                     return mean(mul(layer_norm(a, x, lb, 1e-5), w34));
                   }, gain),
                   checked([&a, &gain, &w34](Graph&, const Tensor& x) {
                     return mean(mul(layer_norm(a, gain, x, 1e-5), w34));
                   }, lb)}));
  }
  {
    const Tensor image = away_from_zero({2, 7, 7}, rng);
    const Tensor kernel = away_from_zero({3, 2, 3, 3}, rng);
    const Tensor cbias = away_from_zero({3}, rng);
    auto conv_loss = [](const Tensor& img, const Tensor& k, const Tensor& cb) {
      ConvLayer layer{k, cb, 2, 1};
      return mean(conv2d(img, layer));
    };
    push("conv2d",
         std::max({checked([&kernel, &cbias, &conv_loss](Graph&, const Tensor& x) {
                     return conv_loss(x, kernel, cbias);
                   }, image),
                   checked([&image, &cbias, &conv_loss](Graph&, const Tensor& x) {
                     return conv_loss(image, x, cbias);
                   }, kernel),
                   checked([&image, &kernel, &conv_loss](Graph&, const Tensor& x) {
                     return conv_loss(image, kernel, x);
                   }, cbias)}));
  }
  {
    const Tensor entities = away_from_zero({5, 4}, rng);
    const Tensor wq = away_from_zero({4, 3}, rng);
    const Tensor wk = away_from_zero({4, 3}, rng);
    const Tensor wv = away_from_zero({4, 3}, rng);
    push("attend",
         std::max({checked([&wq, &wk, &wv](Graph&, const Tensor& x) {
                     return mean(attend(x, x, AttentionHeadWeights{wq, wk, wv}, 2.0));
                   }, entities),
                   checked([&entities, &wk, &wv](Graph&, const Tensor& x) {
                     return mean(
                         attend(entities, entities, AttentionHeadWeights{x, wk, wv}, 2.0));
                   }, wq),
                   checked([&entities, &wq, &wk](Graph&, const Tensor& x) {
                     return mean(
                         attend(entities, entities, AttentionHeadWeights{wq, wk, x}, 2.0));
                   }, wv)}));
    MultiHeadWeights mh;
    mh.heads.push_back(AttentionHeadWeights{wq, wk, wv});
    mh.heads.push_back(AttentionHeadWeights{away_from_zero({4, 3}, rng),
                                            away_from_zero({4, 3}, rng),
                                            away_from_zero({4, 3}, rng)});
    mh.wo = away_from_zero({6, 4}, rng);
    push("multi_head", checked([&mh](Graph&, const Tensor& x) {
           return mean(multi_head(x, x, mh, dot_product_temperature(mh)));
         }, entities));
    push("hopfield_layer_forward", checked([&wq, &wk, &wv](Graph&, const Tensor& x) {
           HopfieldLayerWeights hw{wq, wk, wv, 0.8, 2};
           return mean(hopfield_layer_forward(x, x, hw));
         }, entities));
  }
  {
    const Tensor y = away_from_zero({5}, rng);
    Tensor yhat = Tensor::zeros({5});
    {
      // Offsets clear of the |diff| == beta branch boundary.
      auto pv = yhat.mutable_data();
      auto yv = y.data();
      const double offsets[5] = {0.4, -0.6, 1.7, -2.2, 0.2};
      for (std::size_t i = 0; i < 5; ++i) pv[i] = yv[i] + offsets[i];
    }
    push("smooth_l1",
         std::max(checked([&y](Graph&, const Tensor& x) { return smooth_l1(y, x, 1.0); },
                          yhat),
                  checked([&yhat](Graph&, const Tensor& x) {
                    return smooth_l1(x, yhat, 1.0);
                  }, y)));
    const Tensor probs = Tensor::uniform({15}, 0.05, 0.95, rng);
    Tensor target = Tensor::zeros({15});
    {
      auto tv = target.mutable_data();
      for (std::size_t i = 0; i < 15; i += 2) tv[i] = 1.0;
    }
    push("bce_multilabel", checked([&target](Graph&, const Tensor& x) {
           return bce_multilabel(x, target);
         }, probs));
  }
  return out;
}

double model_grad_check(const Checkpoint& ckpt, const Tensor& image, const Tensor& target,
                        double step, int directions_per_tensor, std::mt19937_64& rng) {
  check_contract(ckpt.spec.dropout == 0.0, "model_grad_check: dropout must be zero");
  check_param(directions_per_tensor >= 1, "model_grad_check: need at least one direction");
  std::mt19937_64 dummy(0);

  auto loss_of = [&](const Checkpoint& c) {
    BoundModel bm = bind(c, nullptr);
    Tensor out = model_forward(bm, image, dummy, false);
    return c.spec.head_kind == HeadKind::Pretrain15 ? bce_multilabel(out, target).value()
                                                    : smooth_l1(target, out, 1.0).value();
  };

  Graph g;
  BoundModel bm = bind(ckpt, &g);
  Tensor out = model_forward(bm, image, dummy, false);
  Tensor loss = ckpt.spec.head_kind == HeadKind::Pretrain15
                    ? bce_multilabel(out, target)
                    : smooth_l1(target, out, 1.0);
  GradientMap gm = g.backward(loss);

  // Directional probes: every coordinate of the tensor participates in each
  // probe, and the compared magnitudes stay well above the cancellation
  // noise that per-coordinate differences of an O(1) loss would drown in.
  double max_err = 0.0;
  for (std::size_t wi = 0; wi < ckpt.weights.size(); ++wi) {
    const Tensor& analytic = gm.at(bm.params[wi]);
    const std::int64_t numel = analytic.numel();
    for (int dir = 0; dir < directions_per_tensor; ++dir) {
      Tensor v = Tensor::randn(analytic.shape(), rng);
      double norm = 0.0;
      for (double x : v.data()) norm += x * x;
      norm = std::sqrt(norm);
      {
        auto vv = v.mutable_data();
        for (double& x : vv) x /= norm;
      }
      auto loss_along = [&](double t) {
        Checkpoint moved = ckpt;
        auto mv = moved.weights[wi].second.mutable_data();
        auto vv2 = v.data();
        for (std::int64_t i = 0; i < numel; ++i)
          mv[static_cast<std::size_t>(i)] += t * vv2[static_cast<std::size_t>(i)];
        return loss_of(moved);
      };
      // Five-point stencil: the O(step^2) curvature term would dominate on
      // tensors whose directional derivative is small.
      const double numeric = (loss_along(-2.0 * step) - 8.0 * loss_along(-step) +
                              8.0 * loss_along(step) - loss_along(2.0 * step)) /
                             (12.0 * step);
      double along = 0.0;
      auto av = analytic.data();
      auto vv = v.data();
      for (std::int64_t i = 0; i < numel; ++i)
        along += av[static_cast<std::size_t>(i)] * vv[static_cast<std::size_t>(i)];
      // Floor at 1e-5: derivatives below that ask for absolute agreement to
      // 1e-9, which still sits orders of magnitude above the cancellation
      // noise of differencing an O(1) loss.
      const double err =
          std::abs(along - numeric) / std::max({std::abs(along), std::abs(numeric), 1e-5});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

std::vector<GradCheckEntry> gradient_check_suite(const ModelSpec& base_spec) {
  std::vector<GradCheckEntry> out = primitive_grad_checks();

  ModelSpec spec = base_spec;
  spec.dropout = 0.0;
  spec.head_kind = HeadKind::Severity2;
  std::mt19937_64 rng(11);
  const Tensor image = Tensor::uniform(
      {spec.backbone.in_channels, spec.backbone.in_height, spec.backbone.in_width}, 0.0, 1.0,
      rng);
  const Tensor target = Tensor::uniform({2}, 0.0, 4.0, rng);

  spec.attention_kind = AttentionKind::Transformer;
  out.push_back(GradCheckEntry{
      "model_hct", model_grad_check(init(spec, 3), image, target, kStep, 10, rng)});
  spec.attention_kind = AttentionKind::Hopfield;
  spec.n_steps = std::max(1, spec.n_steps);
  out.push_back(GradCheckEntry{
      "model_hch", model_grad_check(init(spec, 3), image, target, kStep, 10, rng)});
  return out;
}

}  // namespace hca
