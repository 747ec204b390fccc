#include "hca/backbone.hpp"

#include <Eigen/Core>

namespace hca {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

// Patch matrix: rows are unrolled kernel positions (c_in * k * k), columns
// are output spatial positions. Zero padding contributes zero rows.
Tensor im2col(const Tensor& input, std::int64_t k, std::int64_t stride, std::int64_t padding,
              std::int64_t h_out, std::int64_t w_out) {
  const std::int64_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor col = Tensor::zeros({c_in * k * k, h_out * w_out});
  auto cv = col.mutable_data();
  auto iv = input.data();
  const std::int64_t cols = h_out * w_out;
  for (std::int64_t ci = 0; ci < c_in; ++ci) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const std::int64_t row = (ci * k + ki) * k + kj;
        for (std::int64_t oy = 0; oy < h_out; ++oy) {
          const std::int64_t iy = oy * stride + ki - padding;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < w_out; ++ox) {
            const std::int64_t ix = ox * stride + kj - padding;
            if (ix < 0 || ix >= w) continue;
            cv[static_cast<std::size_t>(row * cols + oy * w_out + ox)] =
                iv[static_cast<std::size_t>((ci * h + iy) * w + ix)];
          }
        }
      }
    }
  }
  return col;
}

// Scatter-add of patch-matrix gradients back onto the input geometry.
Tensor col2im(const Tensor& g_col, std::int64_t c_in, std::int64_t h, std::int64_t w,
              std::int64_t k, std::int64_t stride, std::int64_t padding, std::int64_t h_out,
              std::int64_t w_out) {
  Tensor g_input = Tensor::zeros({c_in, h, w});
  auto gv = g_input.mutable_data();
  auto cv = g_col.data();
  const std::int64_t cols = h_out * w_out;
  for (std::int64_t ci = 0; ci < c_in; ++ci) {
    for (std::int64_t ki = 0; ki < k; ++ki) {
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const std::int64_t row = (ci * k + ki) * k + kj;
        for (std::int64_t oy = 0; oy < h_out; ++oy) {
          const std::int64_t iy = oy * stride + ki - padding;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < w_out; ++ox) {
            const std::int64_t ix = ox * stride + kj - padding;
            if (ix < 0 || ix >= w) continue;
            gv[static_cast<std::size_t>((ci * h + iy) * w + ix)] +=
                cv[static_cast<std::size_t>(row * cols + oy * w_out + ox)];
          }
        }
      }
    }
  }
  return g_input;
}

}  // namespace

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const ConvLayer& layer) {
  check_dim(input.rank() == 3, "conv2d: input must be c x h x w");
  check_dim(layer.kernel.rank() == 4, "conv2d: kernel must be c_out x c_in x k x k");
  check_dim(layer.kernel.dim(2) == layer.kernel.dim(3), "conv2d: kernel must be square");
  check_dim(layer.kernel.dim(1) == input.dim(0),
            "conv2d: kernel input channels " + std::to_string(layer.kernel.dim(1)) +
                " do not match input channels " + std::to_string(input.dim(0)));
  check_dim(layer.bias.rank() == 1 && layer.bias.dim(0) == layer.kernel.dim(0),
            "conv2d: bias length must equal output channels");
  check_param(layer.stride >= 1 && layer.padding >= 0, "conv2d: bad stride/padding");

  const std::int64_t c_out = layer.kernel.dim(0), c_in = input.dim(0);
  const std::int64_t k = layer.kernel.dim(2);
  const std::int64_t h = input.dim(1), w = input.dim(2);
  const std::int64_t h_out = conv_output_extent(h, k, layer.stride, layer.padding);
  const std::int64_t w_out = conv_output_extent(w, k, layer.stride, layer.padding);
  check_dim(h_out >= 1 && w_out >= 1, "conv2d: kernel does not fit input geometry");

  Tensor col = im2col(input.detached(), k, layer.stride, layer.padding, h_out, w_out);
  Tensor out = Tensor::zeros({c_out, h_out, w_out});
  {
    CMapM km(layer.kernel.data().data(), c_out, c_in * k * k);
    CMapM cm(col.data().data(), c_in * k * k, h_out * w_out);
    MapM om(out.mutable_data().data(), c_out, h_out * w_out);
    om.noalias() = km * cm;
    auto bv = layer.bias.data();
    for (std::int64_t c = 0; c < c_out; ++c) om.row(c).array() += bv[static_cast<std::size_t>(c)];
  }

  Graph* g = common_graph({&input, &layer.kernel, &layer.bias});
  if (!g) return out;
  const bool need_input = input.grad_enabled();
  const bool need_kernel = layer.kernel.grad_enabled();
  const bool need_bias = layer.bias.grad_enabled();
  Tensor kd = layer.kernel.detached();
  const std::int64_t stride = layer.stride, padding = layer.padding;
  return g->record(
      std::move(out), {&input, &layer.kernel, &layer.bias},
      [col, kd, need_input, need_kernel, need_bias, c_out, c_in, k, h, w, h_out, w_out,
       stride, padding](const Tensor& up) {
        std::vector<Tensor> grads(3);
        CMapM um(up.data().data(), c_out, h_out * w_out);
        if (need_input) {
          Tensor g_col = Tensor::zeros({c_in * k * k, h_out * w_out});
          CMapM km(kd.data().data(), c_out, c_in * k * k);
          MapM gcm(g_col.mutable_data().data(), c_in * k * k, h_out * w_out);
          gcm.noalias() = km.transpose() * um;
          grads[0] = col2im(g_col, c_in, h, w, k, stride, padding, h_out, w_out);
        }
        if (need_kernel) {
          Tensor gk = Tensor::zeros({c_out, c_in, k, k});
          CMapM cm(col.data().data(), c_in * k * k, h_out * w_out);
          MapM gkm(gk.mutable_data().data(), c_out, c_in * k * k);
          gkm.noalias() = um * cm.transpose();
          grads[1] = std::move(gk);
        }
        if (need_bias) {
          Tensor gb = Tensor::zeros({c_out});
          auto gbv = gb.mutable_data();
          for (std::int64_t c = 0; c < c_out; ++c)
            gbv[static_cast<std::size_t>(c)] = um.row(c).sum();
          grads[2] = std::move(gb);
        }
        return grads;
      });
}

EntitySet vectorize_entities(const Tensor& feature_map, const ConvLayer& projection) {
  check_dim(projection.kernel.rank() == 4 && projection.kernel.dim(2) == 1 &&
                projection.kernel.dim(3) == 1,
            "vectorize_entities: projection must be a 1x1 convolution");
  check_param(projection.stride == 1 && projection.padding == 0,
              "vectorize_entities: projection must have stride 1 and no padding");
  Tensor projected = conv2d(feature_map, projection);
  const std::int64_t p = projected.dim(0);
  const std::int64_t n = projected.dim(1) * projected.dim(2);
  return transpose(reshape(projected, {p, n}));
}

std::int64_t backbone_entity_count(const BackboneSpec& spec) {
  std::int64_t h = spec.in_height, w = spec.in_width;
  for (const ConvStageSpec& s : spec.stages) {
    h = conv_output_extent(h, s.kernel, s.stride, s.padding);
    w = conv_output_extent(w, s.kernel, s.stride, s.padding);
    check_dim(h >= 1 && w >= 1, "backbone spec produces empty feature map");
  }
  return h * w;
}

EntitySet backbone_forward(const Tensor& image, const BackboneSpec& spec,
                           const BackboneWeights& weights) {
  check_dim(image.rank() == 3 && image.dim(0) == spec.in_channels &&
                image.dim(1) == spec.in_height && image.dim(2) == spec.in_width,
            "backbone_forward: image geometry does not match spec");
  check_dim(weights.stages.size() == spec.stages.size(),
            "backbone_forward: stage weight count does not match spec");
  Tensor x = image;
  for (const ConvLayer& stage : weights.stages) x = relu(conv2d(x, stage));
  return vectorize_entities(x, weights.projection);
}

}  // namespace hca
