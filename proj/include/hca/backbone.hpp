#pragma once

#include <cstdint>
#include <vector>

#include "hca/attention.hpp"
#include "hca/tensor.hpp"

namespace hca {

// One convolution: kernel is c_out x c_in x k x k, cross-correlation with
// stride and zero padding.
struct ConvLayer {
  Tensor kernel;
  Tensor bias;  // c_out
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

struct ConvStageSpec {
  std::int64_t channels = 8;
  std::int64_t kernel = 3;
  std::int64_t stride = 2;
  std::int64_t padding = 1;
};

// Small configurable convolutional backbone: stages of conv+relu, then a 1x1
// projection to p channels whose spatial positions become the entities.
struct BackboneSpec {
  std::vector<ConvStageSpec> stages;
  std::int64_t projection_channels = 64;  // p, the entity dimension
  std::int64_t in_channels = 1;
  std::int64_t in_height = 32;
  std::int64_t in_width = 32;
};

struct BackboneWeights {
  std::vector<ConvLayer> stages;
  ConvLayer projection;  // 1x1, c_last -> p
};

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding);

// input: c_in x h x w feature map. Output geometry follows
// floor((in + 2 pad - k) / stride) + 1 per spatial axis.
Tensor conv2d(const Tensor& input, const ConvLayer& layer);

// 1x1 projection, then row-major flattening of spatial positions: entity i is
// the p-vector at spatial location i, so n = h_out * w_out.
EntitySet vectorize_entities(const Tensor& feature_map, const ConvLayer& projection);

// Entity count produced by a spec (needed to size the position table).
std::int64_t backbone_entity_count(const BackboneSpec& spec);

EntitySet backbone_forward(const Tensor& image, const BackboneSpec& spec,
                           const BackboneWeights& weights);

}  // namespace hca
