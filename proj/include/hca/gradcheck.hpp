#pragma once

#include <string>
#include <vector>

#include "hca/model.hpp"

namespace hca {

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
};

// Central-difference checks for every differentiable primitive, taking the
// max over input slots. Deterministic; inputs are kept away from relu and
// smooth-L1 kinks where one-sided derivatives would poison the comparison.
std::vector<GradCheckEntry> primitive_grad_checks();

// Full-model check: analytic gradients of loss(model(image)) against central
// differences on `coords_per_tensor` sampled coordinates of every weight.
// Dropout must be off in the spec.
double model_grad_check(const Checkpoint& ckpt, const Tensor& image, const Tensor& target,
                        double step, int coords_per_tensor, std::mt19937_64& rng);

// primitive_grad_checks plus full HCT and HCH models derived from base_spec
// (severity head, dropout forced to zero).
std::vector<GradCheckEntry> gradient_check_suite(const ModelSpec& base_spec);

}  // namespace hca
