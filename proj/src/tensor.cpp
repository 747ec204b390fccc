#include "hca/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <utility>

namespace hca {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;
using MapA = Eigen::Map<Eigen::ArrayXd>;
using CMapA = Eigen::Map<const Eigen::ArrayXd>;

CMapM mat(const Tensor& t) {
  return CMapM(t.data().data(), t.dim(0), t.dim(1));
}

MapM mat_mut(Tensor& t) {
  auto s = t.mutable_data();
  return MapM(s.data(), t.dim(0), t.dim(1));
}

CMapA arr(const Tensor& t) {
  return CMapA(t.data().data(), t.numel());
}

MapA arr_mut(Tensor& t) {
  auto s = t.mutable_data();
  return MapA(s.data(), t.numel());
}

// Rows x last-axis view used by the last-axis ops (softmax, layer_norm).
std::pair<std::int64_t, std::int64_t> rows_cols(const Tensor& t) {
  check_dim(t.rank() >= 1, "expected rank >= 1, got scalar");
  const std::int64_t cols = t.shape().back();
  return {t.numel() / cols, cols};
}

bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

// b broadcasts over the last axis of a 2-D a.
bool bias_broadcast(const Tensor& a, const Tensor& b) {
  return a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1);
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::ones(Shape shape) {
  return full(std::move(shape), 1.0);
}

Tensor Tensor::full(Shape shape, double value) {
  for (std::int64_t e : shape)
    check_dim(e > 0, "tensor extents must be positive, got " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(shape_numel(t.shape_)), value);
  return t;
}

Tensor Tensor::scalar(double value) {
  return full({}, value);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  check_dim(shape_numel(shape) == static_cast<std::int64_t>(values.size()),
            "value count " + std::to_string(values.size()) + " does not match shape " +
                shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values) {
  return from(std::move(shape), std::vector<double>(values));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : *t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, std::mt19937_64& rng) {
  check_param(lo <= hi, "uniform: lo > hi");
  Tensor t = zeros(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : *t.data_) v = dist(rng);
  return t;
}

std::int64_t Tensor::numel() const {
  return defined() ? static_cast<std::int64_t>(data_->size()) : 0;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  check_dim(axis < shape_.size(), "axis " + std::to_string(axis) + " out of range for shape " +
                                      shape_str(shape_));
  return shape_[axis];
}

std::span<const double> Tensor::data() const {
  check_contract(defined(), "use of undefined tensor");
  return {data_->data(), data_->size()};
}

std::span<double> Tensor::mutable_data() {
  check_contract(defined(), "use of undefined tensor");
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return {data_->data(), data_->size()};
}

double Tensor::value() const {
  check_contract(numel() == 1, "value() requires a one-element tensor, shape is " +
                                   shape_str(shape_));
  return (*data_)[0];
}

double Tensor::operator()(std::int64_t i) const {
  check_dim(rank() == 1 && i >= 0 && i < shape_[0], "bad 1-D index");
  return (*data_)[static_cast<std::size_t>(i)];
}

double Tensor::operator()(std::int64_t i, std::int64_t j) const {
  check_dim(rank() == 2 && i >= 0 && i < shape_[0] && j >= 0 && j < shape_[1],
            "bad 2-D index");
  return (*data_)[static_cast<std::size_t>(i * shape_[1] + j)];
}

bool Tensor::all_finite() const {
  if (!defined()) return false;
  for (double v : *data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.graph_ = nullptr;
  t.node_ = -1;
  return t;
}

// ---- Graph -----------------------------------------------------------------

Graph* common_graph(std::initializer_list<const Tensor*> ts) {
  Graph* g = nullptr;
  for (const Tensor* t : ts) {
    if (!t->grad_enabled()) continue;
    if (g == nullptr) g = t->graph();
    check_contract(g == t->graph(), "operands belong to different graphs");
  }
  return g;
}

Tensor Graph::parameter(const Tensor& value) {
  check_contract(value.defined(), "parameter: undefined tensor");
  Tensor t = value.detached();
  t.graph_ = this;
  t.node_ = node_count();
  nodes_.push_back(Node{{}, nullptr, t.shape(), true});
  return t;
}

Tensor Graph::record(Tensor value, const std::vector<const Tensor*>& parents, Vjp vjp) {
  Node node;
  node.shape = value.shape();
  for (const Tensor* p : parents) {
    const bool tracked = p->grad_enabled() && p->graph() == this;
    node.parents.push_back(tracked ? p->node() : -1);
  }
  node.vjp = std::move(vjp);
  value.graph_ = this;
  value.node_ = node_count();
  nodes_.push_back(std::move(node));
  return value;
}

GradientMap Graph::backward(const Tensor& output) {
  check_contract(output.graph() == this, "backward: output not recorded on this graph");
  check_contract(output.numel() == 1, "backward: output must be scalar, shape is " +
                                          shape_str(output.shape()));
  std::vector<Tensor> grads(nodes_.size());
  grads[static_cast<std::size_t>(output.node())] = Tensor::ones(output.shape());

  for (std::int64_t i = output.node(); i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    if (!grads[ui].defined() || !nodes_[ui].vjp) continue;
    std::vector<Tensor> parent_grads = nodes_[ui].vjp(grads[ui]);
    check_internal(parent_grads.size() == nodes_[ui].parents.size(),
                   "vjp returned wrong arity");
    for (std::size_t j = 0; j < parent_grads.size(); ++j) {
      const std::int64_t pid = nodes_[ui].parents[j];
      if (pid < 0 || !parent_grads[j].defined()) continue;
      const auto upid = static_cast<std::size_t>(pid);
      check_internal(parent_grads[j].shape() == nodes_[upid].shape,
                     "gradient shape mismatch against node value shape");
      if (grads[upid].defined()) {
        arr_mut(grads[upid]) += arr(parent_grads[j]);
      } else {
        grads[upid] = std::move(parent_grads[j]);
      }
    }
    if (!nodes_[ui].leaf) grads[ui] = Tensor();  // free as soon as consumed
  }

  GradientMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].leaf) continue;
    out.by_node_[static_cast<std::int64_t>(i)] =
        grads[i].defined() ? std::move(grads[i]) : Tensor::zeros(nodes_[i].shape);
  }
  return out;
}

const Tensor& GradientMap::at(const Tensor& leaf) const {
  return at_node(leaf.node());
}

const Tensor& GradientMap::at_node(std::int64_t node_id) const {
  auto it = by_node_.find(node_id);
  check_contract(it != by_node_.end(),
                 "no gradient for node " + std::to_string(node_id));
  return it->second;
}

bool GradientMap::contains(const Tensor& leaf) const {
  return by_node_.count(leaf.node()) > 0;
}

// ---- Operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_dim(a.rank() == 2 && b.rank() == 2,
            "matmul: 2-D operands required, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
  check_dim(a.dim(1) == b.dim(0), "matmul: inner extents differ, " + shape_str(a.shape()) +
                                      " x " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({a.dim(0), b.dim(1)});
  mat_mut(out).noalias() = mat(a) * mat(b);

  Graph* g = common_graph({&a, &b});
  if (!g) return out;
  const bool need_a = a.grad_enabled(), need_b = b.grad_enabled();
  Tensor ad = a.detached(), bd = b.detached();
  return g->record(std::move(out), {&a, &b}, [ad, bd, need_a, need_b](const Tensor& up) {
    std::vector<Tensor> grads(2);
    if (need_a) {
      Tensor ga = Tensor::zeros(ad.shape());
      mat_mut(ga).noalias() = mat(up) * mat(bd).transpose();
      grads[0] = std::move(ga);
    }
    if (need_b) {
      Tensor gb = Tensor::zeros(bd.shape());
      mat_mut(gb).noalias() = mat(ad).transpose() * mat(up);
      grads[1] = std::move(gb);
    }
    return grads;
  });
}

namespace {

enum class EwKind { Add, Sub, Mul };

Tensor elementwise(const Tensor& a, const Tensor& b, EwKind kind) {
  const bool broadcast = bias_broadcast(a, b);
  check_dim(same_shape(a, b) || broadcast,
            "elementwise: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                " are incompatible");
  Tensor out = Tensor::zeros(a.shape());
  if (!broadcast) {
    switch (kind) {
      case EwKind::Add: arr_mut(out) = arr(a) + arr(b); break;
      case EwKind::Sub: arr_mut(out) = arr(a) - arr(b); break;
      case EwKind::Mul: arr_mut(out) = arr(a) * arr(b); break;
    }
  } else {
    const std::int64_t rows = a.dim(0), cols = a.dim(1);
    auto ov = out.mutable_data();
    auto av = a.data();
    auto bv = b.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < cols; ++j) {
        const auto idx = static_cast<std::size_t>(r * cols + j);
        const auto jb = static_cast<std::size_t>(j);
        switch (kind) {
          case EwKind::Add: ov[idx] = av[idx] + bv[jb]; break;
          case EwKind::Sub: ov[idx] = av[idx] - bv[jb]; break;
          case EwKind::Mul: ov[idx] = av[idx] * bv[jb]; break;
        }
      }
  }

  Graph* g = common_graph({&a, &b});
  if (!g) return out;
  const bool need_a = a.grad_enabled(), need_b = b.grad_enabled();
  Tensor ad = a.detached(), bd = b.detached();
  return g->record(std::move(out), {&a, &b},
                   [ad, bd, need_a, need_b, broadcast, kind](const Tensor& up) {
    std::vector<Tensor> grads(2);
    if (need_a) {
      Tensor ga = Tensor::zeros(ad.shape());
      if (kind == EwKind::Mul) {
        if (!broadcast) {
          arr_mut(ga) = arr(up) * arr(bd);
        } else {
          const std::int64_t rows = ad.dim(0), cols = ad.dim(1);
          auto gv = ga.mutable_data();
          auto uv = up.data();
          auto bv = bd.data();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < cols; ++j)
              gv[static_cast<std::size_t>(r * cols + j)] =
                  uv[static_cast<std::size_t>(r * cols + j)] * bv[static_cast<std::size_t>(j)];
        }
      } else {
        arr_mut(ga) = arr(up);
      }
      grads[0] = std::move(ga);
    }
    if (need_b) {
      Tensor gb = Tensor::zeros(bd.shape());
      if (!broadcast) {
        switch (kind) {
          case EwKind::Add: arr_mut(gb) = arr(up); break;
          case EwKind::Sub: arr_mut(gb) = -arr(up); break;
          case EwKind::Mul: arr_mut(gb) = arr(up) * arr(ad); break;
        }
      } else {
        const std::int64_t rows = ad.dim(0), cols = ad.dim(1);
        auto gv = gb.mutable_data();
        auto uv = up.data();
        auto av = ad.data();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < cols; ++j) {
            const auto idx = static_cast<std::size_t>(r * cols + j);
            const auto jb = static_cast<std::size_t>(j);
            switch (kind) {
              case EwKind::Add: gv[jb] += uv[idx]; break;
              case EwKind::Sub: gv[jb] -= uv[idx]; break;
              case EwKind::Mul: gv[jb] += uv[idx] * av[idx]; break;
            }
          }
      }
      grads[1] = std::move(gb);
    }
    return grads;
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwKind::Mul); }

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  arr_mut(out) = arr(a) * c;
  Graph* g = common_graph({&a});
  if (!g) return out;
  return g->record(std::move(out), {&a}, [c](const Tensor& up) {
    Tensor ga = Tensor::zeros(up.shape());
    arr_mut(ga) = arr(up) * c;
    return std::vector<Tensor>{std::move(ga)};
  });
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  arr_mut(out) = arr(a).max(0.0);
  Graph* g = common_graph({&a});
  if (!g) return out;
  Tensor ad = a.detached();
  return g->record(std::move(out), {&a}, [ad](const Tensor& up) {
    Tensor ga = Tensor::zeros(ad.shape());
    arr_mut(ga) = (arr(ad) > 0.0).select(arr(up), 0.0);
    return std::vector<Tensor>{std::move(ga)};
  });
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  {
    auto ov = out.mutable_data();
    auto av = a.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = 1.0 / (1.0 + std::exp(-av[i]));
  }
  Graph* g = common_graph({&a});
  if (!g) return out;
  Tensor od = out.detached();
  return g->record(std::move(out), {&a}, [od](const Tensor& up) {
    Tensor ga = Tensor::zeros(od.shape());
    arr_mut(ga) = arr(up) * arr(od) * (1.0 - arr(od));
    return std::vector<Tensor>{std::move(ga)};
  });
}

Tensor transpose(const Tensor& a) {
  check_dim(a.rank() == 2, "transpose: 2-D tensor required, got " + shape_str(a.shape()));
  Tensor out = Tensor::zeros({a.dim(1), a.dim(0)});
  mat_mut(out) = mat(a).transpose();
  Graph* g = common_graph({&a});
  if (!g) return out;
  return g->record(std::move(out), {&a}, [](const Tensor& up) {
    return std::vector<Tensor>{transpose(up)};
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  check_param(!parts.empty(), "concat: empty list");
  const std::size_t rank = parts[0].rank();
  check_dim(rank >= 1 && rank <= 2, "concat: rank-1 or rank-2 tensors required");
  check_param(axis >= 0 && axis < static_cast<int>(rank), "concat: bad axis");
  std::int64_t total = 0;
  for (const Tensor& p : parts) {
    check_dim(p.rank() == rank, "concat: mixed ranks");
    for (std::size_t d = 0; d < rank; ++d)
      check_dim(static_cast<int>(d) == axis || p.dim(d) == parts[0].dim(d),
                "concat: extents differ off the concat axis");
    total += p.dim(static_cast<std::size_t>(axis));
  }

  Shape out_shape = parts[0].shape();
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor out = Tensor::zeros(out_shape);
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  if (rank == 1 || axis == 0) {
    auto ov = out.mutable_data();
    std::size_t pos = 0;
    for (const Tensor& p : parts) {
      offsets.push_back(off);
      off += p.dim(static_cast<std::size_t>(axis));
      auto pv = p.data();
      std::copy(pv.begin(), pv.end(), ov.begin() + static_cast<std::ptrdiff_t>(pos));
      pos += pv.size();
    }
  } else {
    auto om = mat_mut(out);
    for (const Tensor& p : parts) {
      offsets.push_back(off);
      om.middleCols(off, p.dim(1)) = mat(p);
      off += p.dim(1);
    }
  }

  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Graph* g = nullptr;
  for (const Tensor& p : parts) {
    Graph* pg = common_graph({&p});
    if (pg) {
      check_contract(g == nullptr || g == pg, "operands belong to different graphs");
      g = pg;
    }
  }
  if (!g) return out;
  std::vector<Shape> shapes;
  for (const Tensor& p : parts) shapes.push_back(p.shape());
  return g->record(std::move(out), ptrs, [shapes, offsets, axis, rank](const Tensor& up) {
    std::vector<Tensor> grads(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      Tensor gi = Tensor::zeros(shapes[i]);
      if (rank == 1 || axis == 0) {
        auto uv = up.data();
        auto gv = gi.mutable_data();
        const std::int64_t start = offsets[i] * (rank == 2 ? shapes[i][1] : 1);
        std::copy(uv.begin() + start, uv.begin() + start + gi.numel(), gv.begin());
      } else {
        mat_mut(gi) = mat(up).middleCols(offsets[i], shapes[i][1]);
      }
      grads[i] = std::move(gi);
    }
    return grads;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_dim(shape_numel(shape) == a.numel(), "reshape: element count mismatch, " +
                                                 shape_str(a.shape()) + " -> " +
                                                 shape_str(shape));
  Tensor out = Tensor::from(std::move(shape),
                            std::vector<double>(a.data().begin(), a.data().end()));
  Graph* g = common_graph({&a});
  if (!g) return out;
  Shape orig = a.shape();
  return g->record(std::move(out), {&a}, [orig](const Tensor& up) {
    return std::vector<Tensor>{reshape(up, orig)};
  });
}

Tensor mean(const Tensor& a) {
  check_param(a.numel() > 0, "mean: empty tensor");
  Tensor out = Tensor::scalar(arr(a).mean());
  Graph* g = common_graph({&a});
  if (!g) return out;
  Shape orig = a.shape();
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  return g->record(std::move(out), {&a}, [orig, inv_n](const Tensor& up) {
    return std::vector<Tensor>{Tensor::full(orig, up.value() * inv_n)};
  });
}

Tensor mean(const Tensor& a, int axis) {
  check_dim(a.rank() == 2, "mean(axis): 2-D tensor required");
  check_param(axis == 0 || axis == 1, "mean(axis): axis must be 0 or 1");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::zeros({axis == 0 ? n : m});
  {
    auto ov = out.mutable_data();
    MapA om(ov.data(), out.numel());
    if (axis == 0)
      om = mat(a).colwise().mean().array();
    else
      om = mat(a).rowwise().mean().array();
  }
  Graph* g = common_graph({&a});
  if (!g) return out;
  return g->record(std::move(out), {&a}, [m, n, axis](const Tensor& up) {
    Tensor ga = Tensor::zeros({m, n});
    auto gv = ga.mutable_data();
    auto uv = up.data();
    const double inv = 1.0 / static_cast<double>(axis == 0 ? m : n);
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        gv[static_cast<std::size_t>(i * n + j)] =
            uv[static_cast<std::size_t>(axis == 0 ? j : i)] * inv;
    return std::vector<Tensor>{std::move(ga)};
  });
}

Tensor softmax(const Tensor& x, double temperature) {
  check_param(temperature > 0.0, "softmax: temperature must be positive");
  check_param(x.all_finite(), "softmax: input must be finite");
  auto [rows, cols] = rows_cols(x);
  Tensor out = Tensor::zeros(x.shape());
  {
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xi = xv.data() + r * cols;
      double* oi = ov.data() + r * cols;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < cols; ++j) mx = std::max(mx, xi[j] / temperature);
      double sum = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) {
        oi[j] = std::exp(xi[j] / temperature - mx);
        sum += oi[j];
      }
      for (std::int64_t j = 0; j < cols; ++j) oi[j] /= sum;
    }
  }
  Graph* g = common_graph({&x});
  if (!g) return out;
  Tensor od = out.detached();
  return g->record(std::move(out), {&x}, [od, temperature, rows, cols](const Tensor& up) {
    Tensor gx = Tensor::zeros(od.shape());
    auto gv = gx.mutable_data();
    auto yv = od.data();
    auto uv = up.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* y = yv.data() + r * cols;
      const double* u = uv.data() + r * cols;
      double* gr = gv.data() + r * cols;
      double dot = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) dot += u[j] * y[j];
      for (std::int64_t j = 0; j < cols; ++j) gr[j] = y[j] * (u[j] - dot) / temperature;
    }
    return std::vector<Tensor>{std::move(gx)};
  });
}

Tensor lse(double beta, const Tensor& v) {
  check_param(beta > 0.0, "lse: beta must be positive");
  check_param(v.defined() && v.numel() > 0, "lse: empty input");
  check_dim(v.rank() == 1, "lse: 1-D tensor required, got " + shape_str(v.shape()));
  const std::int64_t n = v.numel();
  auto vv = v.data();
  const double mx = *std::max_element(vv.begin(), vv.end());
  double sum = 0.0;
  std::vector<double> w(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(beta * (vv[i] - mx));
    sum += w[static_cast<std::size_t>(i)];
  }
  for (double& wi : w) wi /= sum;
  Tensor out = Tensor::scalar(mx + std::log(sum) / beta);

  Graph* g = common_graph({&v});
  if (!g) return out;
  Tensor weights = Tensor::from({n}, std::move(w));
  return g->record(std::move(out), {&v}, [weights](const Tensor& up) {
    Tensor gv = Tensor::zeros(weights.shape());
    arr_mut(gv) = arr(weights) * up.value();
    return std::vector<Tensor>{std::move(gv)};
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  auto [rows, cols] = rows_cols(x);
  check_dim(gain.rank() == 1 && gain.dim(0) == cols && bias.rank() == 1 &&
                bias.dim(0) == cols,
            "layer_norm: gain/bias must be 1-D of the last-axis extent");
  check_param(eps > 0.0, "layer_norm: eps must be positive");

  Tensor out = Tensor::zeros(x.shape());
  Tensor xhat = Tensor::zeros(x.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  {
    auto xv = x.data();
    auto ov = out.mutable_data();
    auto hv = xhat.mutable_data();
    auto gv = gain.data();
    auto bv = bias.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xi = xv.data() + r * cols;
      double mu = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) mu += xi[j];
      mu /= static_cast<double>(cols);
      double var = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) var += (xi[j] - mu) * (xi[j] - mu);
      var /= static_cast<double>(cols);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<std::size_t>(r)] = inv;
      for (std::int64_t j = 0; j < cols; ++j) {
        const double h = (xi[j] - mu) * inv;
        hv[static_cast<std::size_t>(r * cols + j)] = h;
        ov[static_cast<std::size_t>(r * cols + j)] = gv[static_cast<std::size_t>(j)] * h +
                                                     bv[static_cast<std::size_t>(j)];
      }
    }
  }

  Graph* g = common_graph({&x, &gain, &bias});
  if (!g) return out;
  const bool need_x = x.grad_enabled(), need_g = gain.grad_enabled(),
             need_b = bias.grad_enabled();
  Tensor gaind = gain.detached();
  Tensor xhatd = xhat.detached();
  return g->record(std::move(out), {&x, &gain, &bias},
                   [gaind, xhatd, inv_std, rows, cols, need_x, need_g,
                    need_b](const Tensor& up) {
    std::vector<Tensor> grads(3);
    auto uv = up.data();
    auto hv = xhatd.data();
    auto gv = gaind.data();
    if (need_x) {
      Tensor gx = Tensor::zeros(xhatd.shape());
      auto gxv = gx.mutable_data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* u = uv.data() + r * cols;
        const double* h = hv.data() + r * cols;
        double* o = gxv.data() + r * cols;
        double sum_gy = 0.0, sum_gyh = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
          const double gy = u[j] * gv[static_cast<std::size_t>(j)];
          sum_gy += gy;
          sum_gyh += gy * h[j];
        }
        const double inv = inv_std[static_cast<std::size_t>(r)];
        const double cinv = 1.0 / static_cast<double>(cols);
        for (std::int64_t j = 0; j < cols; ++j) {
          const double gy = u[j] * gv[static_cast<std::size_t>(j)];
          o[j] = inv * (gy - cinv * sum_gy - h[j] * cinv * sum_gyh);
        }
      }
      grads[0] = std::move(gx);
    }
    if (need_g) {
      Tensor gg = Tensor::zeros({cols});
      auto ggv = gg.mutable_data();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < cols; ++j)
          ggv[static_cast<std::size_t>(j)] += uv[static_cast<std::size_t>(r * cols + j)] *
                                              hv[static_cast<std::size_t>(r * cols + j)];
      grads[1] = std::move(gg);
    }
    if (need_b) {
      Tensor gb = Tensor::zeros({cols});
      auto gbv = gb.mutable_data();
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < cols; ++j)
          gbv[static_cast<std::size_t>(j)] += uv[static_cast<std::size_t>(r * cols + j)];
      grads[2] = std::move(gb);
    }
    return grads;
  });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  check_param(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor mask = Tensor::zeros(x.shape());
  {
    auto mv = mask.mutable_data();
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (double& m : mv) m = dist(rng) >= rate ? keep_scale : 0.0;
  }
  Tensor out = Tensor::zeros(x.shape());
  arr_mut(out) = arr(x) * arr(mask);
  Graph* g = common_graph({&x});
  if (!g) return out;
  return g->record(std::move(out), {&x}, [mask](const Tensor& up) {
    Tensor gx = Tensor::zeros(mask.shape());
    arr_mut(gx) = arr(up) * arr(mask);
    return std::vector<Tensor>{std::move(gx)};
  });
}

Tensor take_rows(const Tensor& t, std::int64_t n) {
  check_contract(!t.grad_enabled(), "take_rows: fixed tables only");
  check_dim(t.rank() == 2, "take_rows: 2-D tensor required");
  check_dim(n >= 1 && n <= t.dim(0), "take_rows: row count out of range");
  auto tv = t.data();
  return Tensor::from({n, t.dim(1)},
                      std::vector<double>(tv.begin(), tv.begin() + n * t.dim(1)));
}

// ---- Gradient checking -----------------------------------------------------

double grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f, const Tensor& x,
                  double step) {
  std::mt19937_64 rng(0);
  return grad_check(f, x, step, 0, rng);
}

double grad_check(const std::function<Tensor(Graph&, const Tensor&)>& f, const Tensor& x,
                  double step, std::int64_t max_coords, std::mt19937_64& rng) {
  check_param(step > 0.0, "grad_check: step must be positive");

  auto eval = [&f](const Tensor& at) {
    Graph g;
    Tensor out = f(g, g.parameter(at));
    check_contract(out.numel() == 1, "grad_check: f must be scalar-valued");
    return out.value();
  };

  const double v1 = eval(x);
  const double v2 = eval(x);
  check_contract(v1 == v2, "grad_check: f is not deterministic");

  Graph g;
  Tensor leaf = g.parameter(x);
  Tensor out = f(g, leaf);
  check_contract(out.numel() == 1, "grad_check: f must be scalar-valued");
  GradientMap gm = g.backward(out);
  const Tensor& analytic = gm.at(leaf);

  std::vector<std::int64_t> coords(static_cast<std::size_t>(x.numel()));
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coords > 0 && max_coords < x.numel()) {
    // Partial Fisher-Yates: the first max_coords entries become the sample.
    for (std::int64_t i = 0; i < max_coords; ++i) {
      std::uniform_int_distribution<std::int64_t> pick(i, x.numel() - 1);
      std::swap(coords[static_cast<std::size_t>(i)],
                coords[static_cast<std::size_t>(pick(rng))]);
    }
    coords.resize(static_cast<std::size_t>(max_coords));
  }

  std::vector<double> base(x.data().begin(), x.data().end());
  double max_err = 0.0;
  for (std::int64_t i : coords) {
    std::vector<double> xp = base, xm = base;
    xp[static_cast<std::size_t>(i)] += step;
    xm[static_cast<std::size_t>(i)] -= step;
    const double fp = eval(Tensor::from(x.shape(), std::move(xp)));
    const double fm = eval(Tensor::from(x.shape(), std::move(xm)));
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic.data()[static_cast<std::size_t>(i)];
    const double err =
        std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace hca
