#include "credence/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace credence {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using ArrX = Eigen::Array<float, Eigen::Dynamic, 1>;
using MapA = Eigen::Map<ArrX>;
using CMapA = Eigen::Map<const ArrX>;

MapA grad_of(const TensorImplPtr& p) {
  p->ensure_grad();
  return MapA(p->grad.data(), static_cast<Eigen::Index>(p->grad.size()));
}

CMapA arr(const std::vector<float>& v) {
  return CMapA(v.data(), static_cast<Eigen::Index>(v.size()));
}

Tensor op_result(Shape shape, std::vector<float> data, const char* op,
                 std::initializer_list<Tensor> inputs,
                 std::function<void(const TensorImpl&)> backward_fn) {
  bool track = grad_enabled();
  bool any_grad = false;
  if (track) {
    for (const Tensor& t : inputs) any_grad = any_grad || t.requires_grad();
  }
  Tensor out = Tensor::from_data(std::move(shape), std::move(data), false);
  if (track && any_grad) {
    out.impl()->requires_grad = true;
    out.impl()->op = op;
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) out.impl()->parents.push_back(t.impl());
    }
    out.impl()->backward_fn = std::move(backward_fn);
  }
  return out;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<float> out(a.data().size());
  MapA(out.data(), out.size()) = arr(a.data()) + arr(b.data());
  return op_result(a.shape(), std::move(out), "add", {a, b},
                   [a, b](const TensorImpl& self) {
                     if (a.requires_grad()) grad_of(a.impl()) += arr(self.grad);
                     if (b.requires_grad()) grad_of(b.impl()) += arr(self.grad);
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<float> out(a.data().size());
  MapA(out.data(), out.size()) = arr(a.data()) - arr(b.data());
  return op_result(a.shape(), std::move(out), "sub", {a, b},
                   [a, b](const TensorImpl& self) {
                     if (a.requires_grad()) grad_of(a.impl()) += arr(self.grad);
                     if (b.requires_grad()) grad_of(b.impl()) -= arr(self.grad);
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<float> out(a.data().size());
  MapA(out.data(), out.size()) = arr(a.data()) * arr(b.data());
  return op_result(a.shape(), std::move(out), "mul", {a, b},
                   [a, b](const TensorImpl& self) {
                     if (a.requires_grad())
                       grad_of(a.impl()) += arr(self.grad) * arr(b.data());
                     if (b.requires_grad())
                       grad_of(b.impl()) += arr(self.grad) * arr(a.data());
                   });
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.data().size());
  MapA(out.data(), out.size()) = arr(a.data()) * s;
  return op_result(a.shape(), std::move(out), "scale", {a},
                   [a, s](const TensorImpl& self) {
                     if (a.requires_grad())
                       grad_of(a.impl()) += arr(self.grad) * s;
                   });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
    throw std::invalid_argument("add_bias: bias " +
                                shape_to_string(bias.shape()) +
                                " does not match last axis of " +
                                shape_to_string(x.shape()));
  }
  const std::int64_t h = bias.dim(0);
  const std::int64_t rows = x.size() / h;
  std::vector<float> out(x.data().size());
  CMapM xm(x.data().data(), rows, h);
  MapM om(out.data(), rows, h);
  CMapA bm(bias.data().data(), h);
  om = xm.array().rowwise() + bm.transpose();
  return op_result(
      x.shape(), std::move(out), "add_bias", {x, bias},
      [x, bias, rows, h](const TensorImpl& self) {
        CMapM gm(self.grad.data(), rows, h);
        if (x.requires_grad()) {
          x.impl()->ensure_grad();
          MapM(x.impl()->grad.data(), rows, h) += gm;
        }
        if (bias.requires_grad()) {
          bias.impl()->ensure_grad();
          MapA(bias.impl()->grad.data(), h) += gm.colwise().sum().transpose().array();
        }
      });
}

Tensor sum(const Tensor& x) {
  float total = arr(x.data()).sum();
  return op_result({1}, {total}, "sum", {x}, [x](const TensorImpl& self) {
    if (x.requires_grad()) grad_of(x.impl()) += self.grad[0];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_to_string(a.shape()) + " x " +
                                shape_to_string(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(static_cast<std::size_t>(m * n));
  CMapM am(a.data().data(), m, k);
  CMapM bm(b.data().data(), k, n);
  MapM(out.data(), m, n).noalias() = am * bm;
  return op_result(
      {m, n}, std::move(out), "matmul", {a, b},
      [a, b, m, k, n](const TensorImpl& self) {
        CMapM gm(self.grad.data(), m, n);
        CMapM am(a.data().data(), m, k);
        CMapM bm(b.data().data(), k, n);
        if (a.requires_grad()) {
          a.impl()->ensure_grad();
          MapM(a.impl()->grad.data(), m, k).noalias() += gm * bm.transpose();
        }
        if (b.requires_grad()) {
          b.impl()->ensure_grad();
          MapM(b.impl()->grad.data(), k, n).noalias() += am.transpose() * gm;
        }
      });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) ||
      a.dim(2) != b.dim(1)) {
    throw std::invalid_argument("bmm: incompatible shapes " +
                                shape_to_string(a.shape()) + " x " +
                                shape_to_string(b.shape()));
  }
  const std::int64_t nb = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<float> out(static_cast<std::size_t>(nb * m * n));
  for (std::int64_t i = 0; i < nb; ++i) {
    CMapM am(a.data().data() + i * m * k, m, k);
    CMapM bm(b.data().data() + i * k * n, k, n);
    MapM(out.data() + i * m * n, m, n).noalias() = am * bm;
  }
  return op_result(
      {nb, m, n}, std::move(out), "bmm", {a, b},
      [a, b, nb, m, k, n](const TensorImpl& self) {
        if (a.requires_grad()) a.impl()->ensure_grad();
        if (b.requires_grad()) b.impl()->ensure_grad();
        for (std::int64_t i = 0; i < nb; ++i) {
          CMapM gm(self.grad.data() + i * m * n, m, n);
          CMapM am(a.data().data() + i * m * k, m, k);
          CMapM bm(b.data().data() + i * k * n, k, n);
          if (a.requires_grad()) {
            MapM(a.impl()->grad.data() + i * m * k, m, k).noalias() +=
                gm * bm.transpose();
          }
          if (b.requires_grad()) {
            MapM(b.impl()->grad.data() + i * k * n, k, n).noalias() +=
                am.transpose() * gm;
          }
        }
      });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel(new_shape) != x.size()) {
    throw std::invalid_argument("reshape: cannot view " +
                                shape_to_string(x.shape()) + " as " +
                                shape_to_string(new_shape));
  }
  std::vector<float> out = x.data();
  return op_result(std::move(new_shape), std::move(out), "reshape", {x},
                   [x](const TensorImpl& self) {
                     if (x.requires_grad())
                       grad_of(x.impl()) += arr(self.grad);
                   });
}

namespace {

// dst[i_out] = src[map(i_out)] with out_shape[d] = src_shape[dims[d]].
void permute_copy(const float* src, const Shape& src_shape,
                  const std::vector<std::size_t>& dims, float* dst,
                  bool accumulate) {
  const std::size_t r = src_shape.size();
  Shape out_shape(r);
  for (std::size_t d = 0; d < r; ++d) out_shape[d] = src_shape[dims[d]];
  std::vector<std::int64_t> src_strides(r, 1);
  for (std::size_t d = r - 1; d > 0; --d)
    src_strides[d - 1] = src_strides[d] * src_shape[d];
  std::vector<std::int64_t> idx(r, 0);
  const std::int64_t total = numel(src_shape);
  for (std::int64_t flat = 0; flat < total; ++flat) {
    std::int64_t src_flat = 0;
    for (std::size_t d = 0; d < r; ++d) src_flat += idx[d] * src_strides[dims[d]];
    if (accumulate) {
      dst[flat] += src[src_flat];
    } else {
      dst[flat] = src[src_flat];
    }
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& dims) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  bool valid = dims.size() == r;
  for (std::size_t d : dims) {
    if (!valid || d >= r || seen[d]) {
      valid = false;
      break;
    }
    seen[d] = true;
  }
  if (!valid) {
    throw std::invalid_argument("permute: invalid axis order for rank " +
                                std::to_string(r));
  }
  Shape out_shape(r);
  for (std::size_t d = 0; d < r; ++d) out_shape[d] = x.dim(dims[d]);
  std::vector<float> out(x.data().size());
  permute_copy(x.data().data(), x.shape(), dims, out.data(), false);
  return op_result(
      std::move(out_shape), std::move(out), "permute", {x},
      [x, dims](const TensorImpl& self) {
        if (!x.requires_grad()) return;
        std::vector<std::size_t> inv(dims.size());
        for (std::size_t d = 0; d < dims.size(); ++d) inv[dims[d]] = d;
        x.impl()->ensure_grad();
        permute_copy(self.grad.data(), self.shape, inv,
                     x.impl()->grad.data(), true);
      });
}

Tensor gather_rows(const Tensor& table, const Tensor& ids) {
  if (table.rank() != 2) {
    throw std::invalid_argument("gather_rows: table must be rank 2, got " +
                                shape_to_string(table.shape()));
  }
  if (ids.rank() != 1 && ids.rank() != 2) {
    throw std::invalid_argument("gather_rows: ids must be rank 1 or 2, got " +
                                shape_to_string(ids.shape()));
  }
  const std::int64_t v = table.dim(0), h = table.dim(1);
  const std::int64_t n = ids.size();
  std::vector<std::int64_t> rows(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t id = std::llround(ids.data()[i]);
    if (id < 0 || id >= v) {
      throw std::invalid_argument("gather_rows: id " + std::to_string(id) +
                                  " out of range [0," + std::to_string(v) +
                                  ")");
    }
    rows[i] = id;
  }
  Shape out_shape = ids.shape();
  out_shape.push_back(h);
  std::vector<float> out(static_cast<std::size_t>(n * h));
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(table.data().data() + rows[i] * h, h, out.data() + i * h);
  }
  return op_result(std::move(out_shape), std::move(out), "gather_rows",
                   {table},
                   [table, rows, n, h](const TensorImpl& self) {
                     if (!table.requires_grad()) return;
                     table.impl()->ensure_grad();
                     float* g = table.impl()->grad.data();
                     for (std::int64_t i = 0; i < n; ++i) {
                       MapA(g + rows[i] * h, h) +=
                           CMapA(self.grad.data() + i * h, h);
                     }
                   });
}

namespace {

Tensor softmax_last(const Tensor& x) {
  const std::int64_t h = x.shape().back();
  const std::int64_t rows = x.size() / h;
  std::vector<float> out(x.data().size());
  for (std::int64_t r = 0; r < rows; ++r) {
    CMapA xi(x.data().data() + r * h, h);
    MapA yi(out.data() + r * h, h);
    float mx = xi.maxCoeff();
    yi = (xi - mx).exp();
    yi /= yi.sum();
  }
  return op_result(
      x.shape(), std::move(out), "softmax", {x},
      [x, rows, h](const TensorImpl& self) {
        if (!x.requires_grad()) return;
        x.impl()->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          CMapA y(self.data.data() + r * h, h);
          CMapA gy(self.grad.data() + r * h, h);
          float dot = (gy * y).sum();
          MapA(x.impl()->grad.data() + r * h, h) += y * (gy - dot);
        }
      });
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::invalid_argument("softmax: axis out of range for rank " +
                                std::to_string(r));
  }
  if (axis == r - 1) return softmax_last(x);
  std::vector<std::size_t> perm(static_cast<std::size_t>(r));
  for (int d = 0; d < r; ++d) perm[d] = static_cast<std::size_t>(d);
  std::swap(perm[axis], perm[r - 1]);
  // A single swap is its own inverse.
  return permute(softmax_last(permute(x, perm)), perm);
}

Tensor add_key_mask(const Tensor& scores, const Tensor& mask,
                    std::int64_t num_heads) {
  if (scores.rank() != 3 || mask.rank() != 2 ||
      scores.dim(0) != mask.dim(0) * num_heads ||
      scores.dim(2) != mask.dim(1)) {
    throw std::invalid_argument(
        "add_key_mask: scores " + shape_to_string(scores.shape()) +
        " incompatible with mask " + shape_to_string(mask.shape()) + " and " +
        std::to_string(num_heads) + " heads");
  }
  const std::int64_t ba = scores.dim(0), tq = scores.dim(1), tk = scores.dim(2);
  std::vector<float> out = scores.data();
  for (std::int64_t i = 0; i < ba; ++i) {
    const float* mrow = mask.data().data() + (i / num_heads) * tk;
    for (std::int64_t q = 0; q < tq; ++q) {
      float* row = out.data() + (i * tq + q) * tk;
      for (std::int64_t k = 0; k < tk; ++k) {
        if (mrow[k] == 0.0f) row[k] += -1e9f;
      }
    }
  }
  return op_result(scores.shape(), std::move(out), "add_key_mask", {scores},
                   [scores](const TensorImpl& self) {
                     if (scores.requires_grad())
                       grad_of(scores.impl()) += arr(self.grad);
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps) {
  const std::int64_t h = x.shape().back();
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != h ||
      beta.dim(0) != h) {
    throw std::invalid_argument(
        "layer_norm: gamma " + shape_to_string(gamma.shape()) + " / beta " +
        shape_to_string(beta.shape()) + " do not match feature size " +
        std::to_string(h));
  }
  if (eps < 0.0f) {
    throw std::invalid_argument("layer_norm: eps must be non-negative");
  }
  const std::int64_t rows = x.size() / h;
  std::vector<float> out(x.data().size());
  auto stats = std::make_shared<std::vector<float>>(
      static_cast<std::size_t>(rows) * 2);  // mean, inv_std per row
  CMapA g(gamma.data().data(), h);
  CMapA b(beta.data().data(), h);
  for (std::int64_t r = 0; r < rows; ++r) {
    CMapA xi(x.data().data() + r * h, h);
    float mean = xi.mean();
    float var = (xi - mean).square().mean();
    float inv_std = 1.0f / std::sqrt(var + eps);
    (*stats)[r * 2] = mean;
    (*stats)[r * 2 + 1] = inv_std;
    MapA(out.data() + r * h, h) = ((xi - mean) * inv_std) * g + b;
  }
  return op_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [x, gamma, beta, stats, rows, h](const TensorImpl& self) {
        CMapA g(gamma.data().data(), h);
        if (x.requires_grad()) x.impl()->ensure_grad();
        if (gamma.requires_grad()) gamma.impl()->ensure_grad();
        if (beta.requires_grad()) beta.impl()->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          CMapA xi(x.data().data() + r * h, h);
          CMapA gy(self.grad.data() + r * h, h);
          const float mean = (*stats)[r * 2];
          const float inv_std = (*stats)[r * 2 + 1];
          ArrX xhat = (xi - mean) * inv_std;
          if (beta.requires_grad()) {
            MapA(beta.impl()->grad.data(), h) += gy;
          }
          if (gamma.requires_grad()) {
            MapA(gamma.impl()->grad.data(), h) += gy * xhat;
          }
          if (x.requires_grad()) {
            ArrX gi = gy * g;
            const float m1 = gi.mean();
            const float m2 = (gi * xhat).mean();
            MapA(x.impl()->grad.data() + r * h, h) +=
                inv_std * (gi - m1 - xhat * m2);
          }
        }
      });
}

Tensor gelu(const Tensor& x) {
  constexpr float kAlpha = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float kCubic = 0.044715f;
  std::vector<float> out(x.data().size());
  const float* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    float v = xd[i];
    float t = std::tanh(kAlpha * (v + kCubic * v * v * v));
    out[i] = 0.5f * v * (1.0f + t);
  }
  return op_result(
      x.shape(), std::move(out), "gelu", {x},
      [x](const TensorImpl& self) {
        if (!x.requires_grad()) return;
        x.impl()->ensure_grad();
        const float* xd = x.data().data();
        float* gx = x.impl()->grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          float v = xd[i];
          float u = kAlpha * (v + kCubic * v * v * v);
          float t = std::tanh(u);
          float du = kAlpha * (1.0f + 3.0f * kCubic * v * v);
          float dy = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
          gx[i] += self.grad[i] * dy;
        }
      });
}

Tensor dropout(const Tensor& x, float p, bool training, Rng& rng) {
  if (!(p >= 0.0f && p < 1.0f)) {
    throw std::invalid_argument("dropout: p must be in [0,1), got " +
                                std::to_string(p));
  }
  if (!training || p == 0.0f) return x;
  auto keep = std::make_shared<std::vector<float>>(x.data().size());
  const float scale_kept = 1.0f / (1.0f - p);
  for (auto& k : *keep) k = rng.next_float() < p ? 0.0f : scale_kept;
  std::vector<float> out(x.data().size());
  MapA(out.data(), out.size()) = arr(x.data()) * arr(*keep);
  return op_result(x.shape(), std::move(out), "dropout", {x},
                   [x, keep](const TensorImpl& self) {
                     if (x.requires_grad())
                       grad_of(x.impl()) += arr(self.grad) * arr(*keep);
                   });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("cross_entropy: logits must be [B,C], got " +
                                shape_to_string(logits.shape()));
  }
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  if (b == 0) {
    throw std::invalid_argument("cross_entropy: empty batch");
  }
  if (static_cast<std::int64_t>(labels.size()) != b) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch of " + std::to_string(b));
  }
  for (std::int64_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw std::invalid_argument(
          "cross_entropy: label " + std::to_string(labels[i]) +
          " out of range [0," + std::to_string(c) + ") at index " +
          std::to_string(i));
    }
  }
  auto probs = std::make_shared<std::vector<float>>(logits.data().size());
  float loss = 0.0f;
  for (std::int64_t i = 0; i < b; ++i) {
    CMapA row(logits.data().data() + i * c, c);
    MapA p(probs->data() + i * c, c);
    float mx = row.maxCoeff();
    p = (row - mx).exp();
    float denom = p.sum();
    p /= denom;
    loss += std::log(denom) + mx - row[labels[i]];
  }
  loss /= static_cast<float>(b);
  return op_result(
      {1}, {loss}, "cross_entropy", {logits},
      [logits, probs, labels, b, c](const TensorImpl& self) {
        if (!logits.requires_grad()) return;
        logits.impl()->ensure_grad();
        const float g = self.grad[0] / static_cast<float>(b);
        float* gx = logits.impl()->grad.data();
        for (std::int64_t i = 0; i < b; ++i) {
          MapA(gx + i * c, c) += g * CMapA(probs->data() + i * c, c);
          gx[i * c + labels[i]] -= g;
        }
      });
}

namespace {

void im2col(const float* x, std::int64_t cin, std::int64_t lin, std::int64_t k,
            std::int64_t stride, std::int64_t pad, std::int64_t lout,
            float* col) {
  for (std::int64_t c = 0; c < cin; ++c) {
    for (std::int64_t t = 0; t < k; ++t) {
      float* row = col + (c * k + t) * lout;
      for (std::int64_t l = 0; l < lout; ++l) {
        std::int64_t src = l * stride + t - pad;
        row[l] = (src >= 0 && src < lin) ? x[c * lin + src] : 0.0f;
      }
    }
  }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& kernels, std::int64_t stride,
              std::int64_t padding) {
  const bool batched = x.rank() == 3;
  if (!batched && x.rank() != 2) {
    throw std::invalid_argument("conv1d: input must be [Cin,L] or [B,Cin,L], got " +
                                shape_to_string(x.shape()));
  }
  if (kernels.rank() != 3) {
    throw std::invalid_argument("conv1d: kernels must be [Cout,Cin,K], got " +
                                shape_to_string(kernels.shape()));
  }
  if (stride < 1) {
    throw std::invalid_argument("conv1d: stride must be >= 1");
  }
  if (padding < 0) {
    throw std::invalid_argument("conv1d: padding must be >= 0");
  }
  const std::int64_t nb = batched ? x.dim(0) : 1;
  const std::int64_t cin = batched ? x.dim(1) : x.dim(0);
  const std::int64_t lin = batched ? x.dim(2) : x.dim(1);
  const std::int64_t cout = kernels.dim(0), k = kernels.dim(2);
  if (kernels.dim(1) != cin) {
    throw std::invalid_argument(
        "conv1d: input channels " + std::to_string(cin) +
        " do not match kernel channels " + std::to_string(kernels.dim(1)));
  }
  if (k > lin + 2 * padding) {
    throw std::invalid_argument(
        "conv1d: kernel size " + std::to_string(k) +
        " larger than padded input length " + std::to_string(lin + 2 * padding));
  }
  const std::int64_t lout = (lin + 2 * padding - k) / stride + 1;
  Shape out_shape = batched ? Shape{nb, cout, lout} : Shape{cout, lout};
  std::vector<float> out(static_cast<std::size_t>(nb * cout * lout));
  std::vector<float> col(static_cast<std::size_t>(cin * k * lout));
  CMapM w(kernels.data().data(), cout, cin * k);
  for (std::int64_t i = 0; i < nb; ++i) {
    im2col(x.data().data() + i * cin * lin, cin, lin, k, stride, padding, lout,
           col.data());
    CMapM cm(col.data(), cin * k, lout);
    MapM(out.data() + i * cout * lout, cout, lout).noalias() = w * cm;
  }
  return op_result(
      std::move(out_shape), std::move(out), "conv1d", {x, kernels},
      [x, kernels, nb, cin, lin, cout, k, lout, stride,
       padding](const TensorImpl& self) {
        CMapM w(kernels.data().data(), cout, cin * k);
        if (x.requires_grad()) x.impl()->ensure_grad();
        if (kernels.requires_grad()) kernels.impl()->ensure_grad();
        std::vector<float> col(static_cast<std::size_t>(cin * k * lout));
        std::vector<float> gcol(static_cast<std::size_t>(cin * k * lout));
        for (std::int64_t i = 0; i < nb; ++i) {
          CMapM gout(self.grad.data() + i * cout * lout, cout, lout);
          if (kernels.requires_grad()) {
            im2col(x.data().data() + i * cin * lin, cin, lin, k, stride,
                   padding, lout, col.data());
            CMapM cm(col.data(), cin * k, lout);
            MapM(kernels.impl()->grad.data(), cout, cin * k).noalias() +=
                gout * cm.transpose();
          }
          if (x.requires_grad()) {
            MapM(gcol.data(), cin * k, lout).noalias() = w.transpose() * gout;
            float* gx = x.impl()->grad.data() + i * cin * lin;
            for (std::int64_t c = 0; c < cin; ++c) {
              for (std::int64_t t = 0; t < k; ++t) {
                const float* row = gcol.data() + (c * k + t) * lout;
                for (std::int64_t l = 0; l < lout; ++l) {
                  std::int64_t src = l * stride + t - padding;
                  if (src >= 0 && src < lin) gx[c * lin + src] += row[l];
                }
              }
            }
          }
        }
      });
}

Tensor mean_pool(const Tensor& hidden, const Tensor& mask) {
  if (hidden.rank() != 3 || mask.rank() != 2 || hidden.dim(0) != mask.dim(0) ||
      hidden.dim(1) != mask.dim(1)) {
    throw std::invalid_argument("mean_pool: hidden " +
                                shape_to_string(hidden.shape()) +
                                " incompatible with mask " +
                                shape_to_string(mask.shape()));
  }
  const std::int64_t b = hidden.dim(0), t = hidden.dim(1), h = hidden.dim(2);
  auto counts = std::make_shared<std::vector<float>>(static_cast<std::size_t>(b));
  std::vector<float> out(static_cast<std::size_t>(b * h), 0.0f);
  for (std::int64_t i = 0; i < b; ++i) {
    MapA acc(out.data() + i * h, h);
    float count = 0.0f;
    for (std::int64_t j = 0; j < t; ++j) {
      if (mask.data()[i * t + j] != 0.0f) {
        acc += CMapA(hidden.data().data() + (i * t + j) * h, h);
        count += 1.0f;
      }
    }
    if (count == 0.0f) {
      throw std::invalid_argument("mean_pool: mask row " + std::to_string(i) +
                                  " has no unmasked positions");
    }
    acc /= count;
    (*counts)[i] = count;
  }
  return op_result(
      {b, h}, std::move(out), "mean_pool", {hidden},
      [hidden, mask, counts, b, t, h](const TensorImpl& self) {
        if (!hidden.requires_grad()) return;
        hidden.impl()->ensure_grad();
        for (std::int64_t i = 0; i < b; ++i) {
          CMapA g(self.grad.data() + i * h, h);
          const float inv = 1.0f / (*counts)[i];
          for (std::int64_t j = 0; j < t; ++j) {
            if (mask.data()[i * t + j] != 0.0f) {
              MapA(hidden.impl()->grad.data() + (i * t + j) * h, h) += g * inv;
            }
          }
        }
      });
}

Tensor global_avg_pool1d(const Tensor& x) {
  if (x.rank() != 3) {
    throw std::invalid_argument("global_avg_pool1d: expected [B,C,L], got " +
                                shape_to_string(x.shape()));
  }
  const std::int64_t b = x.dim(0), c = x.dim(1), l = x.dim(2);
  std::vector<float> out(static_cast<std::size_t>(b * c));
  for (std::int64_t i = 0; i < b * c; ++i) {
    out[i] = CMapA(x.data().data() + i * l, l).mean();
  }
  return op_result({b, c}, std::move(out), "global_avg_pool1d", {x},
                   [x, b, c, l](const TensorImpl& self) {
                     if (!x.requires_grad()) return;
                     x.impl()->ensure_grad();
                     const float inv = 1.0f / static_cast<float>(l);
                     for (std::int64_t i = 0; i < b * c; ++i) {
                       MapA(x.impl()->grad.data() + i * l, l) +=
                           self.grad[i] * inv;
                     }
                   });
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw std::invalid_argument("argmax_rows: expected [B,C], got " +
                                shape_to_string(logits.shape()));
  }
  const std::int64_t b = logits.dim(0), c = logits.dim(1);
  std::vector<int> result(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    const float* row = logits.data().data() + i * c;
    int best = 0;
    for (std::int64_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = static_cast<int>(j);
    }
    result[i] = best;
  }
  return result;
}

}  // namespace credence
