#pragma once

#include <vector>

#include "credence/rng.hpp"
#include "credence/tensor.hpp"

// Differentiable tensor operations. Free functions in the Eigen style: each
// returns a fresh tensor and records gradient nodes when any input requires
// grad and gradients are enabled.
namespace credence {

// Element-wise. Shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

// x[..., H] + bias[H], broadcast over leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);

// Sum of all elements, as a scalar tensor.
Tensor sum(const Tensor& x);

// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Batched matmul: [N,m,k] x [N,k,n] -> [N,m,n].
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape new_shape);

// Axis permutation, e.g. permute(x, {0,2,1,3}).
Tensor permute(const Tensor& x, const std::vector<std::size_t>& dims);

// table[V,H] indexed by ids[B,T] (or ids[N]) -> [B,T,H] (or [N,H]).
// ids hold exact integers stored as floats; gradient flows to the table only.
Tensor gather_rows(const Tensor& table, const Tensor& ids);

// Max-subtracted softmax along `axis` (negative axis counts from the back).
Tensor softmax(const Tensor& x, int axis);

// scores[B*A,Tq,Tk] + additive -1e9 at key positions where mask[B,Tk] == 0.
Tensor add_key_mask(const Tensor& scores, const Tensor& mask,
                    std::int64_t num_heads);

// Per-last-axis (x - mean)/sqrt(var + eps) * gamma + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps);

// tanh-approximation GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
Tensor gelu(const Tensor& x);

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// Identity in eval mode or when p == 0.
Tensor dropout(const Tensor& x, float p, bool training, Rng& rng);

// Mean over batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Cross-correlation. x is [Cin,Lin] or [B,Cin,Lin]; kernels [Cout,Cin,K].
// Lout = floor((Lin + 2*padding - K)/stride) + 1.
Tensor conv1d(const Tensor& x, const Tensor& kernels, std::int64_t stride,
              std::int64_t padding);

// hidden[B,T,H] averaged over positions where mask[B,T] == 1 -> [B,H].
Tensor mean_pool(const Tensor& hidden, const Tensor& mask);

// x[B,C,L] -> [B,C], mean over the last axis.
Tensor global_avg_pool1d(const Tensor& x);

// Row-wise argmax of logits[B,C]; ties resolve to the lower class index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace credence
