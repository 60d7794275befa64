// SPDX-License-Identifier: Apache-2.0
//
// The differentiable operation set. Shapes are checked eagerly; a mismatch
// throws ShapeError naming both operands' shapes.

#pragma once

#include <cstdint>
#include <span>
#include <type_traits>
#include <vector>

#include "sr/numerics/tape.hpp"
#include "sr/numerics/tensor.hpp"

namespace sr::ops {

template <class T> Var add(Tape<T>& t, Var a, Var b);
template <class T> Var mul(Tape<T>& t, Var a, Var b);
template <class T> Var scale(Tape<T>& t, Var a, T factor);
/// x[..., N] + bias[N]
template <class T> Var add_bias(Tape<T>& t, Var x, Var bias);
/// Sum of all elements, rank-0 result.
template <class T> Var sum(Tape<T>& t, Var a);
template <class T> Var log(Tape<T>& t, Var a);
/// Exact (erf) GELU.
template <class T> Var gelu(Tape<T>& t, Var a);
/// Softmax over the last axis.
template <class T> Var softmax(Tape<T>& t, Var a);

/// x / sqrt(mean(x^2) + eps) over the last axis, no gain.
template <class T> Var rms_norm(Tape<T>& t, Var x, T eps);

/// Contracts the trailing `contract` axes of a with the leading `contract`
/// axes of b: 'btd,df->btf' (contract=1), 'btnh,nhd->btd' (contract=2).
template <class T> Var matmul(Tape<T>& t, Var a, Var b, std::size_t contract = 1);
/// a[..., K] x b[N, K]^T -> [..., N]  ('btd,vd->btv')
template <class T> Var matmul_nt(Tape<T>& t, Var a, Var b);
/// x[..., d] with w[S, n, d, h], slot s -> [..., n, h]  (one slice of 'btd,sndh->sbtnh')
template <class T> Var head_project(Tape<T>& t, Var x, Var w, std::size_t slot);

/// Rotary embedding on x[B, T, n, h]; pair i = (x[2i], x[2i+1]) at position t
/// is rotated by t * base^(-2i/h).
template <class T> Var rope(Tape<T>& t, Var x, T base);

/// Causal softmax attention over q, k, v [B, T, n, h], scores scaled by 1/sqrt(h).
template <class T> Var causal_attention(Tape<T>& t, Var q, Var k, Var v);

/// Rows of table[V, d] gathered by ids; result shape is ids_shape + [d].
template <class T>
Var embedding(Tape<T>& t, Var table, std::span<const std::int32_t> ids, const Shape& ids_shape);

/// Mean over positions with mask 1 of -log softmax(logits)[target].
/// logits[..., V]; targets and mask have one entry per row.
template <class T>
Var cross_entropy(Tape<T>& t, Var logits, std::span<const std::int32_t> targets, std::span<const std::type_identity_t<T>> mask);

/// Mean over masked rows of sum_v p_ref(v) (log p_ref(v) - log softmax(logits)(v)).
/// ref_logprobs is a constant with the shape of logits.
template <class T>
Var kl_to_reference(Tape<T>& t, Var logits, const Tensor<T>& ref_logprobs, std::span<const std::type_identity_t<T>> mask);

/// mean((pred - target)^2) against a constant target of the same shape.
template <class T> Var mean_squared_error(Tape<T>& t, Var pred, const Tensor<T>& target);

}  // namespace sr::ops

namespace sr {

/// Row-wise log-softmax over the last axis, computed in place semantics-free.
template <class T> Tensor<T> log_softmax(const Tensor<T>& logits);

}  // namespace sr
