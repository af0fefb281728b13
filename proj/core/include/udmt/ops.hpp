#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "udmt/tape.hpp"

namespace udmt::ops {

// Differentiable kernels. Each validates shapes, computes eagerly, and
// records a backward rule when any input requires a gradient.

/// [M,K] x [K,N] -> [M,N]; with transpose_b, b is [N,K].
Var matmul(const Var& a, const Var& b, bool transpose_b = false);
/// Batched matmul over rank-3 operands: [B,M,K] x [B,K,N] (or [B,N,K] transposed).
Var bmm(const Var& a, const Var& b, bool transpose_b = false);

/// Same-shape sum, or bias-add when b is rank 1 and matches a's last dim.
Var add(const Var& a, const Var& b);
/// Elementwise product of same-shape operands.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& a);
/// Sum of all elements, as a [1] tensor.
Var sum(const Var& a);

Var softmax_lastdim(const Var& a);
/// Softmax over the last dim of [N,Tq,Tk] scores. keep is [N/heads, Tq, Tk];
/// dropped entries get probability exactly 0. A row with nothing kept is all zeros.
Var masked_softmax_lastdim(const Var& scores, std::span<const std::uint8_t> keep, std::size_t heads);

inline constexpr double kLayerNormEps = 1e-12;
/// (x - mean) / sqrt(var + eps) over the last dim, then gain * . + bias.
Var layer_norm_lastdim(const Var& x, const Var& gain, const Var& bias, double eps = kLayerNormEps);

/// Rows of table [V,D] selected by ids -> [n,D].
Var embedding_lookup(const Var& table, std::span<const int> ids);

/// Concatenation / slicing along the first axis.
Var concat(const std::vector<Var>& parts);
Var slice(const Var& a, std::size_t begin, std::size_t end);

Var reshape(const Var& a, Shape shape);
/// [A,B,C,D] -> [A,C,B,D].
Var transpose12(const Var& a);

/// Inverted dropout; identity when rate == 0.
Var dropout(const Var& a, double rate, std::mt19937_64& rng);

/// Mean over positions with mask[t] set of -log softmax(logits[t])[targets[t]].
Var cross_entropy_masked(const Var& logits, std::span<const int> targets, std::span<const std::uint8_t> mask);

}  // namespace udmt::ops
