#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "qsector/tape.hpp"

// Differentiable primitives. Every function records one node on the tape of
// its first operand. Binary elementwise ops accept a right operand whose shape
// is a suffix of the left operand's shape and broadcast it over the leading
// dimensions (biases, layer-norm gains, positional tables).
namespace qsector::ad {

// a: [..., K] viewed as rows x K; b: [K, N]. Result [..., N].
Var matmul(const Var& a, const Var& b);
// a: [B, M, K]; b: [B, K, N]. Result [B, M, N].
Var bmm(const Var& a, const Var& b);
// [B, M, N] -> [B, N, M]
Var transpose_last(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var neg(const Var& a);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var reciprocal(const Var& a);
Var minimum(const Var& a, const Var& b);
Var clamp(const Var& a, double lo, double hi);

Var softmax(const Var& a);      // over the last dimension
Var log_softmax(const Var& a);  // over the last dimension
// (x - mean) / sqrt(var + eps) over the last dimension, biased variance.
Var layer_norm(const Var& a, double eps = 1e-5);
// x / (sum(x) + eps) over the last dimension.
Var normalize_sum(const Var& a, double eps = 1e-12);

Var concat_last(const std::vector<Var>& parts);
Var slice_last(const Var& a, std::size_t begin, std::size_t end);
// [B, L, N] -> [B, N] at step t
Var select_step(const Var& a, std::size_t t);
// L tensors of [B, N] -> [B, L, N]
Var stack_steps(const std::vector<Var>& steps);
Var reshape(const Var& a, Shape shape);

Var sum(const Var& a);   // scalar
Var mean(const Var& a);  // scalar
Var sum_last(const Var& a);     // [..., N] -> [...]
Var mean_steps(const Var& a);   // [B, L, N] -> [B, N]
// Picks a[r, index[r]] from a [R, N] tensor. Result [R].
Var gather_rows(const Var& a, const std::vector<std::size_t>& index);

// Inverted dropout. Identity when !training or rate == 0.
Var dropout(const Var& a, double rate, bool training, std::mt19937_64& rng);

}  // namespace qsector::ad
