#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "evoqf/graph.hpp"

namespace evoqf {

inline constexpr double kLayerNormEps = 1e-5;

// Matrix ops treat rank-1 tensors as single rows. Outputs are rank 2 unless
// noted. Every op records itself on the graph of its first input.

Var matmul(Var a, Var b);                       // (n x k) * (k x m)
Var add(Var a, Var b);                          // same shape, or rows + bias vector
Var hadamard(Var a, Var b);                     // same shape, elementwise
Var sigmoid(Var x);                             // elementwise, keeps shape
Var gelu(Var x);                                // elementwise x * Phi(x), keeps shape
Var softmax(Var x);                             // per row, max-subtracted
Var layernorm(Var x, Var gamma, Var beta);      // per row, eps = kLayerNormEps
Var concat(std::span<const Var> parts, std::size_t axis);
Var mean_pool(Var x);                           // mean over rows -> 1 x d
Var linear(Var x, Var weight);                  // x * W^T, W is (out x in)
Var linear(Var x, Var weight, Var bias);        // x * W^T + b
Var scale(Var x, double factor);                // keeps shape
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var repeat_rows(Var x, std::size_t times);      // stack `times` copies vertically
Var segment_mean(Var x, std::span<const std::size_t> lengths);  // one output row per segment
Var sum(Var x);                                 // -> shape {1}
Var row_outer(Var a, Var b);                    // per row: vec(a_i b_i^T), (n x p*q)
Var gather_rows(Var x, std::span<const std::size_t> rows);  // out[i] = x[rows[i]]

/// Multi-head scaled dot-product attention applied independently per segment.
///
/// q holds sum(q_lengths) rows and k/v hold sum(kv_lengths) rows; segment s of
/// q attends only to segment s of k/v. All three have width d, split into
/// `heads` contiguous column blocks.
Var segment_attention(Var q, Var k, Var v, std::span<const std::size_t> q_lengths,
                      std::span<const std::size_t> kv_lengths, std::size_t heads);

struct OpAttrs {
  std::size_t axis = 0;
  double factor = 1.0;
};

/// Dispatch by kind over the named forward op set (matmul, add, hadamard,
/// sigmoid, softmax, layernorm, concat, mean_pool, linear, scale). Any other
/// kind throws UnknownKind.
Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

}  // namespace evoqf
