#pragma once

#include <vector>

#include "vcem/autodiff.hpp"

// Differentiable primitives. Shapes never broadcast except for the row-wise
// bias in add_row_bias; every other coercion is explicit.
namespace vcem::diff {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a (n x q) plus bias (q or 1 x q) added to every row.
Var add_row_bias(Var a, Var bias);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
/// log(1 + e^a), evaluated without overflow.
Var softplus(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);

Var sum(Var a);
Var mean(Var a);
Var l2_norm(Var a);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);

// Conveniences composed from the primitives above.
Var mul(Var a, const Tensor& constant);
Var add(Var a, const Tensor& constant);
/// n copies of a single row (1 x q or q) stacked into n x q.
Var broadcast_rows(Var row, std::size_t n);

}  // namespace vcem::diff
