#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "embalign/tensor.hpp"

// Differentiable operations on rank-2 tensors (rows x cols) unless noted.
// Every op records itself on the tape only when an input requires grad.
namespace embalign::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);

// a[rows x n] + bias broadcast over rows; bias holds n values.
Tensor add_row(const Tensor& a, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);

// Per-row normalization over the last extent. gamma and beta hold cols values.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);

// Unit L2 norm per row. Throws DegenerateEmbeddingError on a zero row.
Tensor l2_normalize_rows(const Tensor& x);

// Reductions to a scalar (rank 0).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Column means: [rows x cols] -> [1 x cols].
Tensor mean_rows(const Tensor& x);

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

// Row lookup: out[i] = table[ids[i]].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

// Image [S x S x 3] (channels last) -> [(S/p)^2 x 3p^2]; non-overlapping
// p x p blocks in raster order, each flattened row-major (y, x, channel).
Tensor patchify(const Tensor& image, std::size_t patch);

// Mean over rows of -log softmax(logits)[row, targets[row]].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace embalign::ops
