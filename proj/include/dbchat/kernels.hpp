// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Data-parallel scoring kernels. Every parallel kernel has a serial twin with
// the same contract; the serial one is the reference the tests and the
// benchmark compare against. Per-row arithmetic is identical in both, so
// results agree bit for bit.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dbchat::kernels {

/// Row-major n x dim matrix view.
struct MatrixView {
  std::span<const double> data;
  std::size_t dim = 0;

  std::size_t rows() const noexcept { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> row(std::size_t i) const noexcept {
    return data.subspan(i * dim, dim);
  }
};

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double norm(std::span<const double> a) noexcept;

/// out[i] = rows[i] . query
void dot_scores_serial(MatrixView rows, std::span<const double> query, std::span<double> out);
void dot_scores_parallel(MatrixView rows, std::span<const double> query, std::span<double> out);

/// out[i] = cos(rows[i], query) given precomputed row norms. Rows with zero
/// norm score 0. `query_norm` must be nonzero.
void cosine_scores_serial(MatrixView rows, std::span<const double> row_norms,
                          std::span<const double> query, double query_norm,
                          std::span<double> out);
void cosine_scores_parallel(MatrixView rows, std::span<const double> row_norms,
                            std::span<const double> query, double query_norm,
                            std::span<double> out);

/// Indices of the k best scores, descending; equal scores are ordered by
/// ascending `tie_rank[i]`.
std::vector<std::size_t> top_k(std::span<const double> scores, std::span<const std::size_t> tie_rank,
                               std::size_t k);
/// As top_k, restricted to rows scoring strictly above `floor`.
std::vector<std::size_t> top_k_above(std::span<const double> scores,
                                     std::span<const std::size_t> tie_rank, std::size_t k,
                                     double floor);

/// Number of worker threads the parallel kernels will use.
int max_threads() noexcept;

}  // namespace dbchat::kernels
