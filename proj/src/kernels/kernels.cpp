// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dbchat::kernels {

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

void dot_scores_serial(MatrixView rows, std::span<const double> query, std::span<double> out) {
  const std::size_t n = rows.rows();
  for (std::size_t i = 0; i < n; ++i) out[i] = dot(rows.row(i), query);
}

void dot_scores_parallel(MatrixView rows, std::span<const double> query, std::span<double> out) {
  const auto n = static_cast<std::int64_t>(rows.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = dot(rows.row(static_cast<std::size_t>(i)), query);
  }
}

namespace {

inline double cosine_row(std::span<const double> row, double row_norm,
                         std::span<const double> query, double query_norm) noexcept {
  if (row_norm == 0.0) return 0.0;
  const double c = dot(row, query) / (row_norm * query_norm);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace

void cosine_scores_serial(MatrixView rows, std::span<const double> row_norms,
                          std::span<const double> query, double query_norm,
                          std::span<double> out) {
  const std::size_t n = rows.rows();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = cosine_row(rows.row(i), row_norms[i], query, query_norm);
  }
}

void cosine_scores_parallel(MatrixView rows, std::span<const double> row_norms,
                            std::span<const double> query, double query_norm,
                            std::span<double> out) {
  const auto n = static_cast<std::int64_t>(rows.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    out[r] = cosine_row(rows.row(r), row_norms[r], query, query_norm);
  }
}

std::vector<std::size_t> top_k_above(std::span<const double> scores,
                                     std::span<const std::size_t> tie_rank, std::size_t k,
                                     double floor) {
  std::vector<std::size_t> idx;
  idx.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > floor) idx.push_back(i);
  }
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return tie_rank[a] < tie_rank[b];
  };
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::span<const std::size_t> tie_rank,
                               std::size_t k) {
  return top_k_above(scores, tie_rank, k, -HUGE_VAL);
}

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace dbchat::kernels
