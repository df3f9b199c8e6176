// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/random.hpp"

namespace dbchat {

std::vector<std::size_t> Rng::sample_excluding(std::size_t n, std::size_t k,
                                               std::size_t skip) {
  // Partial Fisher-Yates over the pool with `skip` removed.
  std::vector<std::size_t> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i != skip) pool.push_back(i);
  }
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + below(pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace dbchat
