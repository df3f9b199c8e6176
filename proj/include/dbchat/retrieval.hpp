// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbchat/encoder.hpp"
#include "dbchat/index.hpp"

namespace dbchat::retrieval {

enum class RetrieverKind { embedding, keyword, graph };

std::string_view to_string(RetrieverKind kind) noexcept;
RetrieverKind parse_retriever_kind(std::string_view name);

inline constexpr std::size_t kDefaultK = 8;

/// Result lists are sorted by score descending, ties by ascending key.
struct RetrievedContext {
  index::ChunkKey chunk_key;
  std::string text;
  double score = 0.0;
  RetrieverKind retriever_kind = RetrieverKind::embedding;
};

/// Throws Errc::invalid_argument for a zero vector or mismatched sizes.
double cosine(std::span<const double> u, std::span<const double> v);

enum class Execution { parallel, serial };

/// Exact top-K by cosine between f_query(query) and every stored embedding.
std::vector<RetrievedContext> embedding_retrieve(const index::KnowledgeBase& kb,
                                                 std::string_view query, std::size_t k,
                                                 const encoder::Embedder& embedder,
                                                 Execution exec = Execution::parallel);

/// Same scan for an already-embedded query.
std::vector<RetrievedContext> embedding_retrieve_vector(const index::KnowledgeBase& kb,
                                                        std::span<const double> query,
                                                        std::size_t k,
                                                        Execution exec = Execution::parallel);

/// score = sum over distinct query terms present in the chunk of
/// ln(1 + N / df(term)). Chunks with no matching term are not returned.
std::vector<RetrievedContext> keyword_retrieve(const index::KnowledgeBase& kb,
                                               std::string_view query, std::size_t k);

/// One hop from query term nodes to chunk nodes; score = number of distinct
/// query terms adjacent to the chunk.
std::vector<RetrievedContext> graph_retrieve(const index::KnowledgeBase& kb,
                                             std::string_view query, std::size_t k);

std::vector<RetrievedContext> retrieve(RetrieverKind kind, const index::KnowledgeBase& kb,
                                       std::string_view query, std::size_t k,
                                       const encoder::Embedder& embedder);

}  // namespace dbchat::retrieval
