// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dbchat/error.hpp"
#include "dbchat/kernels.hpp"
#include "dbchat/text.hpp"

namespace dbchat::retrieval {

std::string_view to_string(RetrieverKind kind) noexcept {
  switch (kind) {
    case RetrieverKind::embedding: return "embedding";
    case RetrieverKind::keyword: return "keyword";
    case RetrieverKind::graph: return "graph";
  }
  return "embedding";
}

RetrieverKind parse_retriever_kind(std::string_view name) {
  if (name == "embedding") return RetrieverKind::embedding;
  if (name == "keyword") return RetrieverKind::keyword;
  if (name == "graph") return RetrieverKind::graph;
  throw Error(Errc::invalid_argument, "unknown retriever: " + std::string(name));
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(Errc::invalid_argument, "cosine of vectors of different size");
  const double nu = kernels::norm(u);
  const double nv = kernels::norm(v);
  if (nu == 0.0 || nv == 0.0) throw Error(Errc::invalid_argument, "cosine of zero vector");
  return std::clamp(kernels::dot(u, v) / (nu * nv), -1.0, 1.0);
}

namespace {

void check_k(std::size_t k) {
  if (k == 0) throw Error(Errc::invalid_argument, "K must be at least 1");
}

std::vector<RetrievedContext> materialize(const index::KnowledgeBase& kb,
                                          std::span<const std::size_t> rows,
                                          std::span<const double> scores, RetrieverKind kind) {
  std::vector<RetrievedContext> out;
  out.reserve(rows.size());
  for (const auto r : rows) {
    out.push_back({kb.row_keys()[r], kb.chunk_at_row(r).text, scores[r], kind});
  }
  return out;
}

/// Distinct query terms, or Errc::no_query_terms.
std::set<std::string> query_terms(std::string_view query) {
  auto tokens = text::tokenize(query);
  if (tokens.empty()) {
    throw Error(Errc::no_query_terms, "query has no indexable terms");
  }
  return {std::make_move_iterator(tokens.begin()), std::make_move_iterator(tokens.end())};
}

}  // namespace

std::vector<RetrievedContext> embedding_retrieve_vector(const index::KnowledgeBase& kb,
                                                        std::span<const double> query,
                                                        std::size_t k, Execution exec) {
  check_k(k);
  auto lock = kb.read_lock();
  if (kb.empty()) throw Error(Errc::empty_kb, "knowledge base '" + kb.name() + "' is empty");
  if (query.size() != kb.dimension()) {
    throw Error(Errc::dimension_mismatch, "query dimension " + std::to_string(query.size()) +
                                              " != knowledge base dimension " +
                                              std::to_string(kb.dimension()));
  }
  const double qn = kernels::norm(query);
  if (qn == 0.0) throw Error(Errc::invalid_argument, "query embedding is the zero vector");
  const kernels::MatrixView rows{kb.embeddings(), kb.dimension()};
  std::vector<double> scores(kb.size());
  if (exec == Execution::parallel) {
    kernels::cosine_scores_parallel(rows, kb.row_norms(), query, qn, scores);
  } else {
    kernels::cosine_scores_serial(rows, kb.row_norms(), query, qn, scores);
  }
  const auto best = kernels::top_k(scores, kb.row_key_rank(), k);
  return materialize(kb, best, scores, RetrieverKind::embedding);
}

std::vector<RetrievedContext> embedding_retrieve(const index::KnowledgeBase& kb,
                                                 std::string_view query, std::size_t k,
                                                 const encoder::Embedder& embedder,
                                                 Execution exec) {
  return embedding_retrieve_vector(kb, embedder.embed_query(query), k, exec);
}

std::vector<RetrievedContext> keyword_retrieve(const index::KnowledgeBase& kb,
                                               std::string_view query, std::size_t k) {
  check_k(k);
  const auto terms = query_terms(query);
  auto lock = kb.read_lock();
  const auto& inv = kb.inverted();
  const double n = static_cast<double>(kb.size());
  std::map<index::ChunkKey, double> acc;
  for (const auto& term : terms) {
    const auto it = inv.find(term);
    if (it == inv.end() || it->second.empty()) continue;
    const double idf = std::log(1.0 + n / static_cast<double>(it->second.size()));
    for (const auto& [key, tf] : it->second) acc[key] += idf;
  }
  std::vector<RetrievedContext> out;
  out.reserve(acc.size());
  for (const auto& [key, score] : acc) {
    out.push_back({key, kb.chunk(key).text, score, RetrieverKind::keyword});
  }
  // acc is key-ordered, so a stable sort on score keeps ascending-key ties.
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  if (out.size() > k) out.resize(k);
  return out;
}

std::vector<RetrievedContext> graph_retrieve(const index::KnowledgeBase& kb,
                                             std::string_view query, std::size_t k) {
  check_k(k);
  const auto terms = query_terms(query);
  auto lock = kb.read_lock();
  const auto& graph = kb.graph();
  std::map<index::ChunkKey, double> acc;
  for (const auto& term : terms) {
    const auto it = graph.term_to_chunks.find(term);
    if (it == graph.term_to_chunks.end()) continue;
    for (const auto& key : it->second) acc[key] += 1.0;
  }
  std::vector<RetrievedContext> out;
  out.reserve(acc.size());
  for (const auto& [key, score] : acc) {
    out.push_back({key, kb.chunk(key).text, score, RetrieverKind::graph});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  if (out.size() > k) out.resize(k);
  return out;
}

std::vector<RetrievedContext> retrieve(RetrieverKind kind, const index::KnowledgeBase& kb,
                                       std::string_view query, std::size_t k,
                                       const encoder::Embedder& embedder) {
  switch (kind) {
    case RetrieverKind::embedding: return embedding_retrieve(kb, query, k, embedder);
    case RetrieverKind::keyword: return keyword_retrieve(kb, query, k);
    case RetrieverKind::graph: return graph_retrieve(kb, query, k);
  }
  throw Error(Errc::invalid_argument, "unknown retriever");
}

}  // namespace dbchat::retrieval
