// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// The knowledge base: a chunk store plus vector, inverted and graph indexes.
//
// Concurrency follows a reader-writer contract: any number of threads may
// hold a ReadLock; index_chunks takes the write side for the whole batch.

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "dbchat/encoder.hpp"
#include "dbchat/ingest.hpp"

namespace dbchat::index {

struct ChunkKey {
  std::string doc_id;
  std::size_t chunk_index = 0;

  auto operator<=>(const ChunkKey&) const = default;
  bool operator==(const ChunkKey&) const = default;
};

std::string to_string(const ChunkKey& key);

/// Postings for one term, ordered by chunk key.
using Postings = std::map<ChunkKey, std::uint32_t>;

/// Bipartite term <-> chunk adjacency. Term nodes are the inverted-index
/// vocabulary; each chunk node links to its distinct terms.
struct GraphIndex {
  std::map<std::string, std::set<ChunkKey>> term_to_chunks;
  std::map<ChunkKey, std::set<std::string>> chunk_to_terms;
};

struct KbHeader {
  std::uint32_t version = 0;
  std::uint32_t dimension = 0;
  std::uint64_t chunk_count = 0;
  std::uint64_t term_count = 0;
  std::string name;
};

class KnowledgeBase {
 public:
  /// dimension 0 means "unset": fixed by the first indexed batch.
  explicit KnowledgeBase(std::string name, std::size_t dimension = 0);

  KnowledgeBase(KnowledgeBase&&) noexcept;
  KnowledgeBase& operator=(KnowledgeBase&&) noexcept;
  KnowledgeBase(const KnowledgeBase&) = delete;
  KnowledgeBase& operator=(const KnowledgeBase&) = delete;
  ~KnowledgeBase();

  /// Embeds with f_key and adds the batch to all three indexes. Either the
  /// whole batch lands or nothing changes.
  void index_chunks(std::span<const ingest::Chunk> chunks, const encoder::Embedder& embedder);

  /// Adds chunks with precomputed embeddings (same atomicity).
  void index_embedded(std::span<const ingest::Chunk> chunks,
                      std::span<const encoder::Vector> embeddings);

  const std::string& name() const noexcept { return name_; }

  /// Shared lock for readers; hold it while using the accessors below from
  /// multiple threads.
  std::shared_lock<std::shared_mutex> read_lock() const;

  std::size_t size() const noexcept { return keys_.size(); }
  bool empty() const noexcept { return keys_.empty(); }
  std::size_t dimension() const noexcept { return dimension_; }

  /// Row-major embeddings, one row per chunk in insertion order.
  std::span<const double> embeddings() const noexcept { return vectors_; }
  std::span<const double> row_norms() const noexcept { return norms_; }
  /// Row -> key, and row -> position of the key in ascending key order.
  std::span<const ChunkKey> row_keys() const noexcept { return keys_; }
  std::span<const std::size_t> row_key_rank() const noexcept { return key_rank_; }

  const ingest::Chunk& chunk(const ChunkKey& key) const;
  const ingest::Chunk& chunk_at_row(std::size_t row) const;
  std::span<const double> embedding_at_row(std::size_t row) const;

  const std::map<std::string, Postings>& inverted() const noexcept { return inverted_; }
  const GraphIndex& graph() const noexcept { return graph_; }

  /// Empty string when consistent; otherwise a description of the first
  /// dangling reference or size disagreement found.
  std::string check_integrity() const;

  /// Deterministic single-file encoding, see save().
  std::string serialize() const;
  static KnowledgeBase deserialize(std::string bytes);

  /// Layout: "DBKB", u32 version, u32 D, u64 chunks, u64 terms, name blob;
  /// f64 LE vector block in key order; JSON chunks blob; JSON postings blob;
  /// u64 FNV-1a checksum of everything before it.
  void save(const std::filesystem::path& path) const;
  static KnowledgeBase load(const std::filesystem::path& path);
  static KbHeader inspect(const std::filesystem::path& path);

 private:
  void commit(std::span<const ingest::Chunk> chunks, std::span<const encoder::Vector> embeddings);
  void rebuild_key_rank();

  std::string name_;
  std::size_t dimension_ = 0;
  std::map<ChunkKey, std::size_t> row_of_;
  std::vector<ChunkKey> keys_;
  std::vector<ingest::Chunk> chunks_;
  std::vector<double> vectors_;
  std::vector<double> norms_;
  std::vector<std::size_t> key_rank_;
  std::map<std::string, Postings> inverted_;
  GraphIndex graph_;
  std::unique_ptr<std::shared_mutex> mutex_;
  // Held by a writer while it waits for and holds mutex_; readers pass
  // through it first so a stream of readers cannot starve a writer.
  std::unique_ptr<std::mutex> write_gate_;
};

/// Term frequencies of a chunk's text under the indexing tokenizer.
std::map<std::string, std::uint32_t> term_frequencies(std::string_view text);

}  // namespace dbchat::index
