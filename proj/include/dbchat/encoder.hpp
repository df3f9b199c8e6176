// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

// Key/query embedders and the dual-encoder trainer.
//
// Text is first mapped to a sparse, L2-normalized bag of hashed unigram and
// bigram features over F buckets. The hash_features embedder uses that bag
// directly (D = F). The trained_dual embedder applies separate linear maps
// W_key, W_query (D x F) to it and is trained with the softmax contrastive
// objective
//
//   l = q.e0 - log sum_{i=0..I} exp(q.e_i)
//
// where e0 embeds the relevant paragraph and e1..eI are negatives.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dbchat::encoder {

using Vector = std::vector<double>;

inline constexpr std::size_t kDefaultFeatureDim = std::size_t{1} << 16;
inline constexpr std::size_t kDefaultDimension = 64;

/// Sorted, duplicate-free feature indices with unit L2 norm.
struct SparseFeatures {
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  bool empty() const noexcept { return index.empty(); }
};

/// Throws Errc::invalid_argument for text with no non-whitespace content.
SparseFeatures featurize(std::string_view text, std::size_t feature_dim);

enum class EmbedderKind : std::uint32_t { hash_features = 1, trained_dual = 2 };

/// Column-major D x F weights for both towers.
struct DualWeights {
  std::size_t dimension = 0;
  std::size_t feature_dim = 0;
  std::uint64_t seed = 0;
  std::vector<double> key;
  std::vector<double> query;

  static DualWeights random(std::size_t dimension, std::size_t feature_dim, std::uint64_t seed,
                            double sigma = 0.01);

  std::span<double> key_column(std::size_t j) { return {key.data() + j * dimension, dimension}; }
  std::span<double> query_column(std::size_t j) {
    return {query.data() + j * dimension, dimension};
  }
  std::span<const double> key_column(std::size_t j) const {
    return {key.data() + j * dimension, dimension};
  }
  std::span<const double> query_column(std::size_t j) const {
    return {query.data() + j * dimension, dimension};
  }

  bool operator==(const DualWeights&) const = default;
};

/// W * x for sparse x.
Vector project(std::span<const double> weights, std::size_t dimension, const SparseFeatures& x);

class Embedder {
 public:
  static Embedder hash_features(std::size_t dimension = 1024);
  static Embedder trained_dual(DualWeights weights);

  EmbedderKind kind() const noexcept { return kind_; }
  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t feature_dim() const noexcept { return feature_dim_; }

  /// f_key: embeds a stored paragraph.
  Vector embed_key(std::string_view text) const;
  /// f_query: embeds a user query.
  Vector embed_query(std::string_view text) const;

  /// Null for hash_features.
  const DualWeights* weights() const noexcept { return weights_.get(); }

  void save(const std::filesystem::path& path) const;
  static Embedder load(const std::filesystem::path& path);
  std::string serialize() const;
  static Embedder deserialize(std::string bytes);

 private:
  Embedder() = default;

  EmbedderKind kind_ = EmbedderKind::hash_features;
  std::size_t dimension_ = 0;
  std::size_t feature_dim_ = 0;
  std::shared_ptr<const DualWeights> weights_;
};

/// The contrastive objective for one query, computed with the max dot product
/// subtracted before exponentiation. Always <= 0.
double contrastive_loss(std::span<const double> query, std::span<const double> positive,
                        std::span<const std::span<const double>> negatives);

/// Same objective from precomputed dot products; scores[0] is the positive.
double contrastive_loss_from_scores(std::span<const double> scores);

/// Sparse accumulator for d(-l)/dW, keyed by feature column.
class Gradient {
 public:
  explicit Gradient(std::size_t dimension) : dimension_(dimension) {}

  std::span<double> key_column(std::uint32_t j);
  std::span<double> query_column(std::uint32_t j);
  /// Zero span when the column was never touched.
  std::span<const double> key_column_or_empty(std::uint32_t j) const;
  std::span<const double> query_column_or_empty(std::uint32_t j) const;

  /// w -= scale * g over touched columns.
  void apply(DualWeights& weights, double scale) const;
  void clear();

 private:
  std::size_t dimension_;
  std::unordered_map<std::uint32_t, std::vector<double>> key_;
  std::unordered_map<std::uint32_t, std::vector<double>> query_;
};

struct PairFeatures {
  SparseFeatures query;
  SparseFeatures positive;
  std::vector<SparseFeatures> negatives;
};

/// Returns l for one pair; when `grad` is set, adds d(-l)/dW_query and
/// d(-l)/dW_key into it.
double pair_objective(const DualWeights& weights, const PairFeatures& pair, Gradient* grad);

struct QaPair {
  std::string query;
  std::string response;

  bool operator==(const QaPair&) const = default;
};

struct TrainPair {
  std::string query_text;
  std::string positive_text;
  std::vector<std::string> negatives;
};

struct DatasetSplit {
  std::vector<TrainPair> train;
  std::vector<TrainPair> dev;
  std::vector<TrainPair> test;
};

struct SplitRatio {
  double train = 0.7;
  double dev = 0.1;
  double test = 0.2;
};

/// Samples `negatives_per_pair` responses uniformly without replacement from
/// the pool excluding the pair's own positive, then shuffles and splits.
DatasetSplit make_pairs(std::span<const QaPair> corpus, std::size_t negatives_per_pair,
                        std::uint64_t seed, SplitRatio ratio = {});

/// Separable stand-in corpus: each pair has a distinct combination of
/// `facets` tokens (each drawn from `values` choices) that query and response
/// share, interleaved with filler words. Queries must fit the code space.
std::vector<QaPair> synthetic_corpus(std::size_t pairs, std::uint64_t seed, std::size_t facets = 4,
                                     std::size_t values = 8, std::size_t filler_words = 20);

/// One JSON object per line: {"query", "response"}.
std::vector<QaPair> read_pairs_corpus(const std::filesystem::path& path);

struct TrainOptions {
  std::size_t epochs = 20;
  double learning_rate = 20.0;
  std::uint64_t seed = 42;
  std::size_t batch_size = 32;
  std::size_t dimension = kDefaultDimension;
  std::size_t feature_dim = kDefaultFeatureDim;
  double init_sigma = 0.01;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_objective = 0.0;  ///< mean l over the train split
  double dev_recall_at_1 = 0.0;
};

struct TrainResult {
  Embedder embedder;
  double initial_dev_recall_at_1 = 0.0;
  std::vector<EpochStats> history;
};

/// Mini-batch gradient descent on -l. Deterministic for a given seed.
TrainResult train(const DatasetSplit& data, const TrainOptions& opts);

/// Fraction of pairs whose positive outscores every negative (q.e).
double recall_at_1(const Embedder& embedder, std::span<const TrainPair> pairs);

}  // namespace dbchat::encoder
