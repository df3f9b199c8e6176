// Copyright 2026 The dbchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "dbchat/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <nlohmann/json.hpp>

#include "dbchat/binio.hpp"
#include "dbchat/error.hpp"
#include "dbchat/kernels.hpp"
#include "dbchat/random.hpp"
#include "dbchat/text.hpp"

namespace dbchat::encoder {

namespace {

constexpr char kMagic[] = "DBEM";
constexpr std::uint32_t kVersion = 1;
constexpr char kSep = '\x1f';

}  // namespace

SparseFeatures featurize(std::string_view text, std::size_t feature_dim) {
  auto tokens = text::tokenize(text);
  if (tokens.empty()) {
    // Punctuation-only input still embeds, one feature per symbol.
    for (const auto& cp : text::decode_utf8(text)) {
      if (text::is_space(cp.value)) continue;
      std::string s;
      text::append_utf8(s, cp.value);
      tokens.push_back(std::move(s));
    }
  }
  if (tokens.empty()) {
    throw Error(Errc::invalid_argument, "cannot embed empty text");
  }
  std::map<std::uint32_t, double> counts;
  auto bump = [&](const std::string& feature) {
    counts[static_cast<std::uint32_t>(text::fnv1a(feature) % feature_dim)] += 1.0;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    bump(std::string("u") + kSep + tokens[i]);
    if (i + 1 < tokens.size()) {
      bump(std::string("b") + kSep + tokens[i] + kSep + tokens[i + 1]);
    }
  }
  SparseFeatures f;
  double sq = 0.0;
  for (const auto& [idx, c] : counts) sq += c * c;
  const double inv = 1.0 / std::sqrt(sq);
  f.index.reserve(counts.size());
  f.value.reserve(counts.size());
  for (const auto& [idx, c] : counts) {
    f.index.push_back(idx);
    f.value.push_back(c * inv);
  }
  return f;
}

DualWeights DualWeights::random(std::size_t dimension, std::size_t feature_dim,
                                std::uint64_t seed, double sigma) {
  if (dimension == 0 || feature_dim == 0) {
    throw Error(Errc::invalid_argument, "embedder dimensions must be positive");
  }
  DualWeights w;
  w.dimension = dimension;
  w.feature_dim = feature_dim;
  w.seed = seed;
  Rng rng(seed);
  w.key.resize(dimension * feature_dim);
  w.query.resize(dimension * feature_dim);
  for (auto& v : w.key) v = sigma * rng.gaussian();
  for (auto& v : w.query) v = sigma * rng.gaussian();
  return w;
}

Vector project(std::span<const double> weights, std::size_t dimension, const SparseFeatures& x) {
  Vector out(dimension, 0.0);
  for (std::size_t k = 0; k < x.index.size(); ++k) {
    const double* col = weights.data() + static_cast<std::size_t>(x.index[k]) * dimension;
    const double v = x.value[k];
    for (std::size_t d = 0; d < dimension; ++d) out[d] += v * col[d];
  }
  return out;
}

Embedder Embedder::hash_features(std::size_t dimension) {
  if (dimension == 0) throw Error(Errc::invalid_argument, "dimension must be positive");
  Embedder e;
  e.kind_ = EmbedderKind::hash_features;
  e.dimension_ = dimension;
  e.feature_dim_ = dimension;
  return e;
}

Embedder Embedder::trained_dual(DualWeights weights) {
  if (weights.key.size() != weights.dimension * weights.feature_dim ||
      weights.query.size() != weights.key.size() || weights.dimension == 0) {
    throw Error(Errc::dimension_mismatch, "weight matrices do not match D x F");
  }
  Embedder e;
  e.kind_ = EmbedderKind::trained_dual;
  e.dimension_ = weights.dimension;
  e.feature_dim_ = weights.feature_dim;
  e.weights_ = std::make_shared<const DualWeights>(std::move(weights));
  return e;
}

Vector Embedder::embed_key(std::string_view text) const {
  const auto x = featurize(text, feature_dim_);
  if (kind_ == EmbedderKind::trained_dual) return project(weights_->key, dimension_, x);
  Vector out(dimension_, 0.0);
  for (std::size_t k = 0; k < x.index.size(); ++k) out[x.index[k]] = x.value[k];
  return out;
}

Vector Embedder::embed_query(std::string_view text) const {
  if (kind_ == EmbedderKind::trained_dual) {
    return project(weights_->query, dimension_, featurize(text, feature_dim_));
  }
  return embed_key(text);
}

std::string Embedder::serialize() const {
  binio::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(kind_));
  w.u32(static_cast<std::uint32_t>(dimension_));
  w.u64(feature_dim_);
  w.u64(weights_ ? weights_->seed : 0);
  if (weights_) {
    w.f64s(weights_->key);
    w.f64s(weights_->query);
  }
  return w.finish();
}

Embedder Embedder::deserialize(std::string bytes) {
  binio::Reader r(std::move(bytes));
  if (r.bytes(4) != std::string_view(kMagic, 4)) {
    throw Error(Errc::corrupt_file, "not an embedder file");
  }
  if (r.u32() != kVersion) throw Error(Errc::corrupt_file, "unsupported embedder version");
  const auto kind = static_cast<EmbedderKind>(r.u32());
  const std::size_t dim = r.u32();
  const std::size_t fdim = r.u64();
  const std::uint64_t seed = r.u64();
  if (kind == EmbedderKind::hash_features) {
    if (!r.at_end()) throw Error(Errc::corrupt_file, "trailing bytes in embedder file");
    return hash_features(dim);
  }
  if (kind != EmbedderKind::trained_dual) throw Error(Errc::corrupt_file, "unknown embedder kind");
  DualWeights w;
  w.dimension = dim;
  w.feature_dim = fdim;
  w.seed = seed;
  w.key.resize(dim * fdim);
  w.query.resize(dim * fdim);
  for (auto& v : w.key) v = r.f64();
  for (auto& v : w.query) v = r.f64();
  if (!r.at_end()) throw Error(Errc::corrupt_file, "trailing bytes in embedder file");
  return trained_dual(std::move(w));
}

void Embedder::save(const std::filesystem::path& path) const {
  binio::write_file_atomic(path, serialize());
}

Embedder Embedder::load(const std::filesystem::path& path) {
  return deserialize(binio::read_file(path));
}

double contrastive_loss_from_scores(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw Error(Errc::invalid_argument, "need a positive and at least one negative");
  }
  const auto top = std::max_element(scores.begin(), scores.end());
  const double m = *top;
  // log sum exp(s_i - m) = log1p(sum over i != argmax), exact near 0.
  double rest = 0.0;
  for (auto it = scores.begin(); it != scores.end(); ++it) {
    if (it != top) rest += std::exp(*it - m);
  }
  return (scores[0] - m) - std::log1p(rest);
}

double contrastive_loss(std::span<const double> query, std::span<const double> positive,
                        std::span<const std::span<const double>> negatives) {
  if (negatives.empty()) {
    throw Error(Errc::invalid_argument, "need at least one negative");
  }
  auto check = [&](std::span<const double> v) {
    if (v.size() != query.size()) {
      throw Error(Errc::dimension_mismatch, "vector dimension mismatch in contrastive_loss");
    }
  };
  check(positive);
  std::vector<double> scores;
  scores.reserve(negatives.size() + 1);
  scores.push_back(kernels::dot(query, positive));
  for (const auto& n : negatives) {
    check(n);
    scores.push_back(kernels::dot(query, n));
  }
  return contrastive_loss_from_scores(scores);
}

std::span<double> Gradient::key_column(std::uint32_t j) {
  auto& col = key_[j];
  if (col.empty()) col.assign(dimension_, 0.0);
  return col;
}

std::span<double> Gradient::query_column(std::uint32_t j) {
  auto& col = query_[j];
  if (col.empty()) col.assign(dimension_, 0.0);
  return col;
}

std::span<const double> Gradient::key_column_or_empty(std::uint32_t j) const {
  const auto it = key_.find(j);
  return it == key_.end() ? std::span<const double>{} : std::span<const double>(it->second);
}

std::span<const double> Gradient::query_column_or_empty(std::uint32_t j) const {
  const auto it = query_.find(j);
  return it == query_.end() ? std::span<const double>{} : std::span<const double>(it->second);
}

void Gradient::apply(DualWeights& weights, double scale) const {
  // Ordered application keeps floating-point results independent of hash
  // table iteration order.
  auto apply_side = [&](const auto& cols, std::vector<double>& w) {
    std::vector<std::uint32_t> keys;
    keys.reserve(cols.size());
    for (const auto& [j, g] : cols) keys.push_back(j);
    std::sort(keys.begin(), keys.end());
    for (const auto j : keys) {
      const auto& g = cols.at(j);
      double* col = w.data() + static_cast<std::size_t>(j) * dimension_;
      for (std::size_t d = 0; d < dimension_; ++d) col[d] -= scale * g[d];
    }
  };
  apply_side(key_, weights.key);
  apply_side(query_, weights.query);
}

void Gradient::clear() {
  key_.clear();
  query_.clear();
}

double pair_objective(const DualWeights& weights, const PairFeatures& pair, Gradient* grad) {
  const std::size_t dim = weights.dimension;
  const Vector q = project(weights.query, dim, pair.query);
  std::vector<Vector> keys;
  keys.reserve(pair.negatives.size() + 1);
  keys.push_back(project(weights.key, dim, pair.positive));
  for (const auto& n : pair.negatives) keys.push_back(project(weights.key, dim, n));

  std::vector<double> scores(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) scores[i] = kernels::dot(q, keys[i]);
  const double objective = contrastive_loss_from_scores(scores);
  if (grad == nullptr) return objective;

  // d(-l)/ds_i = softmax(s)_i - [i == 0]
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> g(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    g[i] = std::exp(scores[i] - m);
    z += g[i];
  }
  for (auto& v : g) v /= z;
  g[0] -= 1.0;

  Vector dq(dim, 0.0);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (std::size_t d = 0; d < dim; ++d) dq[d] += g[i] * keys[i][d];
  }
  for (std::size_t k = 0; k < pair.query.index.size(); ++k) {
    auto col = grad->query_column(pair.query.index[k]);
    const double x = pair.query.value[k];
    for (std::size_t d = 0; d < dim; ++d) col[d] += dq[d] * x;
  }
  auto add_key = [&](const SparseFeatures& f, double gi) {
    for (std::size_t k = 0; k < f.index.size(); ++k) {
      auto col = grad->key_column(f.index[k]);
      const double x = f.value[k] * gi;
      for (std::size_t d = 0; d < dim; ++d) col[d] += q[d] * x;
    }
  };
  add_key(pair.positive, g[0]);
  for (std::size_t i = 0; i < pair.negatives.size(); ++i) add_key(pair.negatives[i], g[i + 1]);
  return objective;
}

DatasetSplit make_pairs(std::span<const QaPair> corpus, std::size_t negatives_per_pair,
                        std::uint64_t seed, SplitRatio ratio) {
  if (negatives_per_pair == 0) {
    throw Error(Errc::invalid_argument, "need at least one negative per pair");
  }
  if (corpus.size() < negatives_per_pair + 1) {
    throw Error(Errc::pool_too_small,
                "pool too small: " + std::to_string(corpus.size()) + " pairs for " +
                    std::to_string(negatives_per_pair) + " negatives");
  }
  if (ratio.train < 0 || ratio.dev < 0 || ratio.test < 0 ||
      std::abs(ratio.train + ratio.dev + ratio.test - 1.0) > 1e-9) {
    throw Error(Errc::invalid_argument, "split ratio must be non-negative and sum to 1");
  }
  Rng rng(seed);
  std::vector<TrainPair> pairs;
  pairs.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    // Responses identical to the positive are excluded along with it.
    std::vector<std::size_t> pool;
    pool.reserve(corpus.size());
    for (std::size_t j = 0; j < corpus.size(); ++j) {
      if (j != i && corpus[j].response != corpus[i].response) pool.push_back(j);
    }
    if (pool.size() < negatives_per_pair) {
      throw Error(Errc::pool_too_small, "pool too small for pair " + std::to_string(i));
    }
    const auto picks = rng.sample_excluding(pool.size(), negatives_per_pair, pool.size());
    TrainPair p;
    p.query_text = corpus[i].query;
    p.positive_text = corpus[i].response;
    for (const auto k : picks) p.negatives.push_back(corpus[pool[k]].response);
    pairs.push_back(std::move(p));
  }
  rng.shuffle(pairs);

  const auto n = static_cast<double>(pairs.size());
  const auto n_dev = static_cast<std::size_t>(std::llround(n * ratio.dev));
  const auto n_test = static_cast<std::size_t>(std::llround(n * ratio.test));
  const std::size_t n_train = pairs.size() - n_dev - n_test;
  DatasetSplit split;
  auto begin = std::make_move_iterator(pairs.begin());
  split.train.assign(begin, begin + static_cast<std::ptrdiff_t>(n_train));
  split.dev.assign(begin + static_cast<std::ptrdiff_t>(n_train),
                   begin + static_cast<std::ptrdiff_t>(n_train + n_dev));
  split.test.assign(begin + static_cast<std::ptrdiff_t>(n_train + n_dev),
                    std::make_move_iterator(pairs.end()));
  return split;
}

std::vector<QaPair> synthetic_corpus(std::size_t pairs, std::uint64_t seed, std::size_t facets,
                                     std::size_t values, std::size_t filler_words) {
  if (facets == 0 || facets > 26 || values == 0 || filler_words == 0) {
    throw Error(Errc::invalid_argument, "synthetic corpus needs 1-26 facets, values and filler");
  }
  double space = 1.0;
  for (std::size_t f = 0; f < facets; ++f) space *= static_cast<double>(values);
  if (static_cast<double>(pairs) > space) {
    throw Error(Errc::invalid_argument, "synthetic corpus: more pairs than facet combinations");
  }
  Rng rng(seed);
  auto filler = [&] { return "w" + std::to_string(rng.below(filler_words)); };
  std::set<std::vector<std::size_t>> used;
  std::vector<QaPair> out;
  out.reserve(pairs);
  std::vector<std::size_t> code(facets);
  std::vector<std::size_t> order(facets);
  while (out.size() < pairs) {
    for (auto& c : code) c = rng.below(values);
    if (!used.insert(code).second) continue;
    auto token = [&](std::size_t f) {
      return std::string(1, static_cast<char>('a' + f)) + "x" + std::to_string(code[f]);
    };
    std::string q = "which";
    for (std::size_t f = 0; f < facets; ++f) q += " " + token(f) + " " + filler();
    for (std::size_t f = 0; f < facets; ++f) order[f] = f;
    rng.shuffle(order);
    std::string r = filler();
    for (std::size_t f : order) r += " " + token(f) + " " + filler();
    out.push_back({std::move(q), std::move(r)});
  }
  return out;
}

std::vector<QaPair> read_pairs_corpus(const std::filesystem::path& path) {
  const std::string data = binio::read_file(path);
  std::vector<QaPair> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < data.size()) {
    auto nl = data.find('\n', pos);
    if (nl == std::string::npos) nl = data.size();
    const std::string line = data.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("query").get<std::string>(), j.at("response").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::parse_error,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::vector<PairFeatures> featurize_pairs(std::span<const TrainPair> pairs, std::size_t fdim) {
  std::vector<PairFeatures> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    PairFeatures f;
    f.query = featurize(p.query_text, fdim);
    f.positive = featurize(p.positive_text, fdim);
    for (const auto& n : p.negatives) f.negatives.push_back(featurize(n, fdim));
    out.push_back(std::move(f));
  }
  return out;
}

bool positive_wins(const DualWeights& w, const PairFeatures& p) {
  const Vector q = project(w.query, w.dimension, p.query);
  const double pos = kernels::dot(q, project(w.key, w.dimension, p.positive));
  for (const auto& n : p.negatives) {
    if (kernels::dot(q, project(w.key, w.dimension, n)) >= pos) return false;
  }
  return true;
}

double recall_of(const DualWeights& w, std::span<const PairFeatures> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& p : pairs) hits += positive_wins(w, p) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace

TrainResult train(const DatasetSplit& data, const TrainOptions& opts) {
  if (data.train.empty()) throw Error(Errc::invalid_argument, "empty train split");
  if (opts.batch_size == 0) throw Error(Errc::invalid_argument, "batch size must be positive");
  for (const auto& p : data.train) {
    if (p.negatives.empty()) throw Error(Errc::invalid_argument, "train pair without negatives");
  }
  const auto train_f = featurize_pairs(data.train, opts.feature_dim);
  const auto dev_f = featurize_pairs(data.dev, opts.feature_dim);

  DualWeights w = DualWeights::random(opts.dimension, opts.feature_dim, opts.seed, opts.init_sigma);
  Rng order_rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_f.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result{Embedder::hash_features(1), recall_of(w, dev_f), {}};
  Gradient grad(opts.dimension);
  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    order_rng.shuffle(order);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += opts.batch_size) {
      const std::size_t e = std::min(order.size(), b + opts.batch_size);
      grad.clear();
      for (std::size_t k = b; k < e; ++k) {
        const double obj = pair_objective(w, train_f[order[k]], &grad);
        if (!std::isfinite(obj)) {
          throw Error(Errc::non_finite_loss,
                      "non-finite objective at epoch " + std::to_string(epoch) + ", pair " +
                          std::to_string(order[k]) + " (learning rate " +
                          std::to_string(opts.learning_rate) + " too large?)");
        }
        total += obj;
      }
      grad.apply(w, opts.learning_rate / static_cast<double>(e - b));
    }
    result.history.push_back(
        {epoch, total / static_cast<double>(order.size()), recall_of(w, dev_f)});
  }
  result.embedder = Embedder::trained_dual(std::move(w));
  return result;
}

double recall_at_1(const Embedder& embedder, std::span<const TrainPair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& p : pairs) {
    const Vector q = embedder.embed_query(p.query_text);
    const double pos = kernels::dot(q, embedder.embed_key(p.positive_text));
    bool win = true;
    for (const auto& n : p.negatives) {
      if (kernels::dot(q, embedder.embed_key(n)) >= pos) {
        win = false;
        break;
      }
    }
    hits += win ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace dbchat::encoder
