#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "attrib/corpus.hpp"
#include "attrib/error.hpp"
#include "attrib/io.hpp"

namespace attrib {

using Vector = std::vector<double>;

// Static word vectors plus the stopword list used when embedding sentences.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(std::size_t dim, std::unordered_set<std::string> stopwords)
      : dim_(dim), stopwords_(std::move(stopwords)) {
    if (dim_ == 0) detail::fail("embedding dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  // Later insertions of the same token overwrite earlier ones.
  void insert(std::string token, Vector v) {
    if (v.size() != dim_) detail::fail("vector for '", token, "' has length ", v.size(), ", expected ", dim_);
    vectors_[std::move(token)] = std::move(v);
  }

  // std::nullopt marks an out-of-vocabulary token.
  std::optional<std::span<const double>> lookup(const std::string& token) const {
    auto it = vectors_.find(token);
    if (it == vectors_.end()) return std::nullopt;
    return std::span<const double>(it->second);
  }

  bool contains(const std::string& token) const { return vectors_.count(token) != 0; }
  bool is_stopword(const std::string& token) const { return stopwords_.count(token) != 0; }
  const std::unordered_set<std::string>& stopwords() const { return stopwords_; }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Vector> vectors_;
  std::unordered_set<std::string> stopwords_;
};

// Parses the whitespace-separated `token v1 ... vD` layout. The dimension is
// fixed by the first non-blank line.
inline EmbeddingStore parse_vectors(std::string_view content, std::unordered_set<std::string> stopwords) {
  std::optional<EmbeddingStore> store;
  std::size_t line_no = 0;
  for (std::string_view line : io::lines(content)) {
    ++line_no;
    auto fields = io::split_ws(line);
    if (fields.empty()) continue;
    if (fields.size() < 2) detail::fail("vector file line ", line_no, ": no vector components");
    std::size_t dim = fields.size() - 1;
    if (!store) store.emplace(dim, std::move(stopwords));
    if (dim != store->dim())
      detail::fail("vector file line ", line_no, ": expected ", store->dim(), " components, found ", dim);
    Vector v(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      auto x = io::parse_double(fields[k + 1]);
      if (!x) detail::fail("vector file line ", line_no, " column ", k + 2, ": cannot parse '", fields[k + 1], "'");
      v[k] = *x;
    }
    store->insert(std::string(fields[0]), std::move(v));
  }
  if (!store) detail::fail("vector file is empty");
  return std::move(*store);
}

inline EmbeddingStore load_vectors(const std::filesystem::path& path, const std::filesystem::path& stopword_path) {
  return parse_vectors(io::read_file(path), load_word_list(stopword_path));
}

// Smoothed inverse document frequency over sentences as documents.
inline double idf(const CorpusStats& stats, const std::string& token) {
  double n = static_cast<double>(stats.n_sentences);
  double df = static_cast<double>(stats.df(token));
  return std::log((1.0 + n) / (1.0 + df)) + 1.0;
}

struct SentenceEmbedding {
  Vector vector;
  std::size_t n_contributing_tokens = 0;

  bool degenerate() const { return n_contributing_tokens == 0; }
};

// tf-idf weighted mean of the in-vocabulary, non-stopword tokens.
inline SentenceEmbedding sentence_embedding(std::span<const std::string> tokens, const EmbeddingStore& store,
                                            const CorpusStats& stats) {
  SentenceEmbedding out{Vector(store.dim(), 0.0), 0};
  std::map<std::string, std::size_t> tf;
  for (const auto& t : tokens) {
    if (store.is_stopword(t) || !store.contains(t)) continue;
    ++tf[t];
    ++out.n_contributing_tokens;
  }
  if (tf.empty()) return out;
  double total = 0.0;
  for (const auto& [tok, count] : tf) {
    double w = static_cast<double>(count) * idf(stats, tok);
    auto e = *store.lookup(tok);
    for (std::size_t k = 0; k < e.size(); ++k) out.vector[k] += w * e[k];
    total += w;
  }
  for (double& x : out.vector) x /= total;
  return out;
}

inline double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) s += u[k] * v[k];
  return s;
}

inline double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

// Zero-norm inputs yield 0. The result is clamped to [-1, 1] against rounding.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) detail::fail("cosine: length mismatch (", u.size(), " vs ", v.size(), ")");
  double nu = norm(u), nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  double c = dot(u, v) / (nu * nv);
  return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

}  // namespace attrib
