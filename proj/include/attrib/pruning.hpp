#pragma once

// Embedding-similarity pruning of a comment corpus against the factor
// catalog, plus token-frequency export for corpus inspection.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attrib/corpus.hpp"
#include "attrib/embedding_store.hpp"
#include "attrib/factors.hpp"
#include "attrib/io.hpp"

namespace attrib {

struct SimilarityRecord {
  std::string comment_id;
  std::map<std::string, double> scores;
  double max_score = 0.0;
  std::string argmax_factor;
};

struct PruneResult {
  std::vector<Comment> kept;
  std::vector<SimilarityRecord> records;
};

struct PruneParams {
  double percentile = 0.20;
  double threshold = 0.7;
};

// Max over sentences of cosine(sentence embedding, factor embedding).
// Degenerate sentences score 0; a comment without sentences scores 0.
inline double comment_factor_sim(const Comment& d, std::span<const double> factor_vec, const EmbeddingStore& store,
                                 const CorpusStats& stats) {
  if (d.sentences.empty()) return 0.0;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& s : d.sentences) {
    auto emb = sentence_embedding(s.tokens, store, stats);
    double c = emb.degenerate() ? 0.0 : cosine(emb.vector, factor_vec);
    best = std::max(best, c);
  }
  return best;
}

inline double comment_factor_sim(const Comment& d, const Factor& f, const EmbeddingStore& store,
                                 const CorpusStats& stats) {
  return comment_factor_sim(d, factor_embedding(f, store), store, stats);
}

inline std::size_t percentile_cutoff(double percentile, std::size_t n) {
  auto c = static_cast<std::size_t>(std::ceil(percentile * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(c, n == 0 ? 0 : 1, n);
}

// A comment is kept iff it ranks within the top ceil(percentile * n) comments
// for at least one factor (ties at the cutoff are all kept) and its best
// factor score reaches `threshold`.
inline PruneResult prune(const std::vector<Comment>& comments, const FactorCatalog& catalog,
                         const EmbeddingStore& store, const CorpusStats& stats, PruneParams params = {}) {
  if (!(params.percentile > 0.0 && params.percentile <= 1.0)) detail::fail("percentile must lie in (0, 1]");
  PruneResult result;
  const std::size_t n = comments.size();
  if (n == 0) return result;

  std::vector<std::pair<std::string, Vector>> factor_vecs;
  for (const auto& f : catalog.factors()) factor_vecs.emplace_back(f.id, factor_embedding(f, store));

  // Sentence embeddings do not depend on the factor; compute them once.
  std::vector<std::vector<SentenceEmbedding>> sent_embs(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& s : comments[i].sentences) sent_embs[i].push_back(sentence_embedding(s.tokens, store, stats));

  result.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& rec = result.records[i];
    rec.comment_id = comments[i].id;
    for (const auto& [fid, fvec] : factor_vecs) {
      double best = sent_embs[i].empty() ? 0.0 : -std::numeric_limits<double>::infinity();
      for (const auto& e : sent_embs[i]) best = std::max(best, e.degenerate() ? 0.0 : cosine(e.vector, fvec));
      rec.scores[fid] = best;
    }
    bool first = true;
    for (const auto& [fid, sc] : rec.scores) {
      if (first || sc > rec.max_score) {
        rec.max_score = sc;
        rec.argmax_factor = fid;
        first = false;
      }
    }
  }

  const std::size_t cutoff = percentile_cutoff(params.percentile, n);
  std::vector<char> in_top(n, 0);
  std::vector<double> column(n);
  for (const auto& [fid, fvec] : factor_vecs) {
    for (std::size_t i = 0; i < n; ++i) column[i] = result.records[i].scores.at(fid);
    std::vector<double> sorted = column;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(cutoff - 1), sorted.end(),
                     std::greater<>());
    double boundary = sorted[cutoff - 1];
    for (std::size_t i = 0; i < n; ++i)
      if (column[i] >= boundary) in_top[i] = 1;
  }
  for (std::size_t i = 0; i < n; ++i)
    if (in_top[i] && result.records[i].max_score >= params.threshold) result.kept.push_back(comments[i]);
  return result;
}

// Total token occurrences, stopwords excluded.
inline std::map<std::string, std::size_t> token_frequency_export(const std::vector<Comment>& comments,
                                                                 const std::unordered_set<std::string>& stopwords) {
  std::map<std::string, std::size_t> out;
  for (const auto& c : comments)
    for (const auto& s : c.sentences)
      for (const auto& t : s.tokens)
        if (!stopwords.count(t)) ++out[t];
  return out;
}

inline std::string serialize_token_frequencies(const std::map<std::string, std::size_t>& freq) {
  std::vector<std::pair<std::string, std::size_t>> rows(freq.begin(), freq.end());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::string out;
  for (const auto& [tok, n] : rows) out += tok + "\t" + std::to_string(n) + "\n";
  return out;
}

// One `comment_id  factor_id  score` row per pair followed by a summary row
// `comment_id  #max  max_score  argmax_factor  kept|pruned`.
inline std::string serialize_similarity(const PruneResult& result) {
  std::set<std::string> kept;
  for (const auto& c : result.kept) kept.insert(c.id);
  std::string out;
  for (const auto& r : result.records) {
    for (const auto& [fid, sc] : r.scores) out += r.comment_id + "\t" + fid + "\t" + io::format_double(sc, 9) + "\n";
    out += r.comment_id + "\t#max\t" + io::format_double(r.max_score, 9) + "\t" + r.argmax_factor + "\t" +
           (kept.count(r.comment_id) ? "kept" : "pruned") + "\n";
  }
  return out;
}

}  // namespace attrib
