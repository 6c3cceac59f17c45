#pragma once

// Latent Dirichlet allocation fitted with collapsed Gibbs sampling.
//
// Documents are comments; tokens are sentence tokens minus stopwords, with
// tokens rarer than `min_count` dropped from the vocabulary. Point estimates
// come from the counts of the final sweep:
//
//   phi[k][v]   = (n_kv + beta)  / (n_k + V * beta)
//   theta[d][k] = (n_dk + alpha) / (n_d + K * alpha)

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "attrib/corpus.hpp"
#include "attrib/error.hpp"
#include "attrib/io.hpp"
#include "attrib/random.hpp"

namespace attrib {

struct LdaConfig {
  std::size_t n_topics = 5;
  double alpha = 10.0;  // 50 / K
  double beta = 0.01;
  std::size_t n_iterations = 1000;
  std::size_t burn_in = 200;
  std::uint64_t seed = 0;
  std::size_t min_count = 3;

  static LdaConfig with_topics(std::size_t k) {
    LdaConfig c;
    c.n_topics = k;
    c.alpha = 50.0 / static_cast<double>(k);
    return c;
  }

  void validate() const {
    if (n_topics < 1) detail::fail("LDA: topic count must be at least 1");
    if (!(alpha > 0.0) || !(beta > 0.0)) detail::fail("LDA: alpha and beta must be positive");
    if (n_iterations == 0) detail::fail("LDA: n_iterations must be positive");
    if (burn_in >= n_iterations) detail::fail("LDA: burn_in must be smaller than n_iterations");
  }
};

using Matrix = std::vector<std::vector<double>>;

struct TopicModel {
  Matrix topic_word;  // K x V
  Matrix doc_topic;   // D x K
  std::vector<std::string> vocabulary;
  std::vector<double> topic_proportions;
  std::vector<std::string> doc_ids;

  std::size_t n_topics() const { return topic_word.size(); }
};

// Sampler state exposed to per-sweep observers (used to check count
// conservation).
struct LdaState {
  std::vector<std::vector<std::size_t>> docs;  // token ids per document
  std::vector<std::vector<std::size_t>> z;     // topic per token
  std::vector<std::vector<std::size_t>> n_dk;
  std::vector<std::vector<std::size_t>> n_kv;
  std::vector<std::size_t> n_k;
};

using LdaObserver = std::function<void(std::size_t sweep, const LdaState&)>;

namespace detail {

inline std::vector<std::vector<std::string>> lda_documents(const std::vector<Comment>& comments,
                                                           const std::unordered_set<std::string>& stopwords) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(comments.size());
  for (const auto& c : comments) {
    std::vector<std::string> d;
    for (const auto& s : c.sentences)
      for (const auto& t : s.tokens)
        if (!stopwords.count(t)) d.push_back(t);
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace detail

inline TopicModel fit_lda(const std::vector<std::vector<std::string>>& raw_docs, std::vector<std::string> doc_ids,
                          const LdaConfig& cfg, const LdaObserver& observer = {}) {
  cfg.validate();
  std::map<std::string, std::size_t> counts;
  for (const auto& d : raw_docs)
    for (const auto& t : d) ++counts[t];
  std::map<std::string, std::size_t> vocab_index;
  TopicModel model;
  for (const auto& [tok, n] : counts)
    if (n >= cfg.min_count) {
      vocab_index.emplace(tok, model.vocabulary.size());
      model.vocabulary.push_back(tok);
    }
  if (model.vocabulary.empty()) detail::fail("LDA: empty effective vocabulary");

  const std::size_t K = cfg.n_topics, V = model.vocabulary.size(), D = raw_docs.size();
  LdaState st;
  st.docs.resize(D);
  st.z.resize(D);
  st.n_dk.assign(D, std::vector<std::size_t>(K, 0));
  st.n_kv.assign(K, std::vector<std::size_t>(V, 0));
  st.n_k.assign(K, 0);

  Rng rng(cfg.seed);
  for (std::size_t d = 0; d < D; ++d) {
    for (const auto& t : raw_docs[d]) {
      auto it = vocab_index.find(t);
      if (it == vocab_index.end()) continue;
      std::size_t k = rng.index(K);
      st.docs[d].push_back(it->second);
      st.z[d].push_back(k);
      ++st.n_dk[d][k];
      ++st.n_kv[k][it->second];
      ++st.n_k[k];
    }
  }

  const double vbeta = static_cast<double>(V) * cfg.beta;
  std::vector<double> cumulative(K);
  for (std::size_t sweep = 0; sweep < cfg.n_iterations; ++sweep) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t i = 0; i < st.docs[d].size(); ++i) {
        const std::size_t v = st.docs[d][i];
        std::size_t k = st.z[d][i];
        --st.n_dk[d][k];
        --st.n_kv[k][v];
        --st.n_k[k];
        double total = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
          total += (static_cast<double>(st.n_dk[d][j]) + cfg.alpha) *
                   (static_cast<double>(st.n_kv[j][v]) + cfg.beta) / (static_cast<double>(st.n_k[j]) + vbeta);
          cumulative[j] = total;
        }
        double u = rng.uniform() * total;
        k = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        if (k >= K) k = K - 1;
        st.z[d][i] = k;
        ++st.n_dk[d][k];
        ++st.n_kv[k][v];
        ++st.n_k[k];
      }
    }
    if (observer) observer(sweep, st);
  }

  model.topic_word.assign(K, std::vector<double>(V));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t v = 0; v < V; ++v)
      model.topic_word[k][v] =
          (static_cast<double>(st.n_kv[k][v]) + cfg.beta) / (static_cast<double>(st.n_k[k]) + vbeta);
  model.doc_topic.assign(D, std::vector<double>(K));
  const double kalpha = static_cast<double>(K) * cfg.alpha;
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t k = 0; k < K; ++k)
      model.doc_topic[d][k] = (static_cast<double>(st.n_dk[d][k]) + cfg.alpha) /
                              (static_cast<double>(st.docs[d].size()) + kalpha);
  std::size_t n_tokens = 0;
  for (auto n : st.n_k) n_tokens += n;
  model.topic_proportions.resize(K);
  for (std::size_t k = 0; k < K; ++k)
    model.topic_proportions[k] = static_cast<double>(st.n_k[k]) / static_cast<double>(n_tokens);
  model.doc_ids = std::move(doc_ids);
  return model;
}

inline TopicModel fit_lda(const std::vector<Comment>& comments, const std::unordered_set<std::string>& stopwords,
                          const LdaConfig& cfg, const LdaObserver& observer = {}) {
  std::vector<std::string> ids;
  for (const auto& c : comments) ids.push_back(c.id);
  return fit_lda(detail::lda_documents(comments, stopwords), std::move(ids), cfg, observer);
}

// Highest-probability tokens of topic k, ties in lexicographic order.
inline std::vector<std::string> top_tokens(const TopicModel& model, std::size_t k, std::size_t n) {
  if (k >= model.n_topics()) detail::fail("topic index ", k, " out of range");
  std::vector<std::size_t> order(model.vocabulary.size());
  for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
  const auto& row = model.topic_word[k];
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  n = std::min(n, order.size());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(model.vocabulary[order[i]]);
  return out;
}

inline const std::vector<double>& topic_proportions(const TopicModel& model) { return model.topic_proportions; }

inline std::string serialize_matrix(const Matrix& m) {
  std::string out;
  for (const auto& row : m) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ' ';
      out += io::format_exact(row[j]);
    }
    out += '\n';
  }
  return out;
}

// `topic<TAB>proportion<TAB>top tokens (space separated)`
inline std::string serialize_topics_summary(const TopicModel& model, std::size_t n_top = 10) {
  std::string out;
  for (std::size_t k = 0; k < model.n_topics(); ++k) {
    out += std::to_string(k) + "\t" + io::format_double(model.topic_proportions[k], 6) + "\t";
    auto toks = top_tokens(model, k, n_top);
    for (std::size_t i = 0; i < toks.size(); ++i) out += (i ? " " : "") + toks[i];
    out += '\n';
  }
  return out;
}

}  // namespace attrib
