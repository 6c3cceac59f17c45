#pragma once

// Cross-attention attribution classifier.
//
// For a sentence d = {w_i} and a factor f = {w_j} with token vectors e(.):
//
//   E(f)    = mean_j e(w_j)
//   alpha_i = cos(e(w_i), E(f))            (raw cosine, not normalized)
//   E(d)    = sum_i alpha_i e(w_i)
//   A(d, f) = sigmoid(W . [E(d) : E(f)] + B)
//
// Token vectors are frozen; only W (length 2 * dim) and B are learned, by
// mini-batch Adam on a positive-weighted binary cross-entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attrib/corpus.hpp"
#include "attrib/embedding_store.hpp"
#include "attrib/error.hpp"
#include "attrib/evaluation.hpp"
#include "attrib/factors.hpp"
#include "attrib/io.hpp"
#include "attrib/random.hpp"

namespace attrib {

// ---------------------------------------------------------------------------
// Token-vector files

struct TokenVectors {
  SentenceKey key;
  std::vector<Vector> vectors;
};

struct TokenVectorFile {
  std::size_t dim = 0;
  std::vector<TokenVectors> blocks;
};

// Grammar:
//   DIM <d>
//   ( KEY <comment_id> <sentence_index> <n_tokens>
//     <d floats>   x n_tokens )*
inline TokenVectorFile parse_token_vectors(std::string_view content) {
  TokenVectorFile file;
  auto ls = io::lines(content);
  std::size_t i = 0;
  auto err = [&](std::size_t line, const std::string& why) { detail::fail("token-vector file line ", line, ": ", why); };
  while (i < ls.size() && io::trim(ls[i]).empty()) ++i;
  if (i == ls.size()) err(1, "missing DIM header");
  {
    auto f = io::split_ws(ls[i]);
    auto d = f.size() == 2 && f[0] == "DIM" ? io::parse_int(f[1]) : std::nullopt;
    if (!d || *d <= 0) err(i + 1, "expected 'DIM <d>'");
    file.dim = static_cast<std::size_t>(*d);
    ++i;
  }
  std::set<SentenceKey> seen;
  while (i < ls.size()) {
    if (io::trim(ls[i]).empty()) {
      ++i;
      continue;
    }
    auto f = io::split_ws(ls[i]);
    if (f.size() != 4 || f[0] != "KEY") err(i + 1, "expected 'KEY <comment_id> <sentence_index> <n_tokens>'");
    auto idx = io::parse_int(f[2]);
    auto n = io::parse_int(f[3]);
    if (!idx || *idx < 0 || !n || *n < 0) err(i + 1, "bad sentence index or token count");
    TokenVectors block{{std::string(f[1]), static_cast<std::size_t>(*idx)}, {}};
    if (!seen.insert(block.key).second) err(i + 1, "duplicate key " + block.key.comment_id + " " + std::string(f[2]));
    ++i;
    for (long long t = 0; t < *n; ++t, ++i) {
      if (i >= ls.size()) err(i + 1, "unexpected end of file inside block");
      auto vals = io::split_ws(ls[i]);
      if (vals.size() != file.dim) err(i + 1, "expected " + std::to_string(file.dim) + " values");
      Vector v(file.dim);
      for (std::size_t k = 0; k < file.dim; ++k) {
        auto x = io::parse_double(vals[k]);
        if (!x) err(i + 1, "cannot parse '" + std::string(vals[k]) + "'");
        v[k] = static_cast<float>(*x);  // stored precision is float32
      }
      block.vectors.push_back(std::move(v));
    }
    file.blocks.push_back(std::move(block));
  }
  return file;
}

// Values are written with 9 significant digits, so float32 vectors survive a
// write/read cycle bit-exactly and re-serializing a parsed file reproduces it.
inline std::string serialize_token_vectors(const TokenVectorFile& file) {
  std::string out = "DIM " + std::to_string(file.dim) + "\n";
  for (const auto& b : file.blocks) {
    if (b.key.comment_id.empty() || detail::has_space(b.key.comment_id))
      detail::fail("token-vector key '", b.key.comment_id, "' must be nonempty without whitespace");
    out += "KEY " + b.key.comment_id + " " + std::to_string(b.key.sentence_index) + " " +
           std::to_string(b.vectors.size()) + "\n";
    for (const auto& v : b.vectors) {
      if (v.size() != file.dim) detail::fail("token-vector block ", b.key.comment_id, ": vector length mismatch");
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (k) out += ' ';
        out += io::format_double(v[k], 9);
      }
      out += '\n';
    }
  }
  return out;
}

inline TokenVectorFile load_token_vectors(const std::filesystem::path& path) {
  return parse_token_vectors(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Representations

enum class AttentionMode { Cosine, Softmax };

inline std::string to_string(AttentionMode m) { return m == AttentionMode::Cosine ? "cosine" : "softmax"; }

inline AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "cosine") return AttentionMode::Cosine;
  if (s == "softmax") return AttentionMode::Softmax;
  detail::fail("unknown attention mode: ", s);
}

inline Vector factor_representation(std::span<const Vector> phrase_vectors) {
  if (phrase_vectors.empty()) detail::fail("factor representation: no phrase vectors");
  Vector out(phrase_vectors.front().size(), 0.0);
  for (const auto& v : phrase_vectors) {
    if (v.size() != out.size()) detail::fail("factor representation: dimension mismatch");
    for (std::size_t k = 0; k < v.size(); ++k) out[k] += v[k];
  }
  for (double& x : out) x /= static_cast<double>(phrase_vectors.size());
  return out;
}

inline std::vector<double> attention_weights(std::span<const Vector> tokens, std::span<const double> factor_rep,
                                             AttentionMode mode = AttentionMode::Cosine) {
  std::vector<double> alpha;
  alpha.reserve(tokens.size());
  for (const auto& e : tokens) {
    if (e.size() != factor_rep.size()) detail::fail("attention: dimension mismatch");
    alpha.push_back(cosine(e, factor_rep));
  }
  if (mode == AttentionMode::Softmax && !alpha.empty()) {
    double mx = *std::max_element(alpha.begin(), alpha.end()), z = 0.0;
    for (double& a : alpha) z += (a = std::exp(a - mx));
    for (double& a : alpha) a /= z;
  }
  return alpha;
}

inline Vector attended_representation(std::span<const Vector> tokens, std::span<const double> factor_rep,
                                      AttentionMode mode = AttentionMode::Cosine) {
  if (tokens.empty()) detail::fail("attended representation: empty sentence");
  auto alpha = attention_weights(tokens, factor_rep, mode);
  Vector out(factor_rep.size(), 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += alpha[i] * tokens[i][k];
  return out;
}

// [E(d) : E(f)]. A sentence without token vectors (every token out of
// vocabulary under static vectors) contributes a zero E(d).
inline Vector pair_features(std::span<const Vector> tokens, std::span<const double> factor_rep,
                            AttentionMode mode = AttentionMode::Cosine) {
  Vector x(2 * factor_rep.size(), 0.0);
  if (!tokens.empty()) {
    Vector ed = attended_representation(tokens, factor_rep, mode);
    std::copy(ed.begin(), ed.end(), x.begin());
  }
  std::copy(factor_rep.begin(), factor_rep.end(), x.begin() + static_cast<std::ptrdiff_t>(factor_rep.size()));
  return x;
}

// ---------------------------------------------------------------------------
// Model

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

struct AttributionModel {
  std::size_t dim = 0;
  Vector weights;  // W, length 2 * dim
  double bias = 0.0;
  std::optional<double> detection_threshold;
  AttentionMode attention = AttentionMode::Cosine;

  AttributionModel() = default;
  AttributionModel(std::size_t d, Vector w, double b) : dim(d), weights(std::move(w)), bias(b) {
    if (weights.size() != 2 * dim) detail::fail("model weights must have length 2 * dim");
  }

  double logit(std::span<const double> features) const {
    if (features.size() != weights.size())
      detail::fail("score: feature length ", features.size(), " does not match model (", weights.size(), ")");
    return dot(weights, features) + bias;
  }

  double score_features(std::span<const double> features) const { return sigmoid(logit(features)); }
};

// A(d, f) with dropout disabled.
inline double score(const AttributionModel& model, std::span<const Vector> sentence_vectors,
                    std::span<const double> factor_rep) {
  if (factor_rep.size() != model.dim) detail::fail("score: factor dimension does not match model");
  return model.score_features(pair_features(sentence_vectors, factor_rep, model.attention));
}

// Weighted binary cross-entropy of one example, clamped away from log(0).
inline double bce_loss(double p, double y, double pos_weight) {
  constexpr double eps = 1e-12;
  p = std::clamp(p, eps, 1.0 - eps);
  return -(pos_weight * y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

// d loss / d logit for the weighted BCE above.
inline double bce_dlogit(double p, double y, double pos_weight) {
  return p * (pos_weight * y + 1.0 - y) - pos_weight * y;
}

struct Gradient {
  Vector weights;
  double bias = 0.0;
};

// Mean loss and its gradient over a batch of (features, label) examples.
inline double batch_loss_and_gradient(const AttributionModel& model, std::span<const Vector> xs,
                                      std::span<const double> ys, double pos_weight, Gradient* grad) {
  if (grad) {
    grad->weights.assign(model.weights.size(), 0.0);
    grad->bias = 0.0;
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double p = model.score_features(xs[i]);
    loss += bce_loss(p, ys[i], pos_weight);
    if (grad) {
      double g = bce_dlogit(p, ys[i], pos_weight);
      for (std::size_t k = 0; k < xs[i].size(); ++k) grad->weights[k] += g * xs[i][k];
      grad->bias += g;
    }
  }
  double n = static_cast<double>(xs.size());
  if (grad) {
    for (double& g : grad->weights) g /= n;
    grad->bias /= n;
  }
  return loss / n;
}

// ---------------------------------------------------------------------------
// Training data

struct LabeledPair {
  SentenceKey sentence;
  std::string factor_id;
  int label = 0;
};

struct DataSplit {
  double train = 0.8;
  double holdout = 0.2;
  double model_selection = 0.1;  // fraction of the training part
};

struct TrainingConfig {
  double learning_rate = 2e-5;
  std::size_t batch_size = 4;
  std::size_t n_epochs = 3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double pos_weight = 1.0;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;
  DataSplit split;
  AttentionMode attention = AttentionMode::Cosine;

  void validate() const {
    auto frac = [](double x) { return x > 0.0 && x < 1.0; };
    if (!frac(split.train) || !frac(split.holdout) || !frac(split.model_selection))
      detail::fail("split fractions must lie in (0, 1)");
    if (std::abs(split.train + split.holdout - 1.0) > 1e-9) detail::fail("train and holdout fractions must sum to 1");
    if (batch_size < 1) detail::fail("batch_size must be at least 1");
    if (n_epochs < 1) detail::fail("n_epochs must be at least 1");
    if (!(learning_rate > 0.0)) detail::fail("learning_rate must be positive");
    if (!(pos_weight >= 1.0)) detail::fail("pos_weight must be at least 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) detail::fail("dropout_rate must lie in [0, 1)");
  }
};

// Positive sentences pair with every factor of their labelled categories
// (label 1) and with all other factors (label 0); explicit negatives pair
// with every factor as label 0. Unannotated sentences are skipped.
inline std::vector<LabeledPair> build_pairs(const std::vector<Comment>& comments, const FactorCatalog& catalog,
                                            const std::set<SentenceKey>* only = nullptr) {
  std::vector<LabeledPair> out;
  for (const auto& c : comments)
    for (const auto& s : c.sentences) {
      if (!s.annotated) continue;
      SentenceKey key{c.id, s.index};
      if (only && !only->count(key)) continue;
      for (const auto& f : catalog.factors()) out.push_back({key, f.id, s.labels.count(f.category) ? 1 : 0});
    }
  return out;
}

inline std::vector<SentenceKey> annotated_keys(const std::vector<Comment>& comments) {
  std::vector<SentenceKey> out;
  for (const auto& c : comments)
    for (const auto& s : c.sentences)
      if (s.annotated) out.push_back({c.id, s.index});
  return out;
}

// Seeded shuffle, then the first round(fraction * n) keys go to `second`.
inline std::pair<std::vector<SentenceKey>, std::vector<SentenceKey>> split_keys(std::vector<SentenceKey> keys,
                                                                              double fraction, std::uint64_t seed) {
  std::sort(keys.begin(), keys.end());
  Rng rng(seed);
  rng.shuffle(keys);
  auto n_second = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(keys.size())));
  std::vector<SentenceKey> second(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n_second));
  std::vector<SentenceKey> first(keys.begin() + static_cast<std::ptrdiff_t>(n_second), keys.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {std::move(first), std::move(second)};
}

struct CorpusSplit {
  std::vector<SentenceKey> fit, model_selection, holdout;
};

inline CorpusSplit split_corpus(const std::vector<Comment>& comments, const TrainingConfig& cfg) {
  CorpusSplit s;
  auto [train, holdout] = split_keys(annotated_keys(comments), cfg.split.holdout, cfg.seed);
  auto [fit, sel] = split_keys(std::move(train), cfg.split.model_selection, cfg.seed + 1);
  s.fit = std::move(fit);
  s.model_selection = std::move(sel);
  s.holdout = std::move(holdout);
  return s;
}

// ---------------------------------------------------------------------------
// Token-vector sources and pair encoding

// Supplies e(w) for corpus sentences and factor phrases.
class VectorSource {
 public:
  virtual ~VectorSource() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<Vector> sentence_vectors(const SentenceKey& key, const Sentence& s) const = 0;
  virtual std::vector<Vector> factor_vectors(const Factor& f) const = 0;
};

// Static word vectors; out-of-vocabulary tokens are skipped.
class StaticVectorSource : public VectorSource {
 public:
  explicit StaticVectorSource(const EmbeddingStore& store) : store_(&store) {}

  std::size_t dim() const override { return store_->dim(); }

  std::vector<Vector> tokens(std::span<const std::string> toks) const {
    std::vector<Vector> out;
    for (const auto& t : toks)
      if (auto e = store_->lookup(t)) out.emplace_back(e->begin(), e->end());
    return out;
  }

  std::vector<Vector> sentence_vectors(const SentenceKey&, const Sentence& s) const override { return tokens(s.tokens); }

  std::vector<Vector> factor_vectors(const Factor& f) const override {
    auto out = tokens(f.phrase);
    if (out.empty()) detail::fail("factor ", f.id, ": every phrase token is out of vocabulary");
    return out;
  }

 private:
  const EmbeddingStore* store_;
};

// Contextual vectors read from token-vector files. Factor blocks are keyed
// `KEY <factor_id> 0 <n_tokens>`.
class ContextualVectorSource : public VectorSource {
 public:
  ContextualVectorSource(TokenVectorFile sentences, TokenVectorFile factors) : dim_(sentences.dim) {
    if (factors.dim != sentences.dim) detail::fail("sentence and factor token-vector files differ in dimension");
    for (auto& b : sentences.blocks) sentences_.emplace(b.key, std::move(b.vectors));
    for (auto& b : factors.blocks) factors_.emplace(b.key.comment_id, std::move(b.vectors));
  }

  std::size_t dim() const override { return dim_; }

  std::vector<Vector> sentence_vectors(const SentenceKey& key, const Sentence& s) const override {
    auto it = sentences_.find(key);
    if (it == sentences_.end())
      detail::fail("no token vectors for sentence ", key.comment_id, " ", key.sentence_index);
    if (it->second.size() != s.tokens.size())
      detail::fail("token vectors for sentence ", key.comment_id, " ", key.sentence_index, " have ", it->second.size(),
                   " rows but the sentence has ", s.tokens.size(), " tokens");
    return it->second;
  }

  std::vector<Vector> factor_vectors(const Factor& f) const override {
    auto it = factors_.find(f.id);
    if (it == factors_.end()) detail::fail("no token vectors for factor ", f.id);
    if (it->second.size() != f.phrase.size()) detail::fail("token vectors for factor ", f.id, " misaligned");
    return it->second;
  }

 private:
  std::size_t dim_;
  std::map<SentenceKey, std::vector<Vector>> sentences_;
  std::map<std::string, std::vector<Vector>> factors_;
};

// Sentence keys whose token-vector blocks do not match the corpus tokenizer.
inline std::vector<SentenceKey> alignment_errors(const std::vector<Comment>& comments, const TokenVectorFile& file) {
  std::map<SentenceKey, std::size_t> rows;
  for (const auto& b : file.blocks) rows.emplace(b.key, b.vectors.size());
  std::vector<SentenceKey> bad;
  for (const auto& c : comments)
    for (const auto& s : c.sentences) {
      SentenceKey k{c.id, s.index};
      auto it = rows.find(k);
      if (it == rows.end() || it->second != s.tokens.size()) bad.push_back(k);
    }
  return bad;
}

// Holds the token vectors of the sentences in play and the precomputed
// factor representations E(f); encodes (sentence, factor) pairs on demand.
class PairEncoder {
 public:
  PairEncoder(const VectorSource& source, const std::vector<Comment>& comments, const FactorCatalog& catalog,
              AttentionMode mode, const std::set<SentenceKey>* only = nullptr)
      : dim_(source.dim()), mode_(mode) {
    for (const auto& f : catalog.factors()) factor_reps_.emplace(f.id, factor_representation(source.factor_vectors(f)));
    for (const auto& c : comments)
      for (const auto& s : c.sentences) {
        SentenceKey k{c.id, s.index};
        if (only && !only->count(k)) continue;
        sentences_.emplace(k, source.sentence_vectors(k, s));
      }
  }

  std::size_t dim() const { return dim_; }
  AttentionMode attention() const { return mode_; }

  const Vector& factor_rep(const std::string& factor_id) const {
    auto it = factor_reps_.find(factor_id);
    if (it == factor_reps_.end()) detail::fail("unknown factor: ", factor_id);
    return it->second;
  }

  const std::vector<Vector>& sentence(const SentenceKey& key) const {
    auto it = sentences_.find(key);
    if (it == sentences_.end()) detail::fail("sentence not loaded: ", key.comment_id, " ", key.sentence_index);
    return it->second;
  }

  Vector encode(const SentenceKey& key, const std::string& factor_id) const {
    return pair_features(sentence(key), factor_rep(factor_id), mode_);
  }

  Vector encode(std::span<const Vector> tokens, const std::string& factor_id) const {
    return pair_features(tokens, factor_rep(factor_id), mode_);
  }

 private:
  std::size_t dim_;
  AttentionMode mode_;
  std::map<std::string, Vector> factor_reps_;
  std::map<SentenceKey, std::vector<Vector>> sentences_;
};

// ---------------------------------------------------------------------------
// Training

using PairEncodeFn = std::function<Vector(const LabeledPair&)>;

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double selection_loss = 0.0;
  Metric selection_f1;
};

struct TrainingRun {
  AttributionModel model;
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
};

namespace detail {

inline double pair_f1_score(const AttributionModel& m, const std::vector<Vector>& xs, const std::vector<double>& ys) {
  DetectionOutcome o;
  for (std::size_t i = 0; i < xs.size(); ++i) o.record(ys[i] > 0.5, m.score_features(xs[i]) >= 0.5);
  auto f1 = detection_metrics(o).f1;
  return f1 ? *f1 : -1.0;
}

}  // namespace detail

// Mini-batch Adam over `fit`; after each epoch the model is checkpointed and
// the one with the best pair-level F1 (at 0.5) on `selection` is returned,
// ties going to the lower selection loss. With no selection pairs the last
// epoch wins.
inline TrainingRun train_pairs(const std::vector<LabeledPair>& fit, const std::vector<LabeledPair>& selection,
                               std::size_t dim, const PairEncodeFn& encode, const TrainingConfig& cfg) {
  cfg.validate();
  if (fit.empty()) detail::fail("training data is empty");
  bool has_pos = false, has_neg = false;
  for (const auto& p : fit) (p.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) detail::fail("training data contains a single class");

  std::vector<Vector> xs, sel_xs;
  std::vector<double> ys, sel_ys;
  for (const auto& p : fit) {
    xs.push_back(encode(p));
    ys.push_back(p.label);
  }
  for (const auto& p : selection) {
    sel_xs.push_back(encode(p));
    sel_ys.push_back(p.label);
  }
  for (const auto& x : xs)
    if (x.size() != 2 * dim) detail::fail("encoded pair has length ", x.size(), ", expected ", 2 * dim);

  // Same initialisation range as a default dense layer: U(-1/sqrt(n), 1/sqrt(n)).
  Rng init_rng(cfg.seed);
  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng dropout_rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  const double bound = 1.0 / std::sqrt(static_cast<double>(2 * dim));
  Vector w(2 * dim);
  for (double& x : w) x = init_rng.uniform(-bound, bound);
  AttributionModel model(dim, std::move(w), init_rng.uniform(-bound, bound));
  model.attention = cfg.attention;

  Vector m_w(model.weights.size(), 0.0), v_w(model.weights.size(), 0.0);
  double m_b = 0.0, v_b = 0.0;
  std::size_t step = 0;
  const double keep = 1.0 - cfg.dropout_rate;

  TrainingRun run;
  double best_f1 = -2.0, best_loss = 0.0;
  std::vector<std::size_t> order(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Vector> batch_x;
  std::vector<double> batch_y;
  Gradient grad;
  for (std::size_t epoch = 1; epoch <= cfg.n_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_x.clear();
      batch_y.clear();
      for (std::size_t i = start; i < end; ++i) {
        Vector x = xs[order[i]];
        if (cfg.dropout_rate > 0.0)
          for (double& v : x) v = dropout_rng.bernoulli(keep) ? v / keep : 0.0;
        batch_x.push_back(std::move(x));
        batch_y.push_back(ys[order[i]]);
      }
      epoch_loss += batch_loss_and_gradient(model, batch_x, batch_y, cfg.pos_weight, &grad) *
                    static_cast<double>(end - start);
      ++step;
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      for (std::size_t k = 0; k < model.weights.size(); ++k) {
        m_w[k] = cfg.adam_beta1 * m_w[k] + (1.0 - cfg.adam_beta1) * grad.weights[k];
        v_w[k] = cfg.adam_beta2 * v_w[k] + (1.0 - cfg.adam_beta2) * grad.weights[k] * grad.weights[k];
        model.weights[k] -= cfg.learning_rate * (m_w[k] / c1) / (std::sqrt(v_w[k] / c2) + cfg.adam_eps);
      }
      m_b = cfg.adam_beta1 * m_b + (1.0 - cfg.adam_beta1) * grad.bias;
      v_b = cfg.adam_beta2 * v_b + (1.0 - cfg.adam_beta2) * grad.bias * grad.bias;
      model.bias -= cfg.learning_rate * (m_b / c1) / (std::sqrt(v_b / c2) + cfg.adam_eps);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(xs.size());
    double f1 = -1.0;
    if (!sel_xs.empty()) {
      log.selection_loss = batch_loss_and_gradient(model, sel_xs, sel_ys, cfg.pos_weight, nullptr);
      f1 = detail::pair_f1_score(model, sel_xs, sel_ys);
      if (f1 >= 0.0) log.selection_f1 = f1;
    }
    run.history.push_back(log);
    bool better = sel_xs.empty() || f1 > best_f1 || (f1 == best_f1 && log.selection_loss < best_loss);
    if (better) {
      best_f1 = f1;
      best_loss = log.selection_loss;
      run.model = model;
      run.best_epoch = epoch;
    }
  }
  return run;
}

// Trains on `pairs`, holding out the model-selection fraction of their
// sentences (seeded) for checkpoint selection.
inline TrainingRun train(const std::vector<LabeledPair>& pairs, const PairEncoder& encoder, const TrainingConfig& cfg) {
  cfg.validate();
  std::set<SentenceKey> keys;
  for (const auto& p : pairs) keys.insert(p.sentence);
  auto [fit_keys, sel_keys] = split_keys({keys.begin(), keys.end()}, cfg.split.model_selection, cfg.seed + 1);
  std::set<SentenceKey> sel(sel_keys.begin(), sel_keys.end());
  std::vector<LabeledPair> fit, selection;
  for (const auto& p : pairs) (sel.count(p.sentence) ? selection : fit).push_back(p);
  return train_pairs(fit, selection, encoder.dim(),
                     [&](const LabeledPair& p) { return encoder.encode(p.sentence, p.factor_id); }, cfg);
}

// ---------------------------------------------------------------------------
// Detection threshold

struct ScoredSentence {
  double score = 0.0;  // topmost factor score
  bool positive = false;
};

struct ThresholdChoice {
  double threshold = 0.0;
  Metric f1;
};

// Sweeps the distinct scores; a sentence is detected when score >= t. Picks
// the F1-maximising threshold, ties to the lowest.
inline ThresholdChoice tune_threshold(std::span<const ScoredSentence> sentences) {
  if (sentences.empty()) detail::fail("threshold tuning: empty validation set");
  std::vector<double> cands;
  for (const auto& s : sentences) cands.push_back(s.score);
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
  ThresholdChoice best{cands.front(), std::nullopt};
  double best_val = -2.0;
  for (double t : cands) {
    DetectionOutcome o;
    for (const auto& s : sentences) o.record(s.positive, s.score >= t);
    auto f1 = detection_metrics(o).f1;
    double val = f1 ? *f1 : -1.0;
    if (val > best_val) {
      best_val = val;
      best = {t, f1};
    }
  }
  return best;
}

struct RankedFactor {
  std::string id;
  double score = 0.0;
};

// Descending score, ties by id.
inline void sort_ranked(std::vector<RankedFactor>& v) {
  std::sort(v.begin(), v.end(), [](const RankedFactor& a, const RankedFactor& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
}

inline std::vector<RankedFactor> rank_factors(const AttributionModel& model, const PairEncoder& encoder,
                                              std::span<const Vector> tokens, const FactorCatalog& catalog) {
  std::vector<RankedFactor> out;
  for (const auto& f : catalog.factors()) out.push_back({f.id, model.score_features(encoder.encode(tokens, f.id))});
  sort_ranked(out);
  return out;
}

// Category score = best score among its factors.
inline std::vector<RankedFactor> rank_categories(const std::vector<RankedFactor>& factors,
                                                 const FactorCatalog& catalog) {
  std::map<std::string, double> best;
  for (const auto& f : factors) {
    const auto& c = catalog.factor(f.id).category;
    auto it = best.find(c);
    if (it == best.end() || f.score > it->second) best[c] = f.score;
  }
  std::vector<RankedFactor> out;
  for (const auto& [c, s] : best) out.push_back({c, s});
  sort_ranked(out);
  return out;
}

inline ThresholdChoice tune_detection_threshold(AttributionModel& model, const PairEncoder& encoder,
                                                const std::vector<Comment>& comments, const FactorCatalog& catalog,
                                                const std::vector<SentenceKey>& validation) {
  std::set<SentenceKey> want(validation.begin(), validation.end());
  std::vector<ScoredSentence> scored;
  for (const auto& c : comments)
    for (const auto& s : c.sentences) {
      SentenceKey k{c.id, s.index};
      if (!want.count(k) || !s.annotated) continue;
      auto ranked = rank_factors(model, encoder, encoder.sentence(k), catalog);
      scored.push_back({ranked.front().score, s.positive()});
    }
  auto choice = tune_threshold(scored);
  model.detection_threshold = choice.threshold;
  return choice;
}

struct Prediction {
  bool detected = false;
  std::vector<RankedFactor> ranked_factors;
  std::vector<RankedFactor> ranked_categories;

  const std::string& resolved_factor() const { return ranked_factors.front().id; }
};

inline Prediction predict(const AttributionModel& model, std::span<const Vector> sentence_vectors,
                          const FactorCatalog& catalog, const PairEncoder& encoder) {
  if (!model.detection_threshold) detail::fail("model has no tuned detection threshold");
  Prediction p;
  p.ranked_factors = rank_factors(model, encoder, sentence_vectors, catalog);
  p.ranked_categories = rank_categories(p.ranked_factors, catalog);
  p.detected = !p.ranked_factors.empty() && p.ranked_factors.front().score >= *model.detection_threshold;
  return p;
}

// ---------------------------------------------------------------------------
// Baseline: cosine between idf-weighted sums of static vectors.

inline SentenceEmbedding idf_weighted_sum(std::span<const std::string> tokens, const EmbeddingStore& store,
                                          const CorpusStats& stats) {
  SentenceEmbedding out{Vector(store.dim(), 0.0), 0};
  for (const auto& t : tokens) {
    if (store.is_stopword(t)) continue;
    auto e = store.lookup(t);
    if (!e) continue;
    double w = idf(stats, t);
    for (std::size_t k = 0; k < out.vector.size(); ++k) out.vector[k] += w * (*e)[k];
    ++out.n_contributing_tokens;
  }
  return out;
}

inline double baseline_score(std::span<const std::string> sentence_tokens, const Factor& f, const EmbeddingStore& store,
                             const CorpusStats& stats) {
  auto s = idf_weighted_sum(sentence_tokens, store, stats);
  auto g = idf_weighted_sum(f.phrase, store, stats);
  if (s.degenerate() || g.degenerate()) return 0.0;
  return cosine(s.vector, g.vector);
}

inline std::vector<RankedFactor> baseline_rank(std::span<const std::string> sentence_tokens,
                                               const FactorCatalog& catalog, const EmbeddingStore& store,
                                               const CorpusStats& stats) {
  std::vector<RankedFactor> out;
  for (const auto& f : catalog.factors()) out.push_back({f.id, baseline_score(sentence_tokens, f, store, stats)});
  sort_ranked(out);
  return out;
}

// ---------------------------------------------------------------------------
// Model file

inline std::string serialize_model(const AttributionModel& m) {
  std::string out = "ATTRIBUTION_MODEL 1\n";
  out += "DIM " + std::to_string(m.dim) + "\n";
  out += "ATTENTION " + to_string(m.attention) + "\n";
  out += "THRESHOLD " + (m.detection_threshold ? io::format_exact(*m.detection_threshold) : std::string("none")) + "\n";
  out += "B " + io::format_exact(m.bias) + "\n";
  out += "W";
  for (double w : m.weights) out += " " + io::format_exact(w);
  out += "\n";
  return out;
}

inline AttributionModel parse_model(std::string_view content) {
  std::map<std::string, std::vector<std::string_view>> fields;
  for (auto line : io::lines(content)) {
    auto f = io::split_ws(line);
    if (f.empty()) continue;
    fields[std::string(f[0])] = std::vector<std::string_view>(f.begin() + 1, f.end());
  }
  auto need = [&](const char* k) -> const std::vector<std::string_view>& {
    auto it = fields.find(k);
    if (it == fields.end()) detail::fail("model file: missing ", k);
    return it->second;
  };
  auto num = [](std::string_view s) {
    auto x = io::parse_double(s);
    if (!x) detail::fail("model file: bad number '", std::string(s), "'");
    return *x;
  };
  if (!fields.count("ATTRIBUTION_MODEL")) detail::fail("model file: bad header");
  auto dim = io::parse_int(need("DIM").at(0));
  if (!dim || *dim <= 0) detail::fail("model file: bad DIM");
  Vector w;
  for (auto s : need("W")) w.push_back(num(s));
  AttributionModel m(static_cast<std::size_t>(*dim), std::move(w), num(need("B").at(0)));
  m.attention = attention_mode_from_string(std::string(need("ATTENTION").at(0)));
  auto th = need("THRESHOLD").at(0);
  if (th != "none") m.detection_threshold = num(th);
  return m;
}

}  // namespace attrib
