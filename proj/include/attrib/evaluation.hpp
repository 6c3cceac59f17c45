#pragma once

// Detection / resolution metrics, inter-annotator agreement and the
// category breakdown of annotated sentences.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attrib/corpus.hpp"
#include "attrib/error.hpp"
#include "attrib/factors.hpp"
#include "attrib/io.hpp"

namespace attrib {

// std::nullopt marks an undefined metric (zero denominator).
using Metric = std::optional<double>;

struct DetectionOutcome {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }

  void record(bool truth, bool predicted) {
    if (truth && predicted) ++tp;
    else if (!truth && predicted) ++fp;
    else if (truth) ++fn;
    else ++tn;
  }
};

struct DetectionMetrics {
  Metric precision, recall, accuracy, f1;
};

inline DetectionMetrics detection_metrics(const DetectionOutcome& o) {
  auto ratio = [](std::size_t num, std::size_t den) -> Metric {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  DetectionMetrics m;
  m.precision = ratio(o.tp, o.tp + o.fp);
  m.recall = ratio(o.tp, o.tp + o.fn);
  m.accuracy = ratio(o.tp + o.tn, o.total());
  if (m.precision && m.recall) {
    double s = *m.precision + *m.recall;
    m.f1 = s == 0.0 ? 0.0 : 2.0 * *m.precision * *m.recall / s;
  }
  return m;
}

struct ResolutionOutcome {
  std::size_t n_evaluated = 0;
  std::map<std::size_t, std::size_t> n_correct_topk;

  std::size_t n_correct_top1() const {
    auto it = n_correct_topk.find(1);
    return it == n_correct_topk.end() ? 0 : it->second;
  }

  Metric accuracy(std::size_t k) const {
    if (n_evaluated == 0) return std::nullopt;
    return static_cast<double>(n_correct_topk.at(k)) / static_cast<double>(n_evaluated);
  }
};

inline bool correct_at_k(std::span<const std::string> ranked, const std::set<std::string>& truth, std::size_t k) {
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
    if (truth.count(ranked[i])) return true;
  return false;
}

// Set-membership resolution over ground-truth-positive sentences. k = 1 is
// always evaluated.
inline ResolutionOutcome resolution_eval(const std::vector<std::vector<std::string>>& predictions,
                                         const std::vector<std::set<std::string>>& ground_truth,
                                         std::set<std::size_t> ks = {1, 3}) {
  if (predictions.size() != ground_truth.size()) detail::fail("resolution_eval: prediction/ground-truth size mismatch");
  ks.insert(1);
  ResolutionOutcome out;
  for (auto k : ks) {
    if (k == 0) detail::fail("resolution_eval: k must be positive");
    out.n_correct_topk[k] = 0;
  }
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (ground_truth[i].empty()) detail::fail("resolution_eval: sentence ", i, " has an empty ground-truth set");
    ++out.n_evaluated;
    for (auto k : ks)
      if (correct_at_k(predictions[i], ground_truth[i], k)) ++out.n_correct_topk[k];
  }
  return out;
}

// Per-sentence outcome gathered by an evaluation run.
struct SentencePrediction {
  std::set<std::string> truth;  // empty for explicit negatives
  bool detected = false;
  std::vector<std::string> ranked_categories;
};

// Detection-gated resolution counts at cut-off k: a detected sentence is a
// true positive when one of its top-k categories is in the ground truth;
// otherwise it is a false positive, and a positive sentence not resolved
// correctly is also a false negative.
inline DetectionOutcome resolution_confusion(std::span<const SentencePrediction> preds, std::size_t k) {
  DetectionOutcome o;
  for (const auto& p : preds) {
    bool ok = !p.truth.empty() && p.detected && correct_at_k(p.ranked_categories, p.truth, k);
    if (ok) {
      ++o.tp;
      continue;
    }
    if (p.detected) ++o.fp;
    if (!p.truth.empty()) ++o.fn;
    if (!p.detected && p.truth.empty()) ++o.tn;
  }
  return o;
}

struct EvaluationReport {
  DetectionOutcome detection;
  DetectionMetrics detection_metrics;
  ResolutionOutcome resolution;
  std::map<std::size_t, DetectionMetrics> resolution_metrics;  // precision/recall/F1 per k; accuracy from resolution
};

inline EvaluationReport evaluate(std::span<const SentencePrediction> preds, std::set<std::size_t> ks = {1, 3}) {
  ks.insert(1);
  EvaluationReport r;
  std::vector<std::vector<std::string>> ranked;
  std::vector<std::set<std::string>> truth;
  for (const auto& p : preds) {
    r.detection.record(!p.truth.empty(), p.detected);
    if (!p.truth.empty()) {
      ranked.push_back(p.ranked_categories);
      truth.push_back(p.truth);
    }
  }
  r.detection_metrics = detection_metrics(r.detection);
  r.resolution = resolution_eval(ranked, truth, ks);
  for (auto k : ks) {
    auto m = detection_metrics(resolution_confusion(preds, k));
    m.accuracy = r.resolution.accuracy(k);
    r.resolution_metrics[k] = m;
  }
  return r;
}

inline std::string format_metric(const Metric& m) { return m ? io::format_double(*m * 100.0, 4) : "undefined"; }

// Aligned text table: rows Precision/Recall/Accuracy/F1, columns Detection,
// Resolution and Resolution + top k for every further k. Values in percent.
inline std::string render_report_table(const std::string& title, const EvaluationReport& r) {
  std::vector<std::string> header{"", "Detection", "Resolution"};
  std::vector<const DetectionMetrics*> cols{&r.detection_metrics, &r.resolution_metrics.at(1)};
  for (const auto& [k, m] : r.resolution_metrics)
    if (k != 1) {
      header.push_back("Resolution+top" + std::to_string(k));
      cols.push_back(&m);
    }
  std::vector<std::vector<std::string>> rows{header};
  auto add_row = [&](const std::string& name, Metric DetectionMetrics::*field) {
    std::vector<std::string> row{name};
    for (auto* m : cols) row.push_back(format_metric(m->*field));
    rows.push_back(row);
  };
  add_row("Precision", &DetectionMetrics::precision);
  add_row("Recall", &DetectionMetrics::recall);
  add_row("Accuracy", &DetectionMetrics::accuracy);
  add_row("F1", &DetectionMetrics::f1);
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows)
    for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());
  std::string out = title + "\n";
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      out += row[j];
      if (j + 1 < row.size()) out += std::string(width[j] - row[j].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

// `prefix.metric=value` lines, values as fractions.
inline std::string render_report_kv(const std::string& prefix, const EvaluationReport& r) {
  std::string out;
  auto emit = [&](const std::string& col, const DetectionMetrics& m) {
    auto v = [](const Metric& x) { return x ? io::format_double(*x, 9) : std::string("undefined"); };
    out += prefix + "." + col + ".precision=" + v(m.precision) + "\n";
    out += prefix + "." + col + ".recall=" + v(m.recall) + "\n";
    out += prefix + "." + col + ".accuracy=" + v(m.accuracy) + "\n";
    out += prefix + "." + col + ".f1=" + v(m.f1) + "\n";
  };
  emit("detection", r.detection_metrics);
  for (const auto& [k, m] : r.resolution_metrics) emit("resolution_top" + std::to_string(k), m);
  out += prefix + ".detection.tp=" + std::to_string(r.detection.tp) + "\n";
  out += prefix + ".detection.fp=" + std::to_string(r.detection.fp) + "\n";
  out += prefix + ".detection.tn=" + std::to_string(r.detection.tn) + "\n";
  out += prefix + ".detection.fn=" + std::to_string(r.detection.fn) + "\n";
  out += prefix + ".resolution.n_evaluated=" + std::to_string(r.resolution.n_evaluated) + "\n";
  for (const auto& [k, n] : r.resolution.n_correct_topk)
    out += prefix + ".resolution.n_correct_top" + std::to_string(k) + "=" + std::to_string(n) + "\n";
  return out;
}

// Fleiss' kappa over an N x C table whose rows count how many of the R raters
// put item i into category j. Returns nullopt when chance agreement is 1.
inline Metric fleiss_kappa(const std::vector<std::vector<std::size_t>>& table) {
  if (table.empty()) detail::fail("fleiss_kappa: no items");
  const std::size_t C = table.front().size();
  if (C < 2) detail::fail("fleiss_kappa: at least 2 categories required");
  std::size_t R = 0;
  for (auto n : table.front()) R += n;
  if (R < 2) detail::fail("fleiss_kappa: at least 2 raters required");
  const double N = static_cast<double>(table.size()), r = static_cast<double>(R);
  std::vector<double> column(C, 0.0);
  double p_bar = 0.0;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& row = table[i];
    if (row.size() != C) detail::fail("fleiss_kappa: item ", i, " has ", row.size(), " categories, expected ", C);
    std::size_t raters = 0;
    double sq = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      raters += row[j];
      sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
      column[j] += static_cast<double>(row[j]);
    }
    if (raters != R) detail::fail("fleiss_kappa: item ", i, " rated by ", raters, " raters, expected ", R);
    p_bar += (sq - r) / (r * (r - 1.0));
  }
  p_bar /= N;
  double p_e = 0.0;
  for (double c : column) {
    double p = c / (N * r);
    p_e += p * p;
  }
  if (p_e >= 1.0) return std::nullopt;
  return (p_bar - p_e) / (1.0 - p_e);
}

struct CategoryCount {
  std::string category;
  std::size_t count = 0;
  Metric share;
};

// Sentences carrying each category label, in catalog order; a multi-label
// sentence counts once per label.
inline std::vector<CategoryCount> category_breakdown(const std::vector<Comment>& comments,
                                                     const FactorCatalog& catalog) {
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& c : comments)
    for (const auto& s : c.sentences)
      if (s.annotated)
        for (const auto& l : s.labels) {
          ++counts[l];
          ++total;
        }
  std::vector<CategoryCount> out;
  for (const auto& cat : catalog.categories()) {
    CategoryCount cc{cat.id, counts[cat.id], std::nullopt};
    if (total) cc.share = static_cast<double>(cc.count) / static_cast<double>(total);
    out.push_back(cc);
  }
  return out;
}

inline std::string serialize_breakdown(const std::vector<CategoryCount>& rows) {
  std::string out;
  for (const auto& r : rows)
    out += r.category + "\t" + std::to_string(r.count) + "\t" +
           (r.share ? io::format_double(*r.share, 9) : std::string("undefined")) + "\n";
  return out;
}

}  // namespace attrib
