#pragma once

// Stage-per-command pipeline: ingest, prune, topics, train, eval, predict.
// Each stage reads a JSON run config, writes its artifacts under
// <output_dir>/<stage>/ together with a manifest.json (config snapshot, seed,
// input and output hashes) and a timing.json (wall time). Everything except
// timing.json is a deterministic function of the config and inputs.
//
// Requires linking OpenSSL (libcrypto) for SHA-256.

#include <openssl/evp.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "attrib/attribution_model.hpp"
#include "attrib/corpus.hpp"
#include "attrib/embedding_store.hpp"
#include "attrib/evaluation.hpp"
#include "attrib/factors.hpp"
#include "attrib/io.hpp"
#include "attrib/pruning.hpp"
#include "attrib/topics.hpp"

namespace attrib::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    detail::fail("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(io::read_file(p)); }

struct RunConfig {
  json raw;  // snapshot as loaded (with --seed applied)
  fs::path base_dir;

  std::uint64_t seed = 0;
  fs::path corpus, vectors, stopwords, function_words, catalog, labels, ratings;
  fs::path token_vectors, factor_token_vectors;
  fs::path output_dir;

  std::string dump_format = "auto";
  bool english_filter = false;
  double english_min_ratio = kDefaultEnglishMinRatio;

  PruneParams pruning;
  LdaConfig lda;
  TrainingConfig training;
  std::set<std::size_t> eval_ks{1, 3};

  bool contextual() const { return !token_vectors.empty(); }
  fs::path stage_dir(const std::string& stage) const { return output_dir / stage; }
};

inline RunConfig parse_config(const json& j, const fs::path& base_dir, std::optional<std::uint64_t> seed_override) {
  RunConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  if (seed_override) c.raw["seed"] = *seed_override;
  c.seed = c.raw.value("seed", std::uint64_t{0});

  json paths = j.value("paths", json::object());
  auto path = [&](const char* key) -> fs::path {
    auto it = paths.find(key);
    if (it == paths.end() || it->is_null()) return {};
    fs::path p = it->get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };
  c.corpus = path("corpus");
  c.vectors = path("vectors");
  c.stopwords = path("stopwords");
  c.function_words = path("function_words");
  c.catalog = path("catalog");
  c.labels = path("labels");
  c.ratings = path("ratings");
  c.token_vectors = path("token_vectors");
  c.factor_token_vectors = path("factor_token_vectors");
  c.output_dir = path("output_dir");
  if (c.output_dir.empty()) c.output_dir = base_dir / "out";
  if (c.token_vectors.empty() != c.factor_token_vectors.empty())
    detail::fail("config: token_vectors and factor_token_vectors must be given together");

  json ing = j.value("ingest", json::object());
  c.dump_format = ing.value("format", std::string("auto"));
  c.english_filter = ing.value("english_filter", false);
  c.english_min_ratio = ing.value("english_min_ratio", kDefaultEnglishMinRatio);

  json pr = j.value("pruning", json::object());
  c.pruning.percentile = pr.value("percentile", 0.20);
  c.pruning.threshold = pr.value("threshold", 0.7);

  json lda = j.value("lda", json::object());
  c.lda = LdaConfig::with_topics(lda.value("n_topics", std::size_t{5}));
  c.lda.alpha = lda.value("alpha", c.lda.alpha);
  c.lda.beta = lda.value("beta", c.lda.beta);
  c.lda.n_iterations = lda.value("n_iterations", c.lda.n_iterations);
  c.lda.burn_in = lda.value("burn_in", c.lda.burn_in);
  c.lda.min_count = lda.value("min_count", c.lda.min_count);
  c.lda.seed = c.seed;
  c.lda.validate();

  json tr = j.value("training", json::object());
  auto& t = c.training;
  t.learning_rate = tr.value("learning_rate", t.learning_rate);
  t.batch_size = tr.value("batch_size", t.batch_size);
  t.n_epochs = tr.value("n_epochs", t.n_epochs);
  t.adam_beta1 = tr.value("adam_beta1", t.adam_beta1);
  t.adam_beta2 = tr.value("adam_beta2", t.adam_beta2);
  t.adam_eps = tr.value("adam_eps", t.adam_eps);
  t.pos_weight = tr.value("pos_weight", t.pos_weight);
  t.dropout_rate = tr.value("dropout_rate", t.dropout_rate);
  t.attention = attention_mode_from_string(tr.value("attention", std::string("cosine")));
  json sp = tr.value("split", json::object());
  t.split.train = sp.value("train", t.split.train);
  t.split.holdout = sp.value("holdout", t.split.holdout);
  t.split.model_selection = sp.value("model_selection", t.split.model_selection);
  t.seed = c.seed;
  t.validate();

  json ev = j.value("evaluation", json::object());
  if (ev.contains("ks")) c.eval_ks = ev["ks"].get<std::set<std::size_t>>();
  return c;
}

inline RunConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed_override = std::nullopt) {
  if (!fs::exists(path)) detail::fail("missing input: ", path.string());
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    detail::fail("config ", path.string(), ": ", e.what());
  }
  return parse_config(j, fs::absolute(path).parent_path(), seed_override);
}

// ---------------------------------------------------------------------------
// Manifests

inline std::string command_for_stage(const std::string& stage) {
  if (stage == "corpus") return "ingest";
  if (stage == "model") return "train";
  return stage;
}

class StageRun {
 public:
  StageRun(const RunConfig& cfg, std::string stage)
      : cfg_(cfg), stage_(std::move(stage)), dir_(cfg.stage_dir(stage_)), start_(std::chrono::steady_clock::now()) {}

  const fs::path& dir() const { return dir_; }

  // Registers an input file; it must exist.
  void input(const std::string& name, const fs::path& p) {
    if (p.empty()) detail::fail("config: no path given for ", name);
    if (!fs::exists(p)) detail::fail("missing input: ", p.string());
    inputs_[name] = sha256_file(p);
  }

  // Requires an upstream stage's manifest; records the hash of its artifact
  // and rejects it when it was built from different versions of inputs this
  // stage also uses.
  json upstream(const std::string& stage, const std::string& artifact) {
    fs::path m = cfg_.stage_dir(stage) / "manifest.json";
    fs::path a = cfg_.stage_dir(stage) / artifact;
    if (!fs::exists(m) || !fs::exists(a))
      detail::fail("missing artifact: ", stage, " (run `", command_for_stage(stage), "` first)");
    json up = json::parse(io::read_file(m));
    for (const auto& [name, hash] : up["inputs"].items()) {
      auto it = inputs_.find(name);
      if (it != inputs_.end() && it->second != hash.get<std::string>())
        detail::fail("stale artifact: ", stage, " (input '", name, "' changed; rerun `", command_for_stage(stage), "`)");
    }
    std::string name = stage + "/" + artifact;
    inputs_[name] = sha256_file(a);
    auto up_outputs = up.value("outputs", json::object());
    if (up_outputs.contains(artifact) && up_outputs[artifact].get<std::string>() != inputs_[name])
      detail::fail("stale artifact: ", stage, " (", artifact, " modified after the stage ran)");
    return up;
  }

  void write(const std::string& name, std::string_view content) {
    io::write_file(dir_ / name, content);
    outputs_[name] = sha256_hex(content);
  }

  void finish(json extra = json::object()) {
    json m;
    m["stage"] = stage_;
    m["seed"] = cfg_.seed;
    m["config"] = cfg_.raw;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    if (!extra.empty()) m["details"] = std::move(extra);
    io::write_file(dir_ / "manifest.json", m.dump(2) + "\n");
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    io::write_file(dir_ / "timing.json", json{{"stage", stage_}, {"wall_time_seconds", secs}}.dump(2) + "\n");
  }

 private:
  const RunConfig& cfg_;
  std::string stage_;
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Shared loaders

inline std::vector<Comment> load_corpus_artifact(const RunConfig& cfg) {
  return parse_normalized_corpus(io::read_file(cfg.stage_dir("corpus") / "corpus.jsonl"));
}

inline std::unique_ptr<VectorSource> make_vector_source(const RunConfig& cfg, const EmbeddingStore* store) {
  if (cfg.contextual())
    return std::make_unique<ContextualVectorSource>(load_token_vectors(cfg.token_vectors),
                                                    load_token_vectors(cfg.factor_token_vectors));
  return std::make_unique<StaticVectorSource>(*store);
}

inline void register_vector_inputs(StageRun& run, const RunConfig& cfg) {
  run.input("vectors", cfg.vectors);
  run.input("stopwords", cfg.stopwords);
  if (cfg.contextual()) {
    run.input("token_vectors", cfg.token_vectors);
    run.input("factor_token_vectors", cfg.factor_token_vectors);
  }
}

inline std::string serialize_split(const CorpusSplit& s) {
  std::string out;
  auto emit = [&](const std::vector<SentenceKey>& keys, const char* name) {
    for (const auto& k : keys) out += k.comment_id + "\t" + std::to_string(k.sentence_index) + "\t" + name + "\n";
  };
  emit(s.fit, "fit");
  emit(s.model_selection, "model_selection");
  emit(s.holdout, "holdout");
  return out;
}

inline CorpusSplit parse_split(std::string_view content) {
  CorpusSplit s;
  for (auto line : io::lines(content)) {
    auto cols = io::split_char(line, '\t');
    if (cols.size() != 3) continue;
    SentenceKey k{std::string(cols[0]), static_cast<std::size_t>(io::parse_int(cols[1]).value_or(0))};
    if (cols[2] == "fit") s.fit.push_back(k);
    else if (cols[2] == "model_selection") s.model_selection.push_back(k);
    else if (cols[2] == "holdout") s.holdout.push_back(k);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stages

inline void cmd_ingest(const RunConfig& cfg) {
  StageRun run(cfg, "corpus");
  run.input("corpus_dump", cfg.corpus);
  std::string content = io::read_file(cfg.corpus);
  DumpFormat fmt = cfg.dump_format == "auto"    ? detect_format(content)
                   : cfg.dump_format == "json"  ? DumpFormat::JsonArray
                   : cfg.dump_format == "jsonl" ? DumpFormat::JsonLines
                                                : (detail::fail("config: unknown dump format ", cfg.dump_format),
                                                   DumpFormat::JsonLines);
  auto comments = parse_dump(content, fmt);
  std::size_t before = comments.size();
  if (cfg.english_filter) {
    run.input("function_words", cfg.function_words);
    comments = english_heuristic_filter(comments, load_word_list(cfg.function_words), cfg.english_min_ratio);
  }
  run.write("corpus.jsonl", serialize_corpus(comments));
  run.write("stats.tsv", serialize_stats(compute_stats(comments)));
  run.finish({{"n_records", before}, {"n_kept", comments.size()}});
}

inline void cmd_prune(const RunConfig& cfg) {
  StageRun run(cfg, "prune");
  run.input("vectors", cfg.vectors);
  run.input("stopwords", cfg.stopwords);
  run.input("catalog", cfg.catalog);
  run.upstream("corpus", "corpus.jsonl");
  auto comments = load_corpus_artifact(cfg);
  auto store = load_vectors(cfg.vectors, cfg.stopwords);
  auto catalog = load_catalog(cfg.catalog);
  auto stats = compute_stats(comments);
  auto result = prune(comments, catalog, store, stats, cfg.pruning);
  std::string kept;
  for (const auto& c : result.kept) kept += c.id + "\n";
  run.write("similarity.tsv", serialize_similarity(result));
  run.write("kept_ids.txt", kept);
  run.write("pruned_corpus.jsonl", serialize_corpus(result.kept));
  run.write("token_freq_all.tsv", serialize_token_frequencies(token_frequency_export(comments, store.stopwords())));
  run.write("token_freq_pruned.tsv",
            serialize_token_frequencies(token_frequency_export(result.kept, store.stopwords())));
  run.finish({{"n_comments", comments.size()}, {"n_kept", result.kept.size()}});
}

inline void cmd_topics(const RunConfig& cfg) {
  StageRun run(cfg, "topics");
  run.input("stopwords", cfg.stopwords);
  run.upstream("corpus", "corpus.jsonl");
  auto comments = load_corpus_artifact(cfg);
  auto model = fit_lda(comments, load_word_list(cfg.stopwords), cfg.lda);
  std::string vocab;
  for (const auto& v : model.vocabulary) vocab += v + "\n";
  run.write("vocabulary.txt", vocab);
  run.write("topic_word.txt", serialize_matrix(model.topic_word));
  run.write("doc_topic.txt", serialize_matrix(model.doc_topic));
  run.write("topics_summary.tsv", serialize_topics_summary(model));
  run.finish({{"n_topics", cfg.lda.n_topics},
              {"alpha", cfg.lda.alpha},
              {"beta", cfg.lda.beta},
              {"n_iterations", cfg.lda.n_iterations},
              {"burn_in", cfg.lda.burn_in},
              {"min_count", cfg.lda.min_count},
              {"seed", cfg.lda.seed}});
}

struct LoadedData {
  std::vector<Comment> comments;
  FactorCatalog catalog;
  std::optional<EmbeddingStore> store;
  std::unique_ptr<VectorSource> source;
};

// Registers inputs, checks upstream artifacts (corpus, and the model when
// `needs_model`), then loads everything.
inline LoadedData load_training_data(StageRun& run, const RunConfig& cfg, bool needs_model) {
  register_vector_inputs(run, cfg);
  run.input("catalog", cfg.catalog);
  run.input("labels", cfg.labels);
  run.upstream("corpus", "corpus.jsonl");
  if (needs_model) run.upstream("model", "model.txt");
  LoadedData d;
  d.catalog = load_catalog(cfg.catalog);
  d.store = load_vectors(cfg.vectors, cfg.stopwords);
  d.comments = load_annotations(load_corpus_artifact(cfg), cfg.labels, d.catalog.category_ids());
  if (cfg.contextual()) {
    auto bad = alignment_errors(d.comments, load_token_vectors(cfg.token_vectors));
    if (!bad.empty())
      detail::fail("token-vector file misaligned with corpus for ", bad.size(), " sentence(s), first: ",
                   bad.front().comment_id, " ", bad.front().sentence_index);
  }
  d.source = make_vector_source(cfg, &*d.store);
  return d;
}

inline void cmd_train(const RunConfig& cfg) {
  StageRun run(cfg, "model");
  auto data = load_training_data(run, cfg, false);
  auto split = split_corpus(data.comments, cfg.training);
  std::set<SentenceKey> in_play;
  for (const auto* keys : {&split.fit, &split.model_selection}) in_play.insert(keys->begin(), keys->end());
  PairEncoder encoder(*data.source, data.comments, data.catalog, cfg.training.attention, &in_play);
  std::set<SentenceKey> fit_set(split.fit.begin(), split.fit.end());
  std::set<SentenceKey> sel_set(split.model_selection.begin(), split.model_selection.end());
  auto fit = build_pairs(data.comments, data.catalog, &fit_set);
  auto sel = build_pairs(data.comments, data.catalog, &sel_set);
  auto result = train_pairs(fit, sel, encoder.dim(),
                            [&](const LabeledPair& p) { return encoder.encode(p.sentence, p.factor_id); },
                            cfg.training);
  auto choice = tune_detection_threshold(result.model, encoder, data.comments, data.catalog,
                                         split.model_selection.empty() ? split.fit : split.model_selection);
  std::string log = "epoch\ttrain_loss\tselection_loss\tselection_f1\n";
  for (const auto& e : result.history)
    log += std::to_string(e.epoch) + "\t" + io::format_double(e.train_loss, 9) + "\t" +
           io::format_double(e.selection_loss, 9) + "\t" +
           (e.selection_f1 ? io::format_double(*e.selection_f1, 9) : std::string("undefined")) + "\n";
  run.write("model.txt", serialize_model(result.model));
  run.write("split.tsv", serialize_split(split));
  run.write("training_log.tsv", log);
  run.finish({{"best_epoch", result.best_epoch},
              {"detection_threshold", *result.model.detection_threshold},
              {"threshold_selection_f1", choice.f1 ? json(*choice.f1) : json(nullptr)},
              {"n_fit_pairs", fit.size()},
              {"n_selection_pairs", sel.size()},
              {"vectors", cfg.contextual() ? "contextual" : "static"}});
}

inline void cmd_eval(const RunConfig& cfg) {
  StageRun run(cfg, "eval");
  auto data = load_training_data(run, cfg, true);
  auto model = parse_model(io::read_file(cfg.stage_dir("model") / "model.txt"));
  auto split = parse_split(io::read_file(cfg.stage_dir("model") / "split.tsv"));
  std::set<SentenceKey> holdout(split.holdout.begin(), split.holdout.end());
  std::set<SentenceKey> selection(split.model_selection.begin(), split.model_selection.end());
  if (selection.empty()) selection.insert(split.fit.begin(), split.fit.end());
  PairEncoder encoder(*data.source, data.comments, data.catalog, model.attention, &holdout);
  if (encoder.dim() != model.dim) detail::fail("model dimension ", model.dim, " does not match vectors ", encoder.dim());

  auto stats = compute_stats(data.comments);
  const auto& store = *data.store;
  std::vector<ScoredSentence> baseline_val;
  for (const auto& c : data.comments)
    for (const auto& s : c.sentences)
      if (s.annotated && selection.count({c.id, s.index}))
        baseline_val.push_back({baseline_rank(s.tokens, data.catalog, store, stats).front().score, s.positive()});
  double baseline_threshold = baseline_val.empty() ? 0.0 : tune_threshold(baseline_val).threshold;

  std::vector<SentencePrediction> model_preds, baseline_preds;
  for (const auto& c : data.comments)
    for (const auto& s : c.sentences) {
      SentenceKey k{c.id, s.index};
      if (!s.annotated || !holdout.count(k)) continue;
      auto p = predict(model, encoder.sentence(k), data.catalog, encoder);
      SentencePrediction mp{s.labels, p.detected, {}};
      for (const auto& rc : p.ranked_categories) mp.ranked_categories.push_back(rc.id);
      model_preds.push_back(std::move(mp));

      auto br = baseline_rank(s.tokens, data.catalog, store, stats);
      SentencePrediction bp{s.labels, br.front().score >= baseline_threshold, {}};
      for (const auto& rc : rank_categories(br, data.catalog)) bp.ranked_categories.push_back(rc.id);
      baseline_preds.push_back(std::move(bp));
    }
  if (model_preds.empty()) detail::fail("holdout split has no annotated sentences");
  auto model_report = evaluate(model_preds, cfg.eval_ks);
  auto baseline_report = evaluate(baseline_preds, cfg.eval_ks);

  std::string table = render_report_table("Attribution model (" + std::string(cfg.contextual() ? "contextual" : "static") +
                                              " vectors), holdout n=" + std::to_string(model_preds.size()),
                                          model_report) +
                      "\n" + render_report_table("idf-weighted embedding baseline", baseline_report);
  std::string kv = render_report_kv("model", model_report) + render_report_kv("baseline", baseline_report);
  kv += "baseline.detection_threshold=" + io::format_double(baseline_threshold, 9) + "\n";

  json extra{{"n_holdout", model_preds.size()}};
  if (!cfg.ratings.empty()) {
    run.input("ratings", cfg.ratings);
    // Rows: item<TAB>rating<TAB>rating...; every distinct rating is a category.
    std::vector<std::vector<std::string>> rows;
    std::set<std::string> cats;
    const std::string content = io::read_file(cfg.ratings);
    for (auto line : io::lines(content)) {
      auto t = io::trim(line);
      if (t.empty() || t.front() == '#') continue;
      auto cols = io::split_char(t, '\t');
      std::vector<std::string> r;
      for (std::size_t i = 1; i < cols.size(); ++i) {
        r.emplace_back(io::trim(cols[i]));
        cats.insert(r.back());
      }
      rows.push_back(std::move(r));
    }
    std::vector<std::string> cat_list(cats.begin(), cats.end());
    std::vector<std::vector<std::size_t>> tbl;
    for (const auto& r : rows) {
      std::vector<std::size_t> counts(std::max<std::size_t>(cat_list.size(), 2), 0);
      for (const auto& x : r)
        ++counts[static_cast<std::size_t>(std::find(cat_list.begin(), cat_list.end(), x) - cat_list.begin())];
      tbl.push_back(std::move(counts));
    }
    auto kappa = fleiss_kappa(tbl);
    kv += "annotation.fleiss_kappa=" + (kappa ? io::format_double(*kappa, 9) : std::string("undefined")) + "\n";
    table += "\nFleiss' kappa (" + std::to_string(tbl.size()) + " items): " +
             (kappa ? io::format_double(*kappa, 4) : std::string("undefined")) + "\n";
  }
  run.write("metrics.txt", table);
  run.write("metrics.kv", kv);
  run.write("breakdown.tsv", serialize_breakdown(category_breakdown(data.comments, data.catalog)));
  run.finish(extra);
}

struct AdHocPrediction {
  Prediction prediction;
  double threshold = 0.0;
};

// Scores ad-hoc text as a single sentence. Contextual models need the text's
// token vectors as a one-block token-vector file.
inline AdHocPrediction cmd_predict(const RunConfig& cfg, const std::string& text,
                                   const fs::path& text_token_vectors = {}) {
  fs::path model_path = cfg.stage_dir("model") / "model.txt";
  if (!fs::exists(model_path)) detail::fail("missing artifact: model (run `train` first)");
  auto model = parse_model(io::read_file(model_path));
  auto catalog = load_catalog(cfg.catalog);
  auto store = load_vectors(cfg.vectors, cfg.stopwords);
  auto source = make_vector_source(cfg, &store);
  PairEncoder encoder(*source, {}, catalog, model.attention);
  if (encoder.dim() != model.dim) detail::fail("model dimension ", model.dim, " does not match vectors ", encoder.dim());
  auto tokens = text::tokenize(text);
  std::vector<Vector> vecs;
  if (cfg.contextual()) {
    if (text_token_vectors.empty()) detail::fail("contextual model: pass the text's token vectors with --token-vectors");
    auto f = load_token_vectors(text_token_vectors);
    if (f.blocks.size() != 1 || f.blocks[0].vectors.size() != tokens.size())
      detail::fail("token vectors for the text must be one block with ", tokens.size(), " rows");
    vecs = f.blocks[0].vectors;
  } else {
    vecs = StaticVectorSource(store).tokens(tokens);
  }
  return {predict(model, vecs, catalog, encoder), *model.detection_threshold};
}

}  // namespace attrib::pipeline
