#include <gtest/gtest.h>

#include <cmath>

#include "attrib/attribution_model.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace attrib;

namespace {

FactorCatalog two_factor_catalog() {
  FactorCatalog cat;
  cat.add_category("ca", "A");
  cat.add_category("cb", "B");
  cat.add_factor("a", {"alpha"}, "ca");
  cat.add_factor("b", {"beta"}, "cb");
  return cat;
}

}  // namespace

TEST(FactorRepresentation, Examples) {
  std::vector<Vector> one{{0.3, -1}};
  EXPECT_EQ(factor_representation(one), (Vector{0.3, -1}));
  std::vector<Vector> two{{2, 0}, {0, 2}};
  EXPECT_EQ(factor_representation(two), (Vector{1, 1}));
  std::vector<Vector> swapped{{0, 2}, {2, 0}};
  EXPECT_EQ(factor_representation(swapped), factor_representation(two));
  EXPECT_THROW(factor_representation(std::vector<Vector>{}), Error);
}

TEST(Attention, Examples) {
  Vector ef{1, 0};
  std::vector<Vector> same{{1, 0}};
  EXPECT_EQ(attended_representation(same, ef), (Vector{1, 0}));

  std::vector<Vector> ortho{{1, 0}, {0, 1}};
  EXPECT_EQ(attention_weights(ortho, ef), (std::vector<double>{1, 0}));
  EXPECT_EQ(attended_representation(ortho, ef), (Vector{1, 0}));

  const double r = 1 / std::sqrt(2.0);
  std::vector<Vector> diag{{1, 0}, {r, r}};
  auto alpha = attention_weights(diag, ef);
  EXPECT_NEAR(alpha[1], r, 1e-15);
  auto ed = attended_representation(diag, ef);
  EXPECT_NEAR(ed[0], 1.5, 1e-15);
  EXPECT_NEAR(ed[1], 0.5, 1e-15);
}

TEST(Attention, RawCosinesMayBeNegative) {
  std::vector<Vector> toks{{-1, 0}, {0, 1}};
  EXPECT_EQ(attention_weights(toks, Vector{1, 0}), (std::vector<double>{-1, 0}));
  auto soft = attention_weights(toks, Vector{1, 0}, AttentionMode::Softmax);
  EXPECT_NEAR(soft[0] + soft[1], 1.0, 1e-15);
  EXPECT_LT(soft[0], soft[1]);
}

TEST(Attention, ScaleAndPermutation) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t d = 2 + rng.index(6);
    std::vector<Vector> toks(1 + rng.index(5), Vector(d));
    for (auto& t : toks)
      for (auto& x : t) x = rng.normal();
    Vector ef(d);
    for (auto& x : ef) x = rng.normal();
    auto base = attended_representation(toks, ef);

    double a = rng.uniform(0.1, 10.0);
    auto scaled = toks;
    for (auto& t : scaled)
      for (auto& x : t) x *= a;
    auto es = attended_representation(scaled, ef);
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(es[k], a * base[k], 1e-9 * (1 + std::abs(a * base[k])));

    auto perm = toks;
    rng.shuffle(perm);
    auto ep = attended_representation(perm, ef);
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(ep[k], base[k], 1e-12);
  }
}

TEST(PairFeatures, Concatenation) {
  std::vector<Vector> toks{{1, 0}};
  EXPECT_EQ(pair_features(toks, Vector{1, 0}), (Vector{1, 0, 1, 0}));
  EXPECT_EQ(pair_features(std::vector<Vector>{}, Vector{0.5, 2}), (Vector{0, 0, 0.5, 2}));
}

TEST(Score, Examples) {
  std::vector<Vector> toks{{3, -1}, {0.5, 0.5}};
  AttributionModel zero(2, Vector(4, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(score(zero, toks, Vector{1, 2}), 0.5);

  AttributionModel big(2, Vector(4, 0.0), 50.0);
  EXPECT_GT(score(big, toks, Vector{1, 2}), 1 - 1e-12);

  AttributionModel unit(2, Vector{1, 0, 0, 0}, 0.0);
  EXPECT_NEAR(unit.score_features(Vector{2, 7, -3, 1}), 0.88080, 1e-5);
  EXPECT_NEAR(sigmoid(2.0), 1 / (1 + std::exp(-2.0)), 1e-15);
  EXPECT_THROW(score(unit, toks, Vector{1, 2, 3}), Error);
}

TEST(Score, MonotoneInPreactivation) {
  // strictly increasing while 1 - p is still representable; saturates beyond
  double prev = 0.0;
  for (double z = -40; z <= 40; z += 0.5) {
    double p = sigmoid(z);
    if (z <= 30) {
      EXPECT_GT(p, prev) << z;
    } else {
      EXPECT_GE(p, prev) << z;
    }
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    prev = p;
  }
}

TEST(Loss, DerivativeFormula) {
  for (double pw : {1.0, 2.5})
    for (double y : {0.0, 1.0})
      for (double z : {-3.0, -0.2, 0.0, 1.7}) {
        double h = 1e-6;
        double num = (bce_loss(sigmoid(z + h), y, pw) - bce_loss(sigmoid(z - h), y, pw)) / (2 * h);
        EXPECT_NEAR(bce_dlogit(sigmoid(z), y, pw), num, 1e-7);
      }
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  Rng rng(42);
  EXPECT_LE(synth::gradient_check(rng, 30, 8, 1e-5), 1e-4);
}

namespace {

TrainingConfig fast_config() {
  TrainingConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 8;
  cfg.n_epochs = 50;
  cfg.dropout_rate = 0.0;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(Training, SeparablePairsReachPerfectF1) {
  // features: [e_d : e_f] with the label carried by the first coordinate
  std::vector<Vector> feats;
  std::vector<LabeledPair> pairs;
  Rng rng(1);
  for (int i = 0; i < 60; ++i) {
    int y = i % 2;
    feats.push_back({y ? 1.0 : 0.0, rng.uniform(), 0.0, 1.0});
    pairs.push_back({{"p" + std::to_string(i), 0}, "f", y});
  }
  auto encode = [&](const LabeledPair& p) { return feats[std::stoul(p.sentence.comment_id.substr(1))]; };
  auto run = train_pairs(pairs, {}, 2, encode, fast_config());
  DetectionOutcome o;
  for (std::size_t i = 0; i < pairs.size(); ++i) o.record(pairs[i].label == 1, run.model.score_features(feats[i]) >= 0.5);
  EXPECT_DOUBLE_EQ(*detection_metrics(o).f1, 1.0);
  EXPECT_EQ(run.history.size(), 50u);
  EXPECT_EQ(run.best_epoch, 50u);
}

TEST(Training, DeterministicAndSeedSensitive) {
  Rng rng(3);
  auto w = synth::separable_world(rng, 60, 3);
  auto cfg = fast_config();
  cfg.n_epochs = 5;
  cfg.dropout_rate = 0.1;
  auto a = synth::train_and_evaluate(w.comments, w.catalog, w.store, cfg);
  auto b = synth::train_and_evaluate(w.comments, w.catalog, w.store, cfg);
  EXPECT_EQ(a.run.model.weights, b.run.model.weights);
  EXPECT_EQ(a.run.model.bias, b.run.model.bias);
  EXPECT_EQ(a.run.model.detection_threshold, b.run.model.detection_threshold);
  cfg.seed = 6;
  auto c = synth::train_and_evaluate(w.comments, w.catalog, w.store, cfg);
  EXPECT_NE(a.run.model.weights, c.run.model.weights);
}

TEST(Training, SingleClassIsAnError) {
  std::vector<LabeledPair> pairs{{{"a", 0}, "f", 1}, {{"b", 0}, "f", 1}};
  auto encode = [](const LabeledPair&) { return Vector{1, 1}; };
  EXPECT_THROW(train_pairs(pairs, {}, 1, encode, fast_config()), Error);
  EXPECT_THROW(train_pairs({}, {}, 1, encode, fast_config()), Error);
}

TEST(Training, ConfigValidation) {
  auto cfg = fast_config();
  cfg.pos_weight = 0.5;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = fast_config();
  cfg.split.holdout = 0.3;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = fast_config();
  cfg.dropout_rate = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Training, SeparableWorldHoldout) {
  Rng rng(17);
  auto w = synth::separable_world(rng, 200, 4);
  auto r = synth::train_and_evaluate(w.comments, w.catalog, w.store, fast_config());
  EXPECT_GE(*r.report.detection_metrics.f1, 0.95);
  EXPECT_GE(*r.report.resolution.accuracy(1), 0.95);
}

TEST(Pairs, LabelsAndSplits) {
  auto cat = two_factor_catalog();
  std::vector<Comment> cs{synth::make_comment("c1", "alpha. beta. none"), synth::make_comment("c2", "x")};
  cs[0].sentences[0].annotated = true;
  cs[0].sentences[0].labels = {"ca"};
  cs[0].sentences[1].annotated = true;  // explicit negative
  auto pairs = build_pairs(cs, cat);
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_EQ(pairs[0].label, 1);
  EXPECT_EQ(pairs[1].label, 0);
  EXPECT_EQ(pairs[2].label + pairs[3].label, 0);

  std::vector<SentenceKey> keys;
  for (int i = 0; i < 50; ++i) keys.push_back({"k" + std::to_string(i), 0});
  auto [rest, held] = split_keys(keys, 0.2, 9);
  EXPECT_EQ(held.size(), 10u);
  EXPECT_EQ(rest.size(), 40u);
  std::set<SentenceKey> all(rest.begin(), rest.end());
  for (const auto& k : held) EXPECT_TRUE(all.insert(k).second);
  EXPECT_EQ(all.size(), 50u);
  auto again = split_keys(keys, 0.2, 9);
  EXPECT_EQ(again.second, held);
}

TEST(Threshold, AllPositivePicksLowest) {
  std::vector<ScoredSentence> s{{0.3, true}, {0.9, true}, {0.6, true}};
  auto c = tune_threshold(s);
  EXPECT_DOUBLE_EQ(c.threshold, 0.3);
  EXPECT_DOUBLE_EQ(*c.f1, 1.0);
}

TEST(Threshold, SeparatedScoresPickLowestInGap) {
  std::vector<ScoredSentence> s{{0.1, false}, {0.2, false}, {0.35, false}, {0.7, true}, {0.8, true}};
  auto c = tune_threshold(s);
  EXPECT_DOUBLE_EQ(c.threshold, 0.7);
  EXPECT_DOUBLE_EQ(*c.f1, 1.0);
  EXPECT_THROW(tune_threshold(std::vector<ScoredSentence>{}), Error);
}

TEST(Threshold, TiesGoToLowest) {
  // F1 by threshold: 0.4 -> 0.8, 0.5 -> 0.5, 0.6 -> 0.667
  std::vector<ScoredSentence> s{{0.4, true}, {0.5, false}, {0.6, true}};
  EXPECT_DOUBLE_EQ(tune_threshold(s).threshold, 0.4);
  // F1 by threshold: 0.2 -> 0.667, 0.3 -> 0.5, 0.4 -> 0.667
  std::vector<ScoredSentence> eq{{0.2, true}, {0.2, false}, {0.3, false}, {0.4, true}};
  auto c = tune_threshold(eq);
  EXPECT_DOUBLE_EQ(c.threshold, 0.2);
  EXPECT_NEAR(*c.f1, 2.0 / 3.0, 1e-15);
}

namespace {

// Encoder over a two-factor catalog where factor reps are axes.
struct PredictFixture {
  EmbeddingStore store{2, {}};
  FactorCatalog catalog = two_factor_catalog();
  std::unique_ptr<StaticVectorSource> source;
  std::unique_ptr<PairEncoder> encoder;

  PredictFixture() {
    store.insert("alpha", {1, 0});
    store.insert("beta", {0, 1});
    source = std::make_unique<StaticVectorSource>(store);
    encoder = std::make_unique<PairEncoder>(*source, std::vector<Comment>{}, catalog, AttentionMode::Cosine);
  }
};

}  // namespace

TEST(Predict, DetectionAndRanking) {
  PredictFixture fx;
  // score = sigma(10 * (E(d) . (1,1)) - 5): 0.993 for the matching factor, 0.0067 otherwise
  AttributionModel m(2, Vector{10, 10, 0, 0}, -5);
  m.detection_threshold = 0.5;
  std::vector<Vector> toks{{1, 0}};
  auto p = predict(m, toks, fx.catalog, *fx.encoder);
  EXPECT_TRUE(p.detected);
  EXPECT_EQ(p.resolved_factor(), "a");
  EXPECT_EQ(p.ranked_categories.front().id, "ca");
  EXPECT_GT(p.ranked_factors[0].score, 0.99);

  m.detection_threshold = 0.999;
  auto q = predict(m, toks, fx.catalog, *fx.encoder);
  EXPECT_FALSE(q.detected);
  EXPECT_EQ(q.ranked_factors.size(), 2u);

  m.detection_threshold.reset();
  EXPECT_THROW(predict(m, toks, fx.catalog, *fx.encoder), Error);
}

TEST(Predict, TiesAreLexicographic) {
  PredictFixture fx;
  AttributionModel m(2, Vector(4, 0.0), 1.0);
  m.detection_threshold = 0.5;
  std::vector<Vector> toks{{1, 1}};
  auto p = predict(m, toks, fx.catalog, *fx.encoder);
  ASSERT_EQ(p.ranked_factors.size(), 2u);
  EXPECT_EQ(p.ranked_factors[0].score, p.ranked_factors[1].score);
  EXPECT_EQ(p.ranked_factors[0].id, "a");
  EXPECT_EQ(p.ranked_factors[1].id, "b");
  std::vector<RankedFactor> v{{"b", 0.8}, {"a", 0.8}, {"c", 0.9}};
  sort_ranked(v);
  EXPECT_EQ(v[0].id, "c");
  EXPECT_EQ(v[1].id, "a");
}

TEST(Predict, CategoryScoreIsBestFactor) {
  FactorCatalog cat;
  cat.add_category("x", "X");
  cat.add_category("y", "Y");
  cat.add_factor("x1", {"p"}, "x");
  cat.add_factor("x2", {"q"}, "x");
  cat.add_factor("y1", {"r"}, "y");
  auto ranked = rank_categories({{"x1", 0.2}, {"y1", 0.5}, {"x2", 0.7}}, cat);
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].id, "x");
  EXPECT_DOUBLE_EQ(ranked[0].score, 0.7);
}

TEST(Baseline, IdentityAndOrthogonal) {
  EmbeddingStore store(2, {"the"});
  store.insert("tree", {1, 0});
  store.insert("cut", {0.5, 0.5});
  store.insert("rain", {0, 1});
  std::vector<Comment> cs{synth::make_comment("c", "cut tree. rain")};
  auto st = compute_stats(cs);
  Factor f{"f", {"cut", "tree"}, "c"};
  std::vector<std::string> same{"the", "cut", "tree"};
  EXPECT_NEAR(baseline_score(same, f, store, st), 1.0, 1e-12);
  Factor g{"g", {"tree"}, "c"};
  std::vector<std::string> rain{"rain"};
  EXPECT_EQ(baseline_score(rain, g, store, st), 0.0);
  std::vector<std::string> stop{"the"};
  EXPECT_EQ(baseline_score(stop, g, store, st), 0.0);
}

TEST(Baseline, MatchesNaiveRecomputation) {
  Rng rng(99);
  for (int inst = 0; inst < 40; ++inst) {
    auto w = synth::random_world(rng, 6);
    const auto& c = w.comments[rng.index(w.comments.size())];
    const auto& s = c.sentences[rng.index(c.sentences.size())];
    const auto& f = w.catalog.factors()[rng.index(w.catalog.factors().size())];
    EXPECT_NEAR(baseline_score(s.tokens, f, w.store, w.stats), synth::naive_baseline(w, s.tokens, f.phrase), 1e-9);
  }
}

TEST(TokenVectors, RoundTrip) {
  TokenVectorFile f{3, {{{"c1", 0}, {{0.1f, 2.5f, -3.0f}, {1e-7f, 0, 1}}}, {{"c1", 1}, {}}, {{"c2", 0}, {{1, 2, 3}}}}};
  auto text = serialize_token_vectors(f);
  auto back = parse_token_vectors(text);
  EXPECT_EQ(back.dim, 3u);
  ASSERT_EQ(back.blocks.size(), 3u);
  EXPECT_EQ(back.blocks[0].vectors, f.blocks[0].vectors);
  EXPECT_TRUE(back.blocks[1].vectors.empty());
  EXPECT_EQ(serialize_token_vectors(back), text);
}

TEST(TokenVectors, Errors) {
  auto line_of = [](const std::string& content) {
    try {
      parse_token_vectors(content);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(line_of("").find("DIM"), std::string::npos);
  EXPECT_NE(line_of("DIM 2\nKEY c 0 1\n1 2 3\n").find("line 3"), std::string::npos);
  EXPECT_NE(line_of("DIM 2\nKEY c 0 2\n1 2\n").find("end of file"), std::string::npos);
  EXPECT_NE(line_of("DIM 2\nKEY c 0 0\nKEY c 0 0\n").find("duplicate"), std::string::npos);
  EXPECT_NE(line_of("DIM 2\nKEY c 0 1\n1 z\n").find("cannot parse"), std::string::npos);
  TokenVectorFile bad{2, {{{"has space", 0}, {}}}};
  EXPECT_THROW(serialize_token_vectors(bad), Error);
}

TEST(TokenVectors, AlignmentAndContextualSource) {
  auto cat = two_factor_catalog();
  std::vector<Comment> cs{synth::make_comment("c1", "alpha beta. beta")};
  TokenVectorFile sents{2, {{{"c1", 0}, {{1, 0}, {0, 1}}}, {{"c1", 1}, {{0, 1}}}}};
  TokenVectorFile facts{2, {{{"a", 0}, {{1, 0}}}, {{"b", 0}, {{0, 1}}}}};
  EXPECT_TRUE(alignment_errors(cs, sents).empty());
  TokenVectorFile short_file{2, {{{"c1", 0}, {{1, 0}}}}};
  EXPECT_EQ(alignment_errors(cs, short_file).size(), 2u);

  ContextualVectorSource src(sents, facts);
  PairEncoder enc(src, cs, cat, AttentionMode::Cosine);
  EXPECT_EQ(enc.factor_rep("b"), (Vector{0, 1}));
  EXPECT_EQ(enc.encode(SentenceKey{"c1", 0}, "a"), (Vector{1, 0, 1, 0}));
  EXPECT_THROW(ContextualVectorSource(short_file, facts).sentence_vectors({"c1", 0}, cs[0].sentences[0]), Error);
}

TEST(ModelFile, RoundTripIsExact) {
  Rng rng(4);
  Vector w(6);
  for (auto& x : w) x = rng.normal() / 3.0;
  AttributionModel m(3, w, -0.1234567891234);
  m.detection_threshold = 0.1 + 0.2;
  m.attention = AttentionMode::Softmax;
  auto back = parse_model(serialize_model(m));
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.detection_threshold, m.detection_threshold);
  EXPECT_EQ(back.attention, AttentionMode::Softmax);
  m.detection_threshold.reset();
  EXPECT_FALSE(parse_model(serialize_model(m)).detection_threshold.has_value());
  EXPECT_THROW(parse_model("DIM 3\n"), Error);
  EXPECT_THROW(parse_model("ATTRIBUTION_MODEL 1\nDIM 2\nATTENTION cosine\nTHRESHOLD none\nB 0\nW 1 2\n"), Error);
}
