#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "attrib/pruning.hpp"
#include "support.hpp"
#include "synthetic.hpp"

using namespace attrib;

namespace {

std::set<std::string> ids(const PruneResult& r) {
  std::set<std::string> out;
  for (const auto& c : r.kept) out.insert(c.id);
  return out;
}

bool subset(const std::set<std::string>& a, const std::set<std::string>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

TEST(CommentSim, IdentityAndDegenerate) {
  EmbeddingStore store(2, {"the"});
  store.insert("tree", {0.6, 0.8});
  store.insert("the", {1, 0});
  auto st = compute_stats({});
  EXPECT_NEAR(comment_factor_sim(synth::make_comment("c", "tree"), Vector{0.6, 0.8}, store, st), 1.0, 1e-15);
  EXPECT_EQ(comment_factor_sim(synth::make_comment("c", "the. the the"), Vector{1, 0}, store, st), 0.0);
  EXPECT_EQ(comment_factor_sim(synth::make_comment("c", ""), Vector{1, 0}, store, st), 0.0);
}

TEST(CommentSim, MaxOverSentences) {
  EmbeddingStore store(2, {});
  store.insert("low", {0.3, std::sqrt(1 - 0.09)});
  store.insert("high", {0.8, 0.6});
  auto c = synth::make_comment("c", "low. high");
  EXPECT_NEAR(comment_factor_sim(c, Vector{1, 0}, store, compute_stats({c})), 0.8, 1e-12);
}

TEST(PercentileCutoff, Values) {
  EXPECT_EQ(percentile_cutoff(0.2, 10), 2u);
  EXPECT_EQ(percentile_cutoff(0.2, 11), 3u);
  EXPECT_EQ(percentile_cutoff(0.01, 10), 1u);
  EXPECT_EQ(percentile_cutoff(1.0, 7), 7u);
}

namespace {

struct TenComments {
  EmbeddingStore store{2, {}};
  FactorCatalog catalog;
  std::vector<Comment> comments;
  CorpusStats stats;

  TenComments() {
    catalog.add_category("c", "C");
    store.insert("anchor", {1, 0});
    catalog.add_factor("f", {"anchor"}, "c");
    for (int i = 0; i < 10; ++i) {
      std::string w = "t" + std::to_string(i);
      store.insert(w, {1, 0.05 * i});  // cosine 1/sqrt(1 + (0.05 i)^2), all above 0.9
      comments.push_back(synth::make_comment("d" + std::to_string(i), w));
    }
    stats = compute_stats(comments);
  }
};

}  // namespace

TEST(Prune, TopTwoOfTen) {
  TenComments t;
  auto r = prune(t.comments, t.catalog, t.store, t.stats, {0.2, 0.7});
  EXPECT_EQ(ids(r), (std::set<std::string>{"d0", "d1"}));
  ASSERT_EQ(r.records.size(), 10u);
  EXPECT_EQ(r.records[3].argmax_factor, "f");
}

TEST(Prune, VacuousAndImpossibleThresholds) {
  TenComments t;
  EXPECT_EQ(prune(t.comments, t.catalog, t.store, t.stats, {1.0, 0.0}).kept.size(), 10u);
  EXPECT_TRUE(prune(t.comments, t.catalog, t.store, t.stats, {1.0, 1.5}).kept.empty());
  EXPECT_THROW(prune(t.comments, t.catalog, t.store, t.stats, {0.0, 0.0}), Error);
}

TEST(Prune, TiesAtCutoffAreKept) {
  EmbeddingStore store(2, {});
  FactorCatalog cat;
  cat.add_category("c", "C");
  store.insert("a", {1, 0});
  cat.add_factor("f", {"a"}, "c");
  std::vector<Comment> cs;
  for (int i = 0; i < 5; ++i) cs.push_back(synth::make_comment("d" + std::to_string(i), "a"));
  EXPECT_EQ(prune(cs, cat, store, compute_stats(cs), {0.2, 0.0}).kept.size(), 5u);
}

TEST(Prune, RandomWorldProperties) {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    auto w = synth::random_world(rng, 5 + rng.index(20));
    auto all = ids(prune(w.comments, w.catalog, w.store, w.stats, {1.0, -1.0}));
    EXPECT_EQ(all.size(), w.comments.size());
    std::set<std::string> prev = all;
    for (double th : {-0.5, 0.0, 0.3, 0.6, 0.9}) {
      auto r = prune(w.comments, w.catalog, w.store, w.stats, {0.3, th});
      auto cur = ids(r);
      EXPECT_TRUE(subset(cur, prev));
      for (const auto& rec : r.records)
        if (cur.count(rec.comment_id)) {
          EXPECT_GE(rec.max_score, th);
        }
      prev = cur;
    }
    std::set<std::string> smaller;
    for (double p : {0.1, 0.25, 0.5, 0.75, 1.0}) {
      auto cur = ids(prune(w.comments, w.catalog, w.store, w.stats, {p, 0.2}));
      EXPECT_TRUE(subset(smaller, cur));
      smaller = cur;
    }
  }
}

TEST(Prune, PermutationInvariant) {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    auto w = synth::random_world(rng, 12);
    auto base = ids(prune(w.comments, w.catalog, w.store, w.stats, {0.25, 0.1}));
    auto shuffled = w.comments;
    rng.shuffle(shuffled);
    EXPECT_EQ(ids(prune(shuffled, w.catalog, w.store, w.stats, {0.25, 0.1})), base);
  }
}

TEST(Prune, SimilarityRowsAndSummary) {
  TenComments t;
  auto text = serialize_similarity(prune(t.comments, t.catalog, t.store, t.stats, {0.2, 0.7}));
  EXPECT_NE(text.find("d0\tf\t1\n"), std::string::npos);
  EXPECT_NE(text.find("d0\t#max\t1\tf\tkept\n"), std::string::npos);
  EXPECT_NE(text.find("d9\t#max\t"), std::string::npos);
  EXPECT_NE(text.find("\tpruned\n"), std::string::npos);
}

TEST(TokenFrequency, Examples) {
  std::unordered_set<std::string> stop{"the", "is"};
  std::vector<Comment> cs{synth::make_comment("a", "water the water. is water"), synth::make_comment("b", "rain")};
  auto f = token_frequency_export(cs, stop);
  EXPECT_EQ(f.at("water"), 3u);
  EXPECT_EQ(f.at("rain"), 1u);
  EXPECT_EQ(f.count("the"), 0u);
  EXPECT_TRUE(token_frequency_export({}, stop).empty());
  EXPECT_TRUE(token_frequency_export({synth::make_comment("s", "the is. the")}, stop).empty());
  EXPECT_EQ(serialize_token_frequencies(f), "water\t3\nrain\t1\n");
}
