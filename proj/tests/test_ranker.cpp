// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "patchtrace/ranker.hpp"
#include "repo_fixture.hpp"
#include "synthetic.hpp"

using namespace patchtrace;
using patchtrace::testing::rank_of;
using patchtrace::testing::repeated_id;
using patchtrace::testing::RepoFixture;
using patchtrace::testing::scratch_dir;

namespace {

patchtrace::testing::SyntheticData one_repo(std::size_t commits, std::uint64_t seed = 7) {
    patchtrace::testing::SyntheticSpec spec;
    spec.repos = 1;
    spec.commits_per_repo = commits;
    spec.cves = 3;
    spec.seed = seed;
    return make_planted_corpus(spec);
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

// Three commits around a CVE naming Nio2Channel:
//   a (t=100) repeats the description and touches src/net/Nio2Channel.java
//   c (t=200) touches an unrelated file
//   b (t=300) message only, committed at the publish time
struct FeatureFixture {
    Corpus corpus;
    CveRecord cve;

    FeatureFixture()
        : corpus("fx",
                 {CommitRecord{repeated_id('a'), "fx", 100,
                               "Infinite loop in Nio2Channel when reading TLS packets",
                               split_diff_by_file("diff --git a/src/net/Nio2Channel.java b/src/net/Nio2Channel.java\n"
                                                  "--- a/src/net/Nio2Channel.java\n+++ b/src/net/Nio2Channel.java\n"
                                                  "@@ -1 +1 @@\n-  loop(packets);\n+  readTls(packets); // loop\n")},
                  CommitRecord{repeated_id('c'), "fx", 200, "Update readme wording",
                               split_diff_by_file("diff --git a/docs/readme.md b/docs/readme.md\n"
                                                  "--- a/docs/readme.md\n+++ b/docs/readme.md\n@@ -1 +1 @@\n"
                                                  "-old words\n+new words\n")},
                  CommitRecord{repeated_id('b'), "fx", 300, "Bump version", {}}}),
          cve{"CVE-2021-0002", "Infinite loop in Nio2Channel when reading TLS packets", 150, 300, "fx", {}} {}
};

RankModel stump_on(int feature, double threshold, double lo, double hi) {
    RankModel m;
    RegressionTree t;
    t.nodes = {{feature, threshold, ~0, ~1}};
    t.leaf_values = {lo, hi};
    m.trees.push_back(t);
    return m;
}

}  // namespace

TEST(Sampling, ExhaustsSmallCorpus) {
    const auto data = one_repo(300);
    const auto& corpus = data.corpora[0];
    RepoFixture fx(corpus, data.cves);
    const auto& cve = fx.cves[0];
    const auto s = sample_training_commits(cve, fx.prerank(cve), corpus, 1);
    ASSERT_TRUE(s);
    EXPECT_EQ(s->positives, cve.known_patch_ids);
    EXPECT_LE(s->size(), 300u);
    EXPECT_EQ(s->size(), 300u);
    std::vector<std::string> all = s->positives;
    all.insert(all.end(), s->hard_negatives.begin(), s->hard_negatives.end());
    all.insert(all.end(), s->random_negatives.begin(), s->random_negatives.end());
    EXPECT_EQ(as_set(all).size(), all.size());
}

TEST(Sampling, HardAndRandomCounts) {
    const auto data = one_repo(1500);
    RepoFixture fx(data.corpora[0], data.cves, 64);
    const auto& cve = fx.cves[1];
    const auto prerank = fx.prerank(cve);
    const auto s = sample_training_commits(cve, prerank, fx.corpus, 1);
    ASSERT_TRUE(s);
    EXPECT_EQ(s->positives.size(), 1u);
    EXPECT_EQ(s->hard_negatives.size(), 500u);
    EXPECT_EQ(s->random_negatives.size(), 500u);
    // Hard negatives are the leading prerank entries minus the positive.
    std::vector<std::string> expected;
    for (const auto& d : prerank) {
        if (expected.size() == 500) break;
        if (d.doc_id != cve.known_patch_ids[0]) expected.push_back(d.doc_id);
    }
    EXPECT_EQ(s->hard_negatives, expected);
    const auto hard = as_set(s->hard_negatives);
    for (const auto& r : s->random_negatives) {
        EXPECT_FALSE(hard.count(r));
        EXPECT_NE(r, cve.known_patch_ids[0]);
    }
}

TEST(Sampling, PositiveInTopAppearsOnceAsPositive) {
    const auto data = one_repo(400);
    RepoFixture fx(data.corpora[0], data.cves, 64);
    const auto& cve = fx.cves[0];
    const auto prerank = fx.prerank(cve);
    ASSERT_LE(rank_of(prerank, cve.known_patch_ids[0]), 500u);
    ASSERT_GE(rank_of(prerank, cve.known_patch_ids[0]), 1u);
    auto fz = fx.featurizer(cve);
    const auto g = sample_training_group(cve, prerank, fx.corpus, 3, *fz);
    ASSERT_TRUE(g);
    std::size_t seen = 0, positives = 0;
    for (const auto& r : g->rows) {
        seen += r.commit_id == cve.known_patch_ids[0];
        positives += r.relevance;
    }
    EXPECT_EQ(seen, 1u);
    EXPECT_EQ(positives, 1u);
    EXPECT_EQ(g->rows.front().commit_id, cve.known_patch_ids[0]);
    EXPECT_EQ(g->rows.front().relevance, 1);
}

TEST(Sampling, DeterministicForSeed) {
    const auto data = one_repo(1200);
    RepoFixture fx(data.corpora[0], data.cves, 64);
    const auto& cve = fx.cves[2];
    const auto prerank = fx.prerank(cve);
    const auto a = sample_training_commits(cve, prerank, fx.corpus, 11);
    const auto b = sample_training_commits(cve, prerank, fx.corpus, 11);
    const auto c = sample_training_commits(cve, prerank, fx.corpus, 12);
    EXPECT_EQ(a->random_negatives, b->random_negatives);
    EXPECT_NE(a->random_negatives, c->random_negatives);
    auto f1 = fx.featurizer(cve);
    auto f2 = fx.featurizer(cve);
    EXPECT_EQ(*sample_training_group(cve, prerank, fx.corpus, 11, *f1),
              *sample_training_group(cve, prerank, fx.corpus, 11, *f2));
}

TEST(Sampling, NoPositiveSkipsCve) {
    const auto data = one_repo(100);
    RepoFixture fx(data.corpora[0], data.cves, 64);
    auto cve = fx.cves[0];
    cve.known_patch_ids = {repeated_id('f')};
    EXPECT_FALSE(sample_training_commits(cve, fx.prerank(cve), fx.corpus, 0));
    cve.known_patch_ids.clear();
    EXPECT_FALSE(sample_training_commits(cve, fx.prerank(cve), fx.corpus, 0));
}

TEST(Features, AlignedCommitScoresHigh) {
    FeatureFixture f;
    RepoFixture fx(f.corpus, {f.cve}, 1024);
    const auto aligned = assemble_feature_vector(f.corpus, f.cve, repeated_id('a'), fx.diff, fx.file, fx.store,
                                                 fx.cache, fx.extractor);
    const auto unrelated = assemble_feature_vector(f.corpus, f.cve, repeated_id('c'), fx.diff, fx.file, fx.store,
                                                   fx.cache, fx.extractor);
    EXPECT_GT(aligned[0], 0.5);
    EXPECT_GT(aligned[0], unrelated[0]);
    EXPECT_DOUBLE_EQ(aligned[7], 1.0);
    EXPECT_NEAR(aligned[8], 1.0, 1e-6);
    EXPECT_GT(aligned[4], 0.0);
    EXPECT_EQ(unrelated[4], 0.0);
    EXPECT_EQ(unrelated[7], 0.0);
    // Single-file commit: the three file aggregations agree.
    EXPECT_EQ(aligned[1], aligned[2]);
    EXPECT_EQ(aligned[2], aligned[3]);
}

TEST(Features, TimeDistancesAndMessageOnlyCommit) {
    FeatureFixture f;
    RepoFixture fx(f.corpus, {f.cve}, 256);
    auto fz = fx.featurizer(f.cve);
    const auto a = fz->features(repeated_id('a'));
    const auto b = fz->features(repeated_id('b'));
    const auto c = fz->features(repeated_id('c'));
    EXPECT_EQ(b[6], 0.0);
    EXPECT_EQ(c[6], 1.0);
    EXPECT_EQ(a[6], 2.0);
    EXPECT_EQ(c[5], 0.0);
    EXPECT_EQ(a[5], 1.0);
    EXPECT_EQ(b[1], 0.0);
    EXPECT_EQ(b[2], 0.0);
    EXPECT_EQ(b[3], 0.0);
    EXPECT_EQ(b[7], 0.0);
    EXPECT_EQ(b[8], 0.0);
}

TEST(Features, MissingTimesUseCorpusSize) {
    FeatureFixture f;
    f.cve.reserve_time.reset();
    f.cve.publish_time.reset();
    RepoFixture fx(f.corpus, {f.cve}, 64);
    const auto v = fx.featurizer(f.cve)->features(repeated_id('a'));
    EXPECT_EQ(v[5], 3.0);
    EXPECT_EQ(v[6], 3.0);
}

TEST(Features, ErrorsNameThePair) {
    FeatureFixture f;
    RepoFixture fx(f.corpus, {f.cve}, 64);
    auto fz = fx.featurizer(f.cve);
    try {
        fz->features(repeated_id('e'));
        FAIL();
    } catch (const FeatureError& e) {
        EXPECT_NE(std::string(e.what()).find("CVE-2021-0002"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find(repeated_id('e')), std::string::npos);
    }
    // A CVE without a stored vector.
    CveRecord other = f.cve;
    other.cve_id = "CVE-2021-9999";
    EXPECT_THROW(fx.featurizer(other)->features(repeated_id('a')), FeatureError);
}

TEST(Rerank, StumpOrdersByFeature) {
    const auto model = stump_on(0, 0.5, 0.0, 1.0);
    const RankedList candidates = {{"x", 0.9}, {"y", 0.8}, {"z", 0.7}};
    std::unordered_map<std::string, FeatureVector> f;
    f["x"][0] = 0.1;
    f["y"][0] = 0.9;
    f["z"][0] = 0.2;
    const auto out = score_and_rerank(model, candidates, f);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].doc_id, "y");
    EXPECT_EQ(out[0].score, 1.0);
    // x and z tie; prerank order is kept.
    EXPECT_EQ(out[1].doc_id, "x");
    EXPECT_EQ(out[2].doc_id, "z");
}

TEST(Rerank, EmptyAndMissingRows) {
    const auto model = stump_on(0, 0.5, 0.0, 1.0);
    EXPECT_TRUE(score_and_rerank(model, {}, {}).empty());
    std::unordered_map<std::string, FeatureVector> f;
    f["x"] = {};
    EXPECT_THROW(score_and_rerank(model, {{"x", 1.0}, {"y", 0.5}}, f), FeatureError);
}

TEST(Rerank, PlantedPatchMovesFromThirdToFirst) {
    patchtrace::testing::SyntheticSpec spec;
    spec.repos = 2;
    spec.commits_per_repo = 300;
    spec.cves = 40;
    spec.decoys = 2;
    const auto data = make_planted_corpus(spec);
    RepoFixture train(data.corpora[0], data.cves), test(data.corpora[1], data.cves);

    std::vector<TrainingGroup> groups;
    for (const auto& cve : train.cves) {
        auto fz = train.featurizer(cve);
        groups.push_back(*sample_training_group(cve, train.prerank(cve), train.corpus, 0, *fz));
    }
    const auto model = train_lambdarank(groups);

    std::size_t from_third = 0;
    for (const auto& cve : test.cves) {
        const auto candidates = test.prerank(cve);
        auto fz = test.featurizer(cve);
        std::vector<std::string> ids;
        for (const auto& d : candidates) ids.push_back(d.doc_id);
        fz->prefetch(ids);
        std::unordered_map<std::string, FeatureVector> features;
        for (const auto& id : ids) features[id] = fz->features(id);
        const auto reranked = score_and_rerank(model, candidates, features);
        const auto& patch = cve.known_patch_ids[0];
        ASSERT_GT(rank_of(candidates, patch), 1u) << cve.cve_id;
        from_third += rank_of(candidates, patch) == 3;
        EXPECT_EQ(rank_of(reranked, patch), 1u) << cve.cve_id;
    }
    EXPECT_GE(from_third, 1u);
}

TEST(TrainingIo, RoundTrip) {
    const auto dir = scratch_dir("training_io");
    std::vector<TrainingGroup> groups(2);
    groups[0].cve_id = "CVE-1";
    groups[0].rows = {LabeledRow{{0.1, 0.2, 0.3, 0.4, 12.5, 3, 4, 0.5, 0.25}, 1, "aa"},
                      LabeledRow{{}, 0, "bb"}};
    groups[1].cve_id = "CVE-2";
    groups[1].rows = {LabeledRow{{1.0 / 3.0}, 1, "cc"}};
    write_training_groups(groups, dir / "t.jsonl");
    EXPECT_EQ(read_training_groups(dir / "t.jsonl"), groups);
}

TEST(TrainingIo, RejectsBadRows) {
    const auto dir = scratch_dir("training_bad");
    const std::string row0 = R"({"cve_id":"A","commit_id":"x","relevance":0,"features":[0,0,0,0,0,0,0,0,0]})";
    const std::string rowB = R"({"cve_id":"B","commit_id":"x","relevance":1,"features":[0,0,0,0,0,0,0,0,0]})";
    auto check = [&](const std::string& text) {
        std::ofstream(dir / "t.jsonl") << text;
        EXPECT_THROW(read_training_groups(dir / "t.jsonl"), DataError) << text;
    };
    check(row0 + "\n" + rowB + "\n" + row0 + "\n");
    check(R"({"cve_id":"A","commit_id":"x","relevance":2,"features":[0,0,0,0,0,0,0,0,0]})");
    check(R"({"cve_id":"A","commit_id":"x","relevance":1,"features":[0,0,0]})");
    check(R"({"cve_id":"A","commit_id":"x","relevance":1,"features":[0,0,0,0,0,0,0,0,0],"extra":1})");
    check("not json");
}

TEST(FeatureIo, RoundTripWithNamedColumns) {
    const auto dir = scratch_dir("feature_io");
    const std::vector<FeatureRow> rows = {{"CVE-1", "aa", {1, 2, 3, 4, 5, 6, 7, 0.5, 0.125}},
                                          {"CVE-1", "bb", {}}};
    write_feature_rows(rows, dir / "f.jsonl");
    EXPECT_EQ(read_feature_rows(dir / "f.jsonl"), rows);
    std::ifstream in(dir / "f.jsonl");
    std::string first;
    std::getline(in, first);
    EXPECT_EQ(first, R"({"cve_id":"CVE-1","commit_id":"aa","f1":1.0,"f2":2.0,"f3":3.0,"f4":4.0,"f5":5.0,)"
                     R"("f6":6.0,"f7":7.0,"f8":0.5,"f9":0.125})");
}

TEST(RankingIo, RoundTripAndRankCheck) {
    const auto dir = scratch_dir("ranking_io");
    RankingTable t;
    t["CVE-1"] = {{"aa", 2.5}, {"bb", -1.0}};
    t["CVE-2"] = {{"cc", 0.0}};
    write_rankings(t, dir / "r.jsonl");
    EXPECT_EQ(read_rankings(dir / "r.jsonl"), t);
    std::ofstream(dir / "bad.jsonl") << R"({"cve_id":"A","commit_id":"x","rank":2,"score":0})" << "\n";
    EXPECT_THROW(read_rankings(dir / "bad.jsonl"), DataError);
}
