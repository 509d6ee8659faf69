// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "patchtrace/vector_store.hpp"
#include "synthetic.hpp"

using namespace patchtrace;
using patchtrace::testing::repeated_id;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::string file_diff(const std::string& path, const std::string& line) {
    return "diff --git a/" + path + " b/" + path + "\n--- a/" + path + "\n+++ b/" + path + "\n@@ -1 +1 @@\n+" +
           line + "\n";
}

Corpus three_file_corpus() {
    const std::string diff =
        file_diff("src/a.c", "alpha") + file_diff("src/b.c", "bravo") + file_diff("include/c.h", "charlie");
    return Corpus("r", {CommitRecord{repeated_id('a'), "r", 10, "Fix overflow", split_diff_by_file(diff)},
                        CommitRecord{repeated_id('b'), "r", 20, "Docs only", {}}});
}

// Counts the texts it is asked to embed and fails when told to.
class CountingProvider final : public EmbeddingProvider {
public:
    explicit CountingProvider(int fail_on_call = -1) : fail_on_call_(fail_on_call) {}
    std::string model_name() const override { return "counting"; }
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override {
        if (calls++ == fail_on_call_) throw EmbeddingError("boom", true, 4);
        texts_seen += texts.size();
        return inner_.embed(texts);
    }
    std::size_t max_batch() const override { return 2; }
    int calls = 0;
    std::size_t texts_seen = 0;

private:
    OfflineEmbedder inner_{64};
    int fail_on_call_;
};

}  // namespace

TEST(VectorStore, PutAndAt) {
    VectorStore s;
    s.put(StoreKey::commit("c1"), EmbeddingVector::basis(8, 1));
    EXPECT_EQ(s.dimension(), 8u);
    EXPECT_EQ(s.at(StoreKey::commit("c1")), EmbeddingVector::basis(8, 1));
    EXPECT_TRUE(s.contains(StoreKey::commit("c1")));
    EXPECT_FALSE(s.contains(StoreKey::cve("c1")));
}

TEST(VectorStore, DuplicateKeyRejected) {
    VectorStore s;
    s.put(StoreKey::cve("CVE-1"), EmbeddingVector::basis(8, 0));
    EXPECT_THROW(s.put(StoreKey::cve("CVE-1"), EmbeddingVector::basis(8, 2)), std::invalid_argument);
}

TEST(VectorStore, DimensionMismatchRejected) {
    VectorStore s;
    s.put(StoreKey::cve("CVE-1"), EmbeddingVector::basis(8, 0));
    EXPECT_THROW(s.put(StoreKey::cve("CVE-2"), EmbeddingVector::basis(9, 0)), std::invalid_argument);
}

TEST(VectorStore, MissingKeyNamesIt) {
    VectorStore s;
    try {
        s.at(StoreKey::file("abc", "src/x.c"));
        FAIL() << "expected MissingVectorError";
    } catch (const MissingVectorError& e) {
        EXPECT_NE(std::string(e.what()).find("file 'abc:src/x.c'"), std::string::npos);
    }
}

TEST(VectorStore, SaveLoadRoundTripIsByteIdentical) {
    const auto dir = patchtrace::testing::scratch_dir("vs_roundtrip");
    const auto corpus = three_file_corpus();
    const std::vector<CveRecord> cves = {CveRecord{"CVE-2020-1", "overflow in a.c", 5, 15, "r", {}}};
    OfflineEmbedder emb(64);
    const auto store = build_vectors(corpus, cves, emb);
    store.save(dir / "a.vec");
    const auto loaded = VectorStore::load(dir / "a.vec");
    EXPECT_EQ(loaded, store);
    loaded.save(dir / "b.vec");
    EXPECT_EQ(read_bytes(dir / "a.vec"), read_bytes(dir / "b.vec"));
}

TEST(VectorStore, LoadRejectsBadMagic) {
    const auto dir = patchtrace::testing::scratch_dir("vs_magic");
    std::ofstream(dir / "bad.vec") << "NOTAVECSTORE";
    EXPECT_THROW(VectorStore::load(dir / "bad.vec"), std::runtime_error);
}

TEST(BuildVectors, OneCommitVectorPlusOnePerFile) {
    const auto corpus = three_file_corpus();
    const std::vector<CveRecord> cves = {CveRecord{"CVE-2020-1", "overflow", 5, 15, "r", {}},
                                         CveRecord{"CVE-2020-2", "other repo", 5, 15, "elsewhere", {}}};
    CountingProvider p;
    const auto store = build_vectors(corpus, cves, p);
    // 1 + 3 for commit a, 1 for commit b, 1 CVE of this repo.
    EXPECT_EQ(store.size(), 6u);
    EXPECT_EQ(p.texts_seen, 6u);
    EXPECT_TRUE(store.contains(StoreKey::file(repeated_id('a'), "include/c.h")));
    EXPECT_TRUE(store.contains(StoreKey::cve("CVE-2020-1")));
    EXPECT_FALSE(store.contains(StoreKey::cve("CVE-2020-2")));
    for (const auto& k : store.sorted_keys()) EXPECT_NEAR(store.at(k).norm(), 1.0, 1e-6);
}

TEST(BuildVectors, Idempotent) {
    const auto corpus = three_file_corpus();
    const std::vector<CveRecord> cves = {CveRecord{"CVE-2020-1", "overflow", 5, 15, "r", {}}};
    OfflineEmbedder emb(64);
    EXPECT_EQ(build_vectors(corpus, cves, emb), build_vectors(corpus, cves, emb));
}

TEST(BuildVectors, ErrorNamesFailingKey) {
    const auto corpus = three_file_corpus();
    CountingProvider p(1);
    try {
        build_vectors(corpus, {}, p);
        FAIL() << "expected EmbeddingError";
    } catch (const EmbeddingError& e) {
        EXPECT_TRUE(e.retriable());
        EXPECT_EQ(e.attempts(), 4);
        // Third item: the second file of commit a.
        EXPECT_NE(std::string(e.what()).find("file '" + repeated_id('a') + ":src/b.c'"), std::string::npos)
            << e.what();
    }
}

TEST(BuildVectors, ZeroBudgetRejected) {
    OfflineEmbedder emb(64);
    EXPECT_THROW(build_vectors(three_file_corpus(), {}, emb, TokenBudgets{0, 512}), std::invalid_argument);
}

TEST(Documents, ShortFileDiffIsNotTruncated) {
    const auto corpus = three_file_corpus();
    const auto& c = corpus.get(repeated_id('a'));
    const auto doc = file_document(c, c.file_diffs[0], 512);
    EXPECT_TRUE(doc.ends_with("Diff code: " + c.file_diffs[0].text()));
}

TEST(Documents, BudgetTruncatesDiffNotTemplate) {
    const auto corpus = three_file_corpus();
    const auto& c = corpus.get(repeated_id('a'));
    const auto doc = commit_document(c, 1);
    EXPECT_TRUE(doc.starts_with("This is a commit (commit message + diff code) of a repository."));
    EXPECT_NE(doc.find("Commit message: Fix overflow; Diff code: "), std::string::npos);
    EXPECT_LT(doc.size(), render_prompt(PromptKind::CommitDoc, {c.message, c.diff_text()}).size());
}

TEST(Documents, CveDocumentUsesQueryTemplate) {
    const CveRecord cve{"CVE-1", "heap overflow", {}, {}, "r", {}};
    EXPECT_EQ(cve_document(cve), render_prompt(PromptKind::CveQuery, {"heap overflow"}));
}
