// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "patchtrace/embedding.hpp"
#include "patchtrace/tokenizer.hpp"

using namespace patchtrace;

namespace {

std::string_view suffix_after(const std::string& s, std::string_view marker) {
    const auto pos = s.find(marker);
    if (pos == std::string::npos) return {};
    return std::string_view(s).substr(pos + marker.size());
}

// Provider returning fixed raw vectors, for normalization and error paths.
class ScriptedProvider final : public EmbeddingProvider {
public:
    explicit ScriptedProvider(std::vector<std::vector<float>> replies, std::size_t batch = 64)
        : replies_(std::move(replies)), batch_(batch) {}
    std::string model_name() const override { return "scripted"; }
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override {
        ++calls;
        std::vector<std::vector<float>> out;
        for (std::size_t i = 0; i < texts.size() && next_ < replies_.size(); ++i) out.push_back(replies_[next_++]);
        return out;
    }
    std::size_t max_batch() const override { return batch_; }
    int calls = 0;

private:
    std::vector<std::vector<float>> replies_;
    std::size_t next_ = 0;
    std::size_t batch_;
};

}  // namespace

TEST(RenderPrompt, CveQueryEndsWithDescription) {
    const auto s = render_prompt(PromptKind::CveQuery, {"X"});
    EXPECT_TRUE(s.ends_with("patches this CVE: X"));
    EXPECT_TRUE(s.starts_with("Represent this CVE description to retrieve the commit (commit message + diff code)"));
}

TEST(RenderPrompt, CommitDocWithEmptyDiff) {
    const auto s = render_prompt(PromptKind::CommitDoc, {"Fix overflow", ""});
    EXPECT_EQ(s,
              "This is a commit (commit message + diff code) of a repository. Represent it to retrieve the "
              "patching commit for a CVE description: Commit message: Fix overflow; Diff code: ");
}

TEST(RenderPrompt, FileDocDiffSectionStartsWithHeader) {
    const std::string diff = "diff --git a/f.java b/f.java\n+x\n";
    const auto s = render_prompt(PromptKind::FileDoc, {"msg", diff});
    EXPECT_TRUE(suffix_after(s, "Diff code: ").starts_with("diff --git a/f.java"));
}

TEST(RenderPrompt, SubstitutesVerbatim) {
    const auto s = render_prompt(PromptKind::CveQuery, {"{} [CVE desc] 100%"});
    EXPECT_TRUE(s.ends_with("patches this CVE: {} [CVE desc] 100%"));
}

TEST(RenderPrompt, PathDocIsVerbatim) {
    EXPECT_EQ(render_prompt(PromptKind::PathDoc, {"a/b.c\nd/e.f"}), "a/b.c\nd/e.f");
}

TEST(RenderPrompt, WrongArityThrows) {
    EXPECT_THROW(render_prompt(PromptKind::CommitDoc, {"only one"}), std::invalid_argument);
    EXPECT_THROW(render_prompt(PromptKind::CveQuery, {"a", "b"}), std::invalid_argument);
}

TEST(OfflineEmbed, EmptyTextIsE0) {
    EXPECT_EQ(offline_embed("", 64), EmbeddingVector::basis(64, 0));
    EXPECT_EQ(offline_embed("  ,;  ", 64), EmbeddingVector::basis(64, 0));
}

TEST(OfflineEmbed, SelfCosineIsOne) {
    const auto v = offline_embed("Fix heap overflow in parseHeader", 1024);
    EXPECT_NEAR(v.dot(v), 1.0, 1e-6);
    EXPECT_NEAR(v.norm(), 1.0, 1e-6);
}

TEST(OfflineEmbed, DisjointCollisionFreeTokensGiveZero) {
    const std::string a = "alpha bravo charlie delta echo";
    const std::string b = "foxtrot golf hotel india juliet";
    std::set<std::size_t> buckets;
    std::size_t tokens = 0;
    for (const auto& text : {a, b}) {
        for (const auto& t : tokenize(text)) {
            buckets.insert(offline_bucket(t, 4096));
            ++tokens;
        }
    }
    ASSERT_EQ(buckets.size(), tokens) << "fixture tokens collide; pick other words";
    EXPECT_EQ(offline_embed(a, 4096).dot(offline_embed(b, 4096)), 0.0);
}

TEST(OfflineEmbed, TermFrequencyWeighting) {
    // Two distinct buckets with weights 1 + ln 3 and 1.
    const std::string text = "kilo kilo kilo lima";
    const auto k = offline_bucket("kilo", 256);
    const auto l = offline_bucket("lima", 256);
    ASSERT_NE(k, l);
    const double wk = 1.0 + std::log(3.0), wl = 1.0;
    const double n = std::sqrt(wk * wk + wl * wl);
    const auto v = offline_embed(text, 256);
    EXPECT_NEAR(v.values()[k], wk / n, 1e-6);
    EXPECT_NEAR(v.values()[l], wl / n, 1e-6);
}

TEST(OfflineEmbed, DeterministicAndNonNegative) {
    const auto a = offline_embed("fix ssl", 512);
    const auto b = offline_embed("fix ssl", 512);
    EXPECT_EQ(a, b);
    for (float f : a.values()) EXPECT_GE(f, 0.0f);
}

TEST(OfflineEmbed, FixedBucketsAcrossRuns) {
    // Pinned so a change of hash or seed is noticed; vectors must match across processes.
    EXPECT_EQ(offline_bucket("fix", 4096), offline_bucket("fix", 4096));
    const auto v = offline_embed("fix ssl", 4096);
    std::size_t nonzero = 0;
    for (float f : v.values()) nonzero += f != 0.0f;
    EXPECT_EQ(nonzero, offline_bucket("fix", 4096) == offline_bucket("ssl", 4096) ? 1u : 2u);
}

TEST(OfflineEmbed, SmallDimensionRejected) {
    EXPECT_THROW(offline_embed("x", 7), std::invalid_argument);
    EXPECT_THROW(OfflineEmbedder(4), std::invalid_argument);
}

TEST(EmbeddingVector, NormalizationErrors) {
    const std::vector<float> empty;
    const std::vector<float> zero(4, 0.0f);
    const std::vector<float> nan = {1.0f, std::nanf("")};
    EXPECT_THROW(EmbeddingVector::normalized(std::span<const float>(empty)), EmbeddingError);
    EXPECT_THROW(EmbeddingVector::normalized(std::span<const float>(zero)), EmbeddingError);
    EXPECT_THROW(EmbeddingVector::normalized(std::span<const float>(nan)), EmbeddingError);
}

TEST(EmbeddingVector, NormalizesToUnitLength) {
    const std::vector<float> raw = {3.0f, 4.0f};
    const auto v = EmbeddingVector::normalized(std::span<const float>(raw));
    EXPECT_NEAR(v.values()[0], 0.6, 1e-7);
    EXPECT_NEAR(v.values()[1], 0.8, 1e-7);
}

TEST(EmbeddingVector, DotDimensionMismatchThrows) {
    EXPECT_THROW(EmbeddingVector::basis(4, 0).dot(EmbeddingVector::basis(5, 0)), std::invalid_argument);
}

TEST(Cosine, ZeroVectorGivesZero) {
    const std::vector<float> a = {0, 0}, b = {1, 0};
    EXPECT_EQ(cosine(a, b), 0.0);
    const std::vector<float> c = {2, 0};
    EXPECT_DOUBLE_EQ(cosine(b, c), 1.0);
}

TEST(EmbedBatch, OneVectorPerTextInOrder) {
    OfflineEmbedder emb(128);
    const std::vector<std::string> texts = {"fix ssl", "", "fix ssl", "heap overflow"};
    const auto vecs = embed_batch(emb, texts);
    ASSERT_EQ(vecs.size(), 4u);
    EXPECT_EQ(vecs[0], vecs[2]);
    EXPECT_EQ(vecs[1], EmbeddingVector::basis(128, 0));
    for (const auto& v : vecs) {
        EXPECT_EQ(v.dimension(), 128u);
        EXPECT_NEAR(v.norm(), 1.0, 1e-6);
    }
}

TEST(EmbedBatch, NormalizesProviderOutputAndChunks) {
    ScriptedProvider p({{2, 0}, {0, 5}, {1, 1}}, 2);
    const std::vector<std::string> texts = {"a", "b", "c"};
    const auto vecs = embed_batch(p, texts);
    EXPECT_EQ(p.calls, 2);
    ASSERT_EQ(vecs.size(), 3u);
    EXPECT_EQ(vecs[0], EmbeddingVector::basis(2, 0));
    EXPECT_EQ(vecs[1], EmbeddingVector::basis(2, 1));
    EXPECT_NEAR(vecs[2].values()[0], std::sqrt(0.5), 1e-7);
}

TEST(EmbedBatch, DimensionMismatchIsHardError) {
    ScriptedProvider p({{1, 0}, {1, 0, 0}});
    const std::vector<std::string> texts = {"a", "b"};
    try {
        embed_batch(p, texts);
        FAIL() << "expected EmbeddingError";
    } catch (const EmbeddingError& e) {
        EXPECT_FALSE(e.retriable());
    }
}

TEST(EmbedBatch, WrongVectorCountIsHardError) {
    ScriptedProvider p({{1, 0}});
    const std::vector<std::string> texts = {"a", "b"};
    EXPECT_THROW(embed_batch(p, texts), EmbeddingError);
}

TEST(EmbedBatch, EmptyInputGivesNothing) {
    OfflineEmbedder emb(64);
    EXPECT_TRUE(embed_batch(emb, {}).empty());
}
