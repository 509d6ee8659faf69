// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "patchtrace/tokenizer.hpp"

using namespace patchtrace;
using Tokens = std::vector<std::string>;

TEST(Tokenize, EmptyText) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, PascalCaseWithAcronymAndExtension) {
    EXPECT_EQ(tokenize("OpenSSLEngine.java"), (Tokens{"opensslengine", "open", "ssl", "engine", "java"}));
}

TEST(Tokenize, PlusSeparatedNames) {
    const auto t = tokenize("NIO2+OpenSSL");
    EXPECT_NE(std::find(t.begin(), t.end(), "nio2"), t.end());
    EXPECT_NE(std::find(t.begin(), t.end(), "openssl"), t.end());
}

TEST(Tokenize, SnakeCaseKeepsCompound) {
    EXPECT_EQ(tokenize("read_buf_len"), (Tokens{"read_buf_len", "read", "buf", "len"}));
}

TEST(Tokenize, DigitsStayWithPrecedingPart) {
    EXPECT_EQ(tokenize("Nio2Channel"), (Tokens{"nio2channel", "nio2", "channel"}));
}

TEST(Tokenize, SimpleWordsAreNotSplit) { EXPECT_EQ(tokenize("Fix the bug"), (Tokens{"fix", "the", "bug"})); }

TEST(Tokenize, EdgeUnderscoresStripped) { EXPECT_EQ(tokenize("__init__"), (Tokens{"init"})); }

TEST(Tokenize, Deterministic) {
    const std::string text = "Heap overflow in ngx_http_parse_chunked() via HTTPHeaderParser";
    EXPECT_EQ(tokenize(text), tokenize(text));
}

TEST(Tokenize, CountMatchesTokenize) {
    for (const char* s : {"", "a", "OpenSSLEngine.java x_y", "  ..  ", "XMLHttpRequest2 foo_Bar"}) {
        EXPECT_EQ(count_tokens(s), tokenize(s).size()) << s;
    }
}

TEST(Tokenize, RetokenizingJoinedOutputCoversCompounds) {
    std::mt19937_64 rng(3);
    const std::vector<std::string> pieces = {"Open", "SSL", "engine", "_", "x2", "Nio", " ", ".", "HTTP", "get"};
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        for (int i = 0; i < 12; ++i) text += pieces[rng() % pieces.size()];
        const auto first = tokenize(text);
        std::string joined;
        for (const auto& t : first) joined += t + " ";
        const auto second = tokenize(joined);
        std::map<std::string, int> have;
        for (const auto& t : second) ++have[t];
        for (const auto& t : first) EXPECT_GT(have[t]--, 0) << text;
    }
}

TEST(Truncate, CutsAtChunkBoundary) { EXPECT_EQ(truncate_to_tokens("a b c", 2), "a b"); }

TEST(Truncate, UnderBudgetUnchanged) {
    std::string text;
    for (int i = 0; i < 100; ++i) text += "word ";
    EXPECT_EQ(truncate_to_tokens(text, 512), text);
}

TEST(Truncate, ThousandTokenText) {
    std::string text;
    for (int i = 0; i < 500; ++i) text += "alpha camelCase ";
    ASSERT_GE(count_tokens(text), 1000u);
    const auto cut = truncate_to_tokens(text, 512);
    EXPECT_LE(count_tokens(cut), 512u);
    EXPECT_TRUE(std::string_view(text).starts_with(cut));
    // The next chunk would exceed the budget.
    const auto longer = text.substr(0, text.find(' ', cut.size() + 1));
    EXPECT_GT(count_tokens(longer), 512u);
}

TEST(Truncate, NeverSplitsCompound) {
    // A compound yields 4 tokens at once; a budget of 3 cannot include it.
    EXPECT_EQ(truncate_to_tokens("OpenSSLEngine next", 3), "");
    EXPECT_EQ(truncate_to_tokens("OpenSSLEngine next", 4), "OpenSSLEngine");
}

TEST(Truncate, ZeroBudgetThrows) { EXPECT_THROW(truncate_to_tokens("a", 0), std::invalid_argument); }
