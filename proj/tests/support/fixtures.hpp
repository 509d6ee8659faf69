// SPDX-License-Identifier: Apache-2.0

// Small hand-built corpora whose expected outputs are worked out by hand.

#pragma once

#include <string>
#include <vector>

#include "patchtrace/corpus.hpp"

namespace patchtrace::testing {

inline std::string repeated_id(char c) { return std::string(40, c); }

/// Four commits A..D at times 100..400. Only A's message and only B's diff
/// match the CVE text; reserve time 290 and publish time 410.
///
/// Component ranks:        msg  diff  reserve  publish
///   A                      1    -      4        4
///   B                      -    1      2        3
///   C                      -    -      1        2
///   D                      -    -      3        1
/// Fused with [0.35, 0.15, 0.3, 0.2]:
///   A .35 + .3/4 + .2/4 = .475
///   B .15 + .3/2 + .2/3 = .36667
///   C .3 + .2/2         = .4
///   D .3/3 + .2         = .3
/// giving A, C, B, D.
struct FusionFixture {
    Corpus corpus;
    CveRecord cve;
    std::vector<std::string> expected_order;
    std::vector<double> expected_scores;
};

inline FusionFixture fusion_fixture() {
    const std::string a = repeated_id('a'), b = repeated_id('b'), c = repeated_id('c'), d = repeated_id('d');
    std::vector<CommitRecord> commits = {
        {a, "fx", 100, "Guard heap overflow in parser", {}},
        {b, "fx", 200, "Refactor reader",
         split_diff_by_file("diff --git a/src/r.c b/src/r.c\n--- a/src/r.c\n+++ b/src/r.c\n@@ -1 +1 @@\n"
                            "-  check(len);\n+  check(len); /* overflow */\n")},
        {c, "fx", 300, "Update docs", {}},
        {d, "fx", 400, "Add tests", {}},
    };
    FusionFixture f{Corpus("fx", commits), CveRecord{"CVE-2021-0001", "heap overflow in parser", 290, 410, "fx", {}},
                    {a, c, b, d}, {0.475, 0.4, 0.15 + 0.15 + 0.2 / 3.0, 0.3}};
    return f;
}

}  // namespace patchtrace::testing
