// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "patchtrace/ranked_list.hpp"

namespace patchtrace {

using RelevantSet = std::unordered_set<std::string>;

/// 1/r for the first relevant doc at rank r, 0 if none is ranked.
double mrr(const RankedList& ranked, const RelevantSet& relevant);

/// |relevant in top-k| / |relevant|. Throws std::invalid_argument when
/// relevant is empty or k < 1.
double recall_at_k(const RankedList& ranked, const RelevantSet& relevant, std::size_t k);

/// Binary-gain NDCG@k with discount 1/log2(1 + pos). Same errors as recall_at_k.
double ndcg_at_k(const RankedList& ranked, const RelevantSet& relevant, std::size_t k);

inline const std::vector<std::size_t> kReportCutoffs = {10, 100, 1000, 5000};

struct CveMetrics {
    std::string cve_id;
    double mrr = 0.0;
    std::map<std::size_t, double> recall;
    std::map<std::size_t, double> ndcg;
};

struct EvalReport {
    std::vector<CveMetrics> per_cve;
    CveMetrics macro;  ///< unweighted mean; cve_id is "macro"

    std::string to_json() const;
    std::string to_table() const;
};

/// Scores every CVE that has at least one relevant commit. A CVE with no
/// ranking counts as an empty list.
EvalReport evaluate(const std::map<std::string, RankedList>& rankings,
                    const std::map<std::string, RelevantSet>& relevant,
                    const std::vector<std::size_t>& cutoffs = kReportCutoffs);

struct RepoMetrics {
    double mrr = 0.0;
    double recall_100 = 0.0;
    double recall_500 = 0.0;
    double recall_1000 = 0.0;
};

struct DifficultyScore {
    double d = 0.0;
    double adjusted = 0.0;
};

/// D = MRR + 0.1 (R@100 + R@500 + R@1000); repos under 5000 commits are
/// divided by ln(100 + commit_count).
DifficultyScore difficulty(const RepoMetrics& metrics, std::size_t commit_count);

struct RepoSummary {
    std::string repo_id;
    DifficultyScore difficulty;
    std::size_t cve_count = 0;
};

struct RepoSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
};

/// Repo-disjoint split. Test repos are taken by descending adjusted
/// difficulty, then descending CVE count; remaining ties are broken by a
/// seeded shuffle. Both outputs are sorted by repo id.
RepoSplit split_by_repo(const std::vector<RepoSummary>& repos, double test_fraction, std::uint64_t seed);

}  // namespace patchtrace
