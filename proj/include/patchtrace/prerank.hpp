// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "patchtrace/corpus.hpp"
#include "patchtrace/lexical_index.hpp"
#include "patchtrace/ranked_list.hpp"

namespace patchtrace {

/// Weights for (message BM25, diff BM25, reserve time, publish time).
struct FusionConfig {
    std::array<double, 4> weights{0.35, 0.15, 0.3, 0.2};
    std::size_t candidate_k = 10000;
    Bm25Params bm25;

    /// Throws std::invalid_argument on negative weights or candidate_k == 0.
    void validate() const;
};

/// Number of commits between a commit and a point in time.
struct TimeAffinity {
    std::size_t distance = 0;
};

/// |position(commit) - insertion point of cve_time| in the time-sorted commits.
/// Throws std::out_of_range for an unknown commit.
TimeAffinity time_affinity(const Corpus& corpus, std::int64_t cve_time, std::string_view commit_id);

/// Distance of every commit (by chronological position) to cve_time.
std::vector<std::size_t> time_distances(const Corpus& corpus, std::int64_t cve_time);

/// Commits ordered by ascending distance to cve_time, ties by commit id.
RankedList rank_by_time(const Corpus& corpus, std::int64_t cve_time);

/// Rank r (1-based) maps to 1/r. Absent docs are simply not in the map.
std::unordered_map<std::string, double> reciprocal_rank_transform(const RankedList& ranked);

struct PrerankCandidate {
    std::string commit_id;
    double fused = 0.0;
    double rr_msg = 0.0;
    double rr_diff = 0.0;
    double rr_reserve = 0.0;
    double rr_publish = 0.0;
};

/// Phase-1 fusion with per-component reciprocal ranks kept for inspection.
std::vector<PrerankCandidate> prerank_detailed(const Corpus& corpus, const CveRecord& cve,
                                               const InvertedIndex& msg_index,
                                               const InvertedIndex& diff_index,
                                               const FusionConfig& config = {});

/// Top candidate_k commits by weighted reciprocal-rank sum.
RankedList prerank_candidates(const Corpus& corpus, const CveRecord& cve,
                              const InvertedIndex& msg_index, const InvertedIndex& diff_index,
                              const FusionConfig& config = {});

RankedList to_ranked_list(const std::vector<PrerankCandidate>& candidates);

/// Candidates per CVE id, in rank order.
using PrerankTable = std::map<std::string, std::vector<PrerankCandidate>>;

/// JSONL {cve_id, commit_id, rank, fused_score, components{msg, diff, reserve, publish}}.
void write_prerank(const PrerankTable& table, const std::filesystem::path& path);
PrerankTable read_prerank(const std::filesystem::path& path);

}  // namespace patchtrace
