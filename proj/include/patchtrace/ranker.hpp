// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchtrace/corpus.hpp"
#include "patchtrace/features.hpp"
#include "patchtrace/lambdarank.hpp"
#include "patchtrace/ranked_list.hpp"

namespace patchtrace {

struct SamplingConfig {
    std::size_t hard_negatives = 500;
    std::size_t random_negatives = 500;
};

/// Commits chosen for one training group, each with its label.
struct SampledCommits {
    std::vector<std::string> positives;
    std::vector<std::string> hard_negatives;
    std::vector<std::string> random_negatives;

    std::size_t size() const { return positives.size() + hard_negatives.size() + random_negatives.size(); }
};

/// Positives are the known patches present in the corpus; hard negatives are
/// the leading prerank entries that are not positives; random negatives are
/// uniform draws from everything else. Returns nullopt (and logs a warning)
/// when the CVE has no positive in the corpus.
std::optional<SampledCommits> sample_training_commits(const CveRecord& cve, const RankedList& prerank_list,
                                                      const Corpus& corpus, std::uint64_t seed,
                                                      const SamplingConfig& config = {});

/// Labels the sampled commits and computes their features.
std::optional<TrainingGroup> sample_training_group(const CveRecord& cve, const RankedList& prerank_list,
                                                   const Corpus& corpus, std::uint64_t seed,
                                                   CveFeaturizer& featurizer, const SamplingConfig& config = {});

/// Reorders candidates by model score, descending. Equal scores keep prerank
/// order. Throws FeatureError if a candidate has no feature row.
RankedList score_and_rerank(const RankModel& model, const RankedList& candidates,
                            const std::unordered_map<std::string, FeatureVector>& features);

// JSONL artifacts. Readers reject unknown keys and report line numbers.

void write_training_groups(const std::vector<TrainingGroup>& groups, const std::filesystem::path& path);
std::vector<TrainingGroup> read_training_groups(const std::filesystem::path& path);

struct FeatureRow {
    std::string cve_id;
    std::string commit_id;
    FeatureVector features{};

    bool operator==(const FeatureRow&) const = default;
};

/// Feature dump, one object per pair with keys cve_id, commit_id, f1..f9.
void write_feature_rows(const std::vector<FeatureRow>& rows, const std::filesystem::path& path);
std::vector<FeatureRow> read_feature_rows(const std::filesystem::path& path);

/// Final per-CVE rankings keyed by CVE id.
using RankingTable = std::map<std::string, RankedList>;

void write_rankings(const RankingTable& rankings, const std::filesystem::path& path);
RankingTable read_rankings(const std::filesystem::path& path);

}  // namespace patchtrace
