// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

#include "patchtrace/corpus.hpp"
#include "patchtrace/lexical_index.hpp"
#include "patchtrace/vector_store.hpp"

namespace patchtrace {

/// How many BM25-ranked files each aggregation looks at.
struct HierConfig {
    std::size_t max_sim_files = 5;
    std::size_t mean_files = 2;
    Bm25Params bm25;
};

struct HierFeatures {
    double commit_cosine = 0.0;
    double max_file_sim = 0.0;
    double top1_file_cosine = 0.0;
    double mean_top2_cosine = 0.0;
};

/// Cosine between the CVE vector and the whole-commit vector.
double feature_commit_cosine(const VectorStore& store, std::string_view cve_id, std::string_view commit_id);

/// Max cosine between the CVE and the top max_sim_files BM25-ranked files.
double feature_max_file_sim(const VectorStore& store, const InvertedIndex& file_index, const CveRecord& cve,
                            const CommitRecord& commit, const HierConfig& config = {});

/// Cosine between the CVE and the BM25 top-1 file.
double feature_top1_file_cosine(const VectorStore& store, const InvertedIndex& file_index, const CveRecord& cve,
                                const CommitRecord& commit, const HierConfig& config = {});

/// Cosine between the CVE and the mean of the top mean_files file vectors.
double feature_mean_top2_cosine(const VectorStore& store, const InvertedIndex& file_index, const CveRecord& cve,
                                const CommitRecord& commit, const HierConfig& config = {});

/// The three file-level aggregations over an already ranked file list.
/// Commits without files give zeros.
HierFeatures file_level_features(const VectorStore& store, const EmbeddingVector& cve_vec,
                                 std::string_view commit_id, const RankedList& ranked_files,
                                 const HierConfig& config = {});

/// All four features for one (CVE, commit) pair.
HierFeatures compute_hier_features(const VectorStore& store, const InvertedIndex& file_index,
                                   const QueryTerms& cve_terms, const CveRecord& cve, const CommitRecord& commit,
                                   const HierConfig& config = {});

}  // namespace patchtrace
