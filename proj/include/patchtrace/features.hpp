// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "patchtrace/corpus.hpp"
#include "patchtrace/hier_features.hpp"
#include "patchtrace/lexical_index.hpp"
#include "patchtrace/path_features.hpp"
#include "patchtrace/vector_store.hpp"

namespace patchtrace {

inline constexpr std::size_t kNumFeatures = 9;

/// Feature order used everywhere (training data, models, dumps).
inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "commit_cosine",    "max_file_sim",     "top1_file_cosine", "mean_top2_cosine", "bm25",
    "reserve_distance", "publish_distance", "path_jaccard",     "path_cosine"};

using FeatureVector = std::array<double, kNumFeatures>;

class FeatureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FeatureConfig {
    HierConfig hier;
    Bm25Params bm25;
    std::size_t per_entity_cap = 10;
    /// When set, path search also matches entities inside diff text.
    const PathContents* path_contents = nullptr;
};

/// Computes feature vectors for one CVE against commits of its repository.
///
/// Per-CVE work (query terms, diff BM25 over the whole repo, time distances,
/// entity extraction and path search) happens once in the constructor.
class CveFeaturizer {
public:
    CveFeaturizer(const Corpus& corpus, const CveRecord& cve, const InvertedIndex& diff_index,
                  const InvertedIndex& file_index, const VectorStore& store, PathVectorCache& path_cache,
                  const PathSet& path_universe, EntityExtractor& extractor, const FeatureConfig& config = {});

    /// Embeds the path documents of the given commits in one pass.
    void prefetch(std::span<const std::string> commit_ids);

    /// Throws FeatureError naming (cve_id, commit_id) on any upstream failure.
    FeatureVector features(std::string_view commit_id);

    const EntitySet& entities() const { return entities_; }
    const PathSet& ner_paths() const { return ner_paths_; }

private:
    const Corpus& corpus_;
    const CveRecord& cve_;
    const InvertedIndex& file_index_;
    const VectorStore& store_;
    PathVectorCache& path_cache_;
    FeatureConfig config_;
    QueryTerms terms_;
    std::vector<double> diff_scores_;  // by diff-index doc
    const InvertedIndex& diff_index_;
    std::vector<std::size_t> reserve_dist_;
    std::vector<std::size_t> publish_dist_;
    EntitySet entities_;
    PathSet ner_paths_;
};

/// One-shot assembly for a single pair.
FeatureVector assemble_feature_vector(const Corpus& corpus, const CveRecord& cve, std::string_view commit_id,
                                      const InvertedIndex& diff_index, const InvertedIndex& file_index,
                                      const VectorStore& store, PathVectorCache& path_cache,
                                      EntityExtractor& extractor, const FeatureConfig& config = {});

}  // namespace patchtrace
