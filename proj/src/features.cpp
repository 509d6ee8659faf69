// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/features.hpp"

#include <cmath>

#include <fmt/format.h>

#include "patchtrace/prerank.hpp"

namespace patchtrace {

CveFeaturizer::CveFeaturizer(const Corpus& corpus, const CveRecord& cve, const InvertedIndex& diff_index,
                             const InvertedIndex& file_index, const VectorStore& store,
                             PathVectorCache& path_cache, const PathSet& path_universe,
                             EntityExtractor& extractor, const FeatureConfig& config)
    : corpus_(corpus),
      cve_(cve),
      file_index_(file_index),
      store_(store),
      path_cache_(path_cache),
      config_(config),
      terms_(make_query(cve.description)),
      diff_index_(diff_index) {
    if (diff_index.kind() != FieldKind::Diff) throw std::invalid_argument("featurizer needs a diff index");
    if (file_index.kind() != FieldKind::File) throw std::invalid_argument("featurizer needs a file index");
    diff_scores_ = diff_index.score_all(terms_, config_.bm25);
    if (cve.reserve_time) reserve_dist_ = time_distances(corpus, *cve.reserve_time);
    if (cve.publish_time) publish_dist_ = time_distances(corpus, *cve.publish_time);
    try {
        entities_ = extractor.extract(cve.cve_id, cve.description);
    } catch (const std::exception& e) {
        throw FeatureError(fmt::format("{}: entity extraction failed: {}", cve.cve_id, e.what()));
    }
    ner_paths_ = search_paths(path_universe, entities_, config_.per_entity_cap, config_.path_contents);
}

void CveFeaturizer::prefetch(std::span<const std::string> commit_ids) {
    if (ner_paths_.empty()) return;
    std::vector<std::string> texts{path_document(ner_paths_)};
    for (const auto& id : commit_ids) {
        if (auto pos = corpus_.position(id)) {
            auto paths = commit_paths(corpus_.at(*pos));
            if (!paths.empty()) texts.push_back(path_document(paths));
        }
    }
    path_cache_.prefetch(texts);
}

FeatureVector CveFeaturizer::features(std::string_view commit_id) {
    try {
        const auto pos = corpus_.position(commit_id);
        if (!pos) throw std::out_of_range("commit not in corpus");
        const auto& commit = corpus_.at(*pos);
        FeatureVector f{};
        const auto hier = compute_hier_features(store_, file_index_, terms_, cve_, commit, config_.hier);
        f[0] = hier.commit_cosine;
        f[1] = hier.max_file_sim;
        f[2] = hier.top1_file_cosine;
        f[3] = hier.mean_top2_cosine;
        // Diff index docs are commits in corpus order.
        const auto range = diff_index_.commit_docs(commit_id);
        f[4] = range ? diff_scores_[range->first] : 0.0;
        const auto n = static_cast<double>(corpus_.size());
        f[5] = reserve_dist_.empty() ? n : static_cast<double>(reserve_dist_[*pos]);
        f[6] = publish_dist_.empty() ? n : static_cast<double>(publish_dist_[*pos]);
        const auto paths = commit_paths(commit);
        f[7] = feature_jaccard(ner_paths_, paths);
        f[8] = feature_path_cosine(path_cache_, ner_paths_, paths);
        for (double v : f) {
            if (!std::isfinite(v)) throw std::runtime_error("non-finite feature value");
        }
        return f;
    } catch (const FeatureError&) {
        throw;
    } catch (const std::exception& e) {
        throw FeatureError(fmt::format("features for ({}, {}): {}", cve_.cve_id, commit_id, e.what()));
    }
}

FeatureVector assemble_feature_vector(const Corpus& corpus, const CveRecord& cve, std::string_view commit_id,
                                      const InvertedIndex& diff_index, const InvertedIndex& file_index,
                                      const VectorStore& store, PathVectorCache& path_cache,
                                      EntityExtractor& extractor, const FeatureConfig& config) {
    const auto universe = PathSet::from(path_universe(corpus));
    CveFeaturizer fz(corpus, cve, diff_index, file_index, store, path_cache, universe, extractor, config);
    return fz.features(commit_id);
}

}  // namespace patchtrace
