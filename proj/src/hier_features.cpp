// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/hier_features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace patchtrace {
namespace {

// c . mean(v_1..v_k) / |mean|, with c a unit vector.
double cosine_with_mean(const EmbeddingVector& cve_vec, std::span<const EmbeddingVector* const> vecs) {
    const std::size_t d = cve_vec.dimension();
    std::vector<double> mean(d, 0.0);
    for (const auto* v : vecs) {
        const auto vals = v->values();
        if (vals.size() != d) throw std::invalid_argument("file vector dimension mismatch");
        for (std::size_t i = 0; i < d; ++i) mean[i] += vals[i];
    }
    const auto c = cve_vec.values();
    double dot = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        mean[i] /= static_cast<double>(vecs.size());
        dot += c[i] * mean[i];
        sq += mean[i] * mean[i];
    }
    if (sq == 0.0) return 0.0;
    return dot / std::sqrt(sq);
}

}  // namespace

double feature_commit_cosine(const VectorStore& store, std::string_view cve_id, std::string_view commit_id) {
    return store.at(StoreKey::cve(cve_id)).dot(store.at(StoreKey::commit(commit_id)));
}

HierFeatures file_level_features(const VectorStore& store, const EmbeddingVector& cve_vec,
                                 std::string_view commit_id, const RankedList& ranked_files,
                                 const HierConfig& config) {
    HierFeatures f;
    if (ranked_files.empty()) return f;
    const std::size_t need = std::max({config.max_sim_files, config.mean_files, std::size_t{1}});
    std::vector<const EmbeddingVector*> vecs;
    for (std::size_t i = 0; i < ranked_files.size() && i < need; ++i)
        vecs.push_back(&store.at(StoreKey::file(commit_id, ranked_files[i].doc_id)));

    f.top1_file_cosine = cve_vec.dot(*vecs.front());
    if (config.max_sim_files > 0) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < vecs.size() && i < config.max_sim_files; ++i)
            best = std::max(best, cve_vec.dot(*vecs[i]));
        f.max_file_sim = best;
    }
    if (config.mean_files > 0) {
        const std::size_t k = std::min(config.mean_files, vecs.size());
        f.mean_top2_cosine = k == 1 ? f.top1_file_cosine
                                    : cosine_with_mean(cve_vec, std::span<const EmbeddingVector* const>(vecs.data(), k));
    }
    return f;
}

HierFeatures compute_hier_features(const VectorStore& store, const InvertedIndex& file_index,
                                   const QueryTerms& cve_terms, const CveRecord& cve, const CommitRecord& commit,
                                   const HierConfig& config) {
    const auto& cve_vec = store.at(StoreKey::cve(cve.cve_id));
    const auto ranked = rank_files_within_commit(file_index, cve_terms, commit.commit_id, config.bm25);
    HierFeatures f = file_level_features(store, cve_vec, commit.commit_id, ranked, config);
    f.commit_cosine = cve_vec.dot(store.at(StoreKey::commit(commit.commit_id)));
    return f;
}

double feature_max_file_sim(const VectorStore& store, const InvertedIndex& file_index, const CveRecord& cve,
                            const CommitRecord& commit, const HierConfig& config) {
    const auto ranked = rank_files_within_commit(file_index, cve, commit.commit_id, config.bm25);
    return file_level_features(store, store.at(StoreKey::cve(cve.cve_id)), commit.commit_id, ranked, config)
        .max_file_sim;
}

double feature_top1_file_cosine(const VectorStore& store, const InvertedIndex& file_index, const CveRecord& cve,
                                const CommitRecord& commit, const HierConfig& config) {
    const auto ranked = rank_files_within_commit(file_index, cve, commit.commit_id, config.bm25);
    return file_level_features(store, store.at(StoreKey::cve(cve.cve_id)), commit.commit_id, ranked, config)
        .top1_file_cosine;
}

double feature_mean_top2_cosine(const VectorStore& store, const InvertedIndex& file_index, const CveRecord& cve,
                                const CommitRecord& commit, const HierConfig& config) {
    const auto ranked = rank_files_within_commit(file_index, cve, commit.commit_id, config.bm25);
    return file_level_features(store, store.at(StoreKey::cve(cve.cve_id)), commit.commit_id, ranked, config)
        .mean_top2_cosine;
}

}  // namespace patchtrace
