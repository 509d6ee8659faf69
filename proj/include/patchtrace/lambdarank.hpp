// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "patchtrace/features.hpp"

namespace patchtrace {

struct LabeledRow {
    FeatureVector features{};
    int relevance = 0;  ///< 1 for a patching commit, else 0
    std::string commit_id;

    bool operator==(const LabeledRow&) const = default;
};

/// All labeled commits of one CVE (one LambdaRank query group).
struct TrainingGroup {
    std::string cve_id;
    std::vector<LabeledRow> rows;

    bool degenerate() const;
    bool operator==(const TrainingGroup&) const = default;
};

/// Defaults: learning rate 0.01, 30 leaves, at least 38 rows per leaf.
struct LambdaRankParams {
    double learning_rate = 0.01;
    int num_leaves = 30;
    int min_data_in_leaf = 38;
    int num_trees = 100;
    std::uint64_t seed = 0;
    int early_stopping_patience = 10;  ///< 0 disables early stopping
    int max_bin = 255;
    int ndcg_at = 10;
    double sigma = 1.0;
    double lambda_l2 = 0.0;
    double min_sum_hessian = 1e-3;
    double feature_fraction = 1.0;  ///< per-tree column sampling, drawn from `seed`
    /// Start boosting from the best single feature (sign-corrected and scaled
    /// to unit standard deviation) instead of from zero.
    bool init_from_best_feature = true;

    void validate() const;
    bool operator==(const LambdaRankParams&) const = default;
};

/// Regression tree. Child indexes >= 0 are internal nodes; a negative child c
/// refers to leaf ~c. A tree with no internal nodes has one leaf.
struct RegressionTree {
    struct Node {
        int feature = 0;
        double threshold = 0.0;  ///< value <= threshold goes left
        int left = -1;
        int right = -1;

        bool operator==(const Node&) const = default;
    };

    std::vector<Node> nodes;
    std::vector<double> leaf_values;

    int leaf_index(const FeatureVector& x) const;
    double predict(const FeatureVector& x) const { return leaf_values[static_cast<std::size_t>(leaf_index(x))]; }
    bool operator==(const RegressionTree&) const = default;
};

class ModelFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Boosted tree ensemble scored by init_weight * x[init_feature] plus the
/// sum of leaf values. init_feature is -1 when there is no initial score.
struct RankModel {
    LambdaRankParams params;
    int init_feature = -1;
    double init_weight = 0.0;
    std::vector<RegressionTree> trees;
    std::vector<double> training_ndcg;  ///< mean NDCG@k of the initial score, then after each kept tree

    double predict(const FeatureVector& x) const;

    /// Versioned JSON tree dump; feature names are recorded and checked on load.
    std::string to_json() const;
    static RankModel from_json(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static RankModel load(const std::filesystem::path& path);

    bool operator==(const RankModel&) const = default;
};

/// Gradient-boosted trees on LambdaRank gradients weighted by |delta NDCG@k|.
///
/// Groups whose rows all share one relevance contribute nothing; if every
/// group is like that, or params are invalid, std::invalid_argument is thrown.
/// Deterministic for a fixed seed. With early stopping the ensemble is cut
/// back to its best training NDCG@k, which may leave zero trees.
RankModel train_lambdarank(std::span<const TrainingGroup> groups, const LambdaRankParams& params = {});

/// NDCG@k of one group under the given scores. Tied scores are ordered with
/// non-relevant rows first, so ties earn no credit.
double group_ndcg(std::span<const double> scores, std::span<const int> relevance, int k);

/// Mean NDCG@k over non-degenerate groups under an arbitrary scorer.
double mean_ndcg(std::span<const TrainingGroup> groups, const std::function<double(const FeatureVector&)>& scorer,
                 int k = 10);

/// Mean NDCG@k of the best single raw feature used directly as a score
/// (either sign). Returns the feature index through `best_feature` if given.
double best_single_feature_ndcg(std::span<const TrainingGroup> groups, int k = 10, int* best_feature = nullptr);

struct GridSearchResult {
    LambdaRankParams best;
    double best_holdout_ndcg = 0.0;
    std::vector<std::pair<LambdaRankParams, double>> trials;
};

/// Tries every learning_rate x num_leaves pair, scoring each on a seeded
/// holdout of groups, and returns the best.
GridSearchResult grid_search(std::span<const TrainingGroup> groups, const LambdaRankParams& base,
                             std::span<const double> learning_rates, std::span<const int> num_leaves,
                             double holdout_fraction = 0.25);

}  // namespace patchtrace
