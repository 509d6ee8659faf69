// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/lambdarank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "random.hpp"

namespace patchtrace {
namespace {

constexpr std::string_view kModelFormat = "patchtrace-rank-model";
constexpr int kModelVersion = 1;

double gain(int rel) { return std::ldexp(1.0, rel) - 1.0; }

double discount(std::size_t pos) { return 1.0 / std::log2(1.0 + static_cast<double>(pos)); }

// Row order by score desc; ties put lower relevance first, then row order.
std::vector<std::uint32_t> pessimistic_order(std::span<const double> scores, std::span<const int> rel) {
    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        if (rel[a] != rel[b]) return rel[a] < rel[b];
        return a < b;
    });
    return order;
}

double ideal_dcg(std::span<const int> rel, int k) {
    std::vector<int> sorted(rel.begin(), rel.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t p = 0; p < sorted.size() && p < static_cast<std::size_t>(k); ++p)
        idcg += gain(sorted[p]) * discount(p + 1);
    return idcg;
}

struct Dataset {
    std::size_t rows = 0;
    std::vector<FeatureVector> x;
    std::vector<int> rel;
    std::vector<std::size_t> group_begin;  // size groups + 1
    std::vector<char> active;
    std::vector<double> inv_idcg;
};

Dataset flatten(std::span<const TrainingGroup> groups, int k) {
    Dataset d;
    d.group_begin.push_back(0);
    for (const auto& g : groups) {
        for (const auto& r : g.rows) {
            for (double v : r.features) {
                if (!std::isfinite(v))
                    throw std::invalid_argument(fmt::format("group {}: non-finite feature", g.cve_id));
            }
            if (r.relevance < 0) throw std::invalid_argument("negative relevance label");
            d.x.push_back(r.features);
            d.rel.push_back(r.relevance);
        }
        d.group_begin.push_back(d.x.size());
        const bool act = !g.degenerate();
        d.active.push_back(act ? 1 : 0);
        const auto rel = std::span<const int>(d.rel).subspan(d.group_begin[d.group_begin.size() - 2], g.rows.size());
        const double idcg = act ? ideal_dcg(rel, k) : 0.0;
        d.inv_idcg.push_back(idcg > 0.0 ? 1.0 / idcg : 0.0);
    }
    d.rows = d.x.size();
    return d;
}

// Per-feature bin upper bounds; value v falls in the first bin whose bound is >= v.
struct Binning {
    std::array<std::vector<double>, kNumFeatures> bounds;
    std::array<std::vector<std::uint16_t>, kNumFeatures> bins;  // per feature, per row
    std::array<std::size_t, kNumFeatures> num_bins{};
};

Binning make_bins(const Dataset& d, int max_bin) {
    Binning b;
    std::vector<double> vals(d.rows);
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        for (std::size_t i = 0; i < d.rows; ++i) vals[i] = d.x[i][f];
        std::sort(vals.begin(), vals.end());
        std::vector<double> distinct;
        for (double v : vals) {
            if (distinct.empty() || v != distinct.back()) distinct.push_back(v);
        }
        auto& bounds = b.bounds[f];
        if (distinct.size() <= static_cast<std::size_t>(max_bin)) {
            for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
                bounds.push_back(distinct[i] + (distinct[i + 1] - distinct[i]) / 2.0);
        } else {
            for (int q = 1; q < max_bin; ++q) {
                const std::size_t idx = static_cast<std::size_t>(q) * vals.size() / static_cast<std::size_t>(max_bin);
                const double lo = vals[idx == 0 ? 0 : idx - 1];
                auto next = std::upper_bound(distinct.begin(), distinct.end(), lo);
                if (next == distinct.end()) break;
                const double cut = lo + (*next - lo) / 2.0;
                if (bounds.empty() || cut > bounds.back()) bounds.push_back(cut);
            }
        }
        b.num_bins[f] = bounds.size() + 1;
        auto& col = b.bins[f];
        col.resize(d.rows);
        for (std::size_t i = 0; i < d.rows; ++i) {
            col[i] = static_cast<std::uint16_t>(std::lower_bound(bounds.begin(), bounds.end(), d.x[i][f]) - bounds.begin());
        }
    }
    return b;
}

void lambda_gradients(const Dataset& d, const std::vector<double>& s, const LambdaRankParams& p,
                      std::vector<double>& grad, std::vector<double>& hess) {
    std::fill(grad.begin(), grad.end(), 0.0);
    std::fill(hess.begin(), hess.end(), 0.0);
    const double sigma = p.sigma;
    const auto k = static_cast<std::size_t>(p.ndcg_at);
    std::vector<std::size_t> pos;
    for (std::size_t g = 0; g + 1 < d.group_begin.size(); ++g) {
        if (!d.active[g]) continue;
        const std::size_t b = d.group_begin[g], e = d.group_begin[g + 1], m = e - b;
        const auto scores = std::span<const double>(s).subspan(b, m);
        const auto rel = std::span<const int>(d.rel).subspan(b, m);
        const auto order = pessimistic_order(scores, rel);
        pos.assign(m, 0);
        for (std::size_t r = 0; r < m; ++r) pos[order[r]] = r + 1;
        auto disc = [&](std::size_t i) { return pos[i] <= k ? discount(pos[i]) : 0.0; };
        const int min_rel = *std::min_element(rel.begin(), rel.end());
        for (std::size_t i = 0; i < m; ++i) {
            if (rel[i] == min_rel) continue;
            for (std::size_t j = 0; j < m; ++j) {
                if (rel[i] <= rel[j]) continue;
                const double delta = (gain(rel[i]) - gain(rel[j])) * std::abs(disc(i) - disc(j)) * d.inv_idcg[g];
                if (delta == 0.0) continue;
                const double rho = 1.0 / (1.0 + std::exp(sigma * (scores[i] - scores[j])));
                const double lambda = sigma * rho * delta;
                const double h = sigma * sigma * rho * (1.0 - rho) * delta;
                grad[b + i] -= lambda;
                grad[b + j] += lambda;
                hess[b + i] += h;
                hess[b + j] += h;
            }
        }
    }
}

struct SplitInfo {
    double gain = 0.0;
    int feature = -1;
    std::size_t bin = 0;  // bins <= bin go left
};

struct Leaf {
    std::vector<std::uint32_t> rows;
    double g = 0.0;
    double h = 0.0;
    int parent = -1;  // node index, -1 for root
    bool is_left = true;
    SplitInfo best;
};

class TreeLearner {
public:
    TreeLearner(const Binning& bins, const LambdaRankParams& p) : bins_(bins), p_(p) {}

    // Grows one tree on (grad, hess); assigns leaf membership in `leaf_of`.
    RegressionTree grow(const std::vector<double>& grad, const std::vector<double>& hess,
                        const std::vector<int>& features, std::vector<int>& leaf_of) {
        grad_ = &grad;
        hess_ = &hess;
        features_ = &features;
        std::vector<Leaf> leaves(1);
        auto& root = leaves[0];
        root.rows.resize(grad.size());
        std::iota(root.rows.begin(), root.rows.end(), 0u);
        sums(root);
        root.best = find_split(root);

        RegressionTree tree;
        while (static_cast<int>(leaves.size()) < p_.num_leaves) {
            int pick = -1;
            for (std::size_t l = 0; l < leaves.size(); ++l) {
                if (leaves[l].best.feature < 0) continue;
                if (pick < 0 || leaves[l].best.gain > leaves[static_cast<std::size_t>(pick)].best.gain)
                    pick = static_cast<int>(l);
            }
            if (pick < 0) break;
            split(tree, leaves, static_cast<std::size_t>(pick));
        }
        tree.leaf_values.resize(leaves.size());
        leaf_of.assign(grad.size(), 0);
        for (std::size_t l = 0; l < leaves.size(); ++l) {
            const double denom = leaves[l].h + p_.lambda_l2;
            tree.leaf_values[l] = denom > 0.0 ? -leaves[l].g / denom * p_.learning_rate : 0.0;
            for (auto r : leaves[l].rows) leaf_of[r] = static_cast<int>(l);
        }
        return tree;
    }

private:
    double leaf_score(double g, double h) const {
        const double denom = h + p_.lambda_l2;
        return denom > 0.0 ? g * g / denom : 0.0;
    }

    void sums(Leaf& leaf) const {
        leaf.g = leaf.h = 0.0;
        for (auto r : leaf.rows) {
            leaf.g += (*grad_)[r];
            leaf.h += (*hess_)[r];
        }
    }

    SplitInfo find_split(const Leaf& leaf) {
        SplitInfo best;
        const auto min_data = static_cast<std::size_t>(p_.min_data_in_leaf);
        if (leaf.rows.size() < 2 * min_data) return best;
        const double parent = leaf_score(leaf.g, leaf.h);
        for (int f : *features_) {
            const auto nb = bins_.num_bins[static_cast<std::size_t>(f)];
            if (nb < 2) continue;
            hg_.assign(nb, 0.0);
            hh_.assign(nb, 0.0);
            hc_.assign(nb, 0);
            const auto& col = bins_.bins[static_cast<std::size_t>(f)];
            for (auto r : leaf.rows) {
                const auto bin = col[r];
                hg_[bin] += (*grad_)[r];
                hh_[bin] += (*hess_)[r];
                ++hc_[bin];
            }
            double gl = 0.0, hl = 0.0;
            std::size_t cl = 0;
            for (std::size_t bin = 0; bin + 1 < nb; ++bin) {
                gl += hg_[bin];
                hl += hh_[bin];
                cl += hc_[bin];
                const std::size_t cr = leaf.rows.size() - cl;
                if (cl < min_data) continue;
                if (cr < min_data) break;
                const double hr = leaf.h - hl;
                if (hl < p_.min_sum_hessian || hr < p_.min_sum_hessian) continue;
                const double gain = leaf_score(gl, hl) + leaf_score(leaf.g - gl, hr) - parent;
                if (gain > best.gain + 1e-15) {
                    best.gain = gain;
                    best.feature = f;
                    best.bin = bin;
                }
            }
        }
        return best;
    }

    void split(RegressionTree& tree, std::vector<Leaf>& leaves, std::size_t l) {
        const SplitInfo s = leaves[l].best;
        const auto f = static_cast<std::size_t>(s.feature);
        const auto node_index = static_cast<int>(tree.nodes.size());
        const auto right_index = static_cast<int>(leaves.size());
        tree.nodes.push_back(RegressionTree::Node{s.feature, bins_.bounds[f][s.bin], ~static_cast<int>(l), ~right_index});
        if (leaves[l].parent >= 0) {
            auto& parent = tree.nodes[static_cast<std::size_t>(leaves[l].parent)];
            (leaves[l].is_left ? parent.left : parent.right) = node_index;
        }
        Leaf right;
        right.parent = node_index;
        right.is_left = false;
        std::vector<std::uint32_t> left_rows;
        const auto& col = bins_.bins[f];
        for (auto r : leaves[l].rows) (col[r] <= s.bin ? left_rows : right.rows).push_back(r);
        Leaf& left = leaves[l];
        left.rows = std::move(left_rows);
        left.parent = node_index;
        left.is_left = true;
        sums(left);
        sums(right);
        left.best = find_split(left);
        right.best = find_split(right);
        leaves.push_back(std::move(right));
    }

    const Binning& bins_;
    const LambdaRankParams& p_;
    const std::vector<double>* grad_ = nullptr;
    const std::vector<double>* hess_ = nullptr;
    const std::vector<int>* features_ = nullptr;
    std::vector<double> hg_, hh_;
    std::vector<std::size_t> hc_;
};

double mean_group_ndcg(const Dataset& d, const std::vector<double>& s, int k) {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t g = 0; g + 1 < d.group_begin.size(); ++g) {
        if (!d.active[g]) continue;
        const std::size_t b = d.group_begin[g], m = d.group_begin[g + 1] - b;
        total += group_ndcg(std::span<const double>(s).subspan(b, m), std::span<const int>(d.rel).subspan(b, m), k);
        ++n;
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

// Picks the feature and sign with the best mean NDCG@k over active groups and
// scales it to unit standard deviation. Constant features are skipped.
void set_initial_score(const Dataset& d, int k, RankModel& model) {
    double best = -1.0;
    std::vector<double> s(d.rows);
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < d.rows; ++i) {
            sum += d.x[i][f];
            sq += d.x[i][f] * d.x[i][f];
        }
        const double n = static_cast<double>(d.rows);
        const double var = sq / n - (sum / n) * (sum / n);
        if (!(var > 0.0)) continue;
        const double sd = std::sqrt(var);
        for (double sign : {1.0, -1.0}) {
            for (std::size_t i = 0; i < d.rows; ++i) s[i] = sign * d.x[i][f];
            const double v = mean_group_ndcg(d, s, k);
            if (v > best) {
                best = v;
                model.init_feature = static_cast<int>(f);
                model.init_weight = sign / sd;
            }
        }
    }
}

}  // namespace

bool TrainingGroup::degenerate() const {
    if (rows.empty()) return true;
    return std::all_of(rows.begin(), rows.end(), [&](const LabeledRow& r) { return r.relevance == rows[0].relevance; });
}

void LambdaRankParams::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (num_leaves < 2) throw std::invalid_argument("num_leaves must be >= 2");
    if (min_data_in_leaf < 1) throw std::invalid_argument("min_data_in_leaf must be >= 1");
    if (num_trees < 1) throw std::invalid_argument("num_trees must be >= 1");
    if (early_stopping_patience < 0) throw std::invalid_argument("early_stopping_patience must be >= 0");
    if (max_bin < 2 || max_bin > 65535) throw std::invalid_argument("max_bin must be in [2, 65535]");
    if (ndcg_at < 1) throw std::invalid_argument("ndcg_at must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be > 0");
    if (!(lambda_l2 >= 0.0)) throw std::invalid_argument("lambda_l2 must be >= 0");
    if (!(min_sum_hessian >= 0.0)) throw std::invalid_argument("min_sum_hessian must be >= 0");
    if (!(feature_fraction > 0.0 && feature_fraction <= 1.0))
        throw std::invalid_argument("feature_fraction must be in (0, 1]");
}

int RegressionTree::leaf_index(const FeatureVector& x) const {
    if (nodes.empty()) return 0;
    int node = 0;
    while (node >= 0) {
        const auto& n = nodes[static_cast<std::size_t>(node)];
        node = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return ~node;
}

double RankModel::predict(const FeatureVector& x) const {
    double s = init_feature >= 0 ? init_weight * x[static_cast<std::size_t>(init_feature)] : 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return s;
}

double group_ndcg(std::span<const double> scores, std::span<const int> relevance, int k) {
    const double idcg = ideal_dcg(relevance, k);
    if (idcg <= 0.0) return 0.0;
    const auto order = pessimistic_order(scores, relevance);
    double dcg = 0.0;
    for (std::size_t p = 0; p < order.size() && p < static_cast<std::size_t>(k); ++p)
        dcg += gain(relevance[order[p]]) * discount(p + 1);
    return dcg / idcg;
}

double mean_ndcg(std::span<const TrainingGroup> groups, const std::function<double(const FeatureVector&)>& scorer,
                 int k) {
    double total = 0.0;
    std::size_t n = 0;
    std::vector<double> s;
    std::vector<int> rel;
    for (const auto& g : groups) {
        if (g.degenerate()) continue;
        s.clear();
        rel.clear();
        for (const auto& r : g.rows) {
            s.push_back(scorer(r.features));
            rel.push_back(r.relevance);
        }
        total += group_ndcg(s, rel, k);
        ++n;
    }
    return n ? total / static_cast<double>(n) : 0.0;
}

double best_single_feature_ndcg(std::span<const TrainingGroup> groups, int k, int* best_feature) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        for (double sign : {1.0, -1.0}) {
            const double v = mean_ndcg(groups, [&](const FeatureVector& x) { return sign * x[f]; }, k);
            if (v > best) {
                best = v;
                arg = static_cast<int>(f);
            }
        }
    }
    if (best_feature) *best_feature = arg;
    return best;
}

RankModel train_lambdarank(std::span<const TrainingGroup> groups, const LambdaRankParams& params) {
    params.validate();
    if (groups.empty()) throw std::invalid_argument("train_lambdarank: no training groups");
    const Dataset data = flatten(groups, params.ndcg_at);
    if (std::none_of(data.active.begin(), data.active.end(), [](char a) { return a != 0; }))
        throw std::invalid_argument("train_lambdarank: every group has a single relevance level");

    const Binning bins = make_bins(data, params.max_bin);
    TreeLearner learner(bins, params);
    std::mt19937_64 rng(params.seed);

    RankModel model;
    model.params = params;
    std::vector<double> scores(data.rows, 0.0), grad(data.rows), hess(data.rows);
    std::vector<int> leaf_of;
    std::vector<int> all_features(kNumFeatures);
    std::iota(all_features.begin(), all_features.end(), 0);

    double best = -1.0;
    std::size_t best_trees = 0;
    if (params.init_from_best_feature) {
        set_initial_score(data, params.ndcg_at, model);
        if (model.init_feature >= 0) {
            const auto f = static_cast<std::size_t>(model.init_feature);
            for (std::size_t i = 0; i < data.rows; ++i) scores[i] = model.init_weight * data.x[i][f];
        }
    }
    best = mean_group_ndcg(data, scores, params.ndcg_at);
    model.training_ndcg.push_back(best);
    for (int t = 0; t < params.num_trees; ++t) {
        lambda_gradients(data, scores, params, grad, hess);
        std::vector<int> features = all_features;
        if (params.feature_fraction < 1.0) {
            const auto keep = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::lround(params.feature_fraction * kNumFeatures)));
            detail::partial_shuffle(features, keep, rng);
            features.resize(keep);
            std::sort(features.begin(), features.end());
        }
        auto tree = learner.grow(grad, hess, features, leaf_of);
        for (std::size_t i = 0; i < data.rows; ++i) scores[i] += tree.leaf_values[static_cast<std::size_t>(leaf_of[i])];
        model.trees.push_back(std::move(tree));
        const double ndcg = mean_group_ndcg(data, scores, params.ndcg_at);
        model.training_ndcg.push_back(ndcg);
        if (ndcg > best + 1e-12) {
            best = ndcg;
            best_trees = model.trees.size();
        } else if (params.early_stopping_patience > 0 &&
                   model.trees.size() - best_trees >= static_cast<std::size_t>(params.early_stopping_patience)) {
            break;
        }
    }
    if (params.early_stopping_patience > 0) {
        model.trees.resize(best_trees);
        model.training_ndcg.resize(best_trees + 1);
    }
    return model;
}

std::string RankModel::to_json() const {
    using nlohmann::ordered_json;
    ordered_json j;
    j["format"] = kModelFormat;
    j["version"] = kModelVersion;
    j["objective"] = "lambdarank";
    j["feature_names"] = ordered_json::array();
    for (auto n : kFeatureNames) j["feature_names"].push_back(n);
    j["learning_rate"] = params.learning_rate;
    j["num_leaves"] = params.num_leaves;
    j["min_data_in_leaf"] = params.min_data_in_leaf;
    j["num_trees"] = params.num_trees;
    j["seed"] = params.seed;
    j["early_stopping_patience"] = params.early_stopping_patience;
    j["max_bin"] = params.max_bin;
    j["ndcg_at"] = params.ndcg_at;
    j["sigma"] = params.sigma;
    j["lambda_l2"] = params.lambda_l2;
    j["min_sum_hessian"] = params.min_sum_hessian;
    j["feature_fraction"] = params.feature_fraction;
    j["init_from_best_feature"] = params.init_from_best_feature;
    j["init_feature"] = init_feature;
    j["init_weight"] = init_weight;
    j["training_ndcg"] = training_ndcg;
    j["trees"] = ordered_json::array();
    for (const auto& t : trees) {
        ordered_json jt;
        jt["split_feature"] = ordered_json::array();
        jt["threshold"] = ordered_json::array();
        jt["left_child"] = ordered_json::array();
        jt["right_child"] = ordered_json::array();
        for (const auto& n : t.nodes) {
            jt["split_feature"].push_back(n.feature);
            jt["threshold"].push_back(n.threshold);
            jt["left_child"].push_back(n.left);
            jt["right_child"].push_back(n.right);
        }
        jt["leaf_value"] = t.leaf_values;
        j["trees"].push_back(std::move(jt));
    }
    return j.dump(1) + "\n";
}

RankModel RankModel::from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format").get<std::string>() != kModelFormat) throw ModelFormatError("not a rank model file");
        if (j.at("version").get<int>() != kModelVersion)
            throw ModelFormatError(fmt::format("unsupported model version {}", j.at("version").get<int>()));
        const auto names = j.at("feature_names").get<std::vector<std::string>>();
        if (names.size() != kNumFeatures || !std::equal(names.begin(), names.end(), kFeatureNames.begin()))
            throw ModelFormatError("model feature order does not match this build");
        RankModel m;
        auto& p = m.params;
        p.learning_rate = j.at("learning_rate").get<double>();
        p.num_leaves = j.at("num_leaves").get<int>();
        p.min_data_in_leaf = j.at("min_data_in_leaf").get<int>();
        p.num_trees = j.at("num_trees").get<int>();
        p.seed = j.at("seed").get<std::uint64_t>();
        p.early_stopping_patience = j.at("early_stopping_patience").get<int>();
        p.max_bin = j.at("max_bin").get<int>();
        p.ndcg_at = j.at("ndcg_at").get<int>();
        p.sigma = j.at("sigma").get<double>();
        p.lambda_l2 = j.at("lambda_l2").get<double>();
        p.min_sum_hessian = j.at("min_sum_hessian").get<double>();
        p.feature_fraction = j.at("feature_fraction").get<double>();
        p.init_from_best_feature = j.at("init_from_best_feature").get<bool>();
        m.init_feature = j.at("init_feature").get<int>();
        m.init_weight = j.at("init_weight").get<double>();
        if (m.init_feature < -1 || m.init_feature >= static_cast<int>(kNumFeatures))
            throw ModelFormatError(fmt::format("init feature index {} out of range", m.init_feature));
        m.training_ndcg = j.at("training_ndcg").get<std::vector<double>>();
        for (const auto& jt : j.at("trees")) {
            RegressionTree t;
            const auto feat = jt.at("split_feature").get<std::vector<int>>();
            const auto thr = jt.at("threshold").get<std::vector<double>>();
            const auto left = jt.at("left_child").get<std::vector<int>>();
            const auto right = jt.at("right_child").get<std::vector<int>>();
            t.leaf_values = jt.at("leaf_value").get<std::vector<double>>();
            if (thr.size() != feat.size() || left.size() != feat.size() || right.size() != feat.size() ||
                t.leaf_values.size() != feat.size() + 1)
                throw ModelFormatError("inconsistent tree arrays");
            const auto nodes = static_cast<int>(feat.size());
            const auto nleaves = static_cast<int>(t.leaf_values.size());
            auto valid_child = [&](int c) { return c >= 0 ? c < nodes : ~c < nleaves; };
            for (std::size_t i = 0; i < feat.size(); ++i) {
                if (feat[i] < 0 || feat[i] >= static_cast<int>(kNumFeatures))
                    throw ModelFormatError(fmt::format("feature index {} out of range", feat[i]));
                if (!valid_child(left[i]) || !valid_child(right[i]) || left[i] == static_cast<int>(i) ||
                    right[i] == static_cast<int>(i) || (left[i] >= 0 && left[i] <= static_cast<int>(i)) ||
                    (right[i] >= 0 && right[i] <= static_cast<int>(i)))
                    throw ModelFormatError("bad child index");
                t.nodes.push_back(RegressionTree::Node{feat[i], thr[i], left[i], right[i]});
            }
            m.trees.push_back(std::move(t));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ModelFormatError(fmt::format("malformed model: {}", e.what()));
    }
}

void RankModel::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out << to_json();
}

RankModel RankModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

GridSearchResult grid_search(std::span<const TrainingGroup> groups, const LambdaRankParams& base,
                             std::span<const double> learning_rates, std::span<const int> num_leaves,
                             double holdout_fraction) {
    if (groups.size() < 2) throw std::invalid_argument("grid_search needs at least two groups");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
        throw std::invalid_argument("holdout_fraction must be in (0, 1)");
    std::vector<std::size_t> idx(groups.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(base.seed ^ 0x67726964ULL);
    detail::partial_shuffle(idx, idx.size(), rng);
    auto n_hold = static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(groups.size())));
    n_hold = std::clamp<std::size_t>(n_hold, 1, groups.size() - 1);
    std::vector<TrainingGroup> train, hold;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_hold ? hold : train).push_back(groups[idx[i]]);

    GridSearchResult result;
    result.best_holdout_ndcg = -1.0;
    for (double lr : learning_rates) {
        for (int leaves : num_leaves) {
            LambdaRankParams p = base;
            p.learning_rate = lr;
            p.num_leaves = leaves;
            double score = 0.0;
            try {
                const auto model = train_lambdarank(train, p);
                score = mean_ndcg(hold, [&](const FeatureVector& x) { return model.predict(x); }, p.ndcg_at);
            } catch (const std::invalid_argument&) {
                score = 0.0;  // e.g. the training half ended up all-degenerate
            }
            result.trials.emplace_back(p, score);
            if (score > result.best_holdout_ndcg) {
                result.best_holdout_ndcg = score;
                result.best = p;
            }
        }
    }
    return result;
}

}  // namespace patchtrace
