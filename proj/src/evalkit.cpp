// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "random.hpp"

namespace patchtrace {
namespace {

void check_args(const RelevantSet& relevant, std::size_t k) {
    if (relevant.empty()) throw std::invalid_argument("relevant set is empty");
    if (k < 1) throw std::invalid_argument("k must be >= 1");
}

}  // namespace

double mrr(const RankedList& ranked, const RelevantSet& relevant) {
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (relevant.contains(ranked[i].doc_id)) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
}

double recall_at_k(const RankedList& ranked, const RelevantSet& relevant, std::size_t k) {
    check_args(relevant, k);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) hits += relevant.contains(ranked[i].doc_id);
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(const RankedList& ranked, const RelevantSet& relevant, std::size_t k) {
    check_args(relevant, k);
    double dcg = 0.0;
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
        if (relevant.contains(ranked[i].doc_id)) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
    }
    double idcg = 0.0;
    for (std::size_t i = 0; i < relevant.size() && i < k; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
    return dcg / idcg;
}

EvalReport evaluate(const std::map<std::string, RankedList>& rankings,
                    const std::map<std::string, RelevantSet>& relevant, const std::vector<std::size_t>& cutoffs) {
    EvalReport report;
    report.macro.cve_id = "macro";
    const RankedList empty;
    for (const auto& [cve, rel] : relevant) {
        if (rel.empty()) continue;
        auto it = rankings.find(cve);
        const RankedList& ranked = it == rankings.end() ? empty : it->second;
        CveMetrics m;
        m.cve_id = cve;
        m.mrr = mrr(ranked, rel);
        for (auto k : cutoffs) {
            m.recall[k] = recall_at_k(ranked, rel, k);
            m.ndcg[k] = ndcg_at_k(ranked, rel, k);
        }
        report.per_cve.push_back(std::move(m));
    }
    const auto n = static_cast<double>(report.per_cve.size());
    if (n > 0) {
        for (const auto& m : report.per_cve) {
            report.macro.mrr += m.mrr;
            for (auto k : cutoffs) {
                report.macro.recall[k] += m.recall.at(k);
                report.macro.ndcg[k] += m.ndcg.at(k);
            }
        }
        report.macro.mrr /= n;
        for (auto k : cutoffs) {
            report.macro.recall[k] /= n;
            report.macro.ndcg[k] /= n;
        }
    }
    return report;
}

std::string EvalReport::to_json() const {
    auto row = [](const CveMetrics& m) {
        nlohmann::ordered_json j;
        j["cve_id"] = m.cve_id;
        j["mrr"] = m.mrr;
        for (const auto& [k, v] : m.recall) j[fmt::format("recall@{}", k)] = v;
        for (const auto& [k, v] : m.ndcg) j[fmt::format("ndcg@{}", k)] = v;
        return j;
    };
    nlohmann::ordered_json j;
    j["cve_count"] = per_cve.size();
    j["macro"] = row(macro);
    j["per_cve"] = nlohmann::ordered_json::array();
    for (const auto& m : per_cve) j["per_cve"].push_back(row(m));
    return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
    std::vector<std::string> header = {"cve_id", "mrr"};
    for (const auto& [k, v] : macro.recall) header.push_back(fmt::format("R@{}", k));
    for (const auto& [k, v] : macro.ndcg) header.push_back(fmt::format("N@{}", k));
    std::vector<std::vector<std::string>> rows{header};
    auto add = [&](const CveMetrics& m) {
        std::vector<std::string> r = {m.cve_id, fmt::format("{:.4f}", m.mrr)};
        for (const auto& [k, v] : m.recall) r.push_back(fmt::format("{:.4f}", v));
        for (const auto& [k, v] : m.ndcg) r.push_back(fmt::format("{:.4f}", v));
        rows.push_back(std::move(r));
    };
    for (const auto& m : per_cve) add(m);
    add(macro);
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::string out;
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c == 0)
                out += fmt::format("{:<{}}", r[c], width[c]);
            else
                out += fmt::format("  {:>{}}", r[c], width[c]);
        }
        out += '\n';
    }
    return out;
}

DifficultyScore difficulty(const RepoMetrics& m, std::size_t commit_count) {
    DifficultyScore s;
    s.d = m.mrr + 0.1 * (m.recall_100 + m.recall_500 + m.recall_1000);
    s.adjusted = commit_count < 5000 ? s.d / std::log(100.0 + static_cast<double>(commit_count)) : s.d;
    return s;
}

RepoSplit split_by_repo(const std::vector<RepoSummary>& repos, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("test_fraction must be in (0, 1)");
    if (repos.size() < 2) throw std::invalid_argument("split_by_repo needs at least two repositories");
    std::vector<std::size_t> order(repos.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return repos[a].repo_id < repos[b].repo_id; });
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (repos[order[i]].repo_id == repos[order[i - 1]].repo_id)
            throw std::invalid_argument(fmt::format("duplicate repository {}", repos[order[i]].repo_id));
    }
    std::mt19937_64 rng(seed);
    detail::partial_shuffle(order, order.size(), rng);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
        if (repos[a].difficulty.adjusted != repos[b].difficulty.adjusted)
            return repos[a].difficulty.adjusted > repos[b].difficulty.adjusted;
        return repos[a].cve_count > repos[b].cve_count;
    });
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(repos.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, repos.size() - 1);
    RepoSplit split;
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_test ? split.test : split.train).push_back(repos[order[i]].repo_id);
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

}  // namespace patchtrace
