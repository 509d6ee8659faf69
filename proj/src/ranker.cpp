// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "random.hpp"

namespace patchtrace {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    return out;
}

// Calls fn(json, line_number) for every non-blank line.
template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(fmt::format("{}:{}: invalid JSON: {}", path.string(), lineno, e.what()));
        }
        try {
            fn(j, lineno);
        } catch (const json::exception& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
}

void require_keys(const json& j, std::initializer_list<std::string_view> keys, const std::filesystem::path& path,
                  std::size_t lineno) {
    if (!j.is_object()) throw DataError(fmt::format("{}:{}: expected an object", path.string(), lineno));
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw DataError(fmt::format("{}:{}: unknown key \"{}\"", path.string(), lineno, k));
    }
    for (auto k : keys) {
        if (!j.contains(std::string(k)))
            throw DataError(fmt::format("{}:{}: missing key \"{}\"", path.string(), lineno, k));
    }
}

FeatureVector features_from_json(const json& arr) {
    if (!arr.is_array() || arr.size() != kNumFeatures)
        throw DataError(fmt::format("features must be an array of {} numbers", kNumFeatures));
    FeatureVector v{};
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        v[i] = arr[i].get<double>();
        if (!std::isfinite(v[i])) throw DataError("non-finite feature value");
    }
    return v;
}

}  // namespace

std::optional<SampledCommits> sample_training_commits(const CveRecord& cve, const RankedList& prerank_list,
                                                      const Corpus& corpus, std::uint64_t seed,
                                                      const SamplingConfig& config) {
    SampledCommits s;
    std::unordered_set<std::string_view> taken;
    for (const auto& id : cve.known_patch_ids) {
        if (corpus.position(id) && taken.insert(id).second) s.positives.push_back(id);
    }
    if (s.positives.empty()) {
        spdlog::warn("{}: no known patch in repository {}, skipping", cve.cve_id, corpus.repo_id());
        return std::nullopt;
    }
    for (const auto& doc : prerank_list) {
        if (s.hard_negatives.size() >= config.hard_negatives) break;
        if (!corpus.position(doc.doc_id)) continue;
        if (taken.insert(doc.doc_id).second) s.hard_negatives.push_back(doc.doc_id);
    }
    std::vector<std::string_view> pool;
    for (const auto& c : corpus.commits()) {
        if (!taken.contains(c.commit_id)) pool.push_back(c.commit_id);
    }
    std::mt19937_64 rng(seed ^ detail::hash_string(cve.cve_id));
    const std::size_t n = std::min(config.random_negatives, pool.size());
    detail::partial_shuffle(pool, n, rng);
    for (std::size_t i = 0; i < n; ++i) s.random_negatives.emplace_back(pool[i]);
    return s;
}

std::optional<TrainingGroup> sample_training_group(const CveRecord& cve, const RankedList& prerank_list,
                                                   const Corpus& corpus, std::uint64_t seed,
                                                   CveFeaturizer& featurizer, const SamplingConfig& config) {
    auto sampled = sample_training_commits(cve, prerank_list, corpus, seed, config);
    if (!sampled) return std::nullopt;
    std::vector<std::string> all;
    all.reserve(sampled->size());
    all.insert(all.end(), sampled->positives.begin(), sampled->positives.end());
    all.insert(all.end(), sampled->hard_negatives.begin(), sampled->hard_negatives.end());
    all.insert(all.end(), sampled->random_negatives.begin(), sampled->random_negatives.end());
    featurizer.prefetch(all);
    TrainingGroup g;
    g.cve_id = cve.cve_id;
    for (std::size_t i = 0; i < all.size(); ++i) {
        g.rows.push_back(LabeledRow{featurizer.features(all[i]), i < sampled->positives.size() ? 1 : 0, all[i]});
    }
    return g;
}

RankedList score_and_rerank(const RankModel& model, const RankedList& candidates,
                            const std::unordered_map<std::string, FeatureVector>& features) {
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto it = features.find(candidates[i].doc_id);
        if (it == features.end())
            throw FeatureError(fmt::format("no feature row for candidate {}", candidates[i].doc_id));
        scored.emplace_back(model.predict(it->second), i);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    RankedList out;
    out.reserve(scored.size());
    for (const auto& [score, i] : scored) out.push_back(ScoredDoc{candidates[i].doc_id, score});
    return out;
}

void write_training_groups(const std::vector<TrainingGroup>& groups, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& g : groups) {
        for (const auto& r : g.rows) {
            ordered_json j;
            j["cve_id"] = g.cve_id;
            j["commit_id"] = r.commit_id;
            j["relevance"] = r.relevance;
            j["features"] = r.features;
            out << j.dump() << '\n';
        }
    }
}

std::vector<TrainingGroup> read_training_groups(const std::filesystem::path& path) {
    std::vector<TrainingGroup> groups;
    std::set<std::string> closed;
    for_each_json_line(path, [&](const json& j, std::size_t lineno) {
        require_keys(j, {"cve_id", "commit_id", "relevance", "features"}, path, lineno);
        const auto cve = j.at("cve_id").get<std::string>();
        if (groups.empty() || groups.back().cve_id != cve) {
            if (!closed.insert(cve).second)
                throw DataError(fmt::format("{}:{}: rows of {} are not contiguous", path.string(), lineno, cve));
            groups.push_back(TrainingGroup{cve, {}});
        }
        const int rel = j.at("relevance").get<int>();
        if (rel != 0 && rel != 1) throw DataError(fmt::format("{}:{}: relevance must be 0 or 1", path.string(), lineno));
        groups.back().rows.push_back(
            LabeledRow{features_from_json(j.at("features")), rel, j.at("commit_id").get<std::string>()});
    });
    return groups;
}

void write_feature_rows(const std::vector<FeatureRow>& rows, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& r : rows) {
        ordered_json j;
        j["cve_id"] = r.cve_id;
        j["commit_id"] = r.commit_id;
        for (std::size_t i = 0; i < kNumFeatures; ++i) j[fmt::format("f{}", i + 1)] = r.features[i];
        out << j.dump() << '\n';
    }
}

std::vector<FeatureRow> read_feature_rows(const std::filesystem::path& path) {
    std::vector<FeatureRow> rows;
    for_each_json_line(path, [&](const json& j, std::size_t lineno) {
        require_keys(j, {"cve_id", "commit_id", "f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9"}, path, lineno);
        json values = json::array();
        for (std::size_t i = 0; i < kNumFeatures; ++i) values.push_back(j.at(fmt::format("f{}", i + 1)));
        rows.push_back(FeatureRow{j.at("cve_id").get<std::string>(), j.at("commit_id").get<std::string>(),
                                  features_from_json(values)});
    });
    return rows;
}

void write_rankings(const RankingTable& rankings, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& [cve, list] : rankings) {
        for (std::size_t i = 0; i < list.size(); ++i) {
            ordered_json j;
            j["cve_id"] = cve;
            j["commit_id"] = list[i].doc_id;
            j["rank"] = i + 1;
            j["score"] = list[i].score;
            out << j.dump() << '\n';
        }
    }
}

RankingTable read_rankings(const std::filesystem::path& path) {
    RankingTable table;
    for_each_json_line(path, [&](const json& j, std::size_t lineno) {
        require_keys(j, {"cve_id", "commit_id", "rank", "score"}, path, lineno);
        auto& list = table[j.at("cve_id").get<std::string>()];
        const auto rank = j.at("rank").get<std::size_t>();
        if (rank != list.size() + 1)
            throw DataError(fmt::format("{}:{}: expected rank {}, got {}", path.string(), lineno, list.size() + 1, rank));
        list.push_back(ScoredDoc{j.at("commit_id").get<std::string>(), j.at("score").get<double>()});
    });
    return table;
}

}  // namespace patchtrace
