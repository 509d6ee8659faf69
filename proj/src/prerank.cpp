// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/prerank.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace patchtrace {

void FusionConfig::validate() const {
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("fusion weights must be non-negative");
    }
    if (candidate_k == 0) throw std::invalid_argument("candidate_k must be >= 1");
    if (!(bm25.k1 >= 0.0) || !(bm25.b >= 0.0 && bm25.b <= 1.0))
        throw std::invalid_argument("bm25 parameters out of range");
}

namespace {

std::size_t insertion_point(const Corpus& corpus, std::int64_t t) {
    const auto& times = corpus.time_index();
    return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
}

std::size_t abs_diff(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

}  // namespace

TimeAffinity time_affinity(const Corpus& corpus, std::int64_t cve_time, std::string_view commit_id) {
    const auto pos = corpus.position(commit_id);
    if (!pos) throw std::out_of_range(fmt::format("time_affinity: unknown commit {}", commit_id));
    return TimeAffinity{abs_diff(*pos, insertion_point(corpus, cve_time))};
}

std::vector<std::size_t> time_distances(const Corpus& corpus, std::int64_t cve_time) {
    const std::size_t ins = insertion_point(corpus, cve_time);
    std::vector<std::size_t> d(corpus.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = abs_diff(i, ins);
    return d;
}

RankedList rank_by_time(const Corpus& corpus, std::int64_t cve_time) {
    const auto dist = time_distances(corpus, cve_time);
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return corpus.at(a).commit_id < corpus.at(b).commit_id;
    });
    RankedList out;
    out.reserve(order.size());
    // Score is the negated distance so the list obeys the usual ordering.
    for (auto i : order) out.push_back(ScoredDoc{corpus.at(i).commit_id, -static_cast<double>(dist[i])});
    return out;
}

std::unordered_map<std::string, double> reciprocal_rank_transform(const RankedList& ranked) {
    std::unordered_map<std::string, double> rr;
    rr.reserve(ranked.size());
    for (std::size_t r = 0; r < ranked.size(); ++r)
        rr.emplace(ranked[r].doc_id, 1.0 / static_cast<double>(r + 1));
    return rr;
}

std::vector<PrerankCandidate> prerank_detailed(const Corpus& corpus, const CveRecord& cve,
                                               const InvertedIndex& msg_index,
                                               const InvertedIndex& diff_index,
                                               const FusionConfig& config) {
    config.validate();
    const std::size_t n = corpus.size();
    std::vector<PrerankCandidate> cands(n);
    for (std::size_t i = 0; i < n; ++i) cands[i].commit_id = corpus.at(i).commit_id;
    if (n == 0) return cands;

    const auto terms = make_query(cve.description);
    auto assign = [&](const RankedList& ranked, double PrerankCandidate::*field) {
        for (std::size_t r = 0; r < ranked.size(); ++r) {
            const auto pos = corpus.position(ranked[r].doc_id);
            if (pos) cands[*pos].*field = 1.0 / static_cast<double>(r + 1);
        }
    };
    assign(query(msg_index, terms, config.candidate_k, config.bm25), &PrerankCandidate::rr_msg);
    assign(query(diff_index, terms, config.candidate_k, config.bm25), &PrerankCandidate::rr_diff);
    if (cve.reserve_time) assign(rank_by_time(corpus, *cve.reserve_time), &PrerankCandidate::rr_reserve);
    if (cve.publish_time) assign(rank_by_time(corpus, *cve.publish_time), &PrerankCandidate::rr_publish);

    const auto& w = config.weights;
    for (auto& c : cands)
        c.fused = w[0] * c.rr_msg + w[1] * c.rr_diff + w[2] * c.rr_reserve + w[3] * c.rr_publish;

    auto before = [](const PrerankCandidate& a, const PrerankCandidate& b) {
        if (a.fused != b.fused) return a.fused > b.fused;
        return a.commit_id < b.commit_id;
    };
    if (cands.size() > config.candidate_k) {
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(config.candidate_k),
                          cands.end(), before);
        cands.resize(config.candidate_k);
    } else {
        std::sort(cands.begin(), cands.end(), before);
    }
    return cands;
}

RankedList to_ranked_list(const std::vector<PrerankCandidate>& candidates) {
    RankedList out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back(ScoredDoc{c.commit_id, c.fused});
    return out;
}

RankedList prerank_candidates(const Corpus& corpus, const CveRecord& cve,
                              const InvertedIndex& msg_index, const InvertedIndex& diff_index,
                              const FusionConfig& config) {
    return to_ranked_list(prerank_detailed(corpus, cve, msg_index, diff_index, config));
}

void write_prerank(const PrerankTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    for (const auto& [cve, list] : table) {
        for (std::size_t i = 0; i < list.size(); ++i) {
            const auto& c = list[i];
            nlohmann::ordered_json j;
            j["cve_id"] = cve;
            j["commit_id"] = c.commit_id;
            j["rank"] = i + 1;
            j["fused_score"] = c.fused;
            j["components"] = {{"msg", c.rr_msg}, {"diff", c.rr_diff}, {"reserve", c.rr_reserve},
                               {"publish", c.rr_publish}};
            out << j.dump() << '\n';
        }
    }
}

PrerankTable read_prerank(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
    PrerankTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.size() != 5) throw DataError("expected keys cve_id, commit_id, rank, fused_score, components");
            auto& list = table[j.at("cve_id").get<std::string>()];
            if (j.at("rank").get<std::size_t>() != list.size() + 1) throw DataError("ranks are not consecutive");
            const auto& comp = j.at("components");
            list.push_back(PrerankCandidate{j.at("commit_id").get<std::string>(), j.at("fused_score").get<double>(),
                                            comp.at("msg").get<double>(), comp.at("diff").get<double>(),
                                            comp.at("reserve").get<double>(), comp.at("publish").get<double>()});
        } catch (const std::exception& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return table;
}

}  // namespace patchtrace
