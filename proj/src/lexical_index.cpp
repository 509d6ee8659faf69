// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/lexical_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "patchtrace/tokenizer.hpp"

namespace patchtrace {
namespace {

constexpr char kMagic[9] = "PTBM25IX";
constexpr std::uint32_t kFormatVersion = 1;

}  // namespace

std::string_view to_string(FieldKind kind) {
    switch (kind) {
    case FieldKind::Message: return "message";
    case FieldKind::Diff: return "diff";
    case FieldKind::File: return "file";
    }
    return "unknown";
}

QueryTerms make_query(std::string_view text) {
    auto tokens = tokenize(text);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    return QueryTerms{std::move(tokens)};
}

std::string_view lexical_text(const FileDiff& file, std::string& scratch) {
    if (file.body.empty()) return {};
    scratch = file.text();
    return scratch;
}

InvertedIndex InvertedIndex::build(const Corpus& corpus, FieldKind kind) {
    InvertedIndex idx;
    idx.kind_ = kind;
    std::unordered_map<std::string, std::uint32_t> tf;
    std::string scratch;

    auto add_doc = [&](const std::string& commit, const std::string& path, auto&& feed) {
        const auto doc = static_cast<std::uint32_t>(idx.doc_commit_.size());
        tf.clear();
        std::uint32_t length = 0;
        feed([&](std::string_view text) {
            for (auto& t : tokenize(text)) {
                ++tf[t];
                ++length;
            }
        });
        idx.doc_commit_.push_back(commit);
        idx.doc_path_.push_back(path);
        idx.doc_length_.push_back(length);
        for (auto& [term, count] : tf) idx.postings_[term].push_back(Posting{doc, count});
    };

    for (const auto& c : corpus.commits()) {
        switch (kind) {
        case FieldKind::Message:
            add_doc(c.commit_id, {}, [&](auto&& sink) { sink(c.message); });
            break;
        case FieldKind::Diff:
            add_doc(c.commit_id, {}, [&](auto&& sink) {
                for (const auto& f : c.file_diffs) sink(lexical_text(f, scratch));
            });
            break;
        case FieldKind::File:
            for (const auto& f : c.file_diffs) {
                add_doc(c.commit_id, f.path, [&](auto&& sink) { sink(lexical_text(f, scratch)); });
            }
            break;
        }
    }
    idx.finalize();
    return idx;
}

void InvertedIndex::finalize() {
    double total = 0.0;
    for (auto len : doc_length_) total += len;
    avg_doc_length_ = doc_length_.empty() ? 0.0 : total / static_cast<double>(doc_length_.size());
    commit_range_.clear();
    for (std::uint32_t d = 0; d < doc_commit_.size();) {
        std::uint32_t e = d + 1;
        while (e < doc_commit_.size() && doc_commit_[e] == doc_commit_[d]) ++e;
        commit_range_.emplace(doc_commit_[d], std::make_pair(d, e));
        d = e;
    }
}

std::string InvertedIndex::doc_id(std::uint32_t doc) const {
    if (kind_ == FieldKind::File) return doc_commit_[doc] + ":" + doc_path_[doc];
    return doc_commit_[doc];
}

const std::vector<Posting>* InvertedIndex::postings(std::string_view term) const {
    auto it = postings_.find(std::string(term));
    return it == postings_.end() ? nullptr : &it->second;
}

std::optional<std::pair<std::uint32_t, std::uint32_t>> InvertedIndex::commit_docs(
    std::string_view commit_id) const {
    auto it = commit_range_.find(std::string(commit_id));
    if (it == commit_range_.end()) return std::nullopt;
    return it->second;
}

double InvertedIndex::idf(std::size_t df) const {
    const double n = static_cast<double>(doc_count());
    const double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double InvertedIndex::term_weight(std::uint32_t tf, std::uint32_t doc, double idf,
                                  const Bm25Params& p) const {
    const double f = tf;
    const double norm = 1.0 - p.b + p.b * static_cast<double>(doc_length_[doc]) / avg_doc_length_;
    return idf * f * (p.k1 + 1.0) / (f + p.k1 * norm);
}

std::vector<double> InvertedIndex::score_all(const QueryTerms& query, const Bm25Params& params) const {
    std::vector<double> scores(doc_count(), 0.0);
    for (const auto& term : query.terms) {
        const auto* plist = postings(term);
        if (!plist) continue;
        const double w = idf(plist->size());
        for (const auto& p : *plist) scores[p.doc] += term_weight(p.tf, p.doc, w, params);
    }
    return scores;
}

std::vector<double> InvertedIndex::score_range(const QueryTerms& query, std::uint32_t begin,
                                               std::uint32_t end, const Bm25Params& params) const {
    std::vector<double> scores(end - begin, 0.0);
    for (const auto& term : query.terms) {
        const auto* plist = postings(term);
        if (!plist) continue;
        auto it = std::lower_bound(plist->begin(), plist->end(), begin,
                                   [](const Posting& p, std::uint32_t d) { return p.doc < d; });
        if (it == plist->end() || it->doc >= end) continue;
        const double w = idf(plist->size());
        for (; it != plist->end() && it->doc < end; ++it)
            scores[it->doc - begin] += term_weight(it->tf, it->doc, w, params);
    }
    return scores;
}

void InvertedIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    detail::write_magic(out, kMagic);
    detail::write_le<std::uint32_t>(out, kFormatVersion);
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(kind_));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(doc_count()));
    for (std::size_t d = 0; d < doc_count(); ++d) {
        detail::write_string(out, doc_commit_[d]);
        detail::write_string(out, doc_path_[d]);
        detail::write_le<std::uint32_t>(out, doc_length_[d]);
    }
    std::vector<const std::pair<const std::string, std::vector<Posting>>*> terms;
    terms.reserve(postings_.size());
    for (const auto& kv : postings_) terms.push_back(&kv);
    std::sort(terms.begin(), terms.end(), [](auto* a, auto* b) { return a->first < b->first; });
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(terms.size()));
    for (const auto* kv : terms) {
        detail::write_string(out, kv->first);
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(kv->second.size()));
        for (const auto& p : kv->second) {
            detail::write_le<std::uint32_t>(out, p.doc);
            detail::write_le<std::uint32_t>(out, p.tf);
        }
    }
    if (!out) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    detail::expect_magic(in, kMagic, "BM25 index");
    const auto version = detail::read_le<std::uint32_t>(in);
    if (version != kFormatVersion)
        throw std::runtime_error(fmt::format("{}: unsupported index version {}", path.string(), version));
    InvertedIndex idx;
    const auto kind = detail::read_le<std::uint8_t>(in);
    if (kind > 2) throw std::runtime_error(fmt::format("{}: bad field kind", path.string()));
    idx.kind_ = static_cast<FieldKind>(kind);
    const auto docs = detail::read_le<std::uint32_t>(in);
    idx.doc_commit_.reserve(docs);
    for (std::uint32_t d = 0; d < docs; ++d) {
        idx.doc_commit_.push_back(detail::read_string(in));
        idx.doc_path_.push_back(detail::read_string(in));
        idx.doc_length_.push_back(detail::read_le<std::uint32_t>(in));
    }
    const auto nterms = detail::read_le<std::uint32_t>(in);
    idx.postings_.reserve(nterms);
    for (std::uint32_t t = 0; t < nterms; ++t) {
        auto term = detail::read_string(in);
        const auto n = detail::read_le<std::uint32_t>(in);
        std::vector<Posting> plist(n);
        for (auto& p : plist) {
            p.doc = detail::read_le<std::uint32_t>(in);
            p.tf = detail::read_le<std::uint32_t>(in);
            if (p.doc >= docs) throw std::runtime_error(fmt::format("{}: posting out of range", path.string()));
        }
        idx.postings_.emplace(std::move(term), std::move(plist));
    }
    idx.finalize();
    return idx;
}

bool InvertedIndex::operator==(const InvertedIndex& other) const {
    return kind_ == other.kind_ && doc_commit_ == other.doc_commit_ && doc_path_ == other.doc_path_ &&
           doc_length_ == other.doc_length_ && postings_ == other.postings_;
}

RankedList query(const InvertedIndex& index, const QueryTerms& terms, std::size_t k,
                 const Bm25Params& params) {
    if (k == 0) throw std::invalid_argument("query: k must be >= 1");
    const auto scores = index.score_all(terms, params);
    RankedList hits;
    for (std::uint32_t d = 0; d < scores.size(); ++d) {
        if (scores[d] > 0.0) hits.push_back(ScoredDoc{index.doc_id(d), scores[d]});
    }
    if (hits.size() > k) {
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(),
                          ranks_before);
        hits.resize(k);
    } else {
        sort_ranked(hits);
    }
    return hits;
}

RankedList query(const InvertedIndex& index, std::string_view query_text, std::size_t k,
                 const Bm25Params& params) {
    return query(index, make_query(query_text), k, params);
}

RankedList rank_files_within_commit(const InvertedIndex& file_index, const QueryTerms& terms,
                                    std::string_view commit_id, const Bm25Params& params) {
    if (file_index.kind() != FieldKind::File)
        throw std::invalid_argument("rank_files_within_commit needs a file index");
    const auto range = file_index.commit_docs(commit_id);
    if (!range) return {};
    const auto [begin, end] = *range;
    const auto scores = file_index.score_range(terms, begin, end, params);
    RankedList hits;
    RankedList zero;
    for (std::uint32_t d = begin; d < end; ++d) {
        ScoredDoc sd{file_index.doc_path(d), scores[d - begin]};
        (sd.score > 0.0 ? hits : zero).push_back(std::move(sd));
    }
    sort_ranked(hits);
    std::sort(zero.begin(), zero.end(),
              [](const ScoredDoc& a, const ScoredDoc& b) { return a.doc_id < b.doc_id; });
    hits.insert(hits.end(), std::make_move_iterator(zero.begin()), std::make_move_iterator(zero.end()));
    return hits;
}

RankedList rank_files_within_commit(const InvertedIndex& file_index, const CveRecord& cve,
                                    std::string_view commit_id, const Bm25Params& params) {
    return rank_files_within_commit(file_index, make_query(cve.description), commit_id, params);
}

}  // namespace patchtrace
