// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "patchtrace/corpus.hpp"
#include "patchtrace/ranked_list.hpp"

namespace patchtrace {

enum class FieldKind : std::uint8_t { Message = 0, Diff = 1, File = 2 };

std::string_view to_string(FieldKind kind);

/// Okapi BM25 parameters. IDF uses ln(1 + (N - df + 0.5) / (df + 0.5)).
struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;

    bool operator==(const Posting&) const = default;
};

/// Deduplicated, sorted query terms.
struct QueryTerms {
    std::vector<std::string> terms;
};

QueryTerms make_query(std::string_view text);

/// Text a file slice contributes to the lexical fields. Slices with an empty
/// body (binary or metadata-only changes) contribute nothing.
std::string_view lexical_text(const FileDiff& file, std::string& scratch);

/// In-memory inverted index over one field of a corpus.
///
/// Documents are commits for the message and diff fields and (commit, path)
/// pairs for the file field. Built once, then read-only.
class InvertedIndex {
public:
    static InvertedIndex build(const Corpus& corpus, FieldKind kind);

    FieldKind kind() const { return kind_; }
    std::size_t doc_count() const { return doc_commit_.size(); }
    double avg_doc_length() const { return avg_doc_length_; }
    std::uint32_t doc_length(std::uint32_t doc) const { return doc_length_[doc]; }
    const std::string& doc_commit(std::uint32_t doc) const { return doc_commit_[doc]; }
    const std::string& doc_path(std::uint32_t doc) const { return doc_path_[doc]; }
    /// commit id, or "commit_id:path" for file documents.
    std::string doc_id(std::uint32_t doc) const;

    /// Postings sorted by doc, or nullptr for an unknown term.
    const std::vector<Posting>* postings(std::string_view term) const;
    std::size_t term_count() const { return postings_.size(); }

    /// Half-open range of documents belonging to a commit.
    std::optional<std::pair<std::uint32_t, std::uint32_t>> commit_docs(std::string_view commit_id) const;

    /// BM25 score of every document, indexed by doc number.
    std::vector<double> score_all(const QueryTerms& query, const Bm25Params& params = {}) const;

    /// BM25 scores restricted to docs in [begin, end).
    std::vector<double> score_range(const QueryTerms& query, std::uint32_t begin, std::uint32_t end,
                                    const Bm25Params& params = {}) const;

    void save(const std::filesystem::path& path) const;
    static InvertedIndex load(const std::filesystem::path& path);

    bool operator==(const InvertedIndex& other) const;

private:
    void finalize();
    double term_weight(std::uint32_t tf, std::uint32_t doc, double idf, const Bm25Params& p) const;
    double idf(std::size_t df) const;

    FieldKind kind_ = FieldKind::Message;
    std::vector<std::string> doc_commit_;
    std::vector<std::string> doc_path_;
    std::vector<std::uint32_t> doc_length_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::unordered_map<std::string, std::pair<std::uint32_t, std::uint32_t>> commit_range_;
    double avg_doc_length_ = 0.0;
};

/// Top-k documents by BM25; zero-score documents are left out.
RankedList query(const InvertedIndex& index, std::string_view query_text, std::size_t k,
                 const Bm25Params& params = {});
RankedList query(const InvertedIndex& index, const QueryTerms& terms, std::size_t k,
                 const Bm25Params& params = {});

/// Every file of one commit ranked against the CVE description. Doc ids are
/// paths. Files scoring zero follow in path order. Unknown commit -> empty.
RankedList rank_files_within_commit(const InvertedIndex& file_index, const CveRecord& cve,
                                    std::string_view commit_id, const Bm25Params& params = {});
RankedList rank_files_within_commit(const InvertedIndex& file_index, const QueryTerms& terms,
                                    std::string_view commit_id, const Bm25Params& params = {});

}  // namespace patchtrace
