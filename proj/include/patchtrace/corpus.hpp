// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace patchtrace {

/// Raised for malformed or inconsistent input data. The message names the
/// offending line when the data came from a line-delimited file.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One file's slice of a unified diff.
struct FileDiff {
    std::string path;    ///< new-side path, prefix stripped
    std::string header;  ///< the "diff --git ..." line, without its newline
    std::string body;    ///< everything after the header line up to the next header

    /// Header and body joined back into diff text.
    std::string text() const;

    bool operator==(const FileDiff&) const = default;
};

struct CommitRecord {
    std::string commit_id;
    std::string repo_id;
    std::int64_t author_time = 0;
    std::string message;
    std::vector<FileDiff> file_diffs;

    /// The full diff, reassembled from the per-file slices.
    std::string diff_text() const;

    bool operator==(const CommitRecord&) const = default;
};

struct CveRecord {
    std::string cve_id;
    std::string description;
    std::optional<std::int64_t> reserve_time;
    std::optional<std::int64_t> publish_time;
    std::string repo_id;
    /// Ground truth for evaluation and training labels only.
    std::vector<std::string> known_patch_ids;

    bool operator==(const CveRecord&) const = default;
};

/// All commits of one repository in chronological order.
///
/// Commits are sorted by (author_time, commit_id); the corpus is immutable
/// once constructed and safe to share between threads.
class Corpus {
public:
    Corpus() = default;
    /// Sorts the commits. Throws DataError on duplicate ids or mixed repos.
    Corpus(std::string repo_id, std::vector<CommitRecord> commits);

    const std::string& repo_id() const { return repo_id_; }
    const std::vector<CommitRecord>& commits() const { return commits_; }
    const std::vector<std::int64_t>& time_index() const { return time_index_; }
    std::size_t size() const { return commits_.size(); }
    bool empty() const { return commits_.empty(); }

    /// Position of a commit in chronological order.
    std::optional<std::size_t> position(std::string_view commit_id) const;
    const CommitRecord& at(std::size_t pos) const { return commits_.at(pos); }
    /// Throws std::out_of_range for an unknown id.
    const CommitRecord& get(std::string_view commit_id) const;

    /// O(n) check of the ordering invariant.
    bool is_sorted() const;

    bool operator==(const Corpus& other) const {
        return repo_id_ == other.repo_id_ && commits_ == other.commits_;
    }

private:
    std::string repo_id_;
    std::vector<CommitRecord> commits_;
    std::vector<std::int64_t> time_index_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

/// Splits unified diff text into one FileDiff per "diff --git" header.
/// Text before the first header is dropped.
std::vector<FileDiff> split_diff_by_file(std::string_view diff_text);

/// Path named on the b/ side of a "diff --git" header (a/ side as fallback).
std::string path_from_header(std::string_view header);

/// Reads a commit dump holding exactly one repository (or none).
Corpus ingest_commit_dump(const std::filesystem::path& path);

/// Reads a commit dump and groups it per repository, ordered by repo id.
std::vector<Corpus> ingest_commit_dumps(const std::filesystem::path& path);

/// Writes commits in dump format; ingest_commit_dump() reads it back unchanged.
void write_commit_dump(const std::vector<Corpus>& corpora, const std::filesystem::path& path);
void write_commit_dump(const Corpus& corpus, const std::filesystem::path& path);

std::vector<CveRecord> ingest_cve_dump(const std::filesystem::path& path);
void write_cve_dump(const std::vector<CveRecord>& cves, const std::filesystem::path& path);

/// Checks that every known patch id of the CVE exists in the corpus.
void validate_cve_against(const CveRecord& cve, const Corpus& corpus);

std::string lowercase_ascii(std::string_view s);

/// Lowercases a raw diff path and strips a leading a/ or b/ prefix.
/// FileDiff::path is already stripped and only needs lowercase_ascii().
std::string normalize_path(std::string_view path);

/// Lowercased, deduplicated set of every path touched by any commit.
std::vector<std::string> path_universe(const Corpus& corpus);

bool is_commit_id(std::string_view s);
bool is_cve_id(std::string_view s);

}  // namespace patchtrace
