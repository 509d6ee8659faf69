// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "patchtrace/corpus.hpp"
#include "patchtrace/embedding.hpp"

namespace patchtrace {

enum class KeyKind : std::uint8_t { Commit = 0, File = 1, Cve = 2, Path = 3 };

/// Store key. File keys are encoded as "commit_id:path"; path keys are the
/// embedded path text itself.
struct StoreKey {
    KeyKind kind = KeyKind::Commit;
    std::string key;

    static StoreKey commit(std::string_view commit_id);
    static StoreKey file(std::string_view commit_id, std::string_view path);
    static StoreKey cve(std::string_view cve_id);
    static StoreKey path_text(std::string_view text);

    std::string describe() const;

    auto operator<=>(const StoreKey&) const = default;
    bool operator==(const StoreKey&) const = default;
};

struct StoreKeyHash {
    std::size_t operator()(const StoreKey& k) const noexcept {
        return std::hash<std::string>{}(k.key) * 31u + static_cast<std::size_t>(k.kind);
    }
};

class MissingVectorError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Keyed unit vectors of one dimension. Filled once, then read concurrently.
class VectorStore {
public:
    VectorStore() = default;
    explicit VectorStore(std::size_t dimension) : dimension_(dimension) {}

    std::size_t dimension() const { return dimension_; }
    std::size_t size() const { return vectors_.size(); }

    /// Adds a vector; the first insert fixes the dimension of an empty store.
    /// Throws std::invalid_argument on duplicate keys or a dimension mismatch.
    void put(StoreKey key, EmbeddingVector vec);
    bool contains(const StoreKey& key) const { return vectors_.count(key) != 0; }
    const EmbeddingVector* find(const StoreKey& key) const;
    /// Throws MissingVectorError naming the key.
    const EmbeddingVector& at(const StoreKey& key) const;

    std::vector<StoreKey> sorted_keys() const;

    /// Binary layout: "PTVECSTR", format_version u32, dimension u32, count u64,
    /// then per record (sorted by key) kind u8, key length u32, key bytes,
    /// dimension little-endian float32 values.
    void save(const std::filesystem::path& path) const;
    static VectorStore load(const std::filesystem::path& path);

    bool operator==(const VectorStore& other) const;

private:
    std::size_t dimension_ = 0;
    std::unordered_map<StoreKey, EmbeddingVector, StoreKeyHash> vectors_;
};

struct TokenBudgets {
    std::size_t commit_tokens = 512;
    std::size_t file_tokens = 512;
};

/// Text embedded for a whole commit: message plus the diff cut to budget.
std::string commit_document(const CommitRecord& commit, std::size_t diff_budget);
/// Text embedded for one file slice, starting at its diff header.
std::string file_document(const CommitRecord& commit, const FileDiff& file, std::size_t budget);
std::string cve_document(const CveRecord& cve);

/// One vector per commit, per (commit, file) and per CVE of this repository.
VectorStore build_vectors(const Corpus& corpus, std::span<const CveRecord> cves, EmbeddingProvider& provider,
                          const TokenBudgets& budgets = {});

/// Embeds (key, text) pairs into the store, batching through the provider.
/// Errors are rethrown with the key of the failing batch.
void embed_into(VectorStore& store, EmbeddingProvider& provider,
                std::span<const std::pair<StoreKey, std::string>> items);

}  // namespace patchtrace
