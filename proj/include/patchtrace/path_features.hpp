// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "patchtrace/corpus.hpp"
#include "patchtrace/embedding.hpp"
#include "patchtrace/vector_store.hpp"

namespace patchtrace {

/// Identifier-like words found in a CVE description, deduplicated
/// case-insensitively and sorted by their lowercase form.
struct EntitySet {
    std::vector<std::string> entities;

    bool empty() const { return entities.empty(); }
    bool contains(std::string_view e) const;
    bool operator==(const EntitySet&) const = default;
};

/// Sorted, deduplicated, lowercased repo-relative paths.
struct PathSet {
    std::vector<std::string> paths;

    static PathSet from(std::vector<std::string> raw);
    bool empty() const { return paths.empty(); }
    std::size_t size() const { return paths.size(); }
    bool operator==(const PathSet&) const = default;
};

/// Pluggable entity extraction.
class EntityExtractor {
public:
    virtual ~EntityExtractor() = default;
    virtual EntitySet extract(std::string_view cve_id, std::string_view description) = 0;
};

/// Pattern-based extractor. Keeps tokens that look like code identifiers:
/// camelCase, snake_case, dotted names, slash paths, names with a file
/// extension, and letter+digit words such as "NIO2".
class RuleBasedExtractor final : public EntityExtractor {
public:
    EntitySet extract(std::string_view cve_id, std::string_view description) override;
};

/// Serves entities from a JSONL cache ({cve_id, entities:[...]}) produced by
/// an external extractor, e.g. an LLM. Unknown CVEs are an error.
class CachedEntityExtractor final : public EntityExtractor {
public:
    explicit CachedEntityExtractor(const std::filesystem::path& cache_file);
    EntitySet extract(std::string_view cve_id, std::string_view description) override;

private:
    std::map<std::string, EntitySet, std::less<>> cache_;
};

EntitySet extract_entities(std::string_view description);
EntitySet extract_entities(std::string_view cve_id, std::string_view description, EntityExtractor& extractor);

void write_entity_cache(const std::map<std::string, EntitySet>& entities, const std::filesystem::path& path);

/// Lowercased paths a commit touches.
PathSet commit_paths(const CommitRecord& commit);

/// Lowercased diff bodies recorded for each lowercased path of a repository.
using PathContents = std::map<std::string, std::string, std::less<>>;
PathContents path_contents(const Corpus& corpus);

/// Case-insensitive substring search of each entity over the path universe,
/// keeping at most per_entity_cap matches per entity (shortest first). With
/// contents, a path also matches when the entity occurs in its diff text.
PathSet search_paths(const PathSet& universe, const EntitySet& entities, std::size_t per_entity_cap = 10,
                     const PathContents* contents = nullptr);

/// |A n B| / |A u B|; 0 when both are empty.
double feature_jaccard(const PathSet& ner_paths, const PathSet& commit_paths);

/// Sorted paths joined by newlines; the text embedded for a path set.
std::string path_document(const PathSet& paths);

/// Embeds path documents on demand and memoizes them in a vector store.
class PathVectorCache {
public:
    PathVectorCache(EmbeddingProvider& provider, VectorStore& store) : provider_(provider), store_(store) {}

    /// Embeds every text not yet cached, in batches.
    void prefetch(std::span<const std::string> texts);
    const EmbeddingVector& get(const std::string& text);
    const VectorStore& store() const { return store_; }

private:
    EmbeddingProvider& provider_;
    VectorStore& store_;
};

/// Cosine between the embedded NER path set and the embedded commit path set;
/// 0 when either side is empty.
double feature_path_cosine(PathVectorCache& cache, const PathSet& ner_paths, const PathSet& commit_paths);
/// Same, against vectors already present in the store.
double feature_path_cosine(const VectorStore& store, const PathSet& ner_paths, const PathSet& commit_paths);

}  // namespace patchtrace
