// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/vector_store.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "patchtrace/tokenizer.hpp"

namespace patchtrace {
namespace {

constexpr char kMagic[9] = "PTVECSTR";
constexpr std::uint32_t kFormatVersion = 1;

std::string_view kind_name(KeyKind k) {
    switch (k) {
    case KeyKind::Commit: return "commit";
    case KeyKind::File: return "file";
    case KeyKind::Cve: return "cve";
    case KeyKind::Path: return "path";
    }
    return "?";
}

}  // namespace

StoreKey StoreKey::commit(std::string_view commit_id) { return {KeyKind::Commit, std::string(commit_id)}; }
StoreKey StoreKey::file(std::string_view commit_id, std::string_view path) {
    return {KeyKind::File, fmt::format("{}:{}", commit_id, path)};
}
StoreKey StoreKey::cve(std::string_view cve_id) { return {KeyKind::Cve, std::string(cve_id)}; }
StoreKey StoreKey::path_text(std::string_view text) { return {KeyKind::Path, std::string(text)}; }

std::string StoreKey::describe() const { return fmt::format("{} '{}'", kind_name(kind), key); }

void VectorStore::put(StoreKey key, EmbeddingVector vec) {
    if (dimension_ == 0 && vectors_.empty()) dimension_ = vec.dimension();
    if (vec.dimension() != dimension_)
        throw std::invalid_argument(fmt::format("vector for {} has dimension {}, store has {}", key.describe(),
                                                vec.dimension(), dimension_));
    auto desc = key.describe();
    if (!vectors_.emplace(std::move(key), std::move(vec)).second)
        throw std::invalid_argument(fmt::format("duplicate key {}", desc));
}

const EmbeddingVector* VectorStore::find(const StoreKey& key) const {
    auto it = vectors_.find(key);
    return it == vectors_.end() ? nullptr : &it->second;
}

const EmbeddingVector& VectorStore::at(const StoreKey& key) const {
    if (const auto* v = find(key)) return *v;
    throw MissingVectorError(fmt::format("no vector stored for {}", key.describe()));
}

std::vector<StoreKey> VectorStore::sorted_keys() const {
    std::vector<StoreKey> keys;
    keys.reserve(vectors_.size());
    for (const auto& [k, _] : vectors_) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    return keys;
}

void VectorStore::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    detail::write_magic(out, kMagic);
    detail::write_le<std::uint32_t>(out, kFormatVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dimension_));
    detail::write_le<std::uint64_t>(out, vectors_.size());
    for (const auto& key : sorted_keys()) {
        detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(key.kind));
        detail::write_string(out, key.key);
        for (float f : vectors_.at(key).values()) detail::write_le<float>(out, f);
    }
    if (!out) throw std::runtime_error(fmt::format("failed writing {}", path.string()));
}

VectorStore VectorStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    detail::expect_magic(in, kMagic, "vector store");
    const auto version = detail::read_le<std::uint32_t>(in);
    if (version != kFormatVersion)
        throw std::runtime_error(fmt::format("{}: unsupported vector store version {}", path.string(), version));
    VectorStore store(detail::read_le<std::uint32_t>(in));
    const auto count = detail::read_le<std::uint64_t>(in);
    store.vectors_.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto kind = detail::read_le<std::uint8_t>(in);
        if (kind > 3) throw std::runtime_error(fmt::format("{}: bad key kind", path.string()));
        StoreKey key{static_cast<KeyKind>(kind), detail::read_string(in)};
        std::vector<float> values(store.dimension_);
        for (auto& f : values) f = detail::read_le<float>(in);
        store.put(std::move(key), EmbeddingVector::from_unit(std::move(values)));
    }
    return store;
}

bool VectorStore::operator==(const VectorStore& other) const {
    return dimension_ == other.dimension_ && vectors_ == other.vectors_;
}

std::string commit_document(const CommitRecord& commit, std::size_t diff_budget) {
    const std::string diff = commit.diff_text();
    return render_prompt(PromptKind::CommitDoc, {commit.message, truncate_to_tokens(diff, diff_budget)});
}

std::string file_document(const CommitRecord& commit, const FileDiff& file, std::size_t budget) {
    const std::string text = file.text();
    return render_prompt(PromptKind::FileDoc, {commit.message, truncate_to_tokens(text, budget)});
}

std::string cve_document(const CveRecord& cve) { return render_prompt(PromptKind::CveQuery, {cve.description}); }

void embed_into(VectorStore& store, EmbeddingProvider& provider,
                std::span<const std::pair<StoreKey, std::string>> items) {
    const std::size_t step = std::max<std::size_t>(1, provider.max_batch());
    std::vector<std::string> texts;
    for (std::size_t begin = 0; begin < items.size(); begin += step) {
        const std::size_t end = std::min(items.size(), begin + step);
        texts.clear();
        for (std::size_t i = begin; i < end; ++i) texts.push_back(items[i].second);
        std::vector<EmbeddingVector> vecs;
        try {
            vecs = embed_batch(provider, texts);
        } catch (const EmbeddingError& e) {
            throw EmbeddingError(fmt::format("while embedding {}: {}", items[begin].first.describe(), e.what()),
                                 e.retriable(), e.attempts());
        }
        for (std::size_t i = begin; i < end; ++i) store.put(items[i].first, std::move(vecs[i - begin]));
    }
}

VectorStore build_vectors(const Corpus& corpus, std::span<const CveRecord> cves, EmbeddingProvider& provider,
                          const TokenBudgets& budgets) {
    if (budgets.commit_tokens == 0 || budgets.file_tokens == 0)
        throw std::invalid_argument("token budgets must be >= 1");
    std::vector<std::pair<StoreKey, std::string>> items;
    for (const auto& c : corpus.commits()) {
        items.emplace_back(StoreKey::commit(c.commit_id), commit_document(c, budgets.commit_tokens));
        for (const auto& f : c.file_diffs)
            items.emplace_back(StoreKey::file(c.commit_id, f.path), file_document(c, f, budgets.file_tokens));
    }
    for (const auto& cve : cves) {
        if (cve.repo_id == corpus.repo_id()) items.emplace_back(StoreKey::cve(cve.cve_id), cve_document(cve));
    }
    VectorStore store;
    embed_into(store, provider, items);
    return store;
}

}  // namespace patchtrace
