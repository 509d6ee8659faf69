// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/embedding.hpp"

#include <cmath>
#include <map>

#include <fmt/format.h>

#include "patchtrace/tokenizer.hpp"

namespace patchtrace {
namespace {

constexpr std::uint64_t kOfflineSeed = 0x9e3779b97f4a7c15ULL;

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

template <typename T>
EmbeddingVector normalize_impl(std::span<const T> raw) {
    if (raw.empty()) throw EmbeddingError("empty embedding vector", false);
    double sq = 0.0;
    for (T v : raw) {
        if (!std::isfinite(static_cast<double>(v))) throw EmbeddingError("non-finite embedding value", false);
        sq += static_cast<double>(v) * static_cast<double>(v);
    }
    if (sq == 0.0) throw EmbeddingError("zero embedding vector cannot be normalized", false);
    const double inv = 1.0 / std::sqrt(sq);
    std::vector<float> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(static_cast<double>(raw[i]) * inv);
    return EmbeddingVector::from_unit(std::move(out));
}

}  // namespace

EmbeddingVector EmbeddingVector::normalized(std::span<const float> raw) { return normalize_impl(raw); }
EmbeddingVector EmbeddingVector::normalized(std::span<const double> raw) { return normalize_impl(raw); }

EmbeddingVector EmbeddingVector::from_unit(std::vector<float> values) {
    EmbeddingVector v;
    v.values_ = std::move(values);
    return v;
}

EmbeddingVector EmbeddingVector::basis(std::size_t d, std::size_t i) {
    std::vector<float> v(d, 0.0f);
    v.at(i) = 1.0f;
    return from_unit(std::move(v));
}

double EmbeddingVector::dot(const EmbeddingVector& other) const {
    if (other.dimension() != dimension())
        throw std::invalid_argument(fmt::format("dimension mismatch: {} vs {}", dimension(), other.dimension()));
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i)
        s += static_cast<double>(values_[i]) * static_cast<double>(other.values_[i]);
    return s;
}

double EmbeddingVector::norm() const {
    double s = 0.0;
    for (float v : values_) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::string render_prompt(PromptKind kind, std::span<const std::string_view> payload) {
    auto need = [&](std::size_t n) {
        if (payload.size() != n)
            throw std::invalid_argument(fmt::format("prompt expects {} payload fields, got {}", n, payload.size()));
    };
    switch (kind) {
    case PromptKind::CveQuery:
        need(1);
        return fmt::format(
            "Represent this CVE description to retrieve the commit (commit message + diff code) "
            "that patches this CVE: {}",
            payload[0]);
    case PromptKind::CommitDoc:
    case PromptKind::FileDoc:
        need(2);
        return fmt::format(
            "This is a commit (commit message + diff code) of a repository. Represent it to "
            "retrieve the patching commit for a CVE description: Commit message: {}; Diff code: {}",
            payload[0], payload[1]);
    case PromptKind::PathDoc:
        need(1);
        return std::string(payload[0]);
    }
    throw std::invalid_argument("unknown prompt kind");
}

std::string render_prompt(PromptKind kind, std::initializer_list<std::string_view> payload) {
    return render_prompt(kind, std::span<const std::string_view>(payload.begin(), payload.size()));
}

std::size_t offline_bucket(std::string_view token, std::size_t dimension) {
    return static_cast<std::size_t>(mix64(fnv1a(token) ^ kOfflineSeed) % dimension);
}

EmbeddingVector offline_embed(std::string_view text, std::size_t dimension) {
    if (dimension < 8) throw std::invalid_argument("offline_embed: dimension must be >= 8");
    std::map<std::string, std::size_t> tf;
    for (auto& t : tokenize(text)) ++tf[std::move(t)];
    if (tf.empty()) return EmbeddingVector::basis(dimension, 0);
    std::vector<double> acc(dimension, 0.0);
    for (const auto& [tok, n] : tf) acc[offline_bucket(tok, dimension)] += 1.0 + std::log(static_cast<double>(n));
    return EmbeddingVector::normalized(std::span<const double>(acc));
}

OfflineEmbedder::OfflineEmbedder(std::size_t dimension) : dimension_(dimension) {
    if (dimension < 8) throw std::invalid_argument("OfflineEmbedder: dimension must be >= 8");
}

std::string OfflineEmbedder::model_name() const { return fmt::format("offline-hash-{}", dimension_); }

std::vector<std::vector<float>> OfflineEmbedder::embed(std::span<const std::string> texts) {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        auto v = offline_embed(t, dimension_);
        out.emplace_back(v.values().begin(), v.values().end());
    }
    return out;
}

std::vector<EmbeddingVector> embed_batch(EmbeddingProvider& provider, std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    const std::size_t step = std::max<std::size_t>(1, provider.max_batch());
    for (std::size_t begin = 0; begin < texts.size(); begin += step) {
        const auto chunk = texts.subspan(begin, std::min(step, texts.size() - begin));
        auto raw = provider.embed(chunk);
        if (raw.size() != chunk.size())
            throw EmbeddingError(fmt::format("provider returned {} vectors for {} inputs", raw.size(), chunk.size()),
                                 false);
        for (auto& r : raw) {
            auto v = EmbeddingVector::normalized(std::span<const float>(r));
            if (!out.empty() && v.dimension() != out.front().dimension())
                throw EmbeddingError(fmt::format("dimension mismatch in batch: {} vs {}", v.dimension(),
                                                 out.front().dimension()),
                                     false);
            out.push_back(std::move(v));
        }
    }
    return out;
}

}  // namespace patchtrace
