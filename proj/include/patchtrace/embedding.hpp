// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace patchtrace {

/// Failure while producing embeddings. Transport problems are retriable and
/// report how many attempts were made; malformed output is not.
class EmbeddingError : public std::runtime_error {
public:
    EmbeddingError(const std::string& what, bool retriable, int attempts = 1)
        : std::runtime_error(what), retriable_(retriable), attempts_(attempts) {}

    bool retriable() const { return retriable_; }
    int attempts() const { return attempts_; }

private:
    bool retriable_;
    int attempts_;
};

/// A unit-length float vector.
class EmbeddingVector {
public:
    EmbeddingVector() = default;

    /// Scales `raw` to unit L2 norm. Throws EmbeddingError for empty,
    /// all-zero or non-finite input.
    static EmbeddingVector normalized(std::span<const float> raw);
    static EmbeddingVector normalized(std::span<const double> raw);
    /// Wraps values that are already unit length (e.g. read back from disk).
    static EmbeddingVector from_unit(std::vector<float> values);
    /// The basis vector e_i of dimension d.
    static EmbeddingVector basis(std::size_t d, std::size_t i);

    std::span<const float> values() const { return values_; }
    std::size_t dimension() const { return values_.size(); }
    /// Dot product accumulated in double; equals the cosine for unit vectors.
    double dot(const EmbeddingVector& other) const;
    double norm() const;

    bool operator==(const EmbeddingVector&) const = default;

private:
    std::vector<float> values_;
};

/// Cosine of two arbitrary (not necessarily normalized) vectors; 0 if either is zero.
double cosine(std::span<const float> a, std::span<const float> b);

enum class PromptKind { CveQuery, CommitDoc, FileDoc, PathDoc };

/// Fills the instruction template for `kind`.
///
/// Payload arity: CveQuery {description}; CommitDoc and FileDoc {message, diff};
/// PathDoc {paths}. PathDoc has no template and is returned verbatim.
std::string render_prompt(PromptKind kind, std::span<const std::string_view> payload);
std::string render_prompt(PromptKind kind, std::initializer_list<std::string_view> payload);

/// Source of raw embedding vectors. Implementations need not normalize.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string model_name() const = 0;
    /// One raw vector per input, in input order.
    virtual std::vector<std::vector<float>> embed(std::span<const std::string> texts) = 0;
    /// Largest number of texts sent per request.
    virtual std::size_t max_batch() const { return 64; }
};

/// Deterministic hashing embedder used offline and in tests.
class OfflineEmbedder final : public EmbeddingProvider {
public:
    explicit OfflineEmbedder(std::size_t dimension = 1024);

    std::string model_name() const override;
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
    std::size_t max_batch() const override { return 4096; }
    std::size_t dimension() const { return dimension_; }

private:
    std::size_t dimension_;
};

/// Bucket a token hashes to in the offline embedder.
std::size_t offline_bucket(std::string_view token, std::size_t dimension);

/// Hashed bag-of-tokens vector with 1 + ln(tf) weights. Text without tokens
/// maps to e0. Throws std::invalid_argument when dimension < 8.
EmbeddingVector offline_embed(std::string_view text, std::size_t dimension);

struct RetryPolicy {
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{200};
    double multiplier = 2.0;
};

/// Client for an embedding server speaking
///   POST {base}/embed  {"model": m, "inputs": [...]}  ->  {"vectors": [[...], ...]}
/// Any non-200 answer or transport failure is retried with exponential backoff.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    HttpEmbeddingProvider(std::string base_url, std::string model,
                          std::optional<std::string> bearer_token = std::nullopt,
                          RetryPolicy retry = {}, std::size_t batch_size = 32,
                          std::chrono::seconds timeout = std::chrono::seconds(120));
    ~HttpEmbeddingProvider() override;

    std::string model_name() const override { return model_; }
    std::vector<std::vector<float>> embed(std::span<const std::string> texts) override;
    std::size_t max_batch() const override { return batch_size_; }

private:
    std::string scheme_host_port_;
    std::string path_;
    std::string model_;
    std::optional<std::string> bearer_token_;
    RetryPolicy retry_;
    std::size_t batch_size_;
    std::chrono::seconds timeout_;
};

/// Embeds texts through the provider in max_batch() chunks and normalizes
/// every vector. All vectors must share one dimension.
std::vector<EmbeddingVector> embed_batch(EmbeddingProvider& provider, std::span<const std::string> texts);

}  // namespace patchtrace
