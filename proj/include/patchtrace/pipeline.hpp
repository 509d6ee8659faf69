// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "patchtrace/evalkit.hpp"
#include "patchtrace/features.hpp"
#include "patchtrace/lambdarank.hpp"
#include "patchtrace/prerank.hpp"
#include "patchtrace/ranker.hpp"
#include "patchtrace/vector_store.hpp"

namespace patchtrace {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A stage was run before the stage that produces its inputs.
class MissingArtifactError : public std::runtime_error {
public:
    MissingArtifactError(std::string stage, const std::filesystem::path& artifact);
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

/// Environment variable holding the provider's bearer token, if any.
inline constexpr const char* kProviderTokenEnv = "PATCHTRACE_PROVIDER_TOKEN";

struct ProviderConfig {
    bool offline = true;
    std::string url;
    std::string model = "offline-hash";
    std::size_t dimension = 1024;  ///< offline embedder only
    std::size_t batch_size = 32;
    int timeout_seconds = 120;
    int max_attempts = 4;
};

struct SplitConfig {
    double test_fraction = 0.3;
    std::vector<std::string> test_repos;  ///< overrides the difficulty split when non-empty
};

struct GridConfig {
    std::vector<double> learning_rates;
    std::vector<int> num_leaves;
    double holdout_fraction = 0.25;

    bool enabled() const { return !learning_rates.empty() && !num_leaves.empty(); }
};

struct PipelineConfig {
    std::filesystem::path commits;
    std::filesystem::path cves;
    std::filesystem::path output_dir = "patchtrace-out";
    std::optional<std::filesystem::path> entity_cache;
    ProviderConfig provider;
    FusionConfig fusion;
    TokenBudgets budgets;
    HierConfig hier;
    std::size_t path_search_cap = 10;
    bool path_search_contents = false;
    SamplingConfig sampling;
    LambdaRankParams ranker;
    GridConfig grid;
    SplitConfig split;
    std::uint64_t seed = 0;

    /// Parses and validates. Relative paths resolve against base_dir.
    /// Unknown keys and bad values raise ConfigError.
    static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static PipelineConfig load(const std::filesystem::path& path);
    void validate() const;

    /// Canonical settings (no paths) used in stage manifests.
    nlohmann::json settings_json() const;
};

struct RunOptions {
    std::optional<std::string> repo;
    std::optional<std::string> cve;
    std::size_t top_k = 10;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> provider_url;
    bool offline = false;
};

/// Applies flag overrides to a loaded config.
void apply_overrides(PipelineConfig& config, const RunOptions& options);

inline const std::vector<std::string> kStages = {"ingest", "index", "embed", "prerank", "featurize",
                                                 "train", "rank", "eval", "trace"};

/// Runs one stage, writing artifacts under output_dir/<stage>/ plus a
/// manifest with SHA-256 digests of inputs and outputs. Human-readable
/// results (eval table, trace table) go to `out`.
void run_stage(const std::string& stage, const PipelineConfig& config, const RunOptions& options, std::ostream& out);

struct TraceRow {
    std::size_t rank = 0;
    std::string commit_id;
    double score = 0.0;
    std::size_t prerank_rank = 0;
    bool known_patch = false;
    std::string subject;
};

struct TraceResult {
    std::string cve_id;
    std::string repo_id;
    bool model_from_artifact = false;
    std::vector<TraceRow> rows;
};

/// All stages in memory for one CVE. Uses the trained model artifact when
/// present, otherwise trains on every other CVE with a known patch.
TraceResult trace_cve(const PipelineConfig& config, const std::string& cve_id, std::size_t top_k);
std::string format_trace(const TraceResult& result);

std::string sha256_file(const std::filesystem::path& path);

/// File-name-safe, collision-free form of a repository id.
std::string repo_file_stem(const std::string& repo_id);

}  // namespace patchtrace
