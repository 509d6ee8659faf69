// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "patchtrace/corpus.hpp"
#include "patchtrace/embedding.hpp"
#include "patchtrace/pipeline.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitMissingArtifact = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Rank repository commits by how likely they are to patch a CVE."};
    app.require_subcommand(1, 1);

    std::string config_path = "patchtrace.json";
    patchtrace::RunOptions options;
    std::string repo, cve, provider_url;
    std::uint64_t seed = 0;
    bool verbose = false;

    for (const auto& name : patchtrace::kStages) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "Pipeline config (JSON)")->capture_default_str();
        sub->add_option("--repo", repo, "Restrict the stage to one repository");
        sub->add_option("--cve", cve, "CVE id (required for trace)");
        sub->add_option("--top-k", options.top_k, "Rows printed by trace")->capture_default_str();
        sub->add_option("--seed", seed, "Override the config seed");
        sub->add_option("--provider-url", provider_url, "Embedding server base URL");
        sub->add_flag("--offline", options.offline, "Use the deterministic offline embedder");
        sub->add_flag("-v,--verbose", verbose, "Debug logging");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
    spdlog::set_pattern("%^%l%$: %v");
    const std::string stage = app.get_subcommands().front()->get_name();
    auto* sub = app.get_subcommands().front();
    if (!repo.empty()) options.repo = repo;
    if (!cve.empty()) options.cve = cve;
    if (!provider_url.empty()) options.provider_url = provider_url;
    if (sub->count("--seed") > 0) options.seed = seed;

    try {
        auto config = patchtrace::PipelineConfig::load(config_path);
        patchtrace::apply_overrides(config, options);
        patchtrace::run_stage(stage, config, options, std::cout);
        return 0;
    } catch (const patchtrace::ConfigError& e) {
        spdlog::error("config: {}", e.what());
        return kExitConfig;
    } catch (const patchtrace::MissingArtifactError& e) {
        spdlog::error("{}", e.what());
        return kExitMissingArtifact;
    } catch (const patchtrace::EmbeddingError& e) {
        spdlog::error("{}: {} (after {} attempt(s))", stage, e.what(), e.attempts());
        return kExitRuntime;
    } catch (const std::exception& e) {
        spdlog::error("{}: {}", stage, e.what());
        return kExitRuntime;
    }
}
