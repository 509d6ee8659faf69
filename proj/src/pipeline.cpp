// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "random.hpp"

namespace patchtrace {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

MissingArtifactError::MissingArtifactError(std::string stage, const fs::path& artifact)
    : std::runtime_error(fmt::format("stage '{}': missing upstream artifact {}", stage, artifact.string())),
      stage_(std::move(stage)) {}

namespace {

// Strict reader over one JSON object: every key must be consumed.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(fmt::format("{}: expected an object", where_));
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(fmt::format("{}.{}: wrong type", where_, key));
        }
    }

    template <typename Fn>
    void object(const char* key, Fn&& fn) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        ObjectReader sub(j_.at(key), where_ + "." + key);
        fn(sub);
        sub.finish();
    }

    bool has(const char* key) const { return j_.contains(key); }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.contains(k)) throw ConfigError(fmt::format("{}: unknown key \"{}\"", where_, k));
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string, std::less<>> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

// Artifact locations under the output directory.
struct Layout {
    fs::path root;

    fs::path dir(const std::string& stage) const { return root / stage; }
    fs::path commits() const { return root / "ingest" / "commits.jsonl"; }
    fs::path cves() const { return root / "ingest" / "cves.jsonl"; }
    fs::path index(const std::string& repo, FieldKind kind) const {
        return root / "index" / fmt::format("{}.{}.bm25", repo_file_stem(repo), to_string(kind));
    }
    fs::path vectors(const std::string& repo) const { return root / "embed" / (repo_file_stem(repo) + ".vec"); }
    fs::path entities() const { return root / "embed" / "entities.jsonl"; }
    fs::path prerank() const { return root / "prerank" / "candidates.jsonl"; }
    fs::path split() const { return root / "featurize" / "split.json"; }
    fs::path training() const { return root / "featurize" / "training.jsonl"; }
    fs::path features() const { return root / "featurize" / "features.jsonl"; }
    fs::path model() const { return root / "train" / "model.json"; }
    fs::path rankings() const { return root / "rank" / "rankings.jsonl"; }
    fs::path report_json() const { return root / "eval" / "report.json"; }
    fs::path report_txt() const { return root / "eval" / "report.txt"; }
    fs::path baseline_json() const { return root / "eval" / "prerank_report.json"; }
};

void require(const std::string& stage, const fs::path& artifact) {
    if (!fs::exists(artifact)) throw MissingArtifactError(stage, artifact);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out << text;
}

void write_manifest(const Layout& layout, const std::string& stage, const PipelineConfig& config,
                    const RunOptions& options, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
    auto digests = [&](const std::vector<fs::path>& files) {
        std::map<std::string, std::string> m;
        for (const auto& f : files) {
            auto rel = fs::proximate(f, layout.root).generic_string();
            if (rel.starts_with("..")) rel = f.filename().string();  // external inputs: name only
            m[rel] = sha256_file(f);
        }
        return m;
    };
    ordered_json j;
    j["stage"] = stage;
    j["format_version"] = 1;
    j["repo_filter"] = options.repo ? json(*options.repo) : json(nullptr);
    j["settings"] = config.settings_json();
    j["inputs"] = digests(inputs);
    j["outputs"] = digests(outputs);
    write_text(layout.dir(stage) / "manifest.json", j.dump(2) + "\n");
}

std::unique_ptr<EmbeddingProvider> make_provider(const PipelineConfig& config) {
    const auto& p = config.provider;
    if (p.offline) return std::make_unique<OfflineEmbedder>(p.dimension);
    std::optional<std::string> token;
    if (const char* t = std::getenv(kProviderTokenEnv); t && *t) token = t;
    RetryPolicy retry;
    retry.max_attempts = p.max_attempts;
    return std::make_unique<HttpEmbeddingProvider>(p.url, p.model, token, retry, p.batch_size,
                                                   std::chrono::seconds(p.timeout_seconds));
}

std::unique_ptr<EntityExtractor> make_extractor(const PipelineConfig& config) {
    if (config.entity_cache) return std::make_unique<CachedEntityExtractor>(*config.entity_cache);
    return std::make_unique<RuleBasedExtractor>();
}

struct Ingested {
    std::vector<Corpus> corpora;
    std::vector<CveRecord> cves;

    const Corpus* corpus(const std::string& repo) const {
        for (const auto& c : corpora) {
            if (c.repo_id() == repo) return &c;
        }
        return nullptr;
    }
    std::vector<const CveRecord*> cves_of(const std::string& repo) const {
        std::vector<const CveRecord*> out;
        for (const auto& c : cves) {
            if (c.repo_id == repo) out.push_back(&c);
        }
        return out;
    }
};

void filter_repo(Ingested& data, const std::optional<std::string>& repo) {
    if (!repo) return;
    std::erase_if(data.corpora, [&](const Corpus& c) { return c.repo_id() != *repo; });
    if (data.corpora.empty()) throw ConfigError(fmt::format("repository '{}' is not in the commit dump", *repo));
    std::erase_if(data.cves, [&](const CveRecord& c) { return c.repo_id != *repo; });
}

// Reads raw dumps, keeps CVEs whose repository is present, checks ground truth.
Ingested ingest_raw(const PipelineConfig& config, const std::optional<std::string>& repo) {
    Ingested data;
    data.corpora = ingest_commit_dumps(config.commits);
    data.cves = ingest_cve_dump(config.cves);
    filter_repo(data, repo);
    std::vector<CveRecord> kept;
    for (auto& cve : data.cves) {
        const Corpus* corpus = data.corpus(cve.repo_id);
        if (!corpus) {
            spdlog::warn("{}: repository '{}' not in the commit dump, dropped", cve.cve_id, cve.repo_id);
            continue;
        }
        validate_cve_against(cve, *corpus);
        kept.push_back(std::move(cve));
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.cve_id < b.cve_id; });
    data.cves = std::move(kept);
    return data;
}

Ingested load_ingested(const Layout& layout, const std::string& stage, const RunOptions& options) {
    require(stage, layout.commits());
    require(stage, layout.cves());
    Ingested data;
    data.corpora = ingest_commit_dumps(layout.commits());
    data.cves = ingest_cve_dump(layout.cves());
    filter_repo(data, options.repo);
    return data;
}

// Per-repository indexes and vectors, from disk or built in memory.
struct RepoContext {
    const Corpus* corpus = nullptr;
    InvertedIndex msg;
    InvertedIndex diff;
    InvertedIndex file;
    VectorStore store;
    PathSet universe;
    std::optional<PathContents> contents;

    const PathContents* contents_ptr() const { return contents ? &*contents : nullptr; }
};

FeatureConfig feature_config(const PipelineConfig& config, const RepoContext& ctx) {
    FeatureConfig fc;
    fc.path_contents = ctx.contents_ptr();
    fc.hier = config.hier;
    fc.bm25 = config.fusion.bm25;
    fc.per_entity_cap = config.path_search_cap;
    return fc;
}

// Commit path documents and NER path documents for the repo's CVEs.
void embed_path_documents(const Corpus& corpus, const std::vector<const CveRecord*>& cves, const PathSet& universe,
                          VectorStore& store, EmbeddingProvider& provider, EntityExtractor& extractor,
                          std::size_t cap, const PathContents* contents,
                          std::map<std::string, EntitySet>* entities_out) {
    std::set<std::string> texts;
    for (const auto& c : corpus.commits()) {
        auto paths = commit_paths(c);
        if (!paths.empty()) texts.insert(path_document(paths));
    }
    for (const auto* cve : cves) {
        auto ents = extract_entities(cve->cve_id, cve->description, extractor);
        auto paths = search_paths(universe, ents, cap, contents);
        if (!paths.empty()) texts.insert(path_document(paths));
        if (entities_out) (*entities_out)[cve->cve_id] = std::move(ents);
    }
    PathVectorCache cache(provider, store);
    const std::vector<std::string> list(texts.begin(), texts.end());
    cache.prefetch(list);
}

RepoContext build_context(const Corpus& corpus, const std::vector<const CveRecord*>& cves,
                          const PipelineConfig& config, EmbeddingProvider& provider, EntityExtractor& extractor) {
    RepoContext ctx;
    ctx.corpus = &corpus;
    ctx.msg = InvertedIndex::build(corpus, FieldKind::Message);
    ctx.diff = InvertedIndex::build(corpus, FieldKind::Diff);
    ctx.file = InvertedIndex::build(corpus, FieldKind::File);
    std::vector<CveRecord> owned;
    for (const auto* c : cves) owned.push_back(*c);
    ctx.store = build_vectors(corpus, owned, provider, config.budgets);
    ctx.universe = PathSet::from(path_universe(corpus));
    if (config.path_search_contents) ctx.contents = path_contents(corpus);
    embed_path_documents(corpus, cves, ctx.universe, ctx.store, provider, extractor, config.path_search_cap,
                         ctx.contents_ptr(), nullptr);
    return ctx;
}

RepoContext load_context(const Layout& layout, const std::string& stage, const Corpus& corpus, bool with_vectors,
                         bool with_contents) {
    RepoContext ctx;
    ctx.corpus = &corpus;
    const auto& repo = corpus.repo_id();
    for (auto kind : {FieldKind::Message, FieldKind::Diff, FieldKind::File}) require(stage, layout.index(repo, kind));
    ctx.msg = InvertedIndex::load(layout.index(repo, FieldKind::Message));
    ctx.diff = InvertedIndex::load(layout.index(repo, FieldKind::Diff));
    ctx.file = InvertedIndex::load(layout.index(repo, FieldKind::File));
    if (with_vectors) {
        require(stage, layout.vectors(repo));
        ctx.store = VectorStore::load(layout.vectors(repo));
    }
    ctx.universe = PathSet::from(path_universe(corpus));
    if (with_contents) ctx.contents = path_contents(corpus);
    return ctx;
}

std::optional<TrainingGroup> training_group(RepoContext& ctx, const CveRecord& cve,
                                            const std::vector<PrerankCandidate>& candidates,
                                            const PipelineConfig& config, EmbeddingProvider& provider,
                                            EntityExtractor& extractor) {
    PathVectorCache cache(provider, ctx.store);
    CveFeaturizer fz(*ctx.corpus, cve, ctx.diff, ctx.file, ctx.store, cache, ctx.universe, extractor,
                     feature_config(config, ctx));
    return sample_training_group(cve, to_ranked_list(candidates), *ctx.corpus, config.seed, fz, config.sampling);
}

std::vector<FeatureRow> candidate_features(RepoContext& ctx, const CveRecord& cve,
                                           const std::vector<PrerankCandidate>& candidates,
                                           const PipelineConfig& config, EmbeddingProvider& provider,
                                           EntityExtractor& extractor) {
    PathVectorCache cache(provider, ctx.store);
    CveFeaturizer fz(*ctx.corpus, cve, ctx.diff, ctx.file, ctx.store, cache, ctx.universe, extractor,
                     feature_config(config, ctx));
    std::vector<std::string> ids;
    for (const auto& c : candidates) ids.push_back(c.commit_id);
    fz.prefetch(ids);
    std::vector<FeatureRow> rows;
    rows.reserve(ids.size());
    for (const auto& id : ids) rows.push_back(FeatureRow{cve.cve_id, id, fz.features(id)});
    return rows;
}

LambdaRankParams ranker_params(const PipelineConfig& config, std::span<const TrainingGroup> groups) {
    LambdaRankParams p = config.ranker;
    p.seed = config.seed;
    if (config.grid.enabled()) {
        const auto result = grid_search(groups, p, config.grid.learning_rates, config.grid.num_leaves,
                                        config.grid.holdout_fraction);
        spdlog::info("grid search: learning_rate={} num_leaves={} holdout NDCG@{}={:.4f}",
                     result.best.learning_rate, result.best.num_leaves, p.ndcg_at, result.best_holdout_ndcg);
        p = result.best;
    }
    return p;
}

RankModel fit_model(const PipelineConfig& config, const std::vector<TrainingGroup>& groups) {
    if (groups.empty()) throw DataError("no training groups: no training CVE has a known patch in its repository");
    const auto model = train_lambdarank(groups, ranker_params(config, groups));
    int best_feature = -1;
    const double single = best_single_feature_ndcg(groups, config.ranker.ndcg_at, &best_feature);
    spdlog::info("trained {} trees; training NDCG@{} {:.4f} (best single feature {} {:.4f})", model.trees.size(),
                 config.ranker.ndcg_at, model.training_ndcg.empty() ? 0.0 : model.training_ndcg.back(),
                 best_feature >= 0 ? kFeatureNames[static_cast<std::size_t>(best_feature)] : "-", single);
    return model;
}

RelevantSet relevant_of(const CveRecord& cve) { return {cve.known_patch_ids.begin(), cve.known_patch_ids.end()}; }

// ---- stages ----

void stage_ingest(const Layout& layout, const PipelineConfig& config, const RunOptions& options) {
    const auto data = ingest_raw(config, options.repo);
    fs::create_directories(layout.dir("ingest"));
    write_commit_dump(data.corpora, layout.commits());
    write_cve_dump(data.cves, layout.cves());
    std::size_t commits = 0;
    for (const auto& c : data.corpora) commits += c.size();
    spdlog::info("ingest: {} repositories, {} commits, {} CVEs", data.corpora.size(), commits, data.cves.size());
    write_manifest(layout, "ingest", config, options, {config.commits, config.cves}, {layout.commits(), layout.cves()});
}

void stage_index(const Layout& layout, const PipelineConfig& config, const RunOptions& options) {
    const auto data = load_ingested(layout, "index", options);
    fs::create_directories(layout.dir("index"));
    std::vector<fs::path> outputs;
    for (const auto& corpus : data.corpora) {
        for (auto kind : {FieldKind::Message, FieldKind::Diff, FieldKind::File}) {
            const auto path = layout.index(corpus.repo_id(), kind);
            InvertedIndex::build(corpus, kind).save(path);
            outputs.push_back(path);
        }
    }
    write_manifest(layout, "index", config, options, {layout.commits()}, outputs);
}

void stage_embed(const Layout& layout, const PipelineConfig& config, const RunOptions& options) {
    const auto data = load_ingested(layout, "embed", options);
    fs::create_directories(layout.dir("embed"));
    auto provider = make_provider(config);
    auto extractor = make_extractor(config);
    std::map<std::string, EntitySet> entities;
    std::vector<fs::path> outputs;
    for (const auto& corpus : data.corpora) {
        const auto cves = data.cves_of(corpus.repo_id());
        std::vector<CveRecord> owned;
        for (const auto* c : cves) owned.push_back(*c);
        auto store = build_vectors(corpus, owned, *provider, config.budgets);
        const auto universe = PathSet::from(path_universe(corpus));
        std::optional<PathContents> contents;
        if (config.path_search_contents) contents = path_contents(corpus);
        embed_path_documents(corpus, cves, universe, store, *provider, *extractor, config.path_search_cap,
                             contents ? &*contents : nullptr, &entities);
        store.save(layout.vectors(corpus.repo_id()));
        outputs.push_back(layout.vectors(corpus.repo_id()));
        spdlog::info("embed: {} vectors for {}", store.size(), corpus.repo_id());
    }
    write_entity_cache(entities, layout.entities());
    outputs.push_back(layout.entities());
    std::vector<fs::path> inputs{layout.commits(), layout.cves()};
    if (config.entity_cache) inputs.push_back(*config.entity_cache);
    write_manifest(layout, "embed", config, options, inputs, outputs);
}

void stage_prerank(const Layout& layout, const PipelineConfig& config, const RunOptions& options) {
    const auto data = load_ingested(layout, "prerank", options);
    fs::create_directories(layout.dir("prerank"));
    PrerankTable table;
    std::vector<fs::path> inputs{layout.commits(), layout.cves()};
    for (const auto& corpus : data.corpora) {
        const auto cves = data.cves_of(corpus.repo_id());
        if (cves.empty()) continue;
        const auto ctx = load_context(layout, "prerank", corpus, false, false);
        inputs.push_back(layout.index(corpus.repo_id(), FieldKind::Message));
        inputs.push_back(layout.index(corpus.repo_id(), FieldKind::Diff));
        for (const auto* cve : cves) table[cve->cve_id] = prerank_detailed(corpus, *cve, ctx.msg, ctx.diff, config.fusion);
    }
    write_prerank(table, layout.prerank());
    write_manifest(layout, "prerank", config, options, inputs, {layout.prerank()});
}

RepoMetrics prerank_repo_metrics(const std::vector<const CveRecord*>& cves, const PrerankTable& table) {
    RepoMetrics m;
    std::size_t n = 0;
    for (const auto* cve : cves) {
        if (cve->known_patch_ids.empty()) continue;
        auto it = table.find(cve->cve_id);
        if (it == table.end()) continue;
        const auto ranked = to_ranked_list(it->second);
        const auto rel = relevant_of(*cve);
        m.mrr += mrr(ranked, rel);
        m.recall_100 += recall_at_k(ranked, rel, 100);
        m.recall_500 += recall_at_k(ranked, rel, 500);
        m.recall_1000 += recall_at_k(ranked, rel, 1000);
        ++n;
    }
    if (n) {
        const auto d = static_cast<double>(n);
        m.mrr /= d;
        m.recall_100 /= d;
        m.recall_500 /= d;
        m.recall_1000 /= d;
    }
    return m;
}

void stage_featurize(const Layout& layout, const PipelineConfig& config, const RunOptions& options) {
    const auto data = load_ingested(layout, "featurize", options);
    require("featurize", layout.prerank());
    const auto table = read_prerank(layout.prerank());
    fs::create_directories(layout.dir("featurize"));

    std::vector<RepoSummary> summaries;
    ordered_json repos_json = ordered_json::array();
    for (const auto& corpus : data.corpora) {
        const auto cves = data.cves_of(corpus.repo_id());
        RepoSummary s;
        s.repo_id = corpus.repo_id();
        s.cve_count = static_cast<std::size_t>(
            std::count_if(cves.begin(), cves.end(), [](const CveRecord* c) { return !c->known_patch_ids.empty(); }));
        s.difficulty = difficulty(prerank_repo_metrics(cves, table), corpus.size());
        summaries.push_back(s);
        repos_json.push_back({{"repo_id", s.repo_id},
                              {"commits", corpus.size()},
                              {"cves", s.cve_count},
                              {"difficulty", s.difficulty.d},
                              {"adjusted_difficulty", s.difficulty.adjusted}});
    }
    RepoSplit split;
    if (!config.split.test_repos.empty()) {
        for (const auto& s : summaries) {
            const bool test = std::find(config.split.test_repos.begin(), config.split.test_repos.end(), s.repo_id) !=
                              config.split.test_repos.end();
            (test ? split.test : split.train).push_back(s.repo_id);
        }
        for (const auto& r : config.split.test_repos) {
            if (!data.corpus(r)) throw ConfigError(fmt::format("split.test_repos: unknown repository '{}'", r));
        }
    } else {
        if (summaries.size() < 2)
            throw ConfigError("a repository split needs at least two repositories, or set split.test_repos");
        split = split_by_repo(summaries, config.split.test_fraction, config.seed);
    }
    ordered_json split_json;
    split_json["train"] = split.train;
    split_json["test"] = split.test;
    split_json["repos"] = repos_json;
    write_text(layout.split(), split_json.dump(2) + "\n");

    auto provider = make_provider(config);
    auto extractor = make_extractor(config);
    std::vector<TrainingGroup> groups;
    std::vector<FeatureRow> rows;
    std::vector<fs::path> inputs{layout.commits(), layout.cves(), layout.prerank()};
    const std::set<std::string> test_set(split.test.begin(), split.test.end());
    for (const auto& corpus : data.corpora) {
        const auto cves = data.cves_of(corpus.repo_id());
        if (cves.empty()) continue;
        auto ctx = load_context(layout, "featurize", corpus, true, config.path_search_contents);
        inputs.push_back(layout.index(corpus.repo_id(), FieldKind::Diff));
        inputs.push_back(layout.index(corpus.repo_id(), FieldKind::File));
        inputs.push_back(layout.vectors(corpus.repo_id()));
        const bool is_test = test_set.contains(corpus.repo_id());
        for (const auto* cve : cves) {
            auto it = table.find(cve->cve_id);
            if (it == table.end()) throw MissingArtifactError("featurize", layout.prerank());
            if (is_test) {
                auto r = candidate_features(ctx, *cve, it->second, config, *provider, *extractor);
                rows.insert(rows.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
            } else if (auto g = training_group(ctx, *cve, it->second, config, *provider, *extractor)) {
                groups.push_back(std::move(*g));
            }
        }
    }
    write_training_groups(groups, layout.training());
    write_feature_rows(rows, layout.features());
    spdlog::info("featurize: {} training groups, {} candidate rows", groups.size(), rows.size());
    write_manifest(layout, "featurize", config, options, inputs, {layout.split(), layout.training(), layout.features()});
}

void stage_train(const Layout& layout, const PipelineConfig& config, const RunOptions& options) {
    require("train", layout.training());
    const auto groups = read_training_groups(layout.training());
    fs::create_directories(layout.dir("train"));
    fit_model(config, groups).save(layout.model());
    write_manifest(layout, "train", config, options, {layout.training()}, {layout.model()});
}

void stage_rank(const Layout& layout, const PipelineConfig& config, const RunOptions& options) {
    require("rank", layout.model());
    require("rank", layout.features());
    require("rank", layout.prerank());
    const auto model = RankModel::load(layout.model());
    const auto prerank = read_prerank(layout.prerank());
    std::map<std::string, std::unordered_map<std::string, FeatureVector>> features;
    for (auto& row : read_feature_rows(layout.features())) features[row.cve_id][row.commit_id] = row.features;
    RankingTable rankings;
    for (const auto& [cve, rows] : features) {
        auto it = prerank.find(cve);
        if (it == prerank.end()) throw DataError(fmt::format("{}: features without prerank candidates", cve));
        rankings[cve] = score_and_rerank(model, to_ranked_list(it->second), rows);
    }
    fs::create_directories(layout.dir("rank"));
    write_rankings(rankings, layout.rankings());
    write_manifest(layout, "rank", config, options, {layout.model(), layout.features(), layout.prerank()},
                   {layout.rankings()});
}

void stage_eval(const Layout& layout, const PipelineConfig& config, const RunOptions& options, std::ostream& out) {
    require("eval", layout.rankings());
    require("eval", layout.cves());
    const auto rankings = read_rankings(layout.rankings());
    auto cves = ingest_cve_dump(layout.cves());
    std::map<std::string, RelevantSet> relevant;
    for (const auto& cve : cves) {
        if (rankings.contains(cve.cve_id) && !cve.known_patch_ids.empty()) relevant[cve.cve_id] = relevant_of(cve);
    }
    const auto report = evaluate(rankings, relevant);
    fs::create_directories(layout.dir("eval"));
    write_text(layout.report_json(), report.to_json());
    write_text(layout.report_txt(), report.to_table());
    std::vector<fs::path> inputs{layout.rankings(), layout.cves()};
    std::vector<fs::path> outputs{layout.report_json(), layout.report_txt()};
    out << report.to_table();
    if (fs::exists(layout.prerank())) {
        std::map<std::string, RankedList> base;
        for (const auto& [cve, cands] : read_prerank(layout.prerank())) {
            if (relevant.contains(cve)) base[cve] = to_ranked_list(cands);
        }
        const auto baseline = evaluate(base, relevant);
        write_text(layout.baseline_json(), baseline.to_json());
        inputs.push_back(layout.prerank());
        outputs.push_back(layout.baseline_json());
        out << fmt::format("\nprerank baseline: mrr {:.4f}  R@10 {:.4f}  R@100 {:.4f}\n", baseline.macro.mrr,
                           baseline.macro.recall.at(10), baseline.macro.recall.at(100));
    }
    write_manifest(layout, "eval", config, options, inputs, outputs);
}

}  // namespace

// ---- config ----

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
    PipelineConfig c;
    ObjectReader r(j, "config");
    std::string commits, cves, output_dir = c.output_dir.string(), entity_cache;
    r.get("commits", commits);
    r.get("cves", cves);
    r.get("output_dir", output_dir);
    r.get("entity_cache", entity_cache);
    if (commits.empty()) throw ConfigError("config.commits is required");
    if (cves.empty()) throw ConfigError("config.cves is required");
    c.commits = resolve(base_dir, commits);
    c.cves = resolve(base_dir, cves);
    c.output_dir = resolve(base_dir, output_dir);
    if (!entity_cache.empty()) c.entity_cache = resolve(base_dir, entity_cache);
    r.object("provider", [&](ObjectReader& p) {
        p.get("offline", c.provider.offline);
        p.get("url", c.provider.url);
        p.get("model", c.provider.model);
        p.get("dimension", c.provider.dimension);
        p.get("batch_size", c.provider.batch_size);
        p.get("timeout_seconds", c.provider.timeout_seconds);
        p.get("max_attempts", c.provider.max_attempts);
    });
    r.object("fusion", [&](ObjectReader& f) {
        f.get("weights", c.fusion.weights);
        f.get("candidate_k", c.fusion.candidate_k);
    });
    r.object("bm25", [&](ObjectReader& b) {
        b.get("k1", c.fusion.bm25.k1);
        b.get("b", c.fusion.bm25.b);
    });
    c.hier.bm25 = c.fusion.bm25;
    r.object("budgets", [&](ObjectReader& b) {
        b.get("commit_tokens", c.budgets.commit_tokens);
        b.get("file_tokens", c.budgets.file_tokens);
    });
    r.object("hier", [&](ObjectReader& h) {
        h.get("max_sim_files", c.hier.max_sim_files);
        h.get("mean_files", c.hier.mean_files);
    });
    r.get("path_search_cap", c.path_search_cap);
    r.get("path_search_contents", c.path_search_contents);
    r.object("sampling", [&](ObjectReader& s) {
        s.get("hard_negatives", c.sampling.hard_negatives);
        s.get("random_negatives", c.sampling.random_negatives);
    });
    r.object("ranker", [&](ObjectReader& k) {
        k.get("learning_rate", c.ranker.learning_rate);
        k.get("num_leaves", c.ranker.num_leaves);
        k.get("min_data_in_leaf", c.ranker.min_data_in_leaf);
        k.get("num_trees", c.ranker.num_trees);
        k.get("early_stopping_patience", c.ranker.early_stopping_patience);
        k.get("max_bin", c.ranker.max_bin);
        k.get("lambda_l2", c.ranker.lambda_l2);
        k.get("feature_fraction", c.ranker.feature_fraction);
        k.get("init_from_best_feature", c.ranker.init_from_best_feature);
    });
    r.object("grid", [&](ObjectReader& g) {
        g.get("learning_rates", c.grid.learning_rates);
        g.get("num_leaves", c.grid.num_leaves);
        g.get("holdout_fraction", c.grid.holdout_fraction);
    });
    r.object("split", [&](ObjectReader& s) {
        s.get("test_fraction", c.split.test_fraction);
        s.get("test_repos", c.split.test_repos);
    });
    r.get("seed", c.seed);
    r.finish();
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
    }
    return from_json(j, path.parent_path());
}

void PipelineConfig::validate() const {
    try {
        fusion.validate();
        ranker.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (budgets.commit_tokens == 0 || budgets.file_tokens == 0) throw ConfigError("token budgets must be >= 1");
    if (hier.max_sim_files == 0 || hier.mean_files == 0) throw ConfigError("hier file counts must be >= 1");
    if (path_search_cap == 0) throw ConfigError("path_search_cap must be >= 1");
    if (provider.offline) {
        if (provider.dimension < 8) throw ConfigError("provider.dimension must be >= 8");
    } else if (provider.url.empty()) {
        throw ConfigError("provider.url is required unless provider.offline is true");
    }
    if (provider.batch_size == 0) throw ConfigError("provider.batch_size must be >= 1");
    if (provider.timeout_seconds <= 0) throw ConfigError("provider.timeout_seconds must be > 0");
    if (provider.max_attempts < 1) throw ConfigError("provider.max_attempts must be >= 1");
    if (!(split.test_fraction > 0.0 && split.test_fraction < 1.0))
        throw ConfigError("split.test_fraction must be in (0, 1)");
    if (!(grid.holdout_fraction > 0.0 && grid.holdout_fraction < 1.0))
        throw ConfigError("grid.holdout_fraction must be in (0, 1)");
    for (double lr : grid.learning_rates) {
        if (!(lr > 0.0)) throw ConfigError("grid.learning_rates must be > 0");
    }
    for (int l : grid.num_leaves) {
        if (l < 2) throw ConfigError("grid.num_leaves must be >= 2");
    }
}

json PipelineConfig::settings_json() const {
    ordered_json j;
    j["provider"] = {{"offline", provider.offline},
                     {"model", provider.offline ? fmt::format("offline-hash-{}", provider.dimension) : provider.model}};
    j["fusion"] = {{"weights", fusion.weights}, {"candidate_k", fusion.candidate_k}};
    j["bm25"] = {{"k1", fusion.bm25.k1}, {"b", fusion.bm25.b}};
    j["budgets"] = {{"commit_tokens", budgets.commit_tokens}, {"file_tokens", budgets.file_tokens}};
    j["hier"] = {{"max_sim_files", hier.max_sim_files}, {"mean_files", hier.mean_files}};
    j["path_search_cap"] = path_search_cap;
    j["path_search_contents"] = path_search_contents;
    j["entity_source"] = entity_cache ? "cache" : "rules";
    j["sampling"] = {{"hard_negatives", sampling.hard_negatives}, {"random_negatives", sampling.random_negatives}};
    j["ranker"] = {{"learning_rate", ranker.learning_rate},
                   {"num_leaves", ranker.num_leaves},
                   {"min_data_in_leaf", ranker.min_data_in_leaf},
                   {"num_trees", ranker.num_trees},
                   {"early_stopping_patience", ranker.early_stopping_patience},
                   {"max_bin", ranker.max_bin},
                   {"lambda_l2", ranker.lambda_l2},
                   {"feature_fraction", ranker.feature_fraction},
                   {"init_from_best_feature", ranker.init_from_best_feature}};
    j["grid"] = {{"learning_rates", grid.learning_rates},
                 {"num_leaves", grid.num_leaves},
                 {"holdout_fraction", grid.holdout_fraction}};
    j["split"] = {{"test_fraction", split.test_fraction}, {"test_repos", split.test_repos}};
    j["seed"] = seed;
    return json::parse(j.dump());
}

void apply_overrides(PipelineConfig& config, const RunOptions& options) {
    if (options.seed) config.seed = *options.seed;
    if (options.provider_url) {
        config.provider.url = *options.provider_url;
        config.provider.offline = false;
    }
    if (options.offline) config.provider.offline = true;
    config.validate();
}

void run_stage(const std::string& stage, const PipelineConfig& config, const RunOptions& options, std::ostream& out) {
    const Layout layout{config.output_dir};
    if (stage == "ingest") {
        stage_ingest(layout, config, options);
    } else if (stage == "index") {
        stage_index(layout, config, options);
    } else if (stage == "embed") {
        stage_embed(layout, config, options);
    } else if (stage == "prerank") {
        stage_prerank(layout, config, options);
    } else if (stage == "featurize") {
        stage_featurize(layout, config, options);
    } else if (stage == "train") {
        stage_train(layout, config, options);
    } else if (stage == "rank") {
        stage_rank(layout, config, options);
    } else if (stage == "eval") {
        stage_eval(layout, config, options, out);
    } else if (stage == "trace") {
        if (!options.cve) throw ConfigError("trace needs --cve");
        out << format_trace(trace_cve(config, *options.cve, options.top_k));
    } else {
        throw ConfigError(fmt::format("unknown stage '{}'", stage));
    }
}

// ---- trace ----

TraceResult trace_cve(const PipelineConfig& config, const std::string& cve_id, std::size_t top_k) {
    const Layout layout{config.output_dir};
    const auto data = ingest_raw(config, std::nullopt);
    auto target = std::find_if(data.cves.begin(), data.cves.end(), [&](const auto& c) { return c.cve_id == cve_id; });
    if (target == data.cves.end()) throw DataError(fmt::format("{} is not in the CVE dump", cve_id));

    auto provider = make_provider(config);
    auto extractor = make_extractor(config);
    TraceResult result;
    result.cve_id = cve_id;
    result.repo_id = target->repo_id;

    std::map<std::string, RepoContext> contexts;
    auto context = [&](const Corpus& corpus) -> RepoContext& {
        auto it = contexts.find(corpus.repo_id());
        if (it == contexts.end()) {
            it = contexts.emplace(corpus.repo_id(), build_context(corpus, data.cves_of(corpus.repo_id()), config,
                                                                  *provider, *extractor))
                     .first;
        }
        return it->second;
    };

    RankModel model;
    if (fs::exists(layout.model())) {
        model = RankModel::load(layout.model());
        result.model_from_artifact = true;
    } else {
        std::vector<TrainingGroup> groups;
        for (const auto& cve : data.cves) {
            if (cve.cve_id == cve_id || cve.known_patch_ids.empty()) continue;
            auto& ctx = context(*data.corpus(cve.repo_id));
            const auto cands = prerank_detailed(*ctx.corpus, cve, ctx.msg, ctx.diff, config.fusion);
            if (auto g = training_group(ctx, cve, cands, config, *provider, *extractor)) groups.push_back(std::move(*g));
        }
        model = fit_model(config, groups);
    }

    auto& ctx = context(*data.corpus(target->repo_id));
    const auto cands = prerank_detailed(*ctx.corpus, *target, ctx.msg, ctx.diff, config.fusion);
    std::unordered_map<std::string, FeatureVector> features;
    for (auto& row : candidate_features(ctx, *target, cands, config, *provider, *extractor))
        features.emplace(row.commit_id, row.features);
    const auto ranked = score_and_rerank(model, to_ranked_list(cands), features);
    std::unordered_map<std::string, std::size_t> prerank_pos;
    for (std::size_t i = 0; i < cands.size(); ++i) prerank_pos[cands[i].commit_id] = i + 1;
    const auto rel = relevant_of(*target);
    for (std::size_t i = 0; i < ranked.size() && i < top_k; ++i) {
        const auto& commit = ctx.corpus->get(ranked[i].doc_id);
        TraceRow row;
        row.rank = i + 1;
        row.commit_id = ranked[i].doc_id;
        row.score = ranked[i].score;
        row.prerank_rank = prerank_pos.at(ranked[i].doc_id);
        row.known_patch = rel.contains(ranked[i].doc_id);
        row.subject = commit.message.substr(0, commit.message.find('\n'));
        result.rows.push_back(std::move(row));
    }
    return result;
}

std::string format_trace(const TraceResult& r) {
    std::string out = fmt::format("{} in {} (model: {})\n", r.cve_id, r.repo_id,
                                  r.model_from_artifact ? "trained artifact" : "trained on other CVEs");
    out += fmt::format("{:>4}  {:<40}  {:>10}  {:>7}  {}\n", "rank", "commit", "score", "prerank", "subject");
    for (const auto& row : r.rows) {
        std::string subject = row.subject.size() > 60 ? row.subject.substr(0, 57) + "..." : row.subject;
        out += fmt::format("{:>4}  {:<40}  {:>10.5f}  {:>7}  {}{}\n", row.rank, row.commit_id, row.score,
                           row.prerank_rank, row.known_patch ? "* " : "", subject);
    }
    return out;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    std::string hex;
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
    return hex;
}

std::string repo_file_stem(const std::string& repo_id) {
    std::string s;
    for (char ch : repo_id) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '-' ||
                        ch == '_' || ch == '.';
        s += ok ? ch : '_';
    }
    return fmt::format("{}-{:08x}", s, static_cast<std::uint32_t>(detail::hash_string(repo_id)));
}

}  // namespace patchtrace
