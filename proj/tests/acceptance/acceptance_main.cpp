// SPDX-License-Identifier: Apache-2.0

// Property-based acceptance suite. Prints one PASS/FAIL line per criterion
// and exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "fixtures.hpp"
#include "metric_cases.hpp"
#include "oracles.hpp"
#include "patchtrace/evalkit.hpp"
#include "patchtrace/hier_features.hpp"
#include "patchtrace/lambdarank.hpp"
#include "patchtrace/lexical_index.hpp"
#include "patchtrace/path_features.hpp"
#include "patchtrace/pipeline.hpp"
#include "patchtrace/prerank.hpp"
#include "patchtrace/tokenizer.hpp"
#include "rank_data.hpp"
#include "synthetic.hpp"

using namespace patchtrace;
namespace fs = std::filesystem;
namespace pt = patchtrace::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

Outcome metric_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto c = pt::random_metric_case(rng);
        const auto ranked = c.as_ranked_list();
        const auto rel = c.as_relevant_set();
        worst = std::max(worst, std::abs(mrr(ranked, rel) - oracle::mrr(c.ranked, c.relevant)));
        worst = std::max(worst, std::abs(recall_at_k(ranked, rel, c.k) - oracle::recall(c.ranked, c.relevant, c.k)));
        worst = std::max(worst, std::abs(ndcg_at_k(ranked, rel, c.k) - oracle::ndcg(c.ranked, c.relevant, c.k)));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-9 && secs < 10.0, fmt::format("1000 cases, max |diff| {:.3g}, {:.2f} s", worst, secs)};
}

Outcome bm25_oracle() {
    std::mt19937_64 rng(11);
    const std::vector<std::string> vocab = {"heap",  "overflow", "parser", "nio2",   "readBuffer", "ssl_ctx",
                                            "frame", "header",   "bounds", "socket", "chunk",      "decoder",
                                            "tls",   "packet",   "loop",   "cache",  "token",      "session"};
    std::vector<CommitRecord> commits;
    std::vector<std::vector<std::string>> docs;
    for (int d = 0; d < 50; ++d) {
        std::string msg;
        for (std::size_t w = 0; w < 2 + rng() % 20; ++w) msg += vocab[rng() % vocab.size()] + " ";
        commits.push_back(CommitRecord{pt::random_commit_id(rng), "r", d, msg, {}});
        docs.push_back(tokenize(msg));
    }
    const Corpus corpus("r", commits);
    const auto index = InvertedIndex::build(corpus, FieldKind::Message);
    double worst = 0.0;
    bool same_order = true;
    for (int q = 0; q < 20; ++q) {
        std::string text;
        for (std::size_t w = 0; w < 1 + rng() % 4; ++w) text += vocab[rng() % vocab.size()] + " ";
        const auto want = oracle::bm25(docs, tokenize(text));
        const auto got = index.score_all(make_query(text));
        for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));

        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < want.size(); ++i)
            if (want[i] > 0) order.push_back(i);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (want[a] != want[b]) return want[a] > want[b];
            return commits[a].commit_id < commits[b].commit_id;
        });
        const auto list = query(index, text, 50);
        if (list.size() != order.size()) same_order = false;
        for (std::size_t r = 0; same_order && r < order.size(); ++r)
            same_order = list[r].doc_id == commits[order[r]].commit_id;
    }
    return {worst <= 1e-6 && same_order,
            fmt::format("50 docs x 20 queries, max |diff| {:.3g}, orderings {}", worst,
                        same_order ? "identical" : "differ")};
}

Outcome fusion() {
    const auto f = pt::fusion_fixture();
    const InvertedIndex msg = InvertedIndex::build(f.corpus, FieldKind::Message);
    const InvertedIndex diff = InvertedIndex::build(f.corpus, FieldKind::Diff);
    FusionConfig config;
    config.weights = {0.35, 0.15, 0.3, 0.2};
    const auto got = prerank_candidates(f.corpus, f.cve, msg, diff, config);
    bool ok = got.size() == f.expected_order.size();
    double worst = 0.0;
    for (std::size_t i = 0; ok && i < got.size(); ++i) {
        ok = got[i].doc_id == f.expected_order[i];
        worst = std::max(worst, std::abs(got[i].score - f.expected_scores[i]));
    }
    return {ok && worst <= 1e-12, fmt::format("order {}, max score |diff| {:.3g}", ok ? "A C B D" : "wrong", worst)};
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

PipelineConfig synthetic_config(const fs::path& data_dir, const fs::path& out_dir, bool trees_only = false) {
    PipelineConfig c;
    c.ranker.init_from_best_feature = !trees_only;
    if (trees_only) c.ranker.min_data_in_leaf = 2;
    c.commits = data_dir / "commits.jsonl";
    c.cves = data_dir / "cves.jsonl";
    c.output_dir = out_dir;
    c.seed = 1;
    return c;
}

void run_stages(const PipelineConfig& config, const std::vector<std::string>& stages) {
    std::ostringstream sink;
    for (const auto& s : stages) run_stage(s, config, RunOptions{}, sink);
}

Outcome end_to_end() {
    const auto t0 = Clock::now();
    const auto dir = pt::scratch_dir("acceptance_e2e");
    const auto data = pt::make_planted_corpus();
    pt::write_synthetic(data, dir);
    const auto config = synthetic_config(dir, dir / "out");
    run_stages(config, {"ingest", "index", "embed", "prerank", "featurize", "train", "rank", "eval"});
    const double secs = seconds_since(t0);

    const auto report = nlohmann::json::parse(read_text(dir / "out/eval/report.json"));
    const double r10 = report.at("macro").at("recall@10").get<double>();
    const auto tested = report.at("cve_count").get<std::size_t>();

    // Prerank recall over every CVE, not only the held-out ones.
    const auto table = read_prerank(dir / "out/prerank/candidates.jsonl");
    double pre_sum = 0.0;
    std::size_t commits = 0;
    for (const auto& c : data.corpora) commits += c.size();
    for (const auto& cve : data.cves) {
        auto it = table.find(cve.cve_id);
        if (it == table.end()) continue;
        pre_sum += recall_at_k(to_ranked_list(it->second),
                               RelevantSet(cve.known_patch_ids.begin(), cve.known_patch_ids.end()), 100);
    }
    const double pre_r100 = pre_sum / static_cast<double>(data.cves.size());
    return {r10 >= 0.9 && pre_r100 == 1.0 && secs < 60.0,
            fmt::format("{} commits, {} CVEs: reranked R@10 {:.3f} on {} held-out CVEs, prerank R@100 {:.3f}, "
                        "{:.1f} s",
                        commits, data.cves.size(), r10, tested, pre_r100, secs)};
}

// One commit with n files; file i holds "overflow" n - i times so BM25 ranks
// the files in order. File vectors lie in the (e0, e1) plane with the given
// cosines to the CVE vector e0.
struct HierCase {
    Corpus corpus;
    CveRecord cve;
    InvertedIndex index;
    VectorStore store;
};

HierCase hier_case(const std::vector<std::vector<double>>& file_vectors) {
    const std::size_t n = file_vectors.size();
    std::string diff;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string path = "src/f" + std::to_string(i) + ".c";
        std::string body;
        for (std::size_t k = 0; k < n - i; ++k) body += "overflow ";
        for (std::size_t k = 0; k < i; ++k) body += "padding ";
        diff += "diff --git a/" + path + " b/" + path + "\n--- a/" + path + "\n+++ b/" + path + "\n@@ -1 +1 @@\n+" +
                body + "\n";
    }
    const std::string id = pt::repeated_id('a');
    HierCase h{Corpus("r", {CommitRecord{id, "r", 1, "fix", split_diff_by_file(diff)}}),
               CveRecord{"CVE-2020-0001", "overflow", {}, {}, "r", {}}, {}, {}};
    h.index = InvertedIndex::build(h.corpus, FieldKind::File);
    const std::size_t dim = file_vectors.front().size();
    h.store.put(StoreKey::cve(h.cve.cve_id), EmbeddingVector::basis(dim, 0));
    h.store.put(StoreKey::commit(id), EmbeddingVector::basis(dim, 0));
    for (std::size_t i = 0; i < n; ++i)
        h.store.put(StoreKey::file(id, "src/f" + std::to_string(i) + ".c"),
                    EmbeddingVector::normalized(std::span<const double>(file_vectors[i])));
    return h;
}

std::vector<double> plane(double c) { return {c, std::sqrt(1.0 - c * c), 0.0, 0.0}; }

Outcome hierarchical() {
    std::vector<std::string> failures;
    {
        auto h = hier_case({plane(0.6)});
        const auto f = compute_hier_features(h.store, h.index, make_query(h.cve.description), h.cve, h.corpus.at(0));
        if (!(f.max_file_sim == f.top1_file_cosine && f.top1_file_cosine == f.mean_top2_cosine &&
              std::abs(f.max_file_sim - 0.6) < 1e-6))
            failures.push_back("single-file equality");
    }
    {
        auto h = hier_case({{1, 0, 0, 0}, {0, 1, 0, 0}, {1, 0, 0, 0}});
        const double got = feature_mean_top2_cosine(h.store, h.index, h.cve, h.corpus.at(0));
        if (std::abs(got - 1.0 / std::sqrt(2.0)) > 1e-9) failures.push_back(fmt::format("1/sqrt2 case gave {}", got));
    }
    {
        auto h = hier_case({plane(0.1), plane(0.2), plane(0.5), plane(0.3), plane(0.4), plane(1.0), plane(0.9)});
        const double got = feature_max_file_sim(h.store, h.index, h.cve, h.corpus.at(0));
        if (std::abs(got - 0.5) > 1e-6) failures.push_back(fmt::format("top-5 exclusion gave {}", got));
    }
    std::string detail = "f2=f3=f4 on one file, mean of orthogonal pair 1/sqrt(2), 6th-ranked file excluded";
    for (const auto& f : failures) detail += "; FAILED " + f;
    return {failures.empty(), detail};
}

Outcome lambdarank() {
    const auto separable = pt::separable_groups(20, 200, 3);
    const auto model = train_lambdarank(separable);
    const double mrr_default = pt::pessimistic_mrr(model, separable);
    LambdaRankParams trees_only;
    trees_only.init_from_best_feature = false;
    const auto tree_model = train_lambdarank(separable, trees_only);
    const double mrr_trees = pt::pessimistic_mrr(tree_model, separable);

    const auto noisy = pt::noisy_groups(50, 200, 0.2, 1);
    const auto noisy_model = train_lambdarank(noisy);
    const double single = best_single_feature_ndcg(noisy);
    const double trained = mean_ndcg(noisy, [&](const FeatureVector& x) { return noisy_model.predict(x); });
    const double gain = trained / single - 1.0;

    LambdaRankParams seeded;
    seeded.seed = 42;
    seeded.feature_fraction = 0.7;
    const bool reproducible = train_lambdarank(noisy, seeded).to_json() == train_lambdarank(noisy, seeded).to_json();

    return {mrr_default == 1.0 && mrr_trees == 1.0 && gain >= 0.05 && reproducible,
            fmt::format("separable MRR {:.3f} (trees only {:.3f}, {} trees); noisy NDCG@10 {:.4f} vs best single "
                        "feature {:.4f} (+{:.1f}%); seeded retrain {}",
                        mrr_default, mrr_trees, tree_model.trees.size(), trained, single, 100.0 * gain,
                        reproducible ? "identical" : "differs")};
}

Outcome difficulty_score() {
    const RepoMetrics perfect{1.0, 1.0, 1.0, 1.0};
    const auto big = difficulty(perfect, 5000);
    const auto small = difficulty(perfect, 4999);
    const bool exact = big.d == 1.3 && big.adjusted == 1.3;
    const bool boundary = small.d == 1.3 && std::abs(small.adjusted - 1.3 / std::log(5099.0)) < 1e-15;
    return {exact && boundary,
            fmt::format("D {:.17g}, at 5000 commits {:.17g}, at 4999 commits {:.6f}", big.d, big.adjusted,
                        small.adjusted)};
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = read_text(e.path());
    return out;
}

Outcome determinism() {
    const auto dir = pt::scratch_dir("acceptance_determinism");
    pt::write_synthetic(pt::make_planted_corpus(), dir);
    const std::vector<std::string> stages = {"ingest", "index", "embed", "prerank", "featurize", "train"};
    std::vector<std::string> parts;
    bool ok = true;
    for (const bool trees_only : {false, true}) {
        const std::string tag = trees_only ? "trees" : "default";
        run_stages(synthetic_config(dir, dir / (tag + "_a"), trees_only), stages);
        run_stages(synthetic_config(dir, dir / (tag + "_b"), trees_only), stages);
        const auto a = tree_bytes(dir / (tag + "_a"));
        run_stages(synthetic_config(dir, dir / (tag + "_a"), trees_only), stages);
        const auto rerun = tree_bytes(dir / (tag + "_a"));
        const auto b = tree_bytes(dir / (tag + "_b"));
        const auto model = RankModel::from_json(a.at("train/model.json"));
        ok = ok && !a.empty() && a == b && a == rerun;
        parts.push_back(fmt::format("{} ranker ({} trees): {} artifacts {} across fresh runs, {} on rerun", tag,
                                    model.trees.size(), a.size(), a == b ? "identical" : "differ",
                                    a == rerun ? "identical" : "differ"));
    }
    return {ok, fmt::format("{}", fmt::join(parts, "; "))};
}

Outcome path_features() {
    const std::string description =
        "The JSSE based NIO2 connector in Apache Tomcat 8.5.0 to 8.5.63 did not properly validate incoming TLS "
        "packets. When configured to use NIO2+OpenSSL, a crafted packet could trigger an infinite loop.";
    const auto universe = PathSet::from({"java/org/apache/tomcat/util/net/nio2channel.java",
                                         "java/org/apache/tomcat/util/net/nio2endpoint.java",
                                         "java/org/apache/tomcat/util/net/nioendpoint.java",
                                         "java/org/apache/catalina/connector/request.java",
                                         "java/org/apache/jasper/compiler/parser.java", "webapps/docs/changelog.xml"});
    const auto entities = extract_entities(description);
    const auto ner = search_paths(universe, entities);
    bool under_util_net = !ner.empty();
    for (const auto& p : ner.paths) under_util_net = under_util_net && p.find("/util/net/") != std::string::npos;

    auto commit = [](const std::string& path) {
        const std::string diff = "diff --git a/" + path + " b/" + path + "\n--- a/" + path + "\n+++ b/" + path +
                                 "\n@@ -1 +1 @@\n-a\n+b\n";
        return CommitRecord{pt::repeated_id('c'), "tomcat", 1, "m", split_diff_by_file(diff)};
    };
    const double related = feature_jaccard(ner, commit_paths(commit("java/org/apache/tomcat/util/net/Nio2Channel.java")));
    const double unrelated = feature_jaccard(ner, commit_paths(commit("java/org/apache/jasper/compiler/Parser.java")));
    return {entities.contains("NIO2") && under_util_net && related > 0.0 && unrelated == 0.0,
            fmt::format("entities [{}], {} paths under util/net, Jaccard {:.3f} related / {:.3f} unrelated",
                        fmt::join(entities.entities, ", "), ner.size(), related, unrelated)};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
        {2, metric_oracles}, {3, bm25_oracle}, {4, fusion},           {5, end_to_end},   {6, hierarchical},
        {7, lambdarank},     {8, difficulty_score}, {9, determinism}, {10, path_features},
    };
    int failed = 0;
    for (const auto& [n, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, fmt::format("exception: {}", e.what())};
        }
        if (!o.pass) ++failed;
        std::cout << fmt::format("criterion {:>2}: {}  {}", n, o.pass ? "PASS" : "FAIL", o.detail) << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
