// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/path_features.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace patchtrace {
namespace {

bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alnum(char c) { return is_alpha(c) || is_digit(c); }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }

bool is_candidate_char(char c) { return is_alnum(c) || c == '_' || c == '.' || c == '/' || c == '-'; }

constexpr std::array<std::string_view, 4> kStopwords = {"e.g", "i.e", "and/or", "etc"};

constexpr std::array<std::string_view, 42> kExtensions = {
    "c",    "h",    "cc",   "cpp",  "hpp",  "cxx",  "hh",   "java", "py",         "js",   "ts",
    "go",   "rs",   "rb",   "php",  "cs",   "m",    "mm",   "swift", "kt",        "scala", "xml",
    "json", "yml",  "yaml", "html", "htm",  "jsp",  "sh",   "pl",   "lua",        "sql",  "conf",
    "cfg",  "ini",  "md",   "txt",  "inc",  "jar",  "war",  "vue",  "properties"};

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

bool is_identifier(std::string_view s) {
    if (s.empty() || !(is_alpha(s[0]) || s[0] == '_' || s[0] == '$')) return false;
    return std::all_of(s.begin(), s.end(), [](char c) { return is_alnum(c) || c == '_' || c == '$'; });
}

bool has_alpha(std::string_view s) { return std::any_of(s.begin(), s.end(), is_alpha); }

bool is_slash_path(std::string_view s) {
    if (s.find('/') == std::string_view::npos || !has_alpha(s)) return false;
    std::size_t nonempty = 0;
    bool long_segment = false;
    for (auto seg : split(s, '/')) {
        if (seg.empty()) continue;
        ++nonempty;
        if (seg.size() >= 3) long_segment = true;
    }
    return nonempty >= 2 && long_segment;
}

bool is_dotted_name(std::string_view s) {
    if (s.find('.') == std::string_view::npos || s.find('/') != std::string_view::npos) return false;
    const auto segs = split(s, '.');
    return segs.size() >= 2 && std::all_of(segs.begin(), segs.end(), is_identifier);
}

bool has_file_extension(std::string_view s) {
    const auto dot = s.rfind('.');
    if (dot == std::string_view::npos || dot == 0 || dot + 1 >= s.size()) return false;
    const std::string ext = lowercase_ascii(s.substr(dot + 1));
    if (std::find(kExtensions.begin(), kExtensions.end(), ext) == kExtensions.end()) return false;
    return has_alpha(s.substr(0, dot));
}

bool is_snake_case(std::string_view s) {
    if (s.find('_') == std::string_view::npos) return false;
    if (!std::all_of(s.begin(), s.end(), [](char c) { return is_alnum(c) || c == '_'; })) return false;
    return has_alpha(s) && std::count_if(s.begin(), s.end(), is_alnum) >= 2;
}

bool is_camel_case(std::string_view s) {
    if (!std::all_of(s.begin(), s.end(), is_alnum)) return false;
    for (std::size_t i = 1; i < s.size(); ++i) {
        if (is_upper(s[i]) && (is_lower(s[i - 1]) || is_digit(s[i - 1]))) return true;
        if (i >= 2 && is_upper(s[i - 1]) && is_upper(s[i - 2]) && is_lower(s[i])) return true;
    }
    return false;
}

bool is_alnum_with_digit(std::string_view s) {
    if (s.size() < 3 || !std::all_of(s.begin(), s.end(), is_alnum)) return false;
    if (!has_alpha(s) || !std::any_of(s.begin(), s.end(), is_digit)) return false;
    // v2, 1st, 2nd, 10th are not identifiers
    if ((s[0] == 'v' || s[0] == 'V') && std::all_of(s.begin() + 1, s.end(), is_digit)) return false;
    std::size_t digits = 0;
    while (digits < s.size() && is_digit(s[digits])) ++digits;
    const std::string tail = lowercase_ascii(s.substr(digits));
    if (digits > 0 && (tail == "st" || tail == "nd" || tail == "rd" || tail == "th")) return false;
    return true;
}

std::string_view trim_punct(std::string_view s) {
    auto junk = [](char c) { return c == '.' || c == '/' || c == '-'; };
    while (!s.empty() && junk(s.front()) && s.front() != '/') s.remove_prefix(1);
    while (!s.empty() && junk(s.back())) s.remove_suffix(1);
    return s;
}

bool is_entity(std::string_view c) {
    if (c.empty()) return false;
    const std::string lower = lowercase_ascii(c);
    if (std::find(kStopwords.begin(), kStopwords.end(), lower) != kStopwords.end()) return false;
    return is_slash_path(c) || is_dotted_name(c) || has_file_extension(c) || is_snake_case(c) ||
           is_camel_case(c) || is_alnum_with_digit(c);
}

EntitySet make_entity_set(std::vector<std::string> raw) {
    std::map<std::string, std::string> by_lower;
    for (auto& e : raw) {
        if (e.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        by_lower.emplace(lowercase_ascii(e), std::move(e));
    }
    EntitySet out;
    for (auto& [_, e] : by_lower) out.entities.push_back(std::move(e));
    return out;
}

}  // namespace

bool EntitySet::contains(std::string_view e) const {
    const auto l = lowercase_ascii(e);
    return std::any_of(entities.begin(), entities.end(), [&](const std::string& x) { return lowercase_ascii(x) == l; });
}

PathSet PathSet::from(std::vector<std::string> raw) {
    std::sort(raw.begin(), raw.end());
    raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
    return PathSet{std::move(raw)};
}

EntitySet RuleBasedExtractor::extract(std::string_view, std::string_view description) {
    std::vector<std::string> found;
    std::size_t i = 0;
    while (i < description.size()) {
        while (i < description.size() && !is_candidate_char(description[i])) ++i;
        const std::size_t begin = i;
        while (i < description.size() && is_candidate_char(description[i])) ++i;
        const auto cand = trim_punct(description.substr(begin, i - begin));
        if (is_entity(cand)) found.emplace_back(cand);
    }
    return make_entity_set(std::move(found));
}

CachedEntityExtractor::CachedEntityExtractor(const std::filesystem::path& cache_file) {
    std::ifstream in(cache_file, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open {}", cache_file.string()));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto obj = nlohmann::json::parse(line);
            cache_[obj.at("cve_id").get<std::string>()] =
                make_entity_set(obj.at("entities").get<std::vector<std::string>>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError(fmt::format("{}:{}: {}", cache_file.string(), line_no, e.what()));
        }
    }
}

EntitySet CachedEntityExtractor::extract(std::string_view cve_id, std::string_view) {
    auto it = cache_.find(cve_id);
    if (it == cache_.end()) throw DataError(fmt::format("entity cache has no entry for {}", cve_id));
    return it->second;
}

EntitySet extract_entities(std::string_view description) {
    RuleBasedExtractor rules;
    return rules.extract({}, description);
}

EntitySet extract_entities(std::string_view cve_id, std::string_view description, EntityExtractor& extractor) {
    return extractor.extract(cve_id, description);
}

void write_entity_cache(const std::map<std::string, EntitySet>& entities, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
    for (const auto& [cve, set] : entities) {
        nlohmann::json obj{{"cve_id", cve}, {"entities", set.entities}};
        out << obj.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    }
}

PathSet commit_paths(const CommitRecord& commit) {
    std::vector<std::string> raw;
    raw.reserve(commit.file_diffs.size());
    for (const auto& f : commit.file_diffs) raw.push_back(lowercase_ascii(f.path));
    return PathSet::from(std::move(raw));
}

PathContents path_contents(const Corpus& corpus) {
    PathContents out;
    for (const auto& c : corpus.commits()) {
        for (const auto& f : c.file_diffs) {
            auto& text = out[lowercase_ascii(f.path)];
            text += lowercase_ascii(f.body);
            text += '\n';
        }
    }
    return out;
}

PathSet search_paths(const PathSet& universe, const EntitySet& entities, std::size_t per_entity_cap,
                     const PathContents* contents) {
    if (per_entity_cap == 0) throw std::invalid_argument("per_entity_cap must be >= 1");
    std::vector<std::string> out;
    std::vector<const std::string*> hits;
    for (const auto& e : entities.entities) {
        const std::string needle = lowercase_ascii(e);
        if (needle.empty()) continue;
        hits.clear();
        for (const auto& p : universe.paths) {
            bool match = p.find(needle) != std::string::npos;
            if (!match && contents) {
                auto it = contents->find(p);
                match = it != contents->end() && it->second.find(needle) != std::string::npos;
            }
            if (match) hits.push_back(&p);
        }
        const std::size_t keep = std::min(per_entity_cap, hits.size());
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                          [](const std::string* a, const std::string* b) {
                              if (a->size() != b->size()) return a->size() < b->size();
                              return *a < *b;
                          });
        for (std::size_t i = 0; i < keep; ++i) out.push_back(*hits[i]);
    }
    return PathSet::from(std::move(out));
}

double feature_jaccard(const PathSet& a, const PathSet& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t inter = 0;
    auto ia = a.paths.begin();
    auto ib = b.paths.begin();
    while (ia != a.paths.end() && ib != b.paths.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++inter;
            ++ia;
            ++ib;
        }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::string path_document(const PathSet& paths) {
    std::string out;
    for (std::size_t i = 0; i < paths.paths.size(); ++i) {
        if (i) out += '\n';
        out += paths.paths[i];
    }
    return render_prompt(PromptKind::PathDoc, {out});
}

void PathVectorCache::prefetch(std::span<const std::string> texts) {
    std::set<std::string> missing;
    for (const auto& t : texts) {
        if (!store_.contains(StoreKey::path_text(t))) missing.insert(t);
    }
    std::vector<std::pair<StoreKey, std::string>> items;
    items.reserve(missing.size());
    for (const auto& t : missing) items.emplace_back(StoreKey::path_text(t), t);
    embed_into(store_, provider_, items);
}

const EmbeddingVector& PathVectorCache::get(const std::string& text) {
    if (const auto* v = store_.find(StoreKey::path_text(text))) return *v;
    prefetch(std::span<const std::string>(&text, 1));
    return store_.at(StoreKey::path_text(text));
}

double feature_path_cosine(PathVectorCache& cache, const PathSet& ner_paths, const PathSet& commit_paths) {
    if (ner_paths.empty() || commit_paths.empty()) return 0.0;
    const auto& a = cache.get(path_document(ner_paths));
    const auto& b = cache.get(path_document(commit_paths));
    return a.dot(b);
}

double feature_path_cosine(const VectorStore& store, const PathSet& ner_paths, const PathSet& commit_paths) {
    if (ner_paths.empty() || commit_paths.empty()) return 0.0;
    return store.at(StoreKey::path_text(path_document(ner_paths)))
        .dot(store.at(StoreKey::path_text(path_document(commit_paths))));
}

}  // namespace patchtrace
