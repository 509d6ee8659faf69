// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace patchtrace {
namespace {

using nlohmann::json;

constexpr std::string_view kHeaderPrefix = "diff --git ";

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.substr(0, prefix.size()) == prefix;
}

std::string unquote(std::string_view s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        std::string out;
        for (std::size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                ++i;
                switch (s[i]) {
                case 't': out.push_back('\t'); break;
                case 'n': out.push_back('\n'); break;
                default: out.push_back(s[i]); break;
                }
            } else {
                out.push_back(s[i]);
            }
        }
        return out;
    }
    return std::string(s);
}

std::string_view trim_cr(std::string_view s) {
    if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
    return s;
}

bool is_binary_body(std::string_view body) {
    std::size_t pos = 0;
    while (pos < body.size()) {
        const std::size_t eol = body.find('\n', pos);
        const auto line = body.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        if (starts_with(line, "Binary files ") || starts_with(line, "GIT binary patch")) return true;
        if (starts_with(line, "@@")) return false;
        if (eol == std::string_view::npos) break;
        pos = eol + 1;
    }
    return false;
}

template <typename Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(fmt::format("{}:{}: malformed JSON: {}", path.string(), line_no, e.what()));
        }
        if (!obj.is_object())
            throw DataError(fmt::format("{}:{}: expected a JSON object", path.string(), line_no));
        try {
            fn(obj, line_no);
        } catch (const json::exception& e) {
            throw DataError(fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
        }
    }
}

void require_keys(const json& obj, std::initializer_list<std::string_view> keys,
                  const std::filesystem::path& path, std::size_t line_no) {
    for (auto k : keys) {
        if (!obj.contains(std::string(k)))
            throw DataError(fmt::format("{}:{}: missing key '{}'", path.string(), line_no, k));
    }
    for (const auto& [k, _] : obj.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw DataError(fmt::format("{}:{}: unexpected key '{}'", path.string(), line_no, k));
    }
}

std::optional<std::int64_t> optional_time(const json& v) {
    if (v.is_null()) return std::nullopt;
    return v.get<std::int64_t>();
}

}  // namespace

std::string FileDiff::text() const {
    std::string out;
    out.reserve(header.size() + 1 + body.size());
    out += header;
    out += '\n';
    out += body;
    return out;
}

std::string CommitRecord::diff_text() const {
    std::string out;
    for (const auto& f : file_diffs) out += f.text();
    return out;
}

Corpus::Corpus(std::string repo_id, std::vector<CommitRecord> commits)
    : repo_id_(std::move(repo_id)), commits_(std::move(commits)) {
    std::sort(commits_.begin(), commits_.end(), [](const CommitRecord& a, const CommitRecord& b) {
        return std::tie(a.author_time, a.commit_id) < std::tie(b.author_time, b.commit_id);
    });
    time_index_.reserve(commits_.size());
    by_id_.reserve(commits_.size());
    for (std::size_t i = 0; i < commits_.size(); ++i) {
        const auto& c = commits_[i];
        if (c.repo_id != repo_id_)
            throw DataError(fmt::format("commit {} belongs to repo '{}', not '{}'", c.commit_id,
                                        c.repo_id, repo_id_));
        if (!by_id_.emplace(c.commit_id, i).second)
            throw DataError(fmt::format("duplicate commit_id {} in repo '{}'", c.commit_id, repo_id_));
        time_index_.push_back(c.author_time);
    }
}

std::optional<std::size_t> Corpus::position(std::string_view commit_id) const {
    auto it = by_id_.find(std::string(commit_id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

const CommitRecord& Corpus::get(std::string_view commit_id) const {
    auto pos = position(commit_id);
    if (!pos) throw std::out_of_range(fmt::format("unknown commit {}", commit_id));
    return commits_[*pos];
}

bool Corpus::is_sorted() const {
    if (time_index_.size() != commits_.size()) return false;
    for (std::size_t i = 1; i < commits_.size(); ++i) {
        const auto& a = commits_[i - 1];
        const auto& b = commits_[i];
        if (std::tie(a.author_time, a.commit_id) >= std::tie(b.author_time, b.commit_id))
            return false;
    }
    return true;
}

std::string path_from_header(std::string_view header) {
    header = trim_cr(header);
    std::string_view rest = starts_with(header, kHeaderPrefix) ? header.substr(kHeaderPrefix.size())
                                                               : header;
    // Quoted form: "a/x y" "b/x y"
    if (!rest.empty() && rest.back() == '"') {
        auto open = rest.rfind(" \"");
        if (open != std::string_view::npos) {
            std::string p = unquote(rest.substr(open + 1));
            if (starts_with(p, "b/")) p.erase(0, 2);
            if (!p.empty()) return p;
        }
    }
    auto pos = rest.rfind(" b/");
    if (pos != std::string_view::npos && pos + 3 < rest.size()) {
        return std::string(rest.substr(pos + 3));
    }
    // No b/ side; use the a/ side or the last field.
    if (starts_with(rest, "a/")) {
        auto end = rest.find(' ');
        auto p = rest.substr(2, end == std::string_view::npos ? std::string_view::npos : end - 2);
        if (!p.empty()) return std::string(p);
    }
    auto last_space = rest.rfind(' ');
    std::string_view last = last_space == std::string_view::npos ? rest : rest.substr(last_space + 1);
    return last.empty() ? std::string(rest) : std::string(last);
}

std::vector<FileDiff> split_diff_by_file(std::string_view text) {
    std::vector<FileDiff> files;
    std::size_t pos = 0;
    // Offsets of header line starts.
    std::vector<std::size_t> headers;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::size_t line_end = eol == std::string_view::npos ? text.size() : eol;
        if (starts_with(text.substr(pos, line_end - pos), kHeaderPrefix)) headers.push_back(pos);
        pos = eol == std::string_view::npos ? text.size() : eol + 1;
    }
    for (std::size_t h = 0; h < headers.size(); ++h) {
        const std::size_t start = headers[h];
        const std::size_t stop = h + 1 < headers.size() ? headers[h + 1] : text.size();
        const std::string_view chunk = text.substr(start, stop - start);
        const std::size_t eol = chunk.find('\n');
        FileDiff fd;
        fd.header = std::string(chunk.substr(0, eol));
        fd.body = eol == std::string_view::npos ? std::string() : std::string(chunk.substr(eol + 1));
        fd.path = path_from_header(fd.header);
        if (is_binary_body(fd.body)) fd.body.clear();
        files.push_back(std::move(fd));
    }
    return files;
}

bool is_commit_id(std::string_view s) {
    if (s.size() != 40) return false;
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

bool is_cve_id(std::string_view s) {
    static const std::regex re(R"(CVE-\d{4}-\d{4,})");
    return std::regex_match(s.begin(), s.end(), re);
}

std::vector<Corpus> ingest_commit_dumps(const std::filesystem::path& path) {
    std::map<std::string, std::vector<CommitRecord>> by_repo;
    std::map<std::pair<std::string, std::string>, std::size_t> seen;
    for_each_jsonl(path, [&](const json& obj, std::size_t line_no) {
        require_keys(obj, {"commit_id", "repo_id", "author_time", "message", "diff"}, path, line_no);
        CommitRecord c;
        c.commit_id = obj.at("commit_id").get<std::string>();
        c.repo_id = obj.at("repo_id").get<std::string>();
        c.author_time = obj.at("author_time").get<std::int64_t>();
        c.message = obj.at("message").get<std::string>();
        if (!is_commit_id(c.commit_id))
            throw DataError(fmt::format("{}:{}: commit_id '{}' is not 40 lowercase hex chars",
                                        path.string(), line_no, c.commit_id));
        if (c.author_time < 0)
            throw DataError(fmt::format("{}:{}: negative author_time", path.string(), line_no));
        auto [it, inserted] = seen.emplace(std::make_pair(c.repo_id, c.commit_id), line_no);
        if (!inserted)
            throw DataError(fmt::format("{}:{}: duplicate commit_id {} (first seen on line {})",
                                        path.string(), line_no, c.commit_id, it->second));
        c.file_diffs = split_diff_by_file(obj.at("diff").get<std::string>());
        by_repo[c.repo_id].push_back(std::move(c));
    });
    std::vector<Corpus> out;
    out.reserve(by_repo.size());
    for (auto& [repo, commits] : by_repo) out.emplace_back(repo, std::move(commits));
    return out;
}

Corpus ingest_commit_dump(const std::filesystem::path& path) {
    auto all = ingest_commit_dumps(path);
    if (all.empty()) return Corpus{};
    if (all.size() > 1)
        throw DataError(fmt::format("{}: holds {} repositories; expected one", path.string(), all.size()));
    return std::move(all.front());
}

void write_commit_dump(const std::vector<Corpus>& corpora, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
    for (const auto& corpus : corpora) {
        for (const auto& c : corpus.commits()) {
            json obj{{"commit_id", c.commit_id},
                     {"repo_id", c.repo_id},
                     {"author_time", c.author_time},
                     {"message", c.message},
                     {"diff", c.diff_text()}};
            out << obj.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
        }
    }
}

void write_commit_dump(const Corpus& corpus, const std::filesystem::path& path) {
    write_commit_dump(std::vector<Corpus>{corpus}, path);
}

std::vector<CveRecord> ingest_cve_dump(const std::filesystem::path& path) {
    std::vector<CveRecord> out;
    std::set<std::string> seen;
    for_each_jsonl(path, [&](const json& obj, std::size_t line_no) {
        require_keys(obj,
                     {"cve_id", "description", "reserve_time", "publish_time", "repo_id",
                      "known_patch_ids"},
                     path, line_no);
        CveRecord r;
        r.cve_id = obj.at("cve_id").get<std::string>();
        r.description = obj.at("description").get<std::string>();
        r.reserve_time = optional_time(obj.at("reserve_time"));
        r.publish_time = optional_time(obj.at("publish_time"));
        r.repo_id = obj.at("repo_id").get<std::string>();
        r.known_patch_ids = obj.at("known_patch_ids").get<std::vector<std::string>>();
        if (!is_cve_id(r.cve_id))
            throw DataError(fmt::format("{}:{}: malformed cve_id '{}'", path.string(), line_no, r.cve_id));
        if (r.reserve_time && r.publish_time && *r.reserve_time > *r.publish_time)
            throw DataError(fmt::format("{}:{}: reserve_time after publish_time", path.string(), line_no));
        for (const auto& id : r.known_patch_ids) {
            if (!is_commit_id(id))
                throw DataError(fmt::format("{}:{}: known patch '{}' is not a commit id",
                                            path.string(), line_no, id));
        }
        if (!seen.insert(r.cve_id).second)
            throw DataError(fmt::format("{}:{}: duplicate cve_id {}", path.string(), line_no, r.cve_id));
        out.push_back(std::move(r));
    });
    return out;
}

void write_cve_dump(const std::vector<CveRecord>& cves, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
    auto time_json = [](const std::optional<std::int64_t>& t) { return t ? json(*t) : json(nullptr); };
    for (const auto& r : cves) {
        json obj{{"cve_id", r.cve_id},
                 {"description", r.description},
                 {"reserve_time", time_json(r.reserve_time)},
                 {"publish_time", time_json(r.publish_time)},
                 {"repo_id", r.repo_id},
                 {"known_patch_ids", r.known_patch_ids}};
        out << obj.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    }
}

void validate_cve_against(const CveRecord& cve, const Corpus& corpus) {
    for (const auto& id : cve.known_patch_ids) {
        if (!corpus.position(id))
            throw DataError(fmt::format("{}: known patch {} not found in repo '{}'", cve.cve_id, id,
                                        corpus.repo_id()));
    }
}

std::string lowercase_ascii(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::string normalize_path(std::string_view path) {
    if (starts_with(path, "a/") || starts_with(path, "b/")) path.remove_prefix(2);
    return lowercase_ascii(path);
}

std::vector<std::string> path_universe(const Corpus& corpus) {
    std::set<std::string> paths;
    for (const auto& c : corpus.commits()) {
        for (const auto& f : c.file_diffs) paths.insert(lowercase_ascii(f.path));
    }
    return {paths.begin(), paths.end()};
}

}  // namespace patchtrace
