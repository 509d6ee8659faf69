// SPDX-License-Identifier: Apache-2.0

#include "patchtrace/tokenizer.hpp"

#include <stdexcept>

namespace patchtrace {
namespace {

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_high(char c) { return static_cast<unsigned char>(c) >= 0x80; }

bool is_word_char(char c) {
    return is_upper(c) || is_lower(c) || is_digit(c) || c == '_' || is_high(c);
}

char to_lower(char c) { return is_upper(c) ? static_cast<char>(c - 'A' + 'a') : c; }

std::string lowered(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = to_lower(c);
    return out;
}

// Calls fn(chunk) for every word chunk in text.
template <typename Fn>
void for_each_chunk(std::string_view text, Fn&& fn) {
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && !is_word_char(text[i])) ++i;
        const std::size_t begin = i;
        while (i < n && is_word_char(text[i])) ++i;
        if (i > begin) {
            if (!fn(text.substr(begin, i - begin), i)) return;
        }
    }
}

// Splits on underscores, then on case transitions inside each piece.
std::vector<std::string_view> split_parts(std::string_view chunk) {
    std::vector<std::string_view> parts;
    std::size_t i = 0;
    while (i < chunk.size()) {
        while (i < chunk.size() && chunk[i] == '_') ++i;
        const std::size_t seg_begin = i;
        while (i < chunk.size() && chunk[i] != '_') ++i;
        const std::string_view seg = chunk.substr(seg_begin, i - seg_begin);
        if (seg.empty()) continue;

        std::size_t start = 0;
        for (std::size_t j = 1; j < seg.size(); ++j) {
            const char prev = seg[j - 1];
            const char cur = seg[j];
            bool boundary = false;
            if (is_upper(cur) && (is_lower(prev) || is_digit(prev))) {
                boundary = true;  // fooBar, nio2Channel
            } else if (is_upper(prev) && is_upper(cur) && j + 1 < seg.size() &&
                       is_lower(seg[j + 1])) {
                boundary = true;  // SSLEngine -> SSL | Engine
            }
            if (boundary) {
                parts.push_back(seg.substr(start, j - start));
                start = j;
            }
        }
        parts.push_back(seg.substr(start));
    }
    return parts;
}

template <typename Sink>
void emit_chunk(std::string_view chunk, Sink&& sink) {
    const auto parts = split_parts(chunk);
    if (parts.empty()) return;  // underscores only
    if (parts.size() == 1 && parts.front().size() == chunk.size()) {
        sink(lowered(chunk));
        return;
    }
    // Leading/trailing underscores are not part of the compound.
    std::size_t b = 0, e = chunk.size();
    while (b < e && chunk[b] == '_') ++b;
    while (e > b && chunk[e - 1] == '_') --e;
    sink(lowered(chunk.substr(b, e - b)));
    if (parts.size() > 1) {
        for (auto p : parts) sink(lowered(p));
    }
}

std::size_t chunk_token_count(std::string_view chunk) {
    const auto parts = split_parts(chunk);
    if (parts.empty()) return 0;
    return parts.size() == 1 ? 1 : parts.size() + 1;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    for_each_chunk(text, [&](std::string_view chunk, std::size_t) {
        emit_chunk(chunk, [&](std::string t) { tokens.push_back(std::move(t)); });
        return true;
    });
    return tokens;
}

std::size_t count_tokens(std::string_view text) {
    std::size_t n = 0;
    for_each_chunk(text, [&](std::string_view chunk, std::size_t) {
        n += chunk_token_count(chunk);
        return true;
    });
    return n;
}

std::string_view truncate_to_tokens(std::string_view text, std::size_t budget) {
    if (budget == 0) throw std::invalid_argument("truncate_to_tokens: budget must be >= 1");
    std::size_t used = 0;
    std::size_t cut = 0;
    bool over = false;
    for_each_chunk(text, [&](std::string_view chunk, std::size_t end) {
        const std::size_t c = chunk_token_count(chunk);
        if (used + c > budget) {
            over = true;
            return false;
        }
        used += c;
        if (c > 0) cut = end;
        return true;
    });
    return over ? text.substr(0, cut) : text;
}

}  // namespace patchtrace
