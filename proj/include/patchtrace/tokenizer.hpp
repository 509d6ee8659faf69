// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace patchtrace {

/// Splits text into lowercase index terms.
///
/// A chunk is a maximal run of ASCII letters, digits, underscores or non-ASCII
/// bytes. Each chunk yields its lowercased form; when the chunk is a compound
/// (camelCase, PascalCase with acronyms, or snake_case) the lowercased parts
/// follow it. Digits stay attached to the part they trail, so "Nio2Channel"
/// gives {"nio2channel", "nio2", "channel"}.
std::vector<std::string> tokenize(std::string_view text);

/// Number of tokens tokenize() would return, without materializing them.
std::size_t count_tokens(std::string_view text);

/// Longest prefix of `text` whose token count is at most `budget`, cut at the
/// end of a chunk. Returns `text` unchanged when it is already within budget.
std::string_view truncate_to_tokens(std::string_view text, std::size_t budget);

}  // namespace patchtrace
