// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <string>
#include <vector>

namespace patchtrace {

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;

    bool operator==(const ScoredDoc&) const = default;
};

/// Descending score, ties by ascending doc id.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
}

/// Ordered (doc id, score) pairs; no duplicate ids.
using RankedList = std::vector<ScoredDoc>;

inline void sort_ranked(RankedList& list) { std::sort(list.begin(), list.end(), ranks_before); }

inline bool is_well_ordered(const RankedList& list) {
    for (std::size_t i = 1; i < list.size(); ++i) {
        if (!ranks_before(list[i - 1], list[i])) return false;
    }
    return true;
}

}  // namespace patchtrace
