#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace exp3ss {

// Word characters are ASCII letters and digits plus every byte >= 0x80, so
// UTF-8 sequences survive as (case-preserved) parts of words.
bool is_word_byte(unsigned char c) noexcept;

// Lowercased word tokens in order of appearance, duplicates kept.
std::vector<std::string> tokenize_list(std::string_view text);

using TokenSet = std::set<std::string>;

TokenSet tokenize(std::string_view text);

// Canonical query text: tokens joined by single spaces. This is the arm
// identity, so "Life  Insurance!" and "life insurance" are the same arm.
// Idempotent.
std::string normalize_query(std::string_view text);

}  // namespace exp3ss
