#pragma once

#include <string>
#include <vector>

#include "mosaic/prompt.hpp"

namespace mosaic {

struct Token {
  std::string text;
  Span span;  // empty for the start/end markers
};

inline constexpr const char* kStartToken = "<|startoftext|>";
inline constexpr const char* kEndToken = "<|endoftext|>";

/// Word-level tokenizer used by the synthetic backend: lowercase runs of
/// letters/digits/apostrophes, single punctuation marks, wrapped in start
/// and end markers. Real backends ship their own token lists in MFAT.
std::vector<Token> tokenize(const std::string& text);

/// Ordinals of tokens whose character span intersects `subject`.
std::vector<int> subject_token_indices(const std::vector<Token>& tokens, Span subject);

}  // namespace mosaic
