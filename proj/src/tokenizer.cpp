#include "mosaic/tokenizer.hpp"

#include <cctype>

namespace mosaic {

namespace {

bool is_word_char(unsigned char ch) { return std::isalnum(ch) || ch == '\'' || ch >= 0x80; }

}  // namespace

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  tokens.push_back({kStartToken, {0, 0}});
  std::size_t i = 0;
  while (i < text.size()) {
    const auto ch = static_cast<unsigned char>(text[i]);
    if (std::isspace(ch)) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (is_word_char(ch)) {
      while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
    }
    std::string word = text.substr(i, j - i);
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    tokens.push_back({std::move(word), {i, j}});
    i = j;
  }
  tokens.push_back({kEndToken, {text.size(), text.size()}});
  return tokens;
}

std::vector<int> subject_token_indices(const std::vector<Token>& tokens, Span subject) {
  std::vector<int> indices;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const auto& span = tokens[k].span;
    if (span.begin < span.end && span.begin < subject.end && subject.begin < span.end)
      indices.push_back(static_cast<int>(k));
  }
  return indices;
}

}  // namespace mosaic
