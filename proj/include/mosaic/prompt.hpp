#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "mosaic/error.hpp"
#include "mosaic/rng.hpp"

namespace mosaic {

enum class PromptErrc { ParseError, DuplicateId, EmptyStrategyPool, UnknownTemplate };
using PromptError = Error<PromptErrc>;

enum class Bucket { Rare, Common, Frequent, Unknown };

std::string to_string(Bucket bucket);
Bucket bucket_from_string(const std::string& text);

struct Category {
  int id = 0;
  std::string name;
  std::string definition;
  Bucket bucket = Bucket::Unknown;

  bool operator==(const Category&) const = default;
};

enum class TemplateId { NameOnly, PhotoSingle, PhotoSingleDef };

std::string to_string(TemplateId id);
TemplateId template_from_string(const std::string& text);

/// Half-open character interval [begin, end) into a prompt.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

struct PromptSpec {
  std::string text;
  Span subject;
  int category_id = 0;
  TemplateId template_id = TemplateId::PhotoSingleDef;
  /// Set when photo_single_def was requested but the definition was empty.
  bool definition_fallback = false;

  std::string subject_text() const { return text.substr(subject.begin, subject.end - subject.begin); }
  bool operator==(const PromptSpec&) const = default;
};

/// Tab-separated catalog: header `id name bucket definition`, '#' comments.
std::vector<Category> load_catalog(std::istream& source);
void write_catalog(std::ostream& sink, const std::vector<Category>& catalog);

/// Converts an LVIS-style annotation document (JSON with a `categories`
/// array of {id, name, def, frequency}) into catalog entries. Underscores in
/// names become spaces.
std::vector<Category> catalog_from_lvis(std::istream& source);

enum class SamplingStrategy { AllBuckets, RareOnly };

std::string to_string(SamplingStrategy strategy);
SamplingStrategy strategy_from_string(const std::string& text);

std::vector<Category> sample_categories(const std::vector<Category>& catalog, int count,
                                        SamplingStrategy strategy, SplitMix64& rng);

PromptSpec build_prompt(const Category& category, TemplateId template_id);

}  // namespace mosaic
