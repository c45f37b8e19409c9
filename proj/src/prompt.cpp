#include "mosaic/prompt.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

namespace mosaic {

namespace {

[[noreturn]] void parse_error(int line, const std::string& field, const std::string& why) {
  throw PromptError(PromptErrc::ParseError, "catalog line " + std::to_string(line) + ", field " + field + ": " + why);
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

}  // namespace

std::string to_string(Bucket bucket) {
  switch (bucket) {
    case Bucket::Rare: return "rare";
    case Bucket::Common: return "common";
    case Bucket::Frequent: return "frequent";
    case Bucket::Unknown: break;
  }
  return "unknown";
}

Bucket bucket_from_string(const std::string& text) {
  if (text == "rare" || text == "r") return Bucket::Rare;
  if (text == "common" || text == "c") return Bucket::Common;
  if (text == "frequent" || text == "f") return Bucket::Frequent;
  if (text == "unknown" || text.empty()) return Bucket::Unknown;
  throw PromptError(PromptErrc::ParseError, "unknown bucket '" + text + "'");
}

std::string to_string(TemplateId id) {
  switch (id) {
    case TemplateId::NameOnly: return "name_only";
    case TemplateId::PhotoSingle: return "photo_single";
    case TemplateId::PhotoSingleDef: break;
  }
  return "photo_single_def";
}

TemplateId template_from_string(const std::string& text) {
  if (text == "name_only") return TemplateId::NameOnly;
  if (text == "photo_single") return TemplateId::PhotoSingle;
  if (text == "photo_single_def") return TemplateId::PhotoSingleDef;
  throw PromptError(PromptErrc::UnknownTemplate, "unknown prompt template '" + text + "'");
}

std::string to_string(SamplingStrategy strategy) {
  return strategy == SamplingStrategy::RareOnly ? "rare_only" : "all_buckets";
}

SamplingStrategy strategy_from_string(const std::string& text) {
  if (text == "all_buckets") return SamplingStrategy::AllBuckets;
  if (text == "rare_only") return SamplingStrategy::RareOnly;
  throw PromptError(PromptErrc::ParseError, "unknown category strategy '" + text + "'");
}

std::vector<Category> load_catalog(std::istream& source) {
  std::vector<Category> catalog;
  std::set<int> seen;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split_tabs(line);
    if (!header_seen) {
      if (fields.size() != 4 || fields[0] != "id" || fields[1] != "name" || fields[2] != "bucket" ||
          fields[3] != "definition")
        parse_error(line_no, "header", "expected 'id\\tname\\tbucket\\tdefinition'");
      header_seen = true;
      continue;
    }
    if (fields.size() < 3 || fields.size() > 4) parse_error(line_no, "*", "expected 3 or 4 tab-separated fields");
    Category category;
    const auto& id_text = fields[0];
    auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), category.id);
    if (ec != std::errc{} || ptr != id_text.data() + id_text.size()) parse_error(line_no, "id", "not an integer");
    category.name = fields[1];
    if (category.name.empty()) parse_error(line_no, "name", "empty");
    try {
      category.bucket = bucket_from_string(fields[2]);
    } catch (const PromptError&) {
      parse_error(line_no, "bucket", "unknown bucket '" + fields[2] + "'");
    }
    if (fields.size() == 4) category.definition = fields[3];
    if (!seen.insert(category.id).second)
      throw PromptError(PromptErrc::DuplicateId,
                        "catalog line " + std::to_string(line_no) + ": duplicate id " + std::to_string(category.id));
    catalog.push_back(std::move(category));
  }
  if (!header_seen) throw PromptError(PromptErrc::ParseError, "catalog line 0, field header: missing header");
  return catalog;
}

void write_catalog(std::ostream& sink, const std::vector<Category>& catalog) {
  sink << "id\tname\tbucket\tdefinition\n";
  for (const auto& c : catalog) sink << c.id << '\t' << c.name << '\t' << to_string(c.bucket) << '\t' << c.definition << '\n';
}

std::vector<Category> catalog_from_lvis(std::istream& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(source);
  } catch (const nlohmann::json::parse_error& e) {
    throw PromptError(PromptErrc::ParseError, std::string("LVIS annotations: ") + e.what());
  }
  if (!doc.contains("categories") || !doc["categories"].is_array())
    throw PromptError(PromptErrc::ParseError, "LVIS annotations: missing 'categories' array");

  std::vector<Category> catalog;
  std::set<int> seen;
  std::size_t index = 0;
  for (const auto& entry : doc["categories"]) {
    const std::string where = "categories[" + std::to_string(index++) + "]";
    if (!entry.contains("id") || !entry["id"].is_number_integer() || !entry.contains("name") ||
        !entry["name"].is_string())
      throw PromptError(PromptErrc::ParseError, where + ": needs integer 'id' and string 'name'");
    Category category;
    category.id = entry["id"].get<int>();
    category.name = entry["name"].get<std::string>();
    std::replace(category.name.begin(), category.name.end(), '_', ' ');
    if (entry.contains("def") && entry["def"].is_string()) category.definition = entry["def"].get<std::string>();
    // Tabs and newlines would break the line format.
    std::replace_if(category.definition.begin(), category.definition.end(),
                    [](char ch) { return ch == '\t' || ch == '\n' || ch == '\r'; }, ' ');
    if (entry.contains("frequency") && entry["frequency"].is_string())
      category.bucket = bucket_from_string(entry["frequency"].get<std::string>());
    if (!seen.insert(category.id).second)
      throw PromptError(PromptErrc::DuplicateId, where + ": duplicate id " + std::to_string(category.id));
    catalog.push_back(std::move(category));
  }
  std::sort(catalog.begin(), catalog.end(), [](const Category& a, const Category& b) { return a.id < b.id; });
  return catalog;
}

std::vector<Category> sample_categories(const std::vector<Category>& catalog, int count,
                                        SamplingStrategy strategy, SplitMix64& rng) {
  std::vector<const Category*> pool;
  for (const auto& c : catalog)
    if (strategy == SamplingStrategy::AllBuckets || c.bucket == Bucket::Rare) pool.push_back(&c);
  if (pool.empty())
    throw PromptError(PromptErrc::EmptyStrategyPool, "no categories available for strategy " + to_string(strategy));

  std::vector<Category> picked;
  picked.reserve(static_cast<std::size_t>(std::max(count, 0)));
  // Partial Fisher-Yates gives distinct picks while the pool lasts.
  const int distinct = std::min<int>(count, static_cast<int>(pool.size()));
  for (int i = 0; i < distinct; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(i, static_cast<std::int64_t>(pool.size()) - 1));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    picked.push_back(*pool[static_cast<std::size_t>(i)]);
  }
  for (int i = distinct; i < count; ++i) {
    picked.push_back(*pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
  }
  return picked;
}

PromptSpec build_prompt(const Category& category, TemplateId template_id) {
  PromptSpec prompt;
  prompt.category_id = category.id;
  prompt.template_id = template_id;
  if (template_id == TemplateId::PhotoSingleDef && category.definition.empty()) {
    prompt.template_id = TemplateId::PhotoSingle;
    prompt.definition_fallback = true;
  }
  static const std::string kPhotoPrefix = "a photo of a single ";
  switch (prompt.template_id) {
    case TemplateId::NameOnly:
      prompt.text = category.name;
      prompt.subject = {0, category.name.size()};
      break;
    case TemplateId::PhotoSingle:
      prompt.text = kPhotoPrefix + category.name;
      prompt.subject = {kPhotoPrefix.size(), kPhotoPrefix.size() + category.name.size()};
      break;
    case TemplateId::PhotoSingleDef:
      prompt.text = kPhotoPrefix + category.name + ", " + category.definition;
      prompt.subject = {kPhotoPrefix.size(), kPhotoPrefix.size() + category.name.size()};
      break;
  }
  return prompt;
}

}  // namespace mosaic
