#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biodistill/jsonl.hpp"
#include "biodistill/mesh.hpp"

namespace biodistill {

using Date = std::chrono::year_month_day;

// Accepts YYYY, YYYY-MM or YYYY-MM-DD; missing parts default to the first
// month/day. Throws Error(parse).
Date parse_date(std::string_view text);
std::string format_date(const Date& date);

struct Document {
  std::string id;
  std::string title;
  std::string abstract;
  std::vector<std::string> mesh;
  std::optional<Date> pub_date;

  // Text handed to embedders and judges.
  std::string text() const;
};

Document document_from_json(const Json& row);
Json document_to_json(const Document& doc);

// One document per line: {"id","title","abstract","mesh":[...],"pub_date"}.
// Duplicate ids are a conflict error.
std::vector<Document> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs);

// Lookup by id over a corpus that outlives the store.
class DocumentStore {
 public:
  explicit DocumentStore(const std::vector<Document>& docs);
  const Document* find(std::string_view id) const;
  const Document& at(std::string_view id) const;

 private:
  std::unordered_map<std::string, const Document*> by_id_;
};

// Occurrence counts of each descriptor across the corpus annotations.
AnnotationCounts count_annotations(const std::vector<Document>& docs);

}  // namespace biodistill
