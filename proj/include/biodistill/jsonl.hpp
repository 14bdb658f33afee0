#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace biodistill {

// Insertion-ordered JSON so emitted rows have a fixed field order.
using Json = nlohmann::ordered_json;

// Calls `fn(row, line_number)` for every non-blank line. Malformed JSON is a
// parse error carrying the file and line.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn);

std::vector<Json> read_jsonl(const std::filesystem::path& path);

// Writes to `<path>.tmp` and renames on commit(), so a crashed writer never
// leaves a half-written output under the final name.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::filesystem::path path);
  ~JsonlWriter();
  JsonlWriter(const JsonlWriter&) = delete;
  JsonlWriter& operator=(const JsonlWriter&) = delete;

  void write(const Json& row);
  void commit();
  std::size_t rows() const { return rows_; }

 private:
  std::filesystem::path path_;
  std::filesystem::path tmp_;
  std::ofstream out_;
  std::size_t rows_ = 0;
  bool committed_ = false;
};

void write_json_file(const std::filesystem::path& path, const Json& value);
Json read_json_file(const std::filesystem::path& path);

}  // namespace biodistill
