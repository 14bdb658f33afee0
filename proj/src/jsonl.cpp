#include "biodistill/jsonl.hpp"

#include "biodistill/error.hpp"

namespace biodistill {

namespace fs = std::filesystem;

void for_each_jsonl(const fs::path& path, const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    Json row;
    try {
      row = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    fn(row, lineno);
  }
}

std::vector<Json> read_jsonl(const fs::path& path) {
  std::vector<Json> rows;
  for_each_jsonl(path, [&](const Json& row, std::size_t) { rows.push_back(row); });
  return rows;
}

JsonlWriter::JsonlWriter(fs::path path) : path_(std::move(path)), tmp_(path_.string() + ".tmp") {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  out_.open(tmp_, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error(ErrorKind::io, "cannot write " + tmp_.string());
}

JsonlWriter::~JsonlWriter() {
  if (!committed_) {
    out_.close();
    std::error_code ec;
    fs::remove(tmp_, ec);
  }
}

void JsonlWriter::write(const Json& row) {
  out_ << row.dump() << '\n';
  if (!out_) throw Error(ErrorKind::io, "write failed: " + tmp_.string());
  ++rows_;
}

void JsonlWriter::commit() {
  out_.close();
  if (!out_) throw Error(ErrorKind::io, "close failed: " + tmp_.string());
  fs::rename(tmp_, path_);
  committed_ = true;
}

void write_json_file(const fs::path& path, const Json& value) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  out << value.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed: " + path.string());
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, path.string() + ": " + e.what());
  }
}

}  // namespace biodistill
