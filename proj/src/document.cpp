#include "biodistill/document.hpp"

#include <charconv>
#include <cstdio>
#include <unordered_set>

#include "biodistill/error.hpp"

namespace biodistill {

namespace {

int to_int(std::string_view s, std::string_view whole) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
    throw Error(ErrorKind::parse, "malformed date '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

Date parse_date(std::string_view text) {
  int y = 0;
  unsigned m = 1, d = 1;
  if (text.size() == 4) {
    y = to_int(text, text);
  } else if (text.size() == 7 && text[4] == '-') {
    y = to_int(text.substr(0, 4), text);
    m = static_cast<unsigned>(to_int(text.substr(5, 2), text));
  } else if (text.size() == 10 && text[4] == '-' && text[7] == '-') {
    y = to_int(text.substr(0, 4), text);
    m = static_cast<unsigned>(to_int(text.substr(5, 2), text));
    d = static_cast<unsigned>(to_int(text.substr(8, 2), text));
  } else {
    throw Error(ErrorKind::parse, "malformed date '" + std::string(text) + "'");
  }
  Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!date.ok()) throw Error(ErrorKind::parse, "invalid calendar date '" + std::string(text) + "'");
  return date;
}

std::string format_date(const Date& date) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
  return buf;
}

std::string Document::text() const {
  if (title.empty()) return abstract;
  if (abstract.empty()) return title;
  return title + "\n" + abstract;
}

Document document_from_json(const Json& row) {
  if (!row.is_object()) throw Error(ErrorKind::parse, "document row is not an object");
  Document doc;
  try {
    doc.id = row.at("id").get<std::string>();
    doc.title = row.value("title", std::string{});
    doc.abstract = row.value("abstract", std::string{});
    if (auto it = row.find("mesh"); it != row.end() && !it->is_null()) {
      doc.mesh = it->get<std::vector<std::string>>();
    }
    if (auto it = row.find("pub_date"); it != row.end() && !it->is_null()) {
      doc.pub_date = parse_date(it->get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("document row: ") + e.what());
  }
  if (doc.id.empty()) throw Error(ErrorKind::parse, "document with empty id");
  return doc;
}

Json document_to_json(const Document& doc) {
  Json row;
  row["id"] = doc.id;
  row["title"] = doc.title;
  row["abstract"] = doc.abstract;
  row["mesh"] = doc.mesh;
  if (doc.pub_date) row["pub_date"] = format_date(*doc.pub_date);
  return row;
}

std::vector<Document> read_corpus(const std::filesystem::path& path) {
  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
    Document doc;
    try {
      doc = document_from_json(row);
    } catch (const Error& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!seen.insert(doc.id).second) {
      throw Error(ErrorKind::conflict, path.string() + ":" + std::to_string(lineno) + ": duplicate document id " + doc.id);
    }
    docs.push_back(std::move(doc));
  });
  return docs;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Document>& docs) {
  JsonlWriter out(path);
  for (const auto& d : docs) out.write(document_to_json(d));
  out.commit();
}

DocumentStore::DocumentStore(const std::vector<Document>& docs) {
  for (const auto& d : docs) {
    if (!by_id_.emplace(d.id, &d).second) throw Error(ErrorKind::conflict, "duplicate document id " + d.id);
  }
}

const Document* DocumentStore::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : it->second;
}

const Document& DocumentStore::at(std::string_view id) const {
  const auto* d = find(id);
  if (!d) throw Error(ErrorKind::not_found, "unknown document " + std::string(id));
  return *d;
}

AnnotationCounts count_annotations(const std::vector<Document>& docs) {
  AnnotationCounts counts;
  for (const auto& d : docs) {
    for (const auto& m : d.mesh) ++counts[m];
  }
  return counts;
}

}  // namespace biodistill
