#include "biodistill/dataset.hpp"

#include "biodistill/error.hpp"
#include "biodistill/prompts.hpp"

namespace biodistill {

namespace {

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

}  // namespace

void validate_cpt(const CptRecord& r, std::size_t max_retrieved) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorKind::validation, "record " + r.doc_id + ": " + what);
  };
  if (r.doc_id.empty()) throw Error(ErrorKind::validation, "record without doc_id");
  if (blank(r.question)) fail("empty question");
  if (blank(r.title)) fail("empty title");
  if (blank(r.context)) fail("empty context");
  if (max_retrieved > 0 && r.retrieved.size() > max_retrieved) {
    fail(std::to_string(r.retrieved.size()) + " retrieved contexts exceed k=" + std::to_string(max_retrieved));
  }
}

void validate_sft(const SftRecord& r, std::size_t max_retrieved) {
  validate_cpt(r.base, max_retrieved);
  if (blank(r.answer)) throw Error(ErrorKind::validation, "record " + r.base.doc_id + ": empty answer");
}

namespace {

Json base_json(const CptRecord& r) {
  Json j;
  j["doc_id"] = r.doc_id;
  j["title"] = r.title;
  j["context"] = r.context;
  j["retrieved"] = r.retrieved;
  j["question"] = r.question;
  return j;
}

}  // namespace

Json cpt_to_json(const CptRecord& r) {
  Json j = base_json(r);
  j["prompt"] = render_cpt_prompt(r.title, r.context, r.retrieved, r.question);
  return j;
}

Json sft_to_json(const SftRecord& r) {
  Json j = base_json(r.base);
  j["prompt"] = render_qa_prompt(r.base.title, r.base.context);
  j["answer"] = r.answer;
  return j;
}

CptRecord cpt_from_json(const Json& row) {
  try {
    CptRecord r;
    r.doc_id = row.at("doc_id").get<std::string>();
    r.title = row.at("title").get<std::string>();
    r.context = row.at("context").get<std::string>();
    r.retrieved = row.at("retrieved").get<std::vector<std::string>>();
    r.question = row.at("question").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("cpt row: ") + e.what());
  }
}

SftRecord sft_from_json(const Json& row) {
  SftRecord r{cpt_from_json(row), {}};
  try {
    r.answer = row.at("answer").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("sft row: ") + e.what());
  }
  return r;
}

std::size_t emit_cpt(std::span<const CptRecord> records, const std::filesystem::path& path,
                     std::size_t max_retrieved) {
  if (records.empty()) throw Error(ErrorKind::validation, "no CPT records to emit");
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    validate_cpt(r, max_retrieved);
    rows.push_back(cpt_to_json(r));
  }
  JsonlWriter out(path);
  for (const auto& row : rows) out.write(row);
  out.commit();
  return out.rows();
}

std::size_t emit_sft(std::span<const SftRecord> records, const std::filesystem::path& path,
                     std::size_t max_retrieved) {
  if (records.empty()) throw Error(ErrorKind::validation, "no SFT records to emit");
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    validate_sft(r, max_retrieved);
    rows.push_back(sft_to_json(r));
  }
  JsonlWriter out(path);
  for (const auto& row : rows) out.write(row);
  out.commit();
  return out.rows();
}

std::vector<CptRecord> read_cpt(const std::filesystem::path& path) {
  std::vector<CptRecord> out;
  for_each_jsonl(path, [&](const Json& row, std::size_t) { out.push_back(cpt_from_json(row)); });
  return out;
}

std::vector<SftRecord> read_sft(const std::filesystem::path& path) {
  std::vector<SftRecord> out;
  for_each_jsonl(path, [&](const Json& row, std::size_t) { out.push_back(sft_from_json(row)); });
  return out;
}

// ---------------------------------------------------------------------------

DateRange year_range(int first_year, int last_year) {
  using namespace std::chrono;
  if (last_year < first_year) throw Error(ErrorKind::config, "year range ends before it starts");
  return {year{first_year} / January / 1, year{last_year} / December / 31,
          std::to_string(first_year) + "-" + std::to_string(last_year)};
}

DateRange parse_date_range(std::string_view text) {
  if (auto sep = text.find(".."); sep != std::string_view::npos) {
    DateRange r{parse_date(text.substr(0, sep)), parse_date(text.substr(sep + 2)), std::string(text)};
    if (r.last < r.first) throw Error(ErrorKind::config, "date range " + std::string(text) + " ends before it starts");
    return r;
  }
  if (text.size() == 9 && text[4] == '-') {
    auto a = parse_date(text.substr(0, 4));
    auto b = parse_date(text.substr(5, 4));
    return year_range(static_cast<int>(a.year()), static_cast<int>(b.year()));
  }
  if (text.size() == 4) {
    int y = static_cast<int>(parse_date(text).year());
    return year_range(y, y);
  }
  throw Error(ErrorKind::config, "malformed date range '" + std::string(text) + "'");
}

std::vector<DateRange> default_chrono_ranges() {
  return {year_range(1989, 2000), year_range(2001, 2004), year_range(2005, 2007), year_range(2008, 2009),
          year_range(2010, 2011), year_range(2012, 2013), year_range(2014, 2015), year_range(2016, 2017)};
}

ChronoSlices slice_chronological(std::span<const Document> records, std::span<const DateRange> ranges) {
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (ranges[i].last < ranges[i].first) throw Error(ErrorKind::config, "range " + ranges[i].label + " is inverted");
    if (i > 0 && !(ranges[i - 1].last < ranges[i].first)) {
      throw Error(ErrorKind::config, "ranges " + ranges[i - 1].label + " and " + ranges[i].label +
                                         " overlap or are out of order");
    }
  }
  ChronoSlices out;
  for (const auto& r : ranges) out.slices.emplace_back(r, std::vector<Document>{});
  for (const auto& rec : records) {
    bool placed = false;
    if (rec.pub_date) {
      for (auto& [range, members] : out.slices) {
        if (range.first <= *rec.pub_date && *rec.pub_date <= range.last) {
          members.push_back(rec);
          placed = true;
          break;
        }
      }
    }
    if (!placed) out.out_of_range.push_back(rec);
  }
  return out;
}

std::map<std::string, std::vector<Document>> slice_by_mesh(std::span<const Document> records,
                                                           const MeshOntology& ontology,
                                                           std::span<const std::string> targets) {
  std::map<std::string, std::vector<Document>> out;
  for (const auto& t : targets) {
    if (!ontology.contains(t)) throw Error(ErrorKind::config, "unknown target MeSH term " + t);
    out[t];
  }
  for (const auto& rec : records) {
    for (const auto& t : targets) {
      for (const auto& m : rec.mesh) {
        if (ontology.contains(m) && ontology.subsumes(t, m)) {
          out[t].push_back(rec);
          break;
        }
      }
    }
  }
  return out;
}

namespace {

std::filesystem::path write_docs(const std::filesystem::path& path, const std::vector<Document>& docs) {
  JsonlWriter out(path);
  for (const auto& d : docs) out.write(document_to_json(d));
  out.commit();
  return path;
}

}  // namespace

std::vector<std::filesystem::path> write_chrono_slices(const std::filesystem::path& dir, const ChronoSlices& slices) {
  std::vector<std::filesystem::path> paths;
  for (const auto& [range, members] : slices.slices) paths.push_back(write_docs(dir / (range.label + ".jsonl"), members));
  if (!slices.out_of_range.empty()) paths.push_back(write_docs(dir / "out_of_range.jsonl", slices.out_of_range));
  return paths;
}

std::vector<std::filesystem::path> write_mesh_slices(const std::filesystem::path& dir,
                                                     const std::map<std::string, std::vector<Document>>& slices) {
  std::vector<std::filesystem::path> paths;
  for (const auto& [term, members] : slices) paths.push_back(write_docs(dir / (term + ".jsonl"), members));
  return paths;
}

}  // namespace biodistill
