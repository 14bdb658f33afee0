#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "biodistill/document.hpp"
#include "biodistill/jsonl.hpp"
#include "biodistill/mesh.hpp"

namespace biodistill {

// Question-context row for continued pre-training.
struct CptRecord {
  std::string doc_id;
  std::string title;
  std::string context;
  std::vector<std::string> retrieved;
  std::string question;

  friend bool operator==(const CptRecord&, const CptRecord&) = default;
};

// Question-context-answer row for supervised fine-tuning.
struct SftRecord {
  CptRecord base;
  std::string answer;

  friend bool operator==(const SftRecord&, const SftRecord&) = default;
};

// Throws Error(validation). `max_retrieved` of 0 disables the length check.
void validate_cpt(const CptRecord& record, std::size_t max_retrieved = 0);
void validate_sft(const SftRecord& record, std::size_t max_retrieved = 0);

// {"doc_id","title","context","retrieved","question","prompt"}; the prompt is
// the continued pre-training narrative.
Json cpt_to_json(const CptRecord& record);
// CPT fields plus "answer"; the prompt is the QA inference prompt.
Json sft_to_json(const SftRecord& record);
CptRecord cpt_from_json(const Json& row);
SftRecord sft_from_json(const Json& row);

// Every record is validated before anything is written; one bad record
// aborts the file. Returns the row count.
std::size_t emit_cpt(std::span<const CptRecord> records, const std::filesystem::path& path,
                     std::size_t max_retrieved = 0);
std::size_t emit_sft(std::span<const SftRecord> records, const std::filesystem::path& path,
                     std::size_t max_retrieved = 0);
std::vector<CptRecord> read_cpt(const std::filesystem::path& path);
std::vector<SftRecord> read_sft(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Evaluation slices

struct DateRange {
  Date first;
  Date last;
  std::string label;
};

// Whole calendar years, labelled "YYYY-YYYY".
DateRange year_range(int first_year, int last_year);
// "1989-2000" or "2001-03-01..2004-12-31".
DateRange parse_date_range(std::string_view text);
// 1989-2000, 2001-2004, 2005-2007, 2008-2009, 2010-2011, 2012-2013,
// 2014-2015, 2016-2017.
std::vector<DateRange> default_chrono_ranges();

struct ChronoSlices {
  std::vector<std::pair<DateRange, std::vector<Document>>> slices;
  // Undated records and records outside every range.
  std::vector<Document> out_of_range;
};

// Ranges must be sorted and non-overlapping (Error(config) otherwise).
ChronoSlices slice_chronological(std::span<const Document> records, std::span<const DateRange> ranges);

// A record joins the subset of target t when t or a descendant of t is among
// its MeSH ids. Subsets may overlap. Unknown targets throw Error(config).
std::map<std::string, std::vector<Document>> slice_by_mesh(std::span<const Document> records,
                                                           const MeshOntology& ontology,
                                                           std::span<const std::string> targets);

// One "<label>.jsonl" per slice, plus "out_of_range.jsonl" when any record
// missed every range. Returns the paths written.
std::vector<std::filesystem::path> write_chrono_slices(const std::filesystem::path& dir, const ChronoSlices& slices);
std::vector<std::filesystem::path> write_mesh_slices(const std::filesystem::path& dir,
                                                     const std::map<std::string, std::vector<Document>>& slices);

}  // namespace biodistill
