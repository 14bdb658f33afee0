#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biodistill/document.hpp"
#include "biodistill/llm.hpp"
#include "biodistill/mesh.hpp"
#include "biodistill/retrieval.hpp"

namespace biodistill {

// A generated question with the contexts retrieved for it and, aligned 1:1,
// the MeSH ids each context document carries.
struct CandidatePair {
  CandidateQuestion question;
  std::vector<std::string> contexts;
  std::vector<std::vector<std::string>> context_mesh;

  // Union of the contexts' MeSH ids, sorted, duplicates collapsed.
  std::vector<std::string> pooled_terms() const;
};

CandidatePair make_candidate_pair(CandidateQuestion question, const RetrievalResult& retrieved,
                                  const DocumentStore& store);

enum class LabelSource { rule, llm };
const char* to_string(LabelSource source);

struct PreferenceRecord {
  std::string doc_id;
  CandidatePair chosen;
  CandidatePair rejected;
  std::optional<HierarchyScore> score_chosen;
  std::optional<HierarchyScore> score_rejected;
  LabelSource source = LabelSource::rule;
  bool tie = false;
  // The LLM judge gave no usable verdict and the rule label was used instead.
  bool judge_fallback = false;
};

// Hierarchy similarity between the document's MeSH ids and the pooled
// context ids. Throws Error(empty_terms) when either side is empty after
// filtering.
HierarchyScore score_pair(const MeshOntology& ontology, const Document& doc, const CandidatePair& pair);

// Picks the pair with the higher score; an exact tie keeps pair_a (the
// domain-specific agent) and sets the tie flag. Throws Error(labeling) when
// either pair cannot be scored.
PreferenceRecord rule_based_prefer(const MeshOntology& ontology, const Document& doc, const CandidatePair& pair_a,
                                   const CandidatePair& pair_b);

struct PreferenceInput {
  const Document* doc = nullptr;
  CandidatePair pair_a;
  CandidatePair pair_b;
};

struct PreferenceSummary {
  std::size_t labeled = 0;
  std::size_t ties = 0;
  std::size_t skipped = 0;
};

struct PreferenceDataset {
  std::vector<PreferenceRecord> records;
  PreferenceSummary summary;
  // (doc id, reason) for every skipped input.
  std::vector<std::pair<std::string, std::string>> skips;
};

PreferenceDataset build_preference_dataset(const MeshOntology& ontology, std::span<const PreferenceInput> inputs);

Json candidate_pair_to_json(const CandidatePair& pair);
CandidatePair candidate_pair_from_json(const Json& row, const std::string& doc_id);
Json preference_to_json(const PreferenceRecord& record);
PreferenceRecord preference_from_json(const Json& row);
std::size_t write_preference_dataset(const std::filesystem::path& path, std::span<const PreferenceRecord> records);
std::vector<PreferenceRecord> read_preference_dataset(const std::filesystem::path& path);

// Whether the record's pairs are presented in B/A order for `doc_id`. Depends
// only on the seed and the id.
bool presentation_swapped(std::uint64_t seed, std::string_view salt, std::string_view doc_id);

struct EvalFinetuneRow {
  std::string doc_id;
  std::string document;
  CandidatePair pair_a;
  CandidatePair pair_b;
  char label = 'A';
  bool swapped = false;
};

// Rows of {"doc_id","document","pair_a","pair_b","label","swapped"} with the
// chosen pair placed at A or B per row from `seed`. Writes a
// `<path>.meta.json` sidecar recording the seed. Returns the row count.
std::size_t export_eval_finetune(std::span<const PreferenceRecord> records, const DocumentStore& store,
                                 std::uint64_t seed, const std::filesystem::path& path);
std::vector<EvalFinetuneRow> read_eval_finetune(const std::filesystem::path& path);

// Strict verdict: the trimmed reply must be "A" or "B", optionally followed by
// a period.
std::optional<char> parse_verdict(std::string_view reply);

std::string render_judge_prompt(const Document& doc, const DocumentStore& store, const CandidatePair& first,
                                const CandidatePair& second);

// Asks the judge which pair is better. The presentation order is randomised
// from `seed`; an unparseable verdict gets one reprompt, then the rule label
// is used with judge_fallback set.
PreferenceRecord llm_prefer(ChatBackend& judge, const MeshOntology& ontology, const DocumentStore& store,
                            const Document& doc, const CandidatePair& pair_a, const CandidatePair& pair_b,
                            std::uint64_t seed);

}  // namespace biodistill
