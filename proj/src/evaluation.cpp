#include "biodistill/evaluation.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>

#include "biodistill/error.hpp"
#include "biodistill/hashing.hpp"

namespace biodistill {

std::vector<std::string> CandidatePair::pooled_terms() const {
  std::vector<std::string> out;
  for (const auto& terms : context_mesh) out.insert(out.end(), terms.begin(), terms.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

CandidatePair make_candidate_pair(CandidateQuestion question, const RetrievalResult& retrieved,
                                  const DocumentStore& store) {
  CandidatePair pair;
  pair.question = std::move(question);
  for (const auto& hit : retrieved.ranked) {
    pair.contexts.push_back(hit.id);
    const auto* doc = store.find(hit.id);
    pair.context_mesh.push_back(doc ? doc->mesh : std::vector<std::string>{});
  }
  return pair;
}

const char* to_string(LabelSource source) { return source == LabelSource::rule ? "rule" : "llm"; }

HierarchyScore score_pair(const MeshOntology& ontology, const Document& doc, const CandidatePair& pair) {
  if (pair.contexts.size() != pair.context_mesh.size()) {
    throw Error(ErrorKind::validation, "context MeSH list is not aligned with the contexts");
  }
  auto pooled = pair.pooled_terms();
  return ontology.set_similarity(doc.mesh, pooled);
}

PreferenceRecord rule_based_prefer(const MeshOntology& ontology, const Document& doc, const CandidatePair& pair_a,
                                   const CandidatePair& pair_b) {
  HierarchyScore sa, sb;
  try {
    sa = score_pair(ontology, doc, pair_a);
    sb = score_pair(ontology, doc, pair_b);
  } catch (const Error& e) {
    throw Error(ErrorKind::labeling, "document " + doc.id + " is unscorable: " + e.what());
  }
  PreferenceRecord rec;
  rec.doc_id = doc.id;
  rec.source = LabelSource::rule;
  rec.tie = sa.value == sb.value;
  if (sb.value > sa.value) {
    rec.chosen = pair_b;
    rec.rejected = pair_a;
    rec.score_chosen = sb;
    rec.score_rejected = sa;
  } else {
    rec.chosen = pair_a;
    rec.rejected = pair_b;
    rec.score_chosen = sa;
    rec.score_rejected = sb;
  }
  return rec;
}

PreferenceDataset build_preference_dataset(const MeshOntology& ontology, std::span<const PreferenceInput> inputs) {
  PreferenceDataset out;
  for (const auto& in : inputs) {
    if (!in.doc) throw Error(ErrorKind::validation, "preference input without a document");
    try {
      out.records.push_back(rule_based_prefer(ontology, *in.doc, in.pair_a, in.pair_b));
      ++out.summary.labeled;
      if (out.records.back().tie) ++out.summary.ties;
    } catch (const Error& e) {
      spdlog::warn("skipping {}: {}", in.doc->id, e.what());
      ++out.summary.skipped;
      out.skips.emplace_back(in.doc->id, e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

Json candidate_pair_to_json(const CandidatePair& pair) {
  Json j;
  j["question"] = pair.question.text;
  j["generator"] = to_string(pair.question.tag);
  j["contexts"] = pair.contexts;
  j["context_mesh"] = pair.context_mesh;
  if (!pair.question.params.is_null()) j["params"] = pair.question.params;
  return j;
}

CandidatePair candidate_pair_from_json(const Json& row, const std::string& doc_id) {
  CandidatePair pair;
  pair.question.text = row.at("question").get<std::string>();
  pair.question.source_doc = doc_id;
  pair.question.tag = parse_generator_tag(row.value("generator", std::string("a")));
  if (auto it = row.find("params"); it != row.end()) pair.question.params = *it;
  pair.contexts = row.at("contexts").get<std::vector<std::string>>();
  if (auto it = row.find("context_mesh"); it != row.end()) {
    pair.context_mesh = it->get<std::vector<std::vector<std::string>>>();
  } else {
    pair.context_mesh.assign(pair.contexts.size(), {});
  }
  return pair;
}

namespace {

Json score_json(const std::optional<HierarchyScore>& s) { return s ? Json(s->value) : Json(nullptr); }

std::optional<HierarchyScore> score_from(const Json& value, const Json& count) {
  if (value.is_null()) return std::nullopt;
  return HierarchyScore{value.get<double>(), count.is_null() ? 0 : count.get<std::size_t>()};
}

}  // namespace

Json preference_to_json(const PreferenceRecord& r) {
  Json j;
  j["doc_id"] = r.doc_id;
  j["chosen"] = candidate_pair_to_json(r.chosen);
  j["rejected"] = candidate_pair_to_json(r.rejected);
  j["score_chosen"] = score_json(r.score_chosen);
  j["score_rejected"] = score_json(r.score_rejected);
  j["pair_counts"] = Json::array({r.score_chosen ? Json(r.score_chosen->pair_count) : Json(nullptr),
                                  r.score_rejected ? Json(r.score_rejected->pair_count) : Json(nullptr)});
  j["tie"] = r.tie;
  j["source"] = to_string(r.source);
  j["judge_fallback"] = r.judge_fallback;
  return j;
}

PreferenceRecord preference_from_json(const Json& row) {
  PreferenceRecord r;
  try {
    r.doc_id = row.at("doc_id").get<std::string>();
    r.chosen = candidate_pair_from_json(row.at("chosen"), r.doc_id);
    r.rejected = candidate_pair_from_json(row.at("rejected"), r.doc_id);
    Json counts = row.value("pair_counts", Json::array({nullptr, nullptr}));
    r.score_chosen = score_from(row.at("score_chosen"), counts.at(0));
    r.score_rejected = score_from(row.at("score_rejected"), counts.at(1));
    r.tie = row.at("tie").get<bool>();
    const auto source = row.at("source").get<std::string>();
    if (source != "rule" && source != "llm") throw Error(ErrorKind::parse, "unknown label source " + source);
    r.source = source == "rule" ? LabelSource::rule : LabelSource::llm;
    r.judge_fallback = row.value("judge_fallback", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("preference record: ") + e.what());
  }
  return r;
}

std::size_t write_preference_dataset(const std::filesystem::path& path, std::span<const PreferenceRecord> records) {
  JsonlWriter out(path);
  for (const auto& r : records) out.write(preference_to_json(r));
  out.commit();
  return out.rows();
}

std::vector<PreferenceRecord> read_preference_dataset(const std::filesystem::path& path) {
  std::vector<PreferenceRecord> out;
  for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
    try {
      out.push_back(preference_from_json(row));
    } catch (const Error& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Evaluator fine-tuning export

bool presentation_swapped(std::uint64_t seed, std::string_view salt, std::string_view doc_id) {
  std::string key(salt);
  key += ':';
  key += doc_id;
  return (keyed_bits(seed, key) & 1U) != 0;
}

namespace {

Json eval_pair_json(const CandidatePair& pair, const DocumentStore& store) {
  Json j = candidate_pair_to_json(pair);
  std::vector<std::string> texts;
  for (const auto& id : pair.contexts) {
    const auto* d = store.find(id);
    texts.push_back(d ? d->text() : std::string{});
  }
  j["context_texts"] = texts;
  return j;
}

}  // namespace

std::size_t export_eval_finetune(std::span<const PreferenceRecord> records, const DocumentStore& store,
                                 std::uint64_t seed, const std::filesystem::path& path) {
  if (records.empty()) throw Error(ErrorKind::validation, "no preference records to export");
  JsonlWriter out(path);
  for (const auto& r : records) {
    const bool swapped = presentation_swapped(seed, "eval", r.doc_id);
    const auto* doc = store.find(r.doc_id);
    Json row;
    row["doc_id"] = r.doc_id;
    row["document"] = doc ? doc->text() : std::string{};
    row["pair_a"] = eval_pair_json(swapped ? r.rejected : r.chosen, store);
    row["pair_b"] = eval_pair_json(swapped ? r.chosen : r.rejected, store);
    row["label"] = swapped ? "B" : "A";
    row["swapped"] = swapped;
    out.write(row);
  }
  out.commit();

  Json meta;
  meta["seed"] = seed;
  meta["rows"] = out.rows();
  write_json_file(path.string() + ".meta.json", meta);
  return out.rows();
}

std::vector<EvalFinetuneRow> read_eval_finetune(const std::filesystem::path& path) {
  std::vector<EvalFinetuneRow> out;
  for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
    try {
      EvalFinetuneRow r;
      r.doc_id = row.at("doc_id").get<std::string>();
      r.document = row.at("document").get<std::string>();
      r.pair_a = candidate_pair_from_json(row.at("pair_a"), r.doc_id);
      r.pair_b = candidate_pair_from_json(row.at("pair_b"), r.doc_id);
      const auto label = row.at("label").get<std::string>();
      if (label != "A" && label != "B") throw Error(ErrorKind::parse, "label must be A or B");
      r.label = label[0];
      r.swapped = row.at("swapped").get<bool>();
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// LLM judge

std::optional<char> parse_verdict(std::string_view reply) {
  const auto* ws = " \t\r\n";
  auto b = reply.find_first_not_of(ws);
  if (b == std::string_view::npos) return std::nullopt;
  auto e = reply.find_last_not_of(ws);
  auto v = reply.substr(b, e - b + 1);
  if (v.size() == 2 && v[1] == '.') v = v.substr(0, 1);
  if (v == "A" || v == "B") return v[0];
  return std::nullopt;
}

std::string render_judge_prompt(const Document& doc, const DocumentStore& store, const CandidatePair& first,
                                const CandidatePair& second) {
  auto texts = [&](const CandidatePair& p) {
    std::vector<std::string> out;
    for (const auto& id : p.contexts) {
      const auto* d = store.find(id);
      out.push_back(d ? d->text() : id);
    }
    return numbered_contexts(out);
  };
  return judge_template().render({{"Document", doc.text()},
                                  {"Question A", first.question.text},
                                  {"Contexts A", texts(first)},
                                  {"Question B", second.question.text},
                                  {"Contexts B", texts(second)}});
}

PreferenceRecord llm_prefer(ChatBackend& judge, const MeshOntology& ontology, const DocumentStore& store,
                            const Document& doc, const CandidatePair& pair_a, const CandidatePair& pair_b,
                            std::uint64_t seed) {
  const bool swapped = presentation_swapped(seed, "judge", doc.id);
  const CandidatePair& first = swapped ? pair_b : pair_a;
  const CandidatePair& second = swapped ? pair_a : pair_b;

  const auto prompt = render_judge_prompt(doc, store, first, second);
  auto verdict = parse_verdict(judge.complete(prompt).text);
  if (!verdict) verdict = parse_verdict(judge.complete(prompt + std::string(kJudgeReprompt)).text);

  if (!verdict) {
    spdlog::warn("judge gave no usable verdict for {}; using the rule label", doc.id);
    auto rec = rule_based_prefer(ontology, doc, pair_a, pair_b);
    rec.judge_fallback = true;
    return rec;
  }

  const bool first_wins = *verdict == 'A';
  const CandidatePair& winner = first_wins ? first : second;
  const CandidatePair& loser = first_wins ? second : first;

  PreferenceRecord rec;
  rec.doc_id = doc.id;
  rec.chosen = winner;
  rec.rejected = loser;
  rec.source = LabelSource::llm;
  // Rule scores ride along for auditing when they can be computed.
  try {
    rec.score_chosen = score_pair(ontology, doc, winner);
    rec.score_rejected = score_pair(ontology, doc, loser);
  } catch (const Error& e) {
    spdlog::debug("no rule scores for {}: {}", doc.id, e.what());
    rec.score_chosen.reset();
    rec.score_rejected.reset();
  }
  return rec;
}

}  // namespace biodistill
