#include "biodistill/dpo.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

#include "biodistill/error.hpp"

namespace biodistill {

void DpoConfig::validate() const {
  if (!std::isfinite(beta) || beta <= 0.0) {
    throw Error(ErrorKind::config, "dpo beta must be finite and positive, got " + std::to_string(beta));
  }
}

double dpo_loss(double logp_preferred, double logp_dispreferred, double beta) {
  if (!std::isfinite(logp_preferred) || !std::isfinite(logp_dispreferred) || !std::isfinite(beta)) {
    throw Error(ErrorKind::validation, "dpo_loss inputs must be finite");
  }
  if (beta < 0.0) throw Error(ErrorKind::validation, "dpo beta must be non-negative");
  if (beta == 0.0) spdlog::warn("dpo beta is 0; every pair has loss ln 2");

  const double z = beta * (logp_dispreferred - logp_preferred);
  if (!std::isfinite(z)) throw Error(ErrorKind::validation, "beta * logprob gap overflows");
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double dpo_batch_loss(std::span<const DpoExample> examples, const DpoConfig& config) {
  if (examples.empty()) throw Error(ErrorKind::validation, "dpo batch is empty");
  std::string missing;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!examples[i].logp_preferred || !examples[i].logp_dispreferred) {
      if (!missing.empty()) missing += ", ";
      missing += std::to_string(i);
    }
  }
  if (!missing.empty()) throw Error(ErrorKind::validation, "examples missing log-probabilities: " + missing);

  double sum = 0.0;
  for (const auto& ex : examples) sum += dpo_loss(*ex.logp_preferred, *ex.logp_dispreferred, config.beta);
  return sum / static_cast<double>(examples.size());
}

DpoExportStats export_dpo(std::span<const PreferenceRecord> records, const DocumentStore& store,
                          const PromptTemplate& templ, const DpoConfig& config, std::uint64_t seed,
                          const std::filesystem::path& path) {
  config.validate();
  if (records.empty()) throw Error(ErrorKind::validation, "no preference records to export");

  DpoExportStats stats;
  Json tied = Json::array();
  JsonlWriter out(path);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.chosen.question.text.empty() || r.rejected.question.text.empty()) {
      throw Error(ErrorKind::validation, "record " + std::to_string(i) + " (" + r.doc_id + ") has an empty question");
    }
    if (r.chosen.question.text == r.rejected.question.text) {
      spdlog::warn("record {} prefers a question identical to the rejected one", r.doc_id);
    }
    const auto& doc = store.at(r.doc_id);
    Json row;
    row["prompt"] = templ.render({{"Title", doc.title}, {"Context", doc.abstract}});
    row["chosen"] = r.chosen.question.text;
    row["rejected"] = r.rejected.question.text;
    out.write(row);
    if (r.tie) {
      ++stats.ties;
      tied.push_back(r.doc_id);
    }
  }
  out.commit();
  stats.rows = out.rows();

  Json meta;
  meta["beta"] = config.beta;
  meta["seed"] = seed;
  meta["rows"] = stats.rows;
  meta["ties"] = stats.ties;
  meta["tied_doc_ids"] = tied;
  write_json_file(path.string() + ".meta.json", meta);
  return stats;
}

std::vector<DpoExample> read_dpo(const std::filesystem::path& path) {
  std::vector<DpoExample> out;
  for_each_jsonl(path, [&](const Json& row, std::size_t lineno) {
    try {
      DpoExample ex;
      ex.prompt = row.at("prompt").get<std::string>();
      ex.preferred = row.at("chosen").get<std::string>();
      ex.dispreferred = row.at("rejected").get<std::string>();
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace biodistill
