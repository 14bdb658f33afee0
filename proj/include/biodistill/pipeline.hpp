#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "biodistill/config.hpp"
#include "biodistill/document.hpp"
#include "biodistill/evaluation.hpp"
#include "biodistill/llm.hpp"
#include "biodistill/mesh.hpp"
#include "biodistill/retrieval.hpp"

namespace biodistill {

// Append-only per-document log. The first line is a header identifying the
// run; later lines are entries keyed by "doc_id" (the last entry for an id
// wins). A torn final line from a killed process is dropped on reopen.
class Journal {
 public:
  // Opens or creates the journal. An existing journal whose header differs
  // from `header` is a configuration error: resuming must use the same
  // settings.
  Journal(std::filesystem::path path, Json header, std::size_t flush_interval = 1);
  ~Journal();

  const std::map<std::string, Json>& entries() const { return entries_; }
  bool has(const std::string& doc_id) const;
  void append(const Json& entry);
  void flush();

 private:
  std::filesystem::path path_;
  std::size_t flush_interval_;
  std::size_t pending_ = 0;
  std::map<std::string, Json> entries_;
  std::ofstream out_;
  mutable std::mutex mu_;
};

struct RunOptions {
  // Only the first `limit` corpus documents take part.
  std::optional<std::size_t> limit;
  // Process at most this many new documents, then return as interrupted
  // without writing outputs.
  std::optional<std::size_t> stop_after;
  // Corpus phase: reuse backend b in place of the DPO-trained generator.
  bool dry_run_star = false;
};

struct StageCounts {
  std::size_t attempted = 0;
  std::size_t generated = 0;
  std::size_t retrieved = 0;
  std::size_t labeled = 0;
  std::size_t tied = 0;
  std::size_t skipped = 0;
  std::size_t answered = 0;
  std::size_t judge_fallbacks = 0;
  std::size_t resumed = 0;

  Json to_json() const;
};

struct PhaseResult {
  bool complete = false;
  StageCounts counts;
  std::map<std::string, std::filesystem::path> files;
  std::filesystem::path manifest;
};

using BackendFactory = std::function<std::shared_ptr<ChatBackend>(const BackendConfig&)>;

// Skip rates above this fraction of attempted documents abort a phase.
inline constexpr double kMaxSkipRate = 0.5;

class Pipeline {
 public:
  // `factory` builds the agent clients; the default honours each backend's
  // kind. Tests inject scripted backends through it.
  explicit Pipeline(PipelineConfig config, BackendFactory factory = {});

  const PipelineConfig& config() const { return config_; }

  // Two generators -> retrieval -> rule or LLM labels -> preference dataset,
  // evaluator fine-tuning file, DPO file and manifest under output_dir.
  PhaseResult run_preference_phase(const RunOptions& options);

  // Generator -> retrieval -> answer agent -> CPT and SFT files and manifest.
  PhaseResult run_corpus_phase(const RunOptions& options);

 private:
  struct Resources;
  Resources& resources(bool need_ontology);
  std::shared_ptr<ChatBackend> backend(const BackendConfig& config);

  PipelineConfig config_;
  BackendFactory factory_;
  std::shared_ptr<RequestLimiter> limiter_;
  std::shared_ptr<Resources> resources_;
};

}  // namespace biodistill
