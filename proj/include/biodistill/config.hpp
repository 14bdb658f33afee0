#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "biodistill/jsonl.hpp"
#include "biodistill/llm.hpp"
#include "biodistill/mesh.hpp"

namespace biodistill {

// Flat sectioned key=value text:
//
//   # comment
//   [section]
//   key = value
//
// Keys before the first section header belong to the "" section. Values are
// trimmed; there is no quoting or escaping. Duplicate keys are an error.
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in, const std::string& source = "<config>");
  static ConfigFile load(const std::filesystem::path& path);

  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  bool has_section(const std::string& section) const;
  std::vector<std::string> sections() const;
  std::vector<std::string> keys(const std::string& section) const;
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::map<std::string, std::map<std::string, std::string>> values_;
};

enum class EvaluatorMode { rule, llm };

struct EmbedderSettings {
  std::string kind = "hash";
  std::size_t dimension = 64;
  std::string base_url;
  std::string model;
  std::string api_key_env;
};

struct PipelineConfig {
  // [paths]; relative paths resolve against the config file's directory.
  std::filesystem::path mesh;
  std::optional<MeshFormat> mesh_format;
  std::filesystem::path counts;
  std::filesystem::path corpus;
  std::filesystem::path output_dir;
  std::filesystem::path index;

  // [retrieval]
  std::size_t k = 4;
  EmbedderSettings embedder;

  // [evaluation]
  EvaluatorMode evaluator = EvaluatorMode::rule;
  IcMode ic_mode = IcMode::corpus;

  // [dpo]
  double beta = 0.1;

  // [run]
  std::uint64_t seed = 0;
  std::size_t concurrency = 8;
  std::size_t checkpoint_interval = 1;
  bool allow_same_backend = false;

  // [backend.a] [backend.b] [backend.star] [backend.answer] [backend.judge]
  std::optional<BackendConfig> backend_a;
  std::optional<BackendConfig> backend_b;
  std::optional<BackendConfig> backend_star;
  std::optional<BackendConfig> backend_answer;
  std::optional<BackendConfig> backend_judge;

  // Throws Error(config).
  void validate_common() const;
  void validate_preference() const;
  void validate_corpus(bool dry_run_star) const;

  // Settings that shape outputs; concurrency and checkpointing are excluded
  // so they can change between a run and its resume.
  Json snapshot() const;
};

PipelineConfig pipeline_config_from(const ConfigFile& file, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace biodistill
