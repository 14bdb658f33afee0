#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "biodistill/document.hpp"
#include "biodistill/evaluation.hpp"
#include "biodistill/prompts.hpp"

namespace biodistill {

struct DpoConfig {
  double beta = 0.1;

  // Throws Error(config) unless beta is finite and positive.
  void validate() const;
};

struct DpoExample {
  std::string prompt;
  std::string preferred;
  std::string dispreferred;
  std::optional<double> logp_preferred;
  std::optional<double> logp_dispreferred;
};

// -log( e^{b*lp} / (e^{b*lp} + e^{b*lm}) ) = softplus(b * (lm - lp)), evaluated
// without overflow for any finite product. beta = 0 is accepted (the loss is
// ln 2) but logged as a configuration warning; negative or non-finite input
// throws Error(validation).
double dpo_loss(double logp_preferred, double logp_dispreferred, double beta);

// Mean of dpo_loss over the examples. Throws Error(validation) listing every
// index that lacks a log-probability.
double dpo_batch_loss(std::span<const DpoExample> examples, const DpoConfig& config);

struct DpoExportStats {
  std::size_t rows = 0;
  std::size_t ties = 0;
};

// {"prompt","chosen","rejected"} rows, prompts rendered from each record's
// document through `templ`, plus a `<path>.meta.json` sidecar with beta,
// seed, counts and the ids of tied records.
DpoExportStats export_dpo(std::span<const PreferenceRecord> records, const DocumentStore& store,
                          const PromptTemplate& templ, const DpoConfig& config, std::uint64_t seed,
                          const std::filesystem::path& path);

std::vector<DpoExample> read_dpo(const std::filesystem::path& path);

}  // namespace biodistill
