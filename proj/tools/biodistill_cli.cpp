// Command-line front end. Exit codes: 0 ok, 1 runtime failure, 2 usage or
// configuration error.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "biodistill/config.hpp"
#include "biodistill/dataset.hpp"
#include "biodistill/document.hpp"
#include "biodistill/dpo.hpp"
#include "biodistill/error.hpp"
#include "biodistill/evaluation.hpp"
#include "biodistill/mesh.hpp"
#include "biodistill/pipeline.hpp"
#include "biodistill/prompts.hpp"
#include "biodistill/retrieval.hpp"

namespace fs = std::filesystem;
using namespace biodistill;

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

MeshOntology load_ontology(const fs::path& source, const std::string& format, const fs::path& counts,
                           const std::string& ic_mode) {
  auto fmt = format.empty() ? mesh_format_for(source) : parse_mesh_format(format);
  auto ontology = parse_mesh_file(source, fmt);
  if (parse_ic_mode(ic_mode) == IcMode::corpus) {
    if (counts.empty()) throw Error(ErrorKind::config, "corpus IC mode needs --counts");
    ontology = ontology.with_counts(read_annotation_counts(counts));
  }
  return ontology;
}

void print_counts(const PhaseResult& r) {
  std::cout << r.counts.to_json().dump(2) << '\n';
  for (const auto& [name, path] : r.files) std::cout << name << ": " << path.string() << '\n';
  if (!r.manifest.empty()) std::cout << "manifest: " << r.manifest.string() << '\n';
  if (!r.complete) std::cout << "stopped early; rerun the same command to resume\n";
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("biodistill"));
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Distil biomedical literature into preference-labelled question/context/answer datasets"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");

  std::function<int()> action;

  // mesh build ---------------------------------------------------------------
  auto* mesh = app.add_subcommand("mesh", "MeSH ontology tools");
  mesh->require_subcommand(1);
  auto* mesh_build = mesh->add_subcommand("build", "Parse descriptors and report the hierarchy");
  fs::path mesh_source, mesh_counts, mesh_out;
  std::string mesh_format, mesh_ic = "structural";
  mesh_build->add_option("--source", mesh_source, "Descriptor XML or TSV")->required();
  mesh_build->add_option("--format", mesh_format, "mesh-xml or tsv (default: by extension)");
  mesh_build->add_option("--counts", mesh_counts, "Annotation counts TSV");
  mesh_build->add_option("--ic-mode", mesh_ic, "corpus or structural")->capture_default_str();
  mesh_build->add_option("--out", mesh_out, "Write the normalised TSV here");
  mesh_build->callback([&] {
    action = [&] {
      auto ontology = load_ontology(mesh_source, mesh_format, mesh_counts, mesh_ic);
      std::cout << "descriptors: " << ontology.size() << '\n'
                << "root children: " << ontology.root_children().size() << '\n'
                << "ic mode: " << to_string(ontology.ic_mode()) << '\n'
                << "total mass: " << ontology.total_mass() << '\n';
      if (!mesh_out.empty()) {
        std::ofstream out(mesh_out, std::ios::binary);
        if (!out) throw Error(ErrorKind::io, "cannot write " + mesh_out.string());
        write_mesh_tsv(out, ontology);
      }
      return 0;
    };
  });

  // index build --------------------------------------------------------------
  auto* index = app.add_subcommand("index", "Dense retrieval index");
  index->require_subcommand(1);
  auto* index_build = index->add_subcommand("build", "Embed a corpus and write the index");
  fs::path index_corpus, index_out;
  std::string index_embedder = "hash", index_url, index_model, index_key_env;
  std::size_t index_dim = 64;
  index_build->add_option("--corpus", index_corpus, "Corpus JSONL")->required();
  index_build->add_option("--out", index_out, "Index JSONL")->required();
  index_build->add_option("--embedder", index_embedder, "hash or remote")->capture_default_str();
  index_build->add_option("--dimension", index_dim, "Embedding dimension")->capture_default_str();
  index_build->add_option("--base-url", index_url, "Remote embeddings endpoint base URL");
  index_build->add_option("--model", index_model, "Remote embedding model");
  index_build->add_option("--api-key-env", index_key_env, "Environment variable holding the API key");
  index_build->callback([&] {
    action = [&] {
      auto docs = read_corpus(index_corpus);
      std::unique_ptr<Embedder> embedder;
      if (index_embedder == "remote") {
        embedder = std::make_unique<RemoteEmbedder>(
            RemoteEmbedderConfig{index_url, index_model, index_key_env, index_dim, RetryPolicy{}},
            std::make_shared<RequestLimiter>(8));
      } else if (index_embedder == "hash") {
        embedder = std::make_unique<HashEmbedder>(index_dim);
      } else {
        throw Error(ErrorKind::config, "--embedder must be hash or remote");
      }
      auto idx = CorpusIndex::build(docs, *embedder);
      idx.save(index_out);
      std::cout << "indexed " << idx.size() << " documents (" << idx.fingerprint() << ")\n";
      return 0;
    };
  });

  // distill prefer|corpus ----------------------------------------------------
  auto* distill = app.add_subcommand("distill", "Run a pipeline phase");
  distill->require_subcommand(1);
  fs::path config_path;
  RunOptions run;
  std::size_t limit = 0, stop_after = 0;
  auto add_run_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Pipeline config file")->required();
    cmd->add_option("--limit", limit, "Only the first N corpus documents");
    cmd->add_option("--stop-after", stop_after, "Process at most N new documents, then stop (resumable)");
  };
  auto finish_run_options = [&] {
    if (limit > 0) run.limit = limit;
    if (stop_after > 0) run.stop_after = stop_after;
  };
  auto* prefer = distill->add_subcommand("prefer", "Preference phase: two generators, retrieval, labels, DPO export");
  add_run_options(prefer);
  prefer->callback([&] {
    action = [&] {
      finish_run_options();
      Pipeline pipeline(load_pipeline_config(config_path));
      auto r = pipeline.run_preference_phase(run);
      print_counts(r);
      return 0;
    };
  });
  auto* corpus = distill->add_subcommand("corpus", "Corpus phase: generator, retrieval, answers, CPT/SFT files");
  add_run_options(corpus);
  corpus->add_flag("--dry-run-star", run.dry_run_star, "Use backend b in place of the DPO-trained generator");
  corpus->callback([&] {
    action = [&] {
      finish_run_options();
      Pipeline pipeline(load_pipeline_config(config_path));
      auto r = pipeline.run_corpus_phase(run);
      print_counts(r);
      return 0;
    };
  });

  // eval score ---------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Knowledge-hierarchy scoring");
  eval->require_subcommand(1);
  auto* eval_score = eval->add_subcommand("score", "Similarity between document and context MeSH terms");
  fs::path eval_mesh, eval_counts;
  std::string eval_format, eval_ic = "structural", eval_doc, eval_ctx;
  eval_score->add_option("--mesh", eval_mesh, "Descriptor XML or TSV")->required();
  eval_score->add_option("--format", eval_format, "mesh-xml or tsv");
  eval_score->add_option("--counts", eval_counts, "Annotation counts TSV");
  eval_score->add_option("--ic-mode", eval_ic, "corpus or structural")->capture_default_str();
  eval_score->add_option("--doc-terms", eval_doc, "Comma-separated descriptor ids")->required();
  eval_score->add_option("--ctx-terms", eval_ctx, "Comma-separated descriptor ids")->required();
  eval_score->callback([&] {
    action = [&] {
      auto ontology = load_ontology(eval_mesh, eval_format, eval_counts, eval_ic);
      auto doc_terms = split_csv(eval_doc);
      auto ctx_terms = split_csv(eval_ctx);
      auto score = ontology.set_similarity(doc_terms, ctx_terms);
      std::cout.precision(17);
      std::cout << Json{{"score", score.value}, {"pairs", score.pair_count}}.dump() << '\n';
      return 0;
    };
  });

  // export dpo|eval|cpt|sft ---------------------------------------------------
  auto* exp = app.add_subcommand("export", "Write trainer-ready files");
  exp->require_subcommand(1);
  fs::path exp_pref, exp_corpus, exp_in, exp_out;
  double exp_beta = 0.1;
  std::uint64_t exp_seed = 0;
  std::size_t exp_k = 0;

  auto* exp_dpo = exp->add_subcommand("dpo", "DPO rows from a preference dataset");
  exp_dpo->add_option("--preference", exp_pref, "preference.jsonl")->required();
  exp_dpo->add_option("--corpus", exp_corpus, "Corpus JSONL holding the source documents")->required();
  exp_dpo->add_option("--out", exp_out, "Output JSONL")->required();
  exp_dpo->add_option("--beta", exp_beta, "Temperature recorded in the sidecar")->capture_default_str();
  exp_dpo->add_option("--seed", exp_seed, "Seed recorded in the sidecar")->capture_default_str();
  exp_dpo->callback([&] {
    action = [&] {
      auto records = read_preference_dataset(exp_pref);
      auto docs = read_corpus(exp_corpus);
      DocumentStore store(docs);
      auto stats = export_dpo(records, store, qa_template(), DpoConfig{exp_beta}, exp_seed, exp_out);
      std::cout << "wrote " << stats.rows << " rows (" << stats.ties << " ties)\n";
      return 0;
    };
  });

  auto* exp_eval = exp->add_subcommand("eval", "Evaluator fine-tuning rows from a preference dataset");
  exp_eval->add_option("--preference", exp_pref, "preference.jsonl")->required();
  exp_eval->add_option("--corpus", exp_corpus, "Corpus JSONL")->required();
  exp_eval->add_option("--out", exp_out, "Output JSONL")->required();
  exp_eval->add_option("--seed", exp_seed, "Seed for A/B position randomisation")->capture_default_str();
  exp_eval->callback([&] {
    action = [&] {
      auto records = read_preference_dataset(exp_pref);
      auto docs = read_corpus(exp_corpus);
      DocumentStore store(docs);
      auto rows = export_eval_finetune(records, store, exp_seed, exp_out);
      std::cout << "wrote " << rows << " rows\n";
      return 0;
    };
  });

  auto* exp_cpt = exp->add_subcommand("cpt", "Validate and re-emit CPT rows");
  exp_cpt->add_option("--in", exp_in, "CPT JSONL")->required();
  exp_cpt->add_option("--out", exp_out, "Output JSONL")->required();
  exp_cpt->add_option("--k", exp_k, "Maximum retrieved contexts per row (0: unchecked)");
  exp_cpt->callback([&] {
    action = [&] {
      auto rows = emit_cpt(read_cpt(exp_in), exp_out, exp_k);
      std::cout << "wrote " << rows << " rows\n";
      return 0;
    };
  });

  auto* exp_sft = exp->add_subcommand("sft", "Validate and re-emit SFT rows");
  exp_sft->add_option("--in", exp_in, "SFT JSONL")->required();
  exp_sft->add_option("--out", exp_out, "Output JSONL")->required();
  exp_sft->add_option("--k", exp_k, "Maximum retrieved contexts per row (0: unchecked)");
  exp_sft->callback([&] {
    action = [&] {
      auto rows = emit_sft(read_sft(exp_in), exp_out, exp_k);
      std::cout << "wrote " << rows << " rows\n";
      return 0;
    };
  });

  // slice chrono|mesh --------------------------------------------------------
  auto* slice = app.add_subcommand("slice", "Evaluation slices");
  slice->require_subcommand(1);
  fs::path slice_in, slice_dir, slice_mesh;
  std::string slice_format;
  std::vector<std::string> slice_ranges, slice_terms;
  bool default_eight = false;

  auto* chrono = slice->add_subcommand("chrono", "Split records by publication period");
  chrono->add_option("--in", slice_in, "Records JSONL (corpus schema)")->required();
  chrono->add_option("--out-dir", slice_dir, "Directory for per-slice files")->required();
  auto* ranges_opt = chrono->add_option("--range", slice_ranges, "YYYY-YYYY or YYYY-MM-DD..YYYY-MM-DD (repeatable)");
  chrono->add_flag("--default-eight", default_eight, "1989-2000 through 2016-2017")->excludes(ranges_opt);
  chrono->callback([&] {
    action = [&] {
      std::vector<DateRange> ranges;
      if (default_eight) {
        ranges = default_chrono_ranges();
      } else {
        for (const auto& r : slice_ranges) ranges.push_back(parse_date_range(r));
      }
      if (ranges.empty()) throw Error(ErrorKind::config, "give --default-eight or at least one --range");
      auto records = read_corpus(slice_in);
      auto slices = slice_chronological(records, ranges);
      write_chrono_slices(slice_dir, slices);
      for (const auto& [range, members] : slices.slices) std::cout << range.label << '\t' << members.size() << '\n';
      std::cout << "out_of_range\t" << slices.out_of_range.size() << '\n';
      return 0;
    };
  });

  auto* by_mesh = slice->add_subcommand("mesh", "Overlapping subsets by MeSH term or descendant");
  by_mesh->add_option("--in", slice_in, "Records JSONL (corpus schema)")->required();
  by_mesh->add_option("--mesh", slice_mesh, "Descriptor XML or TSV")->required();
  by_mesh->add_option("--format", slice_format, "mesh-xml or tsv");
  by_mesh->add_option("--term", slice_terms, "Target descriptor id (repeatable)")->required();
  by_mesh->add_option("--out-dir", slice_dir, "Directory for per-term files")->required();
  by_mesh->callback([&] {
    action = [&] {
      auto ontology = load_ontology(slice_mesh, slice_format, {}, "structural");
      auto records = read_corpus(slice_in);
      auto slices = slice_by_mesh(records, ontology, slice_terms);
      write_mesh_slices(slice_dir, slices);
      for (const auto& [term, members] : slices) std::cout << term << '\t' << members.size() << '\n';
      return 0;
    };
  });

  // report -------------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Summarise a run manifest");
  fs::path manifest_path;
  report->add_option("--manifest", manifest_path, "manifest.json or corpus_manifest.json")->required();
  report->callback([&] {
    action = [&] {
      auto m = read_json_file(manifest_path);
      std::cout << "phase: " << m.value("phase", std::string("?")) << '\n'
                << "status: " << m.value("status", std::string("?")) << '\n'
                << "seed: " << m.value("seed", Json(0)).dump() << '\n';
      if (auto it = m.find("counts"); it != m.end()) {
        for (auto c = it->begin(); c != it->end(); ++c) std::cout << "  " << c.key() << ": " << c.value().dump() << '\n';
        const auto attempted = it->value("attempted", 0);
        const bool ok = m.value("phase", std::string()) == "preference"
                            ? it->value("labeled", 0) + it->value("skipped", 0) == attempted
                            : true;
        std::cout << "reconciled: " << (ok ? "yes" : "NO") << '\n';
      }
      if (auto it = m.find("files"); it != m.end()) {
        for (auto f = it->begin(); f != it->end(); ++f) {
          std::cout << "  " << f.key() << ": " << f.value().value("path", std::string()) << " sha256="
                    << f.value().value("sha256", std::string()) << '\n';
        }
      }
      if (auto it = m.find("timing"); it != m.end()) std::cout << "elapsed: " << it->value("elapsed_seconds", 0.0) << " s\n";
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (verbose) spdlog::set_level(spdlog::level::debug);
  else if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    return action ? action() : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
