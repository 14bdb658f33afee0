#include "biodistill/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <ctime>
#include <thread>

#include "biodistill/dataset.hpp"
#include "biodistill/dpo.hpp"
#include "biodistill/error.hpp"
#include "biodistill/hashing.hpp"
#include "biodistill/prompts.hpp"

namespace biodistill {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Journal

Journal::Journal(fs::path path, Json header, std::size_t flush_interval)
    : path_(std::move(path)), flush_interval_(std::max<std::size_t>(flush_interval, 1)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());

  bool fresh = !fs::exists(path_) || fs::file_size(path_) == 0;
  if (!fresh) {
    std::ifstream in(path_, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    // Drop a torn tail so the next append starts on a fresh line.
    auto last_nl = content.rfind('\n');
    std::size_t keep = last_nl == std::string::npos ? 0 : last_nl + 1;
    if (keep < content.size()) {
      spdlog::warn("{}: dropping {} bytes of an incomplete final entry", path_.string(), content.size() - keep);
      content.resize(keep);
      fs::resize_file(path_, keep);
    }

    std::size_t pos = 0, lineno = 0;
    bool header_seen = false;
    while (pos < content.size()) {
      auto nl = content.find('\n', pos);
      auto line = content.substr(pos, nl - pos);
      pos = nl + 1;
      ++lineno;
      if (line.empty()) continue;
      Json row;
      try {
        row = Json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::parse, path_.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
      if (!header_seen) {
        if (row != header) {
          throw Error(ErrorKind::config, path_.string() + " belongs to a run with different settings; remove it "
                                                          "or restore the original configuration to resume");
        }
        header_seen = true;
        continue;
      }
      entries_[row.at("doc_id").get<std::string>()] = row;
    }
    fresh = !header_seen;
  }

  out_.open(path_, std::ios::binary | std::ios::app);
  if (!out_) throw Error(ErrorKind::io, "cannot open journal " + path_.string());
  if (fresh) {
    out_ << header.dump() << '\n';
    out_.flush();
  }
}

Journal::~Journal() {
  std::lock_guard lock(mu_);
  out_.flush();
}

bool Journal::has(const std::string& doc_id) const {
  std::lock_guard lock(mu_);
  return entries_.count(doc_id) > 0;
}

void Journal::append(const Json& entry) {
  std::lock_guard lock(mu_);
  out_ << entry.dump() << '\n';
  if (!out_) throw Error(ErrorKind::io, "journal write failed: " + path_.string());
  entries_[entry.at("doc_id").get<std::string>()] = entry;
  if (++pending_ >= flush_interval_) {
    out_.flush();
    pending_ = 0;
  }
}

void Journal::flush() {
  std::lock_guard lock(mu_);
  out_.flush();
  pending_ = 0;
}

Json StageCounts::to_json() const {
  return Json{{"attempted", attempted}, {"generated", generated}, {"retrieved", retrieved},
              {"labeled", labeled},     {"tied", tied},           {"skipped", skipped},
              {"answered", answered},   {"judge_fallbacks", judge_fallbacks}, {"resumed", resumed}};
}

// ---------------------------------------------------------------------------
// Shared resources

struct Pipeline::Resources {
  std::vector<Document> docs;
  std::unique_ptr<DocumentStore> store;
  std::optional<MeshOntology> ontology;
  std::unique_ptr<Embedder> embedder;
  std::optional<CorpusIndex> index;
};

Pipeline::Pipeline(PipelineConfig config, BackendFactory factory)
    : config_(std::move(config)),
      factory_(std::move(factory)),
      limiter_(std::make_shared<RequestLimiter>(static_cast<std::ptrdiff_t>(config_.concurrency))) {}

std::shared_ptr<ChatBackend> Pipeline::backend(const BackendConfig& config) {
  return factory_ ? factory_(config) : make_backend(config, limiter_);
}

Pipeline::Resources& Pipeline::resources(bool need_ontology) {
  if (!resources_) {
    auto res = std::make_shared<Resources>();
    res->docs = read_corpus(config_.corpus);
    res->store = std::make_unique<DocumentStore>(res->docs);
    spdlog::info("corpus: {} documents", res->docs.size());

    if (config_.embedder.kind == "remote") {
      RemoteEmbedderConfig rc{config_.embedder.base_url, config_.embedder.model, config_.embedder.api_key_env,
                              config_.embedder.dimension, RetryPolicy{}};
      res->embedder = std::make_unique<RemoteEmbedder>(rc, limiter_);
    } else {
      res->embedder = std::make_unique<HashEmbedder>(config_.embedder.dimension);
    }

    if (!config_.index.empty() && fs::exists(config_.index)) {
      auto idx = CorpusIndex::load(config_.index);
      if (idx.fingerprint() != res->embedder->fingerprint()) {
        throw Error(ErrorKind::config, "index " + config_.index.string() + " was built with " + idx.fingerprint() +
                                           ", configured embedder is " + res->embedder->fingerprint());
      }
      if (idx.size() != res->docs.size()) {
        throw Error(ErrorKind::config, "index " + config_.index.string() + " does not match the corpus size");
      }
      res->index = std::move(idx);
    } else if (!res->docs.empty()) {
      res->index = CorpusIndex::build(res->docs, *res->embedder);
      if (!config_.index.empty()) res->index->save(config_.index);
    }
    resources_ = std::move(res);
  }

  if (need_ontology && !resources_->ontology) {
    auto format = config_.mesh_format.value_or(mesh_format_for(config_.mesh));
    auto ontology = parse_mesh_file(config_.mesh, format);
    if (config_.ic_mode == IcMode::corpus) {
      auto counts = config_.counts.empty() ? count_annotations(resources_->docs) : read_annotation_counts(config_.counts);
      ontology = ontology.with_counts(counts);
    }
    spdlog::info("ontology: {} descriptors, {} mode, total mass {}", ontology.size(), to_string(ontology.ic_mode()),
                 ontology.total_mass());
    resources_->ontology = std::move(ontology);
  }
  return *resources_;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t effective_count(const std::vector<Document>& docs, const RunOptions& options) {
  return options.limit ? std::min(*options.limit, docs.size()) : docs.size();
}

// Runs `work(i)` for i in [0, n) on `workers` threads. `should_start(i)`
// decides whether a not-yet-started item still runs.
void run_pool(std::size_t workers, std::size_t n, const std::function<bool()>& may_start,
              const std::function<void(std::size_t)>& work) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto loop = [&] {
    while (true) {
      auto i = next.fetch_add(1);
      if (i >= n) return;
      if (!may_start()) return;
      try {
        work(i);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = n;
        return;
      }
    }
  };
  std::vector<std::jthread> threads;
  const auto count = std::max<std::size_t>(1, std::min(workers, n));
  for (std::size_t t = 0; t < count; ++t) threads.emplace_back(loop);
  threads.clear();
  if (failure) std::rethrow_exception(failure);
}

std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json journal_header(const char* phase, const PipelineConfig& config, const Json& extra = Json::object()) {
  Json h;
  h["journal"] = phase;
  h["version"] = 1;
  h["seed"] = config.seed;
  h["config_digest"] = hex64(fnv1a64(config.snapshot().dump()));
  for (auto it = extra.begin(); it != extra.end(); ++it) h[it.key()] = it.value();
  return h;
}

class Stopwatch {
 public:
  Stopwatch() : started_at_(utc_now()), start_(std::chrono::steady_clock::now()) {}
  Json to_json() const {
    std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
    return Json{{"started_at", started_at_}, {"elapsed_seconds", elapsed.count()}};
  }

 private:
  std::string started_at_;
  std::chrono::steady_clock::time_point start_;
};

Json file_digests(const std::map<std::string, fs::path>& files) {
  Json j = Json::object();
  for (const auto& [name, path] : files) {
    j[name] = {{"path", path.filename().string()}, {"sha256", sha256_file(path)}};
  }
  return j;
}

std::string context_text(const Document& d) { return d.abstract.empty() ? d.title : d.abstract; }

}  // namespace

// ---------------------------------------------------------------------------
// Preference phase

PhaseResult Pipeline::run_preference_phase(const RunOptions& options) {
  config_.validate_preference();
  Stopwatch clock;
  auto& res = resources(true);
  const auto& ontology = *res.ontology;

  auto gen_a = backend(*config_.backend_a);
  auto gen_b = backend(*config_.backend_b);
  std::shared_ptr<ChatBackend> judge;
  if (config_.evaluator == EvaluatorMode::llm) judge = backend(*config_.backend_judge);

  fs::create_directories(config_.output_dir);
  Journal journal(config_.output_dir / "preference.journal.jsonl", journal_header("preference", config_),
                  config_.checkpoint_interval);

  const std::size_t n = effective_count(res.docs, options);
  std::atomic<std::size_t> started{0};
  auto may_start = [&] { return !options.stop_after || started.load() < *options.stop_after; };

  auto process = [&](std::size_t i) {
    const auto& doc = res.docs[i];
    if (journal.has(doc.id)) return;
    if (options.stop_after && started.fetch_add(1) >= *options.stop_after) return;

    Json entry;
    entry["doc_id"] = doc.id;
    std::size_t generated = 0, retrieved = 0;
    try {
      auto qa = generate_question(*gen_a, doc, GeneratorTag::a);
      ++generated;
      auto qb = generate_question(*gen_b, doc, GeneratorTag::b);
      ++generated;
      auto ra = res.index->top_k(res.embedder->embed(qa.text), config_.k, doc.id);
      ++retrieved;
      auto rb = res.index->top_k(res.embedder->embed(qb.text), config_.k, doc.id);
      ++retrieved;
      auto pa = make_candidate_pair(std::move(qa), ra, *res.store);
      auto pb = make_candidate_pair(std::move(qb), rb, *res.store);
      auto rec = judge ? llm_prefer(*judge, ontology, *res.store, doc, pa, pb, config_.seed)
                       : rule_based_prefer(ontology, doc, pa, pb);
      entry["status"] = "labeled";
      entry["record"] = preference_to_json(rec);
    } catch (const std::exception& e) {
      spdlog::warn("preference phase: skipping {}: {}", doc.id, e.what());
      entry["status"] = "skipped";
      entry["reason"] = e.what();
    }
    entry["generated"] = generated;
    entry["retrieved"] = retrieved;
    journal.append(entry);
  };

  std::size_t before = 0;
  for (std::size_t i = 0; i < n; ++i) before += journal.has(res.docs[i].id) ? 1 : 0;
  if (n > 0 && res.index) run_pool(config_.concurrency, n, may_start, process);
  journal.flush();

  PhaseResult result;
  result.counts.resumed = before;
  std::vector<PreferenceRecord> records;
  bool missing = false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& doc = res.docs[i];
    auto it = journal.entries().find(doc.id);
    if (it == journal.entries().end()) {
      missing = true;
      continue;
    }
    const auto& entry = it->second;
    ++result.counts.attempted;
    result.counts.generated += entry.value("generated", std::size_t{0});
    result.counts.retrieved += entry.value("retrieved", std::size_t{0});
    if (entry.at("status") == "labeled") {
      records.push_back(preference_from_json(entry.at("record")));
      ++result.counts.labeled;
      if (records.back().tie) ++result.counts.tied;
      if (records.back().judge_fallback) ++result.counts.judge_fallbacks;
    } else {
      ++result.counts.skipped;
    }
  }
  if (missing) {
    spdlog::info("preference phase interrupted after {} of {} documents; rerun to resume", result.counts.attempted, n);
    return result;
  }

  Json manifest;
  manifest["phase"] = "preference";
  manifest["seed"] = config_.seed;
  manifest["config"] = config_.snapshot();
  manifest["counts"] = result.counts.to_json();

  const auto& c = result.counts;
  if (c.attempted > 0 && static_cast<double>(c.skipped) > kMaxSkipRate * static_cast<double>(c.attempted)) {
    manifest["status"] = "aborted";
    manifest["timing"] = clock.to_json();
    result.manifest = config_.output_dir / "manifest.json";
    write_json_file(result.manifest, manifest);
    throw Error(ErrorKind::aborted, std::to_string(c.skipped) + " of " + std::to_string(c.attempted) +
                                        " documents were skipped; see the journal for reasons");
  }

  result.files["preference"] = config_.output_dir / "preference.jsonl";
  write_preference_dataset(result.files["preference"], records);
  if (!records.empty()) {
    result.files["eval_finetune"] = config_.output_dir / "eval_finetune.jsonl";
    export_eval_finetune(records, *res.store, config_.seed, result.files["eval_finetune"]);
    result.files["dpo"] = config_.output_dir / "dpo.jsonl";
    export_dpo(records, *res.store, qa_template(), DpoConfig{config_.beta}, config_.seed, result.files["dpo"]);
  } else {
    spdlog::warn("no labeled documents; evaluator and DPO exports skipped");
  }

  manifest["status"] = "complete";
  manifest["files"] = file_digests(result.files);
  manifest["timing"] = clock.to_json();
  result.manifest = config_.output_dir / "manifest.json";
  write_json_file(result.manifest, manifest);
  result.complete = true;
  spdlog::info("preference phase: {} labeled ({} ties), {} skipped", c.labeled, c.tied, c.skipped);
  return result;
}

// ---------------------------------------------------------------------------
// Corpus phase

PhaseResult Pipeline::run_corpus_phase(const RunOptions& options) {
  config_.validate_corpus(options.dry_run_star);
  Stopwatch clock;
  auto& res = resources(false);

  const auto& gen_config = options.dry_run_star ? *config_.backend_b : *config_.backend_star;
  auto generator = backend(gen_config);
  auto answerer = backend(*config_.backend_answer);

  fs::create_directories(config_.output_dir);
  Journal journal(config_.output_dir / "corpus.journal.jsonl",
                  journal_header("corpus", config_, Json{{"dry_run_star", options.dry_run_star}}),
                  config_.checkpoint_interval);

  const std::size_t n = effective_count(res.docs, options);
  std::atomic<std::size_t> started{0};
  auto may_start = [&] { return !options.stop_after || started.load() < *options.stop_after; };

  auto process = [&](std::size_t i) {
    const auto& doc = res.docs[i];
    if (journal.has(doc.id)) return;
    if (options.stop_after && started.fetch_add(1) >= *options.stop_after) return;

    Json entry;
    entry["doc_id"] = doc.id;
    try {
      auto q = generate_question(*generator, doc, GeneratorTag::star);
      auto hits = res.index->top_k(res.embedder->embed(q.text), config_.k, doc.id);
      CptRecord cpt{doc.id, doc.title, doc.abstract, {}, q.text};
      for (const auto& h : hits.ranked) cpt.retrieved.push_back(context_text(res.store->at(h.id)));
      validate_cpt(cpt, config_.k);
      entry["status"] = "ok";
      entry["cpt"] = cpt_to_json(cpt);
      try {
        entry["answer"] = generate_answer(*answerer, cpt.question, cpt.retrieved);
      } catch (const std::exception& e) {
        spdlog::warn("corpus phase: no answer for {}: {}", doc.id, e.what());
        entry["answer"] = nullptr;
        entry["answer_error"] = e.what();
      }
    } catch (const std::exception& e) {
      spdlog::warn("corpus phase: skipping {}: {}", doc.id, e.what());
      entry["status"] = "skipped";
      entry["reason"] = e.what();
    }
    journal.append(entry);
  };

  std::size_t before = 0;
  for (std::size_t i = 0; i < n; ++i) before += journal.has(res.docs[i].id) ? 1 : 0;
  if (n > 0 && res.index) run_pool(config_.concurrency, n, may_start, process);
  journal.flush();

  PhaseResult result;
  result.counts.resumed = before;
  std::vector<CptRecord> cpt_rows;
  std::vector<SftRecord> sft_rows;
  bool missing = false;
  for (std::size_t i = 0; i < n; ++i) {
    auto it = journal.entries().find(res.docs[i].id);
    if (it == journal.entries().end()) {
      missing = true;
      continue;
    }
    const auto& entry = it->second;
    ++result.counts.attempted;
    if (entry.at("status") != "ok") {
      ++result.counts.skipped;
      continue;
    }
    ++result.counts.generated;
    ++result.counts.retrieved;
    cpt_rows.push_back(cpt_from_json(entry.at("cpt")));
    if (entry.contains("answer") && entry.at("answer").is_string()) {
      sft_rows.push_back({cpt_rows.back(), entry.at("answer").get<std::string>()});
      ++result.counts.answered;
    }
  }
  if (missing) {
    spdlog::info("corpus phase interrupted after {} of {} documents; rerun to resume", result.counts.attempted, n);
    return result;
  }

  Json manifest;
  manifest["phase"] = "corpus";
  manifest["seed"] = config_.seed;
  manifest["generator"] = options.dry_run_star ? "b (dry run)" : "star";
  manifest["config"] = config_.snapshot();
  manifest["counts"] = result.counts.to_json();
  result.manifest = config_.output_dir / "corpus_manifest.json";

  const auto& c = result.counts;
  if (c.attempted > 0 && static_cast<double>(c.skipped) > kMaxSkipRate * static_cast<double>(c.attempted)) {
    manifest["status"] = "aborted";
    manifest["timing"] = clock.to_json();
    write_json_file(result.manifest, manifest);
    throw Error(ErrorKind::aborted, std::to_string(c.skipped) + " of " + std::to_string(c.attempted) +
                                        " documents were skipped; see the journal for reasons");
  }

  if (!cpt_rows.empty()) {
    result.files["cpt"] = config_.output_dir / "cpt.jsonl";
    emit_cpt(cpt_rows, result.files["cpt"], config_.k);
  }
  if (!sft_rows.empty()) {
    result.files["sft"] = config_.output_dir / "sft.jsonl";
    emit_sft(sft_rows, result.files["sft"], config_.k);
  }

  manifest["status"] = "complete";
  manifest["files"] = file_digests(result.files);
  manifest["timing"] = clock.to_json();
  write_json_file(result.manifest, manifest);
  result.complete = true;
  spdlog::info("corpus phase: {} CPT rows, {} SFT rows, {} skipped", cpt_rows.size(), sft_rows.size(), c.skipped);
  return result;
}

}  // namespace biodistill
