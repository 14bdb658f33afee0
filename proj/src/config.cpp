#include "biodistill/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>

#include "biodistill/error.hpp"

namespace biodistill {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in, const std::string& source) {
  ConfigFile cfg;
  cfg.source_ = source;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const auto where = source + ":" + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']') throw Error(ErrorKind::config, where + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) throw Error(ErrorKind::config, where + ": empty section name");
      cfg.values_[section];
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::config, where + ": expected key = value");
    auto key = trim(t.substr(0, eq));
    auto value = trim(t.substr(eq + 1));
    if (key.empty()) throw Error(ErrorKind::config, where + ": empty key");
    if (!cfg.values_[section].emplace(key, value).second) {
      throw Error(ErrorKind::config, where + ": duplicate key " + key);
    }
  }
  return cfg;
}

ConfigFile ConfigFile::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::config, "cannot open config file " + path.string());
  return parse(in, path.string());
}

std::optional<std::string> ConfigFile::get(const std::string& section, const std::string& key) const {
  auto s = values_.find(section);
  if (s == values_.end()) return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end()) return std::nullopt;
  return k->second;
}

bool ConfigFile::has_section(const std::string& section) const { return values_.count(section) > 0; }

std::vector<std::string> ConfigFile::sections() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : values_) out.push_back(name);
  return out;
}

std::vector<std::string> ConfigFile::keys(const std::string& section) const {
  std::vector<std::string> out;
  if (auto s = values_.find(section); s != values_.end()) {
    for (const auto& [k, _] : s->second) out.push_back(k);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

class Reader {
 public:
  Reader(const ConfigFile& file, fs::path base) : file_(file), base_(std::move(base)) {}

  std::optional<std::string> str(const std::string& section, const std::string& key) const {
    return file_.get(section, key);
  }

  template <typename T>
  void integer(const std::string& section, const std::string& key, T& out) const {
    auto v = file_.get(section, key);
    if (!v) return;
    T parsed{};
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
    if (ec != std::errc{} || p != v->data() + v->size()) fail(section, key, "expected an integer");
    out = parsed;
  }

  void real(const std::string& section, const std::string& key, double& out) const {
    auto v = file_.get(section, key);
    if (!v) return;
    try {
      std::size_t used = 0;
      double d = std::stod(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      out = d;
    } catch (const std::exception&) {
      fail(section, key, "expected a number");
    }
  }

  void boolean(const std::string& section, const std::string& key, bool& out) const {
    auto v = file_.get(section, key);
    if (!v) return;
    if (*v == "true" || *v == "yes" || *v == "1") out = true;
    else if (*v == "false" || *v == "no" || *v == "0") out = false;
    else fail(section, key, "expected true or false");
  }

  void path(const std::string& section, const std::string& key, fs::path& out) const {
    auto v = file_.get(section, key);
    if (!v || v->empty()) return;
    fs::path p(*v);
    out = p.is_absolute() ? p : base_ / p;
  }

  [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& what) const {
    throw Error(ErrorKind::config, file_.source() + ": [" + section + "] " + key + ": " + what);
  }

  void allow_only(const std::string& section, std::initializer_list<const char*> allowed) const {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& k : file_.keys(section)) {
      if (!ok.count(k)) fail(section, k, "unknown key");
    }
  }

 private:
  const ConfigFile& file_;
  fs::path base_;
};

BackendConfig read_backend(const Reader& r, const std::string& section, const std::string& name) {
  r.allow_only(section, {"kind", "base_url", "model", "api_key_env", "temperature", "max_tokens", "timeout_ms",
                         "max_retries", "retry_base_ms", "script", "fallback"});
  BackendConfig b;
  b.name = name;
  if (auto kind = r.str(section, "kind")) {
    if (*kind == "mock") b.kind = BackendKind::mock;
    else if (*kind == "openai") b.kind = BackendKind::openai;
    else r.fail(section, "kind", "expected openai or mock");
  }
  b.base_url = r.str(section, "base_url").value_or(b.kind == BackendKind::mock ? "mock://" + name : "");
  b.model = r.str(section, "model").value_or(name);
  b.api_key_env = r.str(section, "api_key_env").value_or("");
  r.real(section, "temperature", b.temperature);
  r.integer(section, "max_tokens", b.max_tokens);
  long long timeout = b.timeout.count(), retry_base = b.retry_base_delay.count();
  r.integer(section, "timeout_ms", timeout);
  r.integer(section, "retry_base_ms", retry_base);
  b.timeout = std::chrono::milliseconds(timeout);
  b.retry_base_delay = std::chrono::milliseconds(retry_base);
  r.integer(section, "max_retries", b.max_retries);
  r.path(section, "script", b.script);
  if (auto fb = r.str(section, "fallback")) b.fallback = *fb;
  b.validate();
  return b;
}

}  // namespace

PipelineConfig pipeline_config_from(const ConfigFile& file, const fs::path& base_dir) {
  Reader r(file, base_dir);
  PipelineConfig c;

  static const std::set<std::string> known = {"paths",     "retrieval", "evaluation",     "dpo",
                                              "run",       "backend.a", "backend.b",      "backend.star",
                                              "backend.answer", "backend.judge"};
  for (const auto& s : file.sections()) {
    if (!known.count(s)) {
      throw Error(ErrorKind::config, file.source() + ": unknown section [" + s + "]");
    }
  }

  r.allow_only("paths", {"mesh", "mesh_format", "counts", "corpus", "output_dir", "index"});
  r.path("paths", "mesh", c.mesh);
  if (auto f = r.str("paths", "mesh_format")) c.mesh_format = parse_mesh_format(*f);
  r.path("paths", "counts", c.counts);
  r.path("paths", "corpus", c.corpus);
  r.path("paths", "output_dir", c.output_dir);
  r.path("paths", "index", c.index);

  r.allow_only("retrieval", {"k", "embedder", "dimension", "base_url", "model", "api_key_env"});
  r.integer("retrieval", "k", c.k);
  if (auto e = r.str("retrieval", "embedder")) c.embedder.kind = *e;
  r.integer("retrieval", "dimension", c.embedder.dimension);
  c.embedder.base_url = r.str("retrieval", "base_url").value_or("");
  c.embedder.model = r.str("retrieval", "model").value_or("");
  c.embedder.api_key_env = r.str("retrieval", "api_key_env").value_or("");

  r.allow_only("evaluation", {"mode", "ic_mode"});
  if (auto m = r.str("evaluation", "mode")) {
    if (*m == "rule") c.evaluator = EvaluatorMode::rule;
    else if (*m == "llm") c.evaluator = EvaluatorMode::llm;
    else r.fail("evaluation", "mode", "expected rule or llm");
  }
  if (auto m = r.str("evaluation", "ic_mode")) c.ic_mode = parse_ic_mode(*m);

  r.allow_only("dpo", {"beta"});
  r.real("dpo", "beta", c.beta);

  r.allow_only("run", {"seed", "concurrency", "checkpoint_interval", "allow_same_backend"});
  r.integer("run", "seed", c.seed);
  r.integer("run", "concurrency", c.concurrency);
  r.integer("run", "checkpoint_interval", c.checkpoint_interval);
  r.boolean("run", "allow_same_backend", c.allow_same_backend);

  auto backend = [&](const char* name, std::optional<BackendConfig>& out) {
    const std::string section = std::string("backend.") + name;
    if (file.has_section(section)) out = read_backend(r, section, name);
  };
  backend("a", c.backend_a);
  backend("b", c.backend_b);
  backend("star", c.backend_star);
  backend("answer", c.backend_answer);
  backend("judge", c.backend_judge);

  c.validate_common();
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  auto file = ConfigFile::load(path);
  auto base = fs::absolute(path).parent_path();
  return pipeline_config_from(file, base);
}

void PipelineConfig::validate_common() const {
  if (k < 1) throw Error(ErrorKind::config, "retrieval k must be >= 1");
  if (concurrency < 1) throw Error(ErrorKind::config, "run concurrency must be >= 1");
  if (checkpoint_interval < 1) throw Error(ErrorKind::config, "checkpoint_interval must be >= 1");
  if (embedder.kind != "hash" && embedder.kind != "remote") {
    throw Error(ErrorKind::config, "retrieval embedder must be hash or remote");
  }
  if (embedder.dimension == 0) throw Error(ErrorKind::config, "embedding dimension must be positive");
  if (embedder.kind == "remote" && embedder.base_url.empty()) {
    throw Error(ErrorKind::config, "remote embedder needs [retrieval] base_url");
  }
  if (!std::isfinite(beta) || beta <= 0) throw Error(ErrorKind::config, "dpo beta must be positive");
}

void PipelineConfig::validate_preference() const {
  validate_common();
  if (mesh.empty()) throw Error(ErrorKind::config, "[paths] mesh is required");
  if (corpus.empty()) throw Error(ErrorKind::config, "[paths] corpus is required");
  if (output_dir.empty()) throw Error(ErrorKind::config, "[paths] output_dir is required");
  if (!backend_a || !backend_b) {
    throw Error(ErrorKind::config, "the preference phase needs two generators: [backend.a] and [backend.b]");
  }
  if (backend_a->identity() == backend_b->identity() && !allow_same_backend) {
    throw Error(ErrorKind::config, "backend.a and backend.b are the same agent (" + backend_a->identity() +
                                       "); set [run] allow_same_backend = true to run that way deliberately");
  }
  if (evaluator == EvaluatorMode::llm && !backend_judge) {
    throw Error(ErrorKind::config, "evaluation mode llm needs a [backend.judge] section");
  }
}

void PipelineConfig::validate_corpus(bool dry_run_star) const {
  validate_common();
  if (corpus.empty()) throw Error(ErrorKind::config, "[paths] corpus is required");
  if (output_dir.empty()) throw Error(ErrorKind::config, "[paths] output_dir is required");
  if (dry_run_star ? !backend_b : !backend_star) {
    throw Error(ErrorKind::config, dry_run_star ? "--dry-run-star reuses [backend.b], which is missing"
                                                : "the corpus phase needs [backend.star] (or --dry-run-star)");
  }
  if (!backend_answer) throw Error(ErrorKind::config, "the corpus phase needs [backend.answer]");
}

Json PipelineConfig::snapshot() const {
  Json j;
  j["paths"] = {{"mesh", mesh.filename().string()},
                {"counts", counts.filename().string()},
                {"corpus", corpus.filename().string()},
                {"index", index.filename().string()}};
  j["retrieval"] = {{"k", k}, {"embedder", embedder.kind}, {"dimension", embedder.dimension}};
  if (embedder.kind == "remote") {
    j["retrieval"]["base_url"] = embedder.base_url;
    j["retrieval"]["model"] = embedder.model;
  }
  j["evaluation"] = {{"mode", evaluator == EvaluatorMode::rule ? "rule" : "llm"}, {"ic_mode", to_string(ic_mode)}};
  j["dpo"] = {{"beta", beta}};
  j["run"] = {{"seed", seed}, {"allow_same_backend", allow_same_backend}};
  Json backends = Json::object();
  auto put = [&](const char* name, const std::optional<BackendConfig>& b) {
    if (b) backends[name] = b->to_json();
  };
  put("a", backend_a);
  put("b", backend_b);
  put("star", backend_star);
  put("answer", backend_answer);
  put("judge", backend_judge);
  j["backends"] = backends;
  return j;
}

}  // namespace biodistill
