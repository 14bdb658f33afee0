#pragma once

// A self-contained run directory: random ontology TSV, synthetic corpus and a
// config wired to scripted mock agents.

#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "biodistill/document.hpp"
#include "biodistill/evaluation.hpp"
#include "biodistill/mesh.hpp"
#include "biodistill/retrieval.hpp"
#include "generators.hpp"
#include "oracle.hpp"

namespace fixtures {

struct WorkspaceOptions {
  std::uint64_t seed = 1;
  std::size_t documents = 50;
  std::size_t max_descriptors = 120;
  std::string evaluator = "rule";
  std::size_t concurrency = 4;
  std::string extra_backend_a;
  std::string extra_answer;
  std::string extra_star;
  // Replaces the generated [backend.*] sections when set.
  std::string backends;
};

struct Workspace {
  fs::path dir;
  fs::path config;
  fs::path output;
  RandomOntology ontology;
  std::vector<biodistill::Document> docs;
};

inline void write_tsv(const fs::path& path, const RandomOntology& r) {
  std::ofstream out(path, std::ios::binary);
  biodistill::write_mesh_tsv(out, biodistill::MeshOntology(r.descriptors));
}

inline Workspace make_workspace(const fs::path& dir, const WorkspaceOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  Workspace ws;
  ws.dir = dir;
  fs::create_directories(dir);
  ws.ontology = random_ontology(rng, opt.max_descriptors);
  ws.docs = synthetic_corpus(rng, ws.ontology.ids, opt.documents);
  write_tsv(dir / "mesh.tsv", ws.ontology);
  biodistill::write_corpus(dir / "corpus.jsonl", ws.docs);

  // Agent a answers some titles with a fixed question so the two agents'
  // retrievals differ in both directions.
  spit(dir / "agent_a.jsonl",
       "{\"match\":\"cohort\",\"response\":\"Which cohort outcomes change with therapy?\"}\n"
       "{\"match\":\"gene\",\"response\":\"Which gene mutation drives the tumour?\"}\n");
  spit(dir / "agent_b.jsonl", "{\"match\":\"vaccine\",\"response\":\"Does the vaccine reduce infection risk?\"}\n");

  std::ostringstream cfg;
  cfg << "# generated test workspace\n"
      << "[paths]\nmesh = mesh.tsv\ncorpus = corpus.jsonl\noutput_dir = out\n\n"
      << "[retrieval]\nk = 4\nembedder = hash\ndimension = 32\n\n"
      << "[evaluation]\nmode = " << opt.evaluator << "\nic_mode = corpus\n\n"
      << "[dpo]\nbeta = 0.1\n\n"
      << "[run]\nseed = 1234\nconcurrency = " << opt.concurrency << "\n\n";
  if (!opt.backends.empty()) {
    cfg << opt.backends;
  } else {
    cfg << "[backend.a]\nkind = mock\nmodel = domain-qg\nscript = agent_a.jsonl\n" << opt.extra_backend_a << "\n"
        << "[backend.b]\nkind = mock\nmodel = general-qg\nscript = agent_b.jsonl\n\n"
        << "[backend.star]\nkind = mock\nmodel = tuned-qg\n" << opt.extra_star << "\n"
        << "[backend.answer]\nkind = mock\nmodel = answerer\nfallback = Answer {hash}.\n" << opt.extra_answer << "\n";
    if (opt.evaluator == "llm") cfg << "[backend.judge]\nkind = mock\nmodel = judge\nfallback = A\n";
  }
  ws.config = dir / "pipeline.cfg";
  spit(ws.config, cfg.str());
  ws.output = dir / "out";
  return ws;
}

// Raw ontology with counts taken from the corpus annotations.
inline oracle::Ontology corpus_counted(const Workspace& ws) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& d : ws.docs) {
    std::set<std::string> uniq(d.mesh.begin(), d.mesh.end());
    for (const auto& t : uniq) ++counts[t];
  }
  oracle::Ontology o = ws.ontology.raw;
  o.corpus = true;
  for (auto& t : o.terms) t.count = counts.count(t.id) ? counts[t.id] : 0;
  return o;
}

struct LabelAudit {
  std::size_t checked = 0;
  std::size_t near_ties = 0;
  std::vector<std::string> mismatches;
};

// Recomputes retrieval (exhaustive scan over hash embeddings, excluding the
// source document) and the rule label for every record from scratch.
inline LabelAudit audit_rule_labels(const Workspace& ws, const std::vector<biodistill::PreferenceRecord>& records,
                                    std::size_t k, std::size_t dimension) {
  const auto raw = corpus_counted(ws);
  const oracle::Cache cache(raw);
  biodistill::HashEmbedder emb(dimension);
  std::vector<std::string> ids;
  std::vector<std::vector<float>> vecs;
  std::map<std::string, const biodistill::Document*> by_id;
  for (const auto& d : ws.docs) {
    ids.push_back(d.id);
    vecs.push_back(emb.embed(d.text()));
    by_id[d.id] = &d;
  }
  auto retrieve = [&](const std::string& question, const std::string& self) {
    auto ranked = oracle::top_k(ids, vecs, emb.embed(question), ids.size());
    std::vector<std::string> out;
    for (const auto& [id, score] : ranked) {
      if (id == self) continue;
      if (out.size() == k) break;
      out.push_back(id);
    }
    return out;
  };

  LabelAudit audit;
  for (const auto& r : records) {
    const auto& doc = *by_id.at(r.doc_id);
    const auto& pa = r.chosen.question.tag == biodistill::GeneratorTag::a ? r.chosen : r.rejected;
    const auto& pb = r.chosen.question.tag == biodistill::GeneratorTag::a ? r.rejected : r.chosen;
    auto score = [&](const biodistill::CandidatePair& p, long double& out) {
      auto hits = retrieve(p.question.text, doc.id);
      std::vector<std::string> pooled;
      for (const auto& id : hits) {
        const auto* d = by_id.at(id);
        pooled.insert(pooled.end(), d->mesh.begin(), d->mesh.end());
      }
      if (hits != p.contexts) return false;
      out = cache.set_similarity(doc.mesh, pooled);
      return true;
    };
    long double sa = 0, sb = 0;
    if (!score(pa, sa) || !score(pb, sb)) {
      audit.mismatches.push_back(r.doc_id + ": retrieved contexts differ");
      continue;
    }
    ++audit.checked;
    const auto& chosen_score = r.chosen.question.tag == biodistill::GeneratorTag::a ? sa : sb;
    if (!r.score_chosen || std::abs(static_cast<long double>(r.score_chosen->value) - chosen_score) > 1e-9L) {
      audit.mismatches.push_back(r.doc_id + ": chosen score differs");
    }
    if (std::abs(sa - sb) < 1e-12L) {
      ++audit.near_ties;
      if (sa != sb) continue;
    }
    const bool expect_a = sa >= sb;
    if ((r.chosen.question.tag == biodistill::GeneratorTag::a) != expect_a) {
      audit.mismatches.push_back(r.doc_id + ": label differs");
    }
    if (r.tie != (sa == sb)) audit.mismatches.push_back(r.doc_id + ": tie flag differs");
  }
  return audit;
}

}  // namespace fixtures
