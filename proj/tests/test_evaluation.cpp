#include <doctest.h>

#include <random>
#include <set>
#include <tuple>

#include "biodistill/error.hpp"
#include "biodistill/evaluation.hpp"
#include "generators.hpp"
#include "oracle.hpp"

using namespace biodistill;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::io;
}

constexpr double kLinA1A2 = 0.17669637774989413784;

Document make_doc(std::string id, std::vector<std::string> mesh) {
  Document d;
  d.id = std::move(id);
  d.title = "Title " + d.id;
  d.abstract = "Abstract of " + d.id + ".";
  d.mesh = std::move(mesh);
  return d;
}

// Context documents carrying one descriptor each, plus an unannotated one.
std::vector<Document> tiny_corpus() {
  return {make_doc("src", {"A1"}), make_doc("cA1", {"A1"}), make_doc("cA2", {"A2"}),
          make_doc("cB", {"B"}),   make_doc("bare", {}),    make_doc("src2", {"A1"}),
          make_doc("src3", {})};
}

CandidatePair pair_with(const std::string& question, GeneratorTag tag, const std::vector<std::string>& contexts,
                        const DocumentStore& store) {
  RetrievalResult r;
  double s = 1.0;
  for (const auto& c : contexts) r.ranked.push_back({c, s -= 0.1});
  CandidateQuestion q{question, "src", tag, Json::object()};
  return make_candidate_pair(q, r, store);
}

class MirrorJudge final : public ChatBackend {
 public:
  MirrorJudge(std::map<std::string, std::pair<double, bool>> scores)
      : ChatBackend(config()), scores_(std::move(scores)) {}

 protected:
  Completion do_complete(std::string_view prompt, bool) override {
    auto qa = question_after(prompt, "Pair A\nQuestion: ");
    auto qb = question_after(prompt, "Pair B\nQuestion: ");
    const auto& [sa, a_is_first_agent] = scores_.at(qa);
    const auto& [sb, b_is_first_agent] = scores_.at(qb);
    bool pick_a = sa > sb || (sa == sb && a_is_first_agent);
    (void)b_is_first_agent;
    return {pick_a ? "A" : "B", std::nullopt, 0};
  }

 private:
  static BackendConfig config() {
    BackendConfig c;
    c.name = "judge";
    c.kind = BackendKind::mock;
    c.base_url = "mock://judge";
    c.model = "judge";
    return c;
  }
  static std::string question_after(std::string_view prompt, std::string_view marker) {
    auto p = prompt.find(marker);
    REQUIRE(p != std::string_view::npos);
    p += marker.size();
    return std::string(prompt.substr(p, prompt.find('\n', p) - p));
  }
  std::map<std::string, std::pair<double, bool>> scores_;
};

BackendConfig mock_config(std::string name) {
  BackendConfig c;
  c.name = name;
  c.kind = BackendKind::mock;
  c.base_url = "mock://" + name;
  c.model = name;
  return c;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("score_pair on the worked example") {
    auto t = fixtures::tiny_ontology();
    auto docs = tiny_corpus();
    DocumentStore store(docs);
    const auto& src = store.at("src");
    CHECK(score_pair(t, src, pair_with("q", GeneratorTag::a, {"cA1"}, store)).value == doctest::Approx(1.0));
    CHECK(score_pair(t, src, pair_with("q", GeneratorTag::a, {"cB"}, store)).value == 0.0);
    CHECK(std::abs(score_pair(t, src, pair_with("q", GeneratorTag::a, {"cA2"}, store)).value - kLinA1A2) < 1e-12);
    auto pooled = pair_with("q", GeneratorTag::a, {"cA2", "cB", "cA2"}, store);
    CHECK(pooled.pooled_terms() == std::vector<std::string>{"A2", "B"});
    CHECK(score_pair(t, src, pooled).pair_count == 2);
  }

  TEST_CASE("context mesh is aligned with the contexts") {
    auto docs = tiny_corpus();
    DocumentStore store(docs);
    auto p = pair_with("q", GeneratorTag::b, {"cA2", "bare", "cB"}, store);
    REQUIRE(p.contexts.size() == 3);
    REQUIRE(p.context_mesh.size() == 3);
    CHECK(p.context_mesh[0] == std::vector<std::string>{"A2"});
    CHECK(p.context_mesh[1].empty());
    CHECK(p.context_mesh[2] == std::vector<std::string>{"B"});
  }

  TEST_CASE("rule-based preference") {
    auto t = fixtures::tiny_ontology();
    auto docs = tiny_corpus();
    DocumentStore store(docs);
    const auto& src = store.at("src");
    auto a2 = pair_with("qa", GeneratorTag::a, {"cA2"}, store);
    auto b = pair_with("qb", GeneratorTag::b, {"cB"}, store);
    auto a1 = pair_with("qb1", GeneratorTag::b, {"cA1"}, store);

    auto r = rule_based_prefer(t, src, a2, b);
    CHECK(r.chosen.question.text == "qa");
    CHECK_FALSE(r.tie);
    CHECK(r.source == LabelSource::rule);
    CHECK(std::abs(r.score_chosen->value - kLinA1A2) < 1e-12);
    CHECK(r.score_rejected->value == 0.0);

    auto same = rule_based_prefer(t, src, a2, a2);
    CHECK(same.tie);
    CHECK(same.chosen.question.tag == GeneratorTag::a);

    auto bwins = rule_based_prefer(t, src, b, a1);
    CHECK(bwins.chosen.question.text == "qb1");
    CHECK(bwins.score_chosen->value == doctest::Approx(1.0));
  }

  TEST_CASE("unscorable pairs raise a labeling error") {
    auto t = fixtures::tiny_ontology();
    auto docs = tiny_corpus();
    DocumentStore store(docs);
    auto bare = pair_with("q", GeneratorTag::a, {"bare"}, store);
    auto ok = pair_with("q2", GeneratorTag::b, {"cA1"}, store);
    CHECK(kind_of([&] { rule_based_prefer(t, store.at("src"), bare, ok); }) == ErrorKind::labeling);
    CHECK(kind_of([&] { rule_based_prefer(t, store.at("src3"), ok, ok); }) == ErrorKind::labeling);
  }

  TEST_CASE("preference dataset counts skips") {
    auto t = fixtures::tiny_ontology();
    auto docs = tiny_corpus();
    DocumentStore store(docs);
    auto a = pair_with("qa", GeneratorTag::a, {"cA2"}, store);
    auto b = pair_with("qb", GeneratorTag::b, {"cB"}, store);
    std::vector<PreferenceInput> in{{&store.at("src"), a, b}, {&store.at("src2"), b, a}, {&store.at("src3"), a, b}};
    auto ds = build_preference_dataset(t, in);
    CHECK(ds.records.size() == 2);
    CHECK(ds.summary.labeled == 2);
    CHECK(ds.summary.skipped == 1);
    CHECK(ds.skips.front().first == "src3");
    std::vector<PreferenceInput> all{in[0], in[1], in[0]};
    CHECK(build_preference_dataset(t, all).records.size() == 3);
  }

  TEST_CASE("swap antisymmetry on random ontologies") {
    std::mt19937_64 rng(8);
    for (int round = 0; round < 5; ++round) {
      auto r = fixtures::random_ontology(rng, 60);
      auto o = fixtures::corpus_mode(r);
      auto docs = fixtures::synthetic_corpus(rng, r.ids, 40);
      DocumentStore store(docs);
      std::uniform_int_distribution<std::size_t> pick(1, docs.size() - 1);
      for (int i = 0; i < 30; ++i) {
        auto pa = pair_with("qa", GeneratorTag::a, {docs[pick(rng)].id, docs[pick(rng)].id}, store);
        auto pb = pair_with("qb", GeneratorTag::b, {docs[pick(rng)].id}, store);
        auto ab = rule_based_prefer(o, docs[0], pa, pb);
        auto ba = rule_based_prefer(o, docs[0], pb, pa);
        if (!ab.tie) {
          CHECK(ab.chosen.question.text == ba.chosen.question.text);
          CHECK(ab.score_chosen->value > ab.score_rejected->value);
        }
      }
    }
  }

  TEST_CASE("labels match a direct brute-force evaluation") {
    std::mt19937_64 rng(1234);
    for (int round = 0; round < 4; ++round) {
      auto r = fixtures::random_ontology(rng, 100);
      auto o = fixtures::corpus_mode(r);
      oracle::Cache cache(r.raw);
      auto docs = fixtures::synthetic_corpus(rng, r.ids, 50);
      DocumentStore store(docs);
      std::uniform_int_distribution<std::size_t> pick(0, docs.size() - 1);
      for (const auto& d : docs) {
        std::vector<std::string> ca{docs[pick(rng)].id, docs[pick(rng)].id}, cb{docs[pick(rng)].id};
        auto pa = pair_with("qa", GeneratorTag::a, ca, store);
        auto pb = pair_with("qb", GeneratorTag::b, cb, store);
        auto pool = [&](const std::vector<std::string>& ids) {
          std::vector<std::string> t;
          for (const auto& id : ids)
            for (const auto& m : store.at(id).mesh) t.push_back(m);
          return t;
        };
        const auto sa = cache.set_similarity(d.mesh, pool(ca));
        const auto sb = cache.set_similarity(d.mesh, pool(cb));
        auto rec = rule_based_prefer(o, d, pa, pb);
        CHECK(std::abs(rec.score_chosen->value - static_cast<double>(std::max(sa, sb))) < 1e-9);
        if (std::abs(static_cast<double>(sa - sb)) > 1e-9) {
          CHECK(rec.chosen.question.text == (sa > sb ? "qa" : "qb"));
        }
      }
    }
  }

  TEST_CASE("preference json round-trip") {
    auto t = fixtures::tiny_ontology();
    auto docs = tiny_corpus();
    DocumentStore store(docs);
    auto rec = rule_based_prefer(t, store.at("src"), pair_with("qa", GeneratorTag::a, {"cA2", "cB"}, store),
                                 pair_with("qb", GeneratorTag::b, {"cB"}, store));
    auto j = preference_to_json(rec);
    for (const char* key : {"doc_id", "chosen", "rejected", "score_chosen", "score_rejected", "tie", "source"})
      CHECK(j.contains(key));
    CHECK(j["chosen"]["question"] == "qa");
    CHECK(j["chosen"]["contexts"] == Json::array({"cA2", "cB"}));
    auto back = preference_from_json(Json::parse(j.dump()));
    CHECK(preference_to_json(back).dump() == j.dump());
  }

  TEST_CASE("eval fine-tune export") {
    fixtures::TempDir dir("evalft");
    std::mt19937_64 rng(77);
    auto r = fixtures::random_ontology(rng, 50);
    auto o = fixtures::corpus_mode(r);
    auto docs = fixtures::synthetic_corpus(rng, r.ids, 40);
    DocumentStore store(docs);
    std::vector<PreferenceRecord> records;
    for (std::size_t i = 0; i + 2 < docs.size(); ++i) {
      auto pa = pair_with("qa" + std::to_string(i), GeneratorTag::a, {docs[i + 1].id}, store);
      auto pb = pair_with("qb" + std::to_string(i), GeneratorTag::b, {docs[i + 2].id}, store);
      auto rec = rule_based_prefer(o, docs[i], pa, pb);
      rec.doc_id = docs[i].id;
      records.push_back(rec);
    }
    CHECK(export_eval_finetune(records, store, 5, dir / "a.jsonl") == records.size());
    CHECK(export_eval_finetune(records, store, 5, dir / "b.jsonl") == records.size());
    CHECK(fixtures::slurp(dir / "a.jsonl") == fixtures::slurp(dir / "b.jsonl"));
    CHECK(read_json_file(dir / "a.jsonl.meta.json")["seed"] == 5);
    export_eval_finetune(records, store, 6, dir / "c.jsonl");

    using Key = std::tuple<std::string, std::set<std::string>, std::string>;
    auto canon = [](const std::vector<EvalFinetuneRow>& rows) {
      std::multiset<Key> out;
      for (const auto& row : rows) {
        const auto& win = row.label == 'A' ? row.pair_a : row.pair_b;
        out.insert({row.doc_id, {row.pair_a.question.text, row.pair_b.question.text}, win.question.text});
      }
      return out;
    };
    auto a = read_eval_finetune(dir / "a.jsonl");
    auto c = read_eval_finetune(dir / "c.jsonl");
    CHECK(canon(a) == canon(c));
    std::size_t swapped = 0;
    for (const auto& row : a) swapped += row.swapped;
    CHECK(swapped > 0);
    CHECK(swapped < a.size());

    REQUIRE(a.size() == records.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto& row = a[i];
      const auto& chosen = row.label == 'A' ? row.pair_a : row.pair_b;
      const auto& rejected = row.label == 'A' ? row.pair_b : row.pair_a;
      CHECK(row.doc_id == records[i].doc_id);
      CHECK(row.document == store.at(row.doc_id).text());
      CHECK(candidate_pair_to_json(chosen).dump() == candidate_pair_to_json(records[i].chosen).dump());
      CHECK(candidate_pair_to_json(rejected).dump() == candidate_pair_to_json(records[i].rejected).dump());
      CHECK((row.label == 'B') == row.swapped);
    }
    std::vector<PreferenceRecord> none;
    CHECK(kind_of([&] { export_eval_finetune(none, store, 1, dir / "d.jsonl"); }) == ErrorKind::validation);
  }

  TEST_CASE("verdict parsing is strict") {
    CHECK(parse_verdict("A") == 'A');
    CHECK(parse_verdict(" B.\n") == 'B');
    CHECK_FALSE(parse_verdict("maybe").has_value());
    CHECK_FALSE(parse_verdict("A or B").has_value());
    CHECK_FALSE(parse_verdict("").has_value());
    CHECK_FALSE(parse_verdict("a").has_value());
  }

  TEST_CASE("llm judge picks the presented position") {
    auto t = fixtures::tiny_ontology();
    auto docs = tiny_corpus();
    DocumentStore store(docs);
    auto pa = pair_with("qa", GeneratorTag::a, {"cA2"}, store);
    auto pb = pair_with("qb", GeneratorTag::b, {"cB"}, store);
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      MockChatBackend judge(mock_config("judge"), {{"Pair B", "B", false}});
      auto rec = llm_prefer(judge, t, store, store.at("src"), pa, pb, seed);
      const bool swapped = presentation_swapped(seed, "judge", "src");
      CHECK(rec.source == LabelSource::llm);
      CHECK(rec.chosen.question.text == (swapped ? "qa" : "qb"));
      CHECK(rec.score_chosen.has_value());
      CHECK_FALSE(rec.judge_fallback);
      CHECK(judge.calls() == 1);
    }
  }

  TEST_CASE("unusable verdicts fall back to the rule label") {
    auto t = fixtures::tiny_ontology();
    auto docs = tiny_corpus();
    DocumentStore store(docs);
    auto pa = pair_with("qa", GeneratorTag::a, {"cB"}, store);
    auto pb = pair_with("qb", GeneratorTag::b, {"cA1"}, store);
    MockChatBackend judge(mock_config("judge"), {{"Pair", "maybe", false}});
    auto rec = llm_prefer(judge, t, store, store.at("src"), pa, pb, 3);
    CHECK(judge.calls() == 2);
    CHECK(rec.judge_fallback);
    CHECK(rec.source == LabelSource::rule);
    CHECK(rec.chosen.question.text == "qb");
    CHECK(judge.prompts()[1].find("could not be parsed") != std::string::npos);
  }

  TEST_CASE("a judge mirroring the rule reproduces the rule labels") {
    std::mt19937_64 rng(2020);
    auto r = fixtures::random_ontology(rng, 80);
    auto o = fixtures::corpus_mode(r);
    auto docs = fixtures::synthetic_corpus(rng, r.ids, 20);
    DocumentStore store(docs);
    std::uniform_int_distribution<std::size_t> pick(0, docs.size() - 1);
    for (std::size_t i = 0; i < docs.size(); ++i) {
      auto pa = pair_with("qa" + std::to_string(i), GeneratorTag::a, {docs[pick(rng)].id}, store);
      auto pb = pair_with("qb" + std::to_string(i), GeneratorTag::b, {docs[pick(rng)].id, docs[pick(rng)].id}, store);
      auto rule = rule_based_prefer(o, docs[i], pa, pb);
      MirrorJudge judge({{pa.question.text, {score_pair(o, docs[i], pa).value, true}},
                         {pb.question.text, {score_pair(o, docs[i], pb).value, false}}});
      auto llm = llm_prefer(judge, o, store, docs[i], pa, pb, 99);
      CHECK(llm.source == LabelSource::llm);
      CHECK(llm.chosen.question.text == rule.chosen.question.text);
    }
  }
}
