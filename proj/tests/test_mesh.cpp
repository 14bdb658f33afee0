#include <doctest.h>

#include <random>
#include <sstream>

#include "biodistill/error.hpp"
#include "biodistill/mesh.hpp"
#include "generators.hpp"
#include "oracle.hpp"

using namespace biodistill;

namespace {

const char* kExampleTsv =
    "D0A\tA\tC01\n"
    "D0B\tB\tC02\n"
    "D1\tA1\tC01.100\n"
    "D2\tA2\tC01.200\n";

MeshOntology from_tsv(const std::string& text) {
  std::istringstream in(text);
  return parse_mesh(in, MeshFormat::tsv);
}

MeshOntology from_xml(const std::string& text) {
  std::istringstream in(text);
  return parse_mesh(in, MeshFormat::mesh_xml);
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::io;
}

// Values computed once with 40-digit arithmetic from the closure sums
// {A, A1, A2} = 4, {A1} = 2, {A2} = 1 over a total mass of 5.
constexpr double kIcA = 0.22314355131420975577;
constexpr double kIcA1 = 0.91629073187415506518;
constexpr double kIcA2 = 1.6094379124341003746;
constexpr double kLinA1A2 = 0.17669637774989413784;

}  // namespace

TEST_SUITE("mesh") {
  TEST_CASE("tsv example builds four descriptors under the virtual root") {
    auto o = from_tsv(kExampleTsv);
    CHECK(o.size() == 4);
    auto roots = o.root_children();
    std::sort(roots.begin(), roots.end());
    CHECK(roots == std::vector<std::string>{"D0A", "D0B"});
    CHECK(o.ancestors("D1") == std::set<std::string>{"D0A", std::string(kRootId)});
    CHECK(o.ancestors("D0A") == std::set<std::string>{std::string(kRootId)});
    CHECK(o.descriptor_at("C01.200") == std::optional<std::string>("D2"));
  }

  TEST_CASE("empty stream yields only the root") {
    auto o = from_tsv("");
    CHECK(o.size() == 0);
    CHECK(o.root_children().empty());
    CHECK(o.information_content(kRootId) == 0.0);
  }

  TEST_CASE("duplicate id is a conflict") {
    CHECK(kind_of([] { from_tsv(std::string(kExampleTsv) + "D1\tdup\tC03\n"); }) == ErrorKind::conflict);
  }

  TEST_CASE("tree number claimed twice is a conflict") {
    CHECK(kind_of([] { from_tsv(std::string(kExampleTsv) + "D9\tdup\tC01.100\n"); }) == ErrorKind::conflict);
  }

  TEST_CASE("malformed tsv row names its line") {
    try {
      from_tsv("D0A\tA\tC01\nbroken-row\n");
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::parse);
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }

  TEST_CASE("descriptor with two tree numbers inherits from both branches") {
    auto o = from_tsv(std::string(kExampleTsv) + "D3\tboth\tC01.100.5;C02.300\n");
    auto anc = o.ancestors("D3");
    oracle::Ontology raw{{{"D0A", {"C01"}}, {"D0B", {"C02"}}, {"D1", {"C01.100"}}, {"D2", {"C01.200"}},
                          {"D3", {"C01.100.5", "C02.300"}}},
                         false};
    CHECK(anc == oracle::ancestors(raw, "D3"));
    CHECK(anc.count("D0A") == 1);
    CHECK(anc.count("D0B") == 1);
    CHECK(anc.count("D1") == 1);
  }

  TEST_CASE("unknown id is not-found") {
    auto o = from_tsv(kExampleTsv);
    CHECK(kind_of([&] { o.ancestors("nope"); }) == ErrorKind::not_found);
    CHECK(kind_of([&] { o.lca("D1", "nope"); }) == ErrorKind::not_found);
  }

  TEST_CASE("worked example information content") {
    auto t = fixtures::tiny_ontology();
    CHECK(t.total_mass() == 5);
    CHECK(t.information_content(kRootId) == 0.0);
    CHECK(t.information_content("A") == doctest::Approx(kIcA).epsilon(1e-12));
    CHECK(t.information_content("A1") == doctest::Approx(kIcA1).epsilon(1e-12));
    CHECK(t.information_content("A2") == doctest::Approx(kIcA2).epsilon(1e-12));
    CHECK(std::abs(t.information_content("A") - 0.22314) < 5e-6);
    CHECK(std::abs(t.information_content("A1") - 0.91629) < 5e-6);
  }

  TEST_CASE("worked example lca and lin") {
    auto t = fixtures::tiny_ontology();
    CHECK(t.lca("A1", "A2") == "A");
    CHECK(t.lca("A1", "B") == kRootId);
    CHECK(t.lca("A1", "A1") == "A1");
    CHECK(t.lin_similarity("A1", "A1") == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(t.lin_similarity("A1", "B") == 0.0);
    CHECK(std::abs(t.lin_similarity("A1", "A2") - kLinA1A2) < 1e-12);
    CHECK(std::abs(t.lin_similarity("A1", "A2") - 2 * kIcA / (kIcA1 + kIcA2)) < 1e-12);
  }

  TEST_CASE("worked example set similarity") {
    auto t = fixtures::tiny_ontology();
    std::vector<std::string> a1{"A1"}, a2{"A2"}, a1b{"A1", "B"};
    auto s = t.set_similarity(a1, a1);
    CHECK(s.value == doctest::Approx(1.0));
    CHECK(s.pair_count == 1);
    s = t.set_similarity(a1b, a1);
    CHECK(std::abs(s.value - 0.5) < 1e-12);
    CHECK(s.pair_count == 2);
    CHECK(std::abs(t.set_similarity(a1, a2).value - kLinA1A2) < 1e-12);
  }

  TEST_CASE("set similarity drops unknown ids and rejects empty sides") {
    auto t = fixtures::tiny_ontology();
    std::vector<std::string> doc{"A1", "ghost"}, ctx{"A1"}, none{"ghost"}, empty;
    CHECK(t.set_similarity(doc, ctx).value == doctest::Approx(1.0));
    CHECK(t.set_similarity(doc, ctx).pair_count == 1);
    CHECK(kind_of([&] { t.set_similarity(none, ctx); }) == ErrorKind::empty_terms);
    CHECK(kind_of([&] { t.set_similarity(ctx, empty); }) == ErrorKind::empty_terms);
  }

  TEST_CASE("corpus mode with zero closure frequency is undefined") {
    auto o = MeshOntology(fixtures::tiny_descriptors()).with_counts({{"A", 1}, {"A1", 2}, {"B", 1}});
    try {
      o.information_content("A2");
      FAIL("expected undefined IC");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::undefined_ic);
      CHECK(std::string(e.what()).find("A2") != std::string::npos);
    }
  }

  TEST_CASE("total mass per mode") {
    auto structural = from_tsv(std::string(kExampleTsv) + "D9\tfloating\t\n");
    CHECK(structural.ic_mode() == IcMode::structural);
    CHECK(structural.total_mass() == 4);
    auto corpus = structural.with_counts({{"D0A", 3}, {"D1", 4}, {"D2", 0}, {"D0B", 1}});
    CHECK(corpus.total_mass() == 8);
    CHECK(corpus.closure_frequency("D0A") == 7);
  }

  TEST_CASE("structural mode uses closure cardinality") {
    auto o = from_tsv(kExampleTsv);
    CHECK(o.closure_frequency("D0A") == 3);
    CHECK(o.information_content("D0A") == doctest::Approx(-std::log(3.0 / 4.0)));
  }

  TEST_CASE("tsv write and reparse is the identity") {
    auto o = from_tsv(std::string(kExampleTsv) + "D3\tboth\tC01.100.5;C02.300\n");
    std::ostringstream out;
    write_mesh_tsv(out, o);
    auto again = from_tsv(out.str());
    REQUIRE(again.size() == o.size());
    for (const auto& d : o.descriptors()) {
      CHECK(again.descriptor(d.id).name == d.name);
      CHECK(again.descriptor(d.id).tree_numbers == d.tree_numbers);
    }
  }

  TEST_CASE("annotation counts tsv") {
    std::istringstream in("A\t3\n# comment\n\nB\t0\n");
    auto c = parse_annotation_counts(in);
    CHECK(c.size() == 2);
    CHECK(c.at("A") == 3);
    std::istringstream bad("A\tx\n");
    CHECK(kind_of([&] { parse_annotation_counts(bad); }) == ErrorKind::parse);
  }

  TEST_CASE("descriptor xml") {
    const std::string xml = R"(<?xml version="1.0"?>
<!DOCTYPE DescriptorRecordSet SYSTEM "desc.dtd">
<DescriptorRecordSet LanguageCode="eng">
  <DescriptorRecord DescriptorClass="1">
    <DescriptorUI>D000001</DescriptorUI>
    <DescriptorName><String>Calcimycin &amp; related</String></DescriptorName>
    <DateCreated><Year>1974</Year></DateCreated>
    <TreeNumberList>
      <TreeNumber>D03.633.100.221.173</TreeNumber>
    </TreeNumberList>
    <ConceptList><Concept><ConceptName><String>ignored</String></ConceptName></Concept></ConceptList>
  </DescriptorRecord>
  <DescriptorRecord>
    <DescriptorUI>D000002</DescriptorUI>
    <DescriptorName><String><![CDATA[Temefos]]> &#233;</String></DescriptorName>
    <TreeNumberList><TreeNumber>D02.705.400</TreeNumber><TreeNumber>D02.886.300</TreeNumber></TreeNumberList>
  </DescriptorRecord>
  <!-- a record without a tree list -->
  <DescriptorRecord><DescriptorUI>D000003</DescriptorUI><DescriptorName><String>Loose</String></DescriptorName></DescriptorRecord>
</DescriptorRecordSet>
)";
    auto o = from_xml(xml);
    REQUIRE(o.size() == 3);
    CHECK(o.descriptor("D000001").name == "Calcimycin & related");
    CHECK(o.descriptor("D000002").name == "Temefos \xC3\xA9");
    CHECK(o.descriptor("D000002").tree_numbers.size() == 2);
    CHECK(o.descriptor("D000001").tree_numbers[0].path() == "D03.633.100.221.173");
    CHECK_FALSE(o.has_tree_numbers("D000003"));
  }

  TEST_CASE("malformed xml names the record or line") {
    try {
      from_xml("<DescriptorRecordSet><DescriptorRecord><DescriptorName><String>x</String></DescriptorName>"
               "</DescriptorRecord></DescriptorRecordSet>");
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::parse);
      CHECK(std::string(e.what()).find("DescriptorRecord #1") != std::string::npos);
    }
    try {
      from_xml("<DescriptorRecordSet>\n<DescriptorRecord>\n<DescriptorUI>D1</Descriptor>\n");
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::parse);
      CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK(kind_of([] { from_xml("<Other/>"); }) == ErrorKind::parse);
    CHECK(kind_of([] {
            from_xml("<DescriptorRecordSet><DescriptorRecord><DescriptorUI>D1</DescriptorUI></DescriptorRecord>"
                     "<DescriptorRecord><DescriptorUI>D1</DescriptorUI></DescriptorRecord></DescriptorRecordSet>");
          }) == ErrorKind::conflict);
  }

  TEST_CASE("random ontologies agree with the brute-force oracle") {
    std::mt19937_64 rng(20240611);
    for (int round = 0; round < 6; ++round) {
      auto r = fixtures::random_ontology(rng, 60);
      auto o = fixtures::corpus_mode(r);
      r.raw.corpus = true;
      std::uniform_int_distribution<std::size_t> pick(0, r.ids.size() - 1);
      for (const auto& id : r.ids) {
        CHECK(o.ancestors(id) == oracle::ancestors(r.raw, id));
        CHECK(o.closure_frequency(id) == oracle::frequency(r.raw, id));
      }
      for (int i = 0; i < 100; ++i) {
        const auto& x = r.ids[pick(rng)];
        const auto& y = r.ids[pick(rng)];
        CHECK(o.lca(x, y) == oracle::lca(r.raw, x, y));
        CHECK(std::abs(o.lin_similarity(x, y) - static_cast<double>(oracle::lin(r.raw, x, y))) < 1e-9);
      }
    }
  }

  TEST_CASE("lin bounds, symmetry, self-similarity and root neutrality") {
    std::mt19937_64 rng(7);
    for (int round = 0; round < 8; ++round) {
      auto r = fixtures::random_ontology(rng, 80);
      for (bool corpus : {true, false}) {
        auto o = corpus ? fixtures::corpus_mode(r) : MeshOntology(r.descriptors);
        for (std::size_t i = 0; i < r.ids.size(); i += 3) {
          for (std::size_t j = 0; j < r.ids.size(); j += 5) {
            const auto& x = r.ids[i];
            const auto& y = r.ids[j];
            const double l = o.lin_similarity(x, y);
            CHECK(l >= 0.0);
            CHECK(l <= 1.0);
            CHECK(l == o.lin_similarity(y, x));
            if (o.lca(x, y) == kRootId) CHECK(l == 0.0);
          }
          if (o.information_content(r.ids[i]) > 0) CHECK(o.lin_similarity(r.ids[i], r.ids[i]) == 1.0);
        }
      }
    }
  }

  TEST_CASE("monotone specificity in both modes") {
    std::mt19937_64 rng(99);
    for (int round = 0; round < 8; ++round) {
      auto r = fixtures::random_ontology(rng, 80);
      for (bool corpus : {true, false}) {
        auto o = corpus ? fixtures::corpus_mode(r) : MeshOntology(r.descriptors);
        for (const auto& x : r.ids) {
          for (const auto& a : o.ancestors(x)) CHECK(o.information_content(x) >= o.information_content(a));
        }
      }
    }
  }

  TEST_CASE("count scaling leaves every information content unchanged") {
    std::mt19937_64 rng(5);
    for (int round = 0; round < 5; ++round) {
      auto r = fixtures::random_ontology(rng, 100);
      auto base = fixtures::corpus_mode(r);
      for (std::uint64_t c : {2u, 7u, 100u}) {
        AnnotationCounts scaled;
        for (const auto& [id, n] : r.counts) scaled[id] = n * c;
        auto o = MeshOntology(r.descriptors).with_counts(scaled);
        for (const auto& id : r.ids) CHECK(o.information_content(id) == base.information_content(id));
      }
    }
  }

  TEST_CASE("set similarity is symmetric") {
    std::mt19937_64 rng(11);
    auto r = fixtures::random_ontology(rng, 120);
    auto o = fixtures::corpus_mode(r);
    oracle::Cache cache(r.raw);
    std::uniform_int_distribution<std::size_t> pick(0, r.ids.size() - 1), size(1, 6);
    for (int i = 0; i < 200; ++i) {
      std::vector<std::string> s, t;
      for (std::size_t k = size(rng); k > 0; --k) s.push_back(r.ids[pick(rng)]);
      for (std::size_t k = size(rng); k > 0; --k) t.push_back(r.ids[pick(rng)]);
      auto st = o.set_similarity(s, t);
      auto ts = o.set_similarity(t, s);
      CHECK(st.value == ts.value);
      CHECK(st.pair_count == ts.pair_count);
      CHECK(st.value >= 0.0);
      CHECK(st.value <= 1.0);
      CHECK(std::abs(st.value - static_cast<double>(cache.set_similarity(s, t))) < 1e-9);
    }
  }
}
