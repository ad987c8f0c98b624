#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "grokkit/datagen.hpp"
#include "grokkit/dataset_io.hpp"
#include "grokkit/rng.hpp"
#include "oracles.hpp"

using namespace grokkit;
using namespace grokkit::datagen;

TEST_CASE("knowledge graph: structure and determinism") {
  const KnowledgeGraph g = gen_knowledge_graph(2000, 200, 20, 7);
  CHECK(g.edges.size() == 40000);
  g.validate();

  const KnowledgeGraph g2 = gen_knowledge_graph(2000, 200, 20, 7);
  CHECK(g.edges == g2.edges);
  const KnowledgeGraph g3 = gen_knowledge_graph(2000, 200, 20, 8);
  CHECK(g.edges != g3.edges);
}

TEST_CASE("knowledge graph: two entities force mutual edges") {
  const KnowledgeGraph g = gen_knowledge_graph(2, 1, 1, 3);
  REQUIRE(g.edges.size() == 2);
  CHECK(g.edges[0] == Edge{0, 0, 1});
  CHECK(g.edges[1] == Edge{1, 0, 0});
}

TEST_CASE("knowledge graph: per-subject relation sets by enumeration") {
  const KnowledgeGraph g = gen_knowledge_graph(50, 10, 5, 11);
  std::map<EntityId, std::set<RelationId>> rels;
  for (const Edge& e : g.edges) {
    CHECK(e.object != e.subject);
    rels[e.subject].insert(e.relation);
  }
  REQUIRE(rels.size() == 50);
  for (auto& [s, rs] : rels) CHECK(rs.size() == 5);
}

TEST_CASE("knowledge graph: rejects impossible out-degree") {
  CHECK_THROWS_AS(gen_knowledge_graph(10, 3, 4, 0), DataError);
  CHECK_THROWS_AS(gen_knowledge_graph(1, 3, 1, 0), DataError);
}

TEST_CASE("deduce_compositions: hand examples") {
  // A --r1--> B --r2--> C gives exactly (A, r1, r2, C).
  std::vector<Edge> atomic = {{0, 1, 1}, {1, 2, 2}};
  auto out = deduce_compositions(atomic);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == ComposedFact{0, 1, 2, 2});
}

TEST_CASE("deduce_compositions: dead end yields nothing") {
  std::vector<Edge> atomic = {{0, 1, 1}};
  CHECK(deduce_compositions(atomic).empty());
}

TEST_CASE("deduce_compositions: equals pairwise-join oracle on random graphs") {
  for (Seed seed = 0; seed < 6; ++seed) {
    const KnowledgeGraph g = gen_knowledge_graph(40 + 2 * seed, 12, 4, seed);
    auto fast = deduce_compositions(g.edges);
    auto slow = oracle::compose_pairwise(g.edges);
    CHECK(fast == slow);
  }
}

TEST_CASE("composition dataset: split arithmetic at headline scale") {
  const KnowledgeGraph g = gen_knowledge_graph(2000, 200, 20, 5);
  const CompositionDataset d = build_composition_dataset(g, 0.05, 7.2, 5);
  CHECK(d.atomic_ood.size() == 2000);
  CHECK(d.atomic_id.size() == 38000);
  CHECK(d.train_inferred_id.size() == 273600);  // round(7.2 * 38000)
  CHECK(d.test_inferred_id.size() == 3000);
  CHECK(d.test_inferred_ood.size() <= 3000);

  // Sanity of the OOD split: both hops of every OOD inferred fact are OOD
  // atomic facts (validate() already enforces this; spot-check directly).
  std::set<std::pair<EntityId, RelationId>> ood_edges;
  for (const Edge& e : d.atomic_ood) ood_edges.insert({e.subject, e.relation});
  for (const ComposedFact& f : d.test_inferred_ood)
    CHECK(ood_edges.count({f.head, f.r1}) == 1);
}

TEST_CASE("composition dataset: deterministic regeneration") {
  const KnowledgeGraph g = gen_knowledge_graph(100, 40, 8, 21);
  const CompositionDataset a = build_composition_dataset(g, 0.1, 2.0, 9);
  const CompositionDataset b = build_composition_dataset(g, 0.1, 2.0, 9);
  CHECK(a == b);
}

TEST_CASE("composition dataset: infeasible phi reports the maximum") {
  const KnowledgeGraph g = gen_knowledge_graph(50, 10, 5, 3);
  try {
    build_composition_dataset(g, 0.1, 1000.0, 3);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("max feasible phi") != std::string::npos);
  }
}

TEST_CASE("compare_label: rule table") {
  CHECK(compare_label(3, 5) == Label::Less);
  CHECK(compare_label(4, 4) == Label::Equal);
  CHECK(compare_label(7, 2) == Label::Greater);
}

TEST_CASE("comparison dataset: headline counts") {
  const ComparisonDataset d = build_comparison_dataset(1000, 20, 20, 0.10, 7.2, 13);
  CHECK(d.atomic_id.size() + d.atomic_ood.size() == 20000);
  CHECK(d.atomic_ood.size() == 2000);
  CHECK(d.train_inferred_id.size() == std::size_t(std::llround(7.2 * 18000)));
}

TEST_CASE("comparison dataset: labels match a brute-force recomputation") {
  const ComparisonDataset d = build_comparison_dataset(30, 3, 6, 0.2, 3.0, 17);
  auto check = [&](const std::vector<CompFact>& facts) {
    for (const CompFact& f : facts)
      CHECK(f.label ==
            oracle::compare_recompute(d.value_of(f.e1, f.attribute), d.value_of(f.e2, f.attribute)));
  };
  check(d.train_inferred_id);
  check(d.test_inferred_id);
  check(d.test_inferred_ood);
  // Equal values produce the equality label (also exercised via the table).
  for (const CompFact& f : d.train_inferred_id)
    if (d.value_of(f.e1, f.attribute) == d.value_of(f.e2, f.attribute))
      CHECK(f.label == Label::Equal);
}

TEST_CASE("comparison dataset: train/test splits are disjoint") {
  const ComparisonDataset d = build_comparison_dataset(40, 4, 8, 0.15, 4.0, 29);
  std::set<CompFact> train(d.train_inferred_id.begin(), d.train_inferred_id.end());
  for (const CompFact& f : d.test_inferred_id) CHECK(train.count(f) == 0);
}

TEST_CASE("derivable_bounds: hand examples") {
  AttributeTrainFacts facts;
  facts.known_values = {{1, 3}, {2, 7}};
  // e10 < e1 (value 3): upper(e10) = 2.  e11 = e2 (value 7): exact.
  facts.comparisons = {{0, 10, 1, Label::Less}, {0, 11, 2, Label::Equal}};
  auto bounds = derivable_bounds(facts, 0);
  CHECK(bounds.at(10).upper == 2);
  CHECK(bounds.at(10).lower == kValueNegInf);
  CHECK(!bounds.at(10).exact.has_value());
  REQUIRE(bounds.at(11).exact.has_value());
  CHECK(*bounds.at(11).exact == 7);
  CHECK(bounds.at(11).lower == 7);
  CHECK(bounds.at(11).upper == 7);
}

TEST_CASE("derivable_bounds: contradiction is an error") {
  AttributeTrainFacts facts;
  facts.known_values = {{1, 3}, {2, 7}};
  facts.comparisons = {{0, 10, 1, Label::Less}, {0, 10, 2, Label::Greater}};  // e10 < 3 and > 7
  CHECK_THROWS_AS(derivable_bounds(facts, 0), DataError);
}

TEST_CASE("derivable_label: strict chain through value-ordered witnesses") {
  AttributeTrainFacts facts;
  facts.known_values = {{1, 3}, {2, 5}};
  // e10 < b1(3), e11 > b2(5)  =>  e10 < e11 via b1 < b2.
  facts.comparisons = {{0, 10, 1, Label::Less}, {0, 11, 2, Label::Greater}};
  auto bounds = derivable_bounds(facts, 0);
  auto lbl = derivable_label(bounds, 10, 11);
  REQUIRE(lbl.has_value());
  CHECK(*lbl == Label::Less);
  auto rev = derivable_label(bounds, 11, 10);
  REQUIRE(rev.has_value());
  CHECK(*rev == Label::Greater);
}

TEST_CASE("derivable_label: same-label transitivity only") {
  AttributeTrainFacts facts;
  facts.known_values = {{1, 5}, {2, 5}};
  // e10 < b1(5) and b2(5) < e11: the only link would be b1 = b2, which cannot
  // join two strict steps, so nothing is derivable.
  facts.comparisons = {{0, 10, 1, Label::Less}, {0, 11, 2, Label::Greater}};
  auto bounds = derivable_bounds(facts, 0);
  CHECK(!derivable_label(bounds, 10, 11).has_value());
}

TEST_CASE("derivable_eq3_only: chains and non-chains") {
  AttributeTrainFacts facts;
  facts.known_values = {{1, 3}, {2, 9}};
  facts.comparisons = {{0, 10, 1, Label::Less}, {0, 1, 11, Label::Less}};
  // e10 < b, b < e11: pure transitivity.
  CHECK(derivable_eq3_only(facts, {0, 10, 11, Label::Less}));
  // No chain between e10 and e12.
  AttributeTrainFacts facts2;
  facts2.known_values = facts.known_values;
  facts2.comparisons = {{0, 10, 1, Label::Less}, {0, 12, 2, Label::Less}};
  CHECK(!derivable_eq3_only(facts2, {0, 10, 12, Label::Less}));
}

TEST_CASE("derivability agrees with forward chaining on random instances") {
  for (Seed seed = 0; seed < 5; ++seed) {
    const ComplexDataset d = build_complex_dataset(40, 2, 8, 0.25, 0.05, 0, 100 + seed);
    for (AttributeId a = 0; a < d.n_attributes; ++a) {
      AttributeTrainFacts facts;
      std::vector<AttrFact> atomics;
      for (const AttrFact& f : d.atomic_id)
        if (f.attribute == a) {
          facts.known_values.push_back({f.entity, f.value});
          atomics.push_back(f);
        }
      std::vector<CompFact> comps;
      for (const CompFact& c : d.train_comp_id_id)
        if (c.attribute == a) comps.push_back(c);
      for (const CompFact& c : d.train_comp_id_ood)
        if (c.attribute == a) comps.push_back(c);
      facts.comparisons = comps;

      auto bounds = derivable_bounds(facts, a);
      oracle::ForwardChain chain(atomics, comps, a);
      const auto ood = d.ood_entities(a);
      for (EntityId e1 : ood)
        for (EntityId e2 : ood) {
          if (e1 == e2) continue;
          CHECK(derivable_label(bounds, e1, e2) == chain.entailed(e1, e2));
        }
      // The comparison-only closure also matches its naive fixpoint analogue.
      ComparisonOnlyClosure closure(comps, d.n_entities);
      oracle::ComparisonOnlyChain naive(comps, a);
      for (EntityId e1 : ood)
        for (EntityId e2 : ood) {
          if (e1 == e2) continue;
          auto lbl = naive.entailed(e1, e2);
          for (int l = 0; l < 3; ++l)
            CHECK(closure.entails(e1, e2, static_cast<Label>(l)) ==
                  (lbl.has_value() && *lbl == static_cast<Label>(l)));
        }
    }
  }
}

TEST_CASE("complex dataset: gating and balance") {
  const ComplexDataset d = build_complex_dataset(80, 2, 8, 0.25, 0.04, 2, 101);
  // validate() already checks derivability, exclusion and balance; assert the
  // headline shape here.
  std::size_t counts[3] = {0, 0, 0};
  for (const CompFact& q : d.test_queries) counts[int(q.label)]++;
  CHECK(counts[0] == d.n_attributes * d.n_test_per_label);
  CHECK(counts[1] == counts[0]);
  CHECK(counts[2] == counts[0]);
  // No OOD atomic fact is trained.
  for (const AttrFact& f : d.atomic_id) CHECK(!d.is_ood(f.entity, f.attribute));

  // A transitive-only chain is never a test query: recheck against the
  // closure built from scratch.
  for (AttributeId a = 0; a < d.n_attributes; ++a) {
    std::vector<CompFact> comps;
    for (const CompFact& c : d.train_comp_id_id)
      if (c.attribute == a) comps.push_back(c);
    for (const CompFact& c : d.train_comp_id_ood)
      if (c.attribute == a) comps.push_back(c);
    ComparisonOnlyClosure closure(comps, d.n_entities);
    for (const CompFact& q : d.test_queries)
      if (q.attribute == a) CHECK(!closure.entails(q.e1, q.e2, q.label));
  }
}

TEST_CASE("complex dataset: insufficient queries name the deficient label") {
  try {
    build_complex_dataset(12, 1, 8, 0.2, 0.05, 50, 3);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string what = e.what();
    CHECK(what.find("queries") != std::string::npos);
    CHECK(what.find("need 50 per label") != std::string::npos);
  }
}

TEST_CASE("dataset files: round-trip identity and byte-stable regeneration") {
  const auto dir = std::filesystem::temp_directory_path() / "grokkit_test_io";
  std::filesystem::create_directories(dir);

  const KnowledgeGraph g = gen_knowledge_graph(60, 20, 6, 2);
  const Dataset comp = build_composition_dataset(g, 0.1, 2.0, 2, {.min_ood_chains = 5});
  const Dataset cmp = build_comparison_dataset(30, 3, 6, 0.2, 3.0, 2);
  const Dataset cpx = build_complex_dataset(80, 2, 8, 0.25, 0.04, 2, 2);

  int i = 0;
  for (const Dataset* d : {&comp, &cmp, &cpx}) {
    const auto p1 = dir / ("d" + std::to_string(i) + "_a.tsv");
    const auto p2 = dir / ("d" + std::to_string(i) + "_b.tsv");
    save_dataset(*d, p1);
    const Dataset loaded = load_dataset(p1);
    CHECK(loaded == *d);
    save_dataset(loaded, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    ++i;
  }
}

TEST_CASE("dataset files: truncated record names the line") {
  const auto dir = std::filesystem::temp_directory_path() / "grokkit_test_io";
  std::filesystem::create_directories(dir);
  const auto path = dir / "truncated.tsv";
  const KnowledgeGraph g = gen_knowledge_graph(20, 8, 3, 4);
  save_dataset(build_composition_dataset(g, 0.2, 1.0, 4, {.min_ood_chains = 1}), path);

  // Chop the last line in half.
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string contents = buf.str();
  in.close();
  contents.resize(contents.size() - 8);
  std::ofstream(path, std::ios::binary) << contents;

  try {
    load_dataset(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    // The message carries file:line of the malformed record.
    CHECK(std::string(e.what()).find(".tsv:") != std::string::npos);
  }
}
