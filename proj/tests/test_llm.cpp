#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "grokkit/llm.hpp"
#include "grokkit/rng.hpp"

using namespace grokkit;
using namespace grokkit::llm;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "grokkit_llm";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

datagen::ComplexDataset test_dataset() {
  return datagen::build_complex_dataset(80, 2, 8, 0.25, 0.04, 2, 101);
}

}  // namespace

TEST_CASE("name map: deterministic, unique, without replacement") {
  const NameMap a = make_name_map(500, 7);
  const NameMap b = make_name_map(500, 7);
  CHECK(a.names == b.names);
  std::set<std::string> uniq(a.names.begin(), a.names.end());
  CHECK(uniq.size() == 500);
  for (const auto& n : a.names) CHECK(n.find(' ') != std::string::npos);

  const NameMap ids = make_name_map(5, 7, true);
  CHECK(ids.names == std::vector<std::string>{"E0", "E1", "E2", "E3", "E4"});
}

TEST_CASE("render templates") {
  NameMap names = make_name_map(3, 1, true);
  names.names = {"Alice", "Bob", "Carol"};
  CHECK(render_fact(datagen::AttrFact{0, 0, 7}, names) == "The age of Alice is 7.");
  CHECK(render_fact(datagen::CompFact{0, 0, 1, Label::Less}, names) ==
        "Alice is younger than Bob.");
  CHECK(render_fact(datagen::CompFact{0, 1, 2, Label::Greater}, names) ==
        "Bob is older than Carol.");
  CHECK(render_fact(datagen::CompFact{0, 0, 2, Label::Equal}, names) ==
        "Alice is in the same age as Carol.");

  // Distinct facts render to distinct lines under an injective name map.
  std::set<std::string> lines;
  for (EntityId e1 = 0; e1 < 3; ++e1)
    for (EntityId e2 = 0; e2 < 3; ++e2) {
      if (e1 == e2) continue;
      for (int l = 0; l < 3; ++l)
        lines.insert(render_fact(datagen::CompFact{0, e1, e2, static_cast<Label>(l)}, names));
    }
  CHECK(lines.size() == 3 * 2 * 3);
}

TEST_CASE("parse_answer: keyword and undecided rules") {
  CHECK(parse_answer("...therefore Alice is younger than Bob.") == Parsed::Less);
  CHECK(parse_answer("Alice is OLDER than Bob") == Parsed::Greater);
  CHECK(parse_answer("they are in the same age") == Parsed::Equal);
  // Last keyword wins.
  CHECK(parse_answer("Bob is older than Carl, so Alice is younger than Bob.") == Parsed::Less);
  CHECK(parse_answer("The answer cannot be determined.") == Parsed::Undecided);
  CHECK(parse_answer("Alice is younger than Bob... wait, it cannot be decided.") ==
        Parsed::Undecided);
  CHECK(parse_answer("It cannot be decided at first glance, but in fact Alice is older.") ==
        Parsed::Greater);
  CHECK(parse_answer("I like turtles.") == Parsed::Unparseable);
}

TEST_CASE("retrieve_two_hop: star graph") {
  // e0 (OOD) compares only against b=e1 (ID); e1 compares against e2; e3 is
  // unrelated. Expect: the e0-e1 comparison, all of e1's comparisons, and the
  // atomic facts of every reached entity.
  datagen::ComplexDataset d;
  d.n_entities = 6;
  d.n_attributes = 1;
  d.n_values = 9;
  d.values = {3, 5, 7, 2, 4, 8};
  d.atomic_id = {{1, 0, 5}, {2, 0, 7}, {3, 0, 2}, {4, 0, 4}, {5, 0, 8}};
  d.eval_atomic_ood = {{0, 0, 3}};
  d.train_comp_id_ood = {{0, 0, 1, Label::Less}};
  d.train_comp_id_id = {{0, 1, 2, Label::Less}, {0, 3, 4, Label::Less}};

  const TwoHopFacts facts = retrieve_two_hop(d, 0, 0, 2);
  CHECK(facts.comparisons.size() == 2);  // e0<e1 and e1<e2; the e3-e4 edge is out of reach
  CHECK(facts.atomics.size() == 2);      // atomics of e1 and e2 (e0 has none in training)

  // Entity 5 appears in no comparison: an isolated query entity is an error.
  CHECK_THROWS_AS(retrieve_two_hop(d, 0, 5, 0), DataError);
}

TEST_CASE("retrieve_two_hop: retrieved subset still derives the gold label") {
  const auto d = test_dataset();
  for (const auto& q : d.test_queries) {
    const TwoHopFacts facts = retrieve_two_hop(d, q.attribute, q.e1, q.e2);
    datagen::AttributeTrainFacts tf;
    for (const auto& a : facts.atomics) tf.known_values.push_back({a.entity, a.value});
    tf.comparisons = facts.comparisons;
    auto bounds = datagen::derivable_bounds(tf, q.attribute);
    auto lbl = datagen::derivable_label(bounds, q.e1, q.e2);
    REQUIRE(lbl.has_value());
    CHECK(*lbl == q.label);
  }
}

TEST_CASE("build_jobs: deterministic prompts with recorded permutation seeds") {
  const auto d = test_dataset();
  const NameMap names = make_name_map(d.n_entities, 3);
  auto jobs1 = build_jobs(d, names, PromptStyle::Direct, ContextMode::Retrieval, 9);
  auto jobs2 = build_jobs(d, names, PromptStyle::Direct, ContextMode::Retrieval, 9);
  REQUIRE(jobs1.size() == d.test_queries.size());
  for (std::size_t i = 0; i < jobs1.size(); ++i) {
    CHECK(jobs1[i].prompt == jobs2[i].prompt);
    CHECK(jobs1[i].permutation_seed == jobs2[i].permutation_seed);
  }
  // A different base seed permutes the context differently.
  auto jobs3 = build_jobs(d, names, PromptStyle::Direct, ContextMode::Retrieval, 10);
  CHECK(jobs3[0].prompt != jobs1[0].prompt);
}

TEST_CASE("run_baseline: gold echo scores 1.0; random mock near chance") {
  // Synthetic balanced job list; prompts carry their job id so the mock can
  // look up an answer the way a deterministic endpoint would.
  std::vector<PromptJob> jobs;
  std::unordered_map<std::string, std::string> gold_text;
  const char* phrases[3] = {"younger than", "in the same age as", "older than"};
  for (int i = 0; i < 900; ++i) {
    PromptJob j;
    j.id = i;
    j.query.label = static_cast<Label>(i % 3);
    j.name1 = "A" + std::to_string(i);
    j.name2 = "B" + std::to_string(i);
    j.prompt = render_prompt(j.name1, j.name2, {"fact line " + std::to_string(i)},
                             PromptStyle::Direct);
    const int li = j.query.label == Label::Less ? 0 : j.query.label == Label::Equal ? 1 : 2;
    gold_text[j.prompt] = j.name1 + " is " + phrases[li] + " " + j.name2 + ".";
    jobs.push_back(std::move(j));
  }

  MockTransport echo([&](const std::string& prompt) { return gold_text.at(prompt); });
  RunOptions opts;
  auto rep = run_baseline(jobs, echo, opts, temp_file("echo.jsonl"));
  CHECK(rep.n_jobs == 900);
  CHECK(rep.accuracy == 1.0);
  CHECK(rep.n_failed == 0);

  Rng rng(77);
  MockTransport random_mock([&](const std::string&) {
    return std::string("The answer: they are ") + phrases[rng.below(3)] + " each other.";
  });
  auto rep2 = run_baseline(jobs, random_mock, opts, temp_file("random.jsonl"));
  CHECK(std::abs(rep2.accuracy - 1.0 / 3.0) < 0.05);

  // Transcript lines are one JSON record per job.
  std::istringstream ts(slurp(temp_file("echo.jsonl")));
  std::string line;
  int n = 0;
  while (std::getline(ts, line))
    if (!line.empty()) ++n;
  CHECK(n == 900);
}

TEST_CASE("run_baseline: undecided responses are wrong and tallied") {
  std::vector<PromptJob> jobs;
  for (int i = 0; i < 10; ++i) {
    PromptJob j;
    j.id = i;
    j.query.label = Label::Less;
    j.prompt = "q" + std::to_string(i);
    jobs.push_back(j);
  }
  MockTransport undecided([](const std::string&) -> std::string {
    return "The answer cannot be determined.";
  });
  auto rep = run_baseline(jobs, undecided, {}, temp_file("undecided.jsonl"));
  CHECK(rep.accuracy == 0.0);
  CHECK(rep.n_undecided == 10);
}

TEST_CASE("run_baseline: transport failures are tallied, the run continues") {
  std::vector<PromptJob> jobs;
  for (int i = 0; i < 6; ++i) {
    PromptJob j;
    j.id = i;
    j.query.label = Label::Greater;
    j.prompt = "q" + std::to_string(i);
    jobs.push_back(j);
  }
  int calls = 0;
  MockTransport flaky([&](const std::string& p) -> std::string {
    ++calls;
    if (p == "q3") throw std::runtime_error("boom");
    return "older than";
  });
  RunOptions opts;
  opts.max_retries = 1;
  opts.retry_backoff_seconds = 0.0;
  auto rep = run_baseline(jobs, flaky, opts, temp_file("flaky.jsonl"));
  CHECK(rep.n_failed == 1);
  CHECK(rep.n_correct == 5);
}

TEST_CASE("prompts match the golden files") {
  const auto d = test_dataset();
  const NameMap names = make_name_map(d.n_entities, 3);
  const auto golden_dir = std::filesystem::path(GROKKIT_TEST_GOLDEN_DIR);
  struct Case {
    PromptStyle style;
    ContextMode mode;
    const char* file;
  };
  const Case cases[] = {
      {PromptStyle::Direct, ContextMode::Retrieval, "prompt_direct_retrieval.txt"},
      {PromptStyle::CoT, ContextMode::Retrieval, "prompt_cot_retrieval.txt"},
      {PromptStyle::Direct, ContextMode::FullContext, "prompt_direct_full.txt"},
  };
  for (const auto& c : cases) {
    auto jobs = build_jobs(d, names, c.style, c.mode, 9);
    REQUIRE(!jobs.empty());
    CHECK(jobs[0].prompt == slurp(golden_dir / c.file));
  }
}
