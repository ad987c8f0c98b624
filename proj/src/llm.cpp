#include "grokkit/llm.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "grokkit/rng.hpp"

namespace grokkit::llm {
namespace {

const char* kFirstNames[] = {
    "Alice",  "Brian",  "Clara",  "David",  "Elena",   "Felix",  "Grace",  "Henry",
    "Irene",  "Jonas",  "Karen",  "Liam",   "Mona",    "Nathan", "Olive",  "Peter",
    "Quinn",  "Rosa",   "Simon",  "Tessa",  "Ulric",   "Vera",   "Walter", "Xenia",
    "Yusuf",  "Zoe",    "Amos",   "Bella",  "Cedric",  "Daphne", "Edgar",  "Fiona",
    "Gideon", "Hazel",  "Ivan",   "Judith", "Kelvin",  "Lydia",  "Marcus", "Nadia",
    "Oscar",  "Paula",  "Ronan",  "Sylvia", "Tobias",  "Ursula", "Victor", "Wendy",
    "Abram",  "Bianca", "Conrad", "Dora",   "Emmett",  "Freya",  "Gustav", "Hilda",
    "Israel", "Joan",   "Kurt",   "Leona",  "Mervin",  "Nora",   "Otis",   "Petra"};

const char* kLastNames[] = {
    "Abbott",   "Barnes",   "Carter",  "Dawson",   "Ellis",    "Foster",  "Graham",  "Hayes",
    "Ingram",   "Jennings", "Keller",  "Lambert",  "Mercer",   "Norris",  "Osborne", "Parker",
    "Quincey",  "Reyes",    "Sawyer",  "Thatcher", "Underhill", "Vaughn",  "Walsh",   "Xiong",
    "York",     "Zimmer",   "Ashford", "Bennett",  "Crawford", "Donovan", "Everett", "Fleming",
    "Gardner",  "Holloway", "Irving",  "Jacobs",   "Kendrick", "Lawson",  "Monroe",  "Nolan",
    "Ortega",   "Preston",  "Ramsey",  "Sheldon",  "Travers",  "Upton",   "Vance",   "Whitman",
    "Aldridge", "Brock",    "Colby",   "Draper",   "Emerson",  "Fairfax", "Goddard", "Hartley",
    "Inman",    "Jarvis",   "Kimball", "Lockhart", "Mansfield", "Newell",  "Ogden",   "Pemberton"};

constexpr std::size_t kFirstCount = sizeof(kFirstNames) / sizeof(kFirstNames[0]);
constexpr std::size_t kLastCount = sizeof(kLastNames) / sizeof(kLastNames[0]);

}  // namespace

const std::string& NameMap::of(EntityId e) const {
  if (e >= names.size()) throw DataError("name map: entity " + std::to_string(e) + " has no name");
  return names[e];
}

NameMap make_name_map(std::uint32_t n_entities, Seed seed, bool numeric_ids) {
  NameMap m;
  m.names.reserve(n_entities);
  if (numeric_ids) {
    for (std::uint32_t e = 0; e < n_entities; ++e) m.names.push_back("E" + std::to_string(e));
    return m;
  }
  const std::uint64_t pool = kFirstCount * kLastCount;
  if (n_entities > pool)
    throw DataError("name map: bundled name lists support at most " + std::to_string(pool) +
                    " unique names");
  Rng rng(Rng::mix(seed, 0x6e616d65));
  for (auto p : rng.sample_without_replacement(pool, n_entities))
    m.names.push_back(std::string(kFirstNames[p / kLastCount]) + " " +
                      kLastNames[p % kLastCount]);
  return m;
}

std::string render_fact(const AttrFact& f, const NameMap& names) {
  return "The age of " + names.of(f.entity) + " is " + std::to_string(f.value) + ".";
}

std::string render_fact(const CompFact& f, const NameMap& names) {
  const char* rel = f.label == Label::Less      ? "younger than"
                    : f.label == Label::Greater ? "older than"
                                                : "in the same age as";
  return names.of(f.e1) + " is " + rel + " " + names.of(f.e2) + ".";
}

TwoHopFacts retrieve_two_hop(const ComplexDataset& d, AttributeId attribute, EntityId e1,
                             EntityId e2) {
  std::vector<const CompFact*> comps;
  for (const auto& c : d.train_comp_id_id)
    if (c.attribute == attribute) comps.push_back(&c);
  for (const auto& c : d.train_comp_id_ood)
    if (c.attribute == attribute) comps.push_back(&c);

  std::set<EntityId> reached = {e1, e2};
  std::set<const CompFact*> first_step;
  bool touched1 = false, touched2 = false;
  for (const CompFact* c : comps) {
    const bool t1 = c->e1 == e1 || c->e2 == e1;
    const bool t2 = c->e1 == e2 || c->e2 == e2;
    if (t1 || t2) {
      first_step.insert(c);
      reached.insert(c->e1);
      reached.insert(c->e2);
      touched1 |= t1;
      touched2 |= t2;
    }
  }
  if (!touched1 || !touched2)
    throw DataError("retrieve_two_hop: query entity " +
                    std::to_string(touched1 ? e2 : e1) +
                    " appears in no training comparison");

  TwoHopFacts out;
  std::set<const CompFact*> kept = first_step;
  for (const CompFact* c : comps)
    if (reached.count(c->e1) || reached.count(c->e2)) kept.insert(c);
  for (const CompFact* c : kept) out.comparisons.push_back(*c);
  for (const auto& a : d.atomic_id)
    if (a.attribute == attribute && reached.count(a.entity)) out.atomics.push_back(a);
  std::sort(out.comparisons.begin(), out.comparisons.end());
  std::sort(out.atomics.begin(), out.atomics.end());
  return out;
}

std::string render_prompt(const std::string& name1, const std::string& name2,
                          const std::vector<std::string>& fact_lines, PromptStyle style) {
  std::ostringstream os;
  os << "Below is a list of facts about the ages of a group of people.\n\nFacts:\n";
  for (const auto& line : fact_lines) os << line << '\n';
  os << "\nQuestion: In terms of age, is " << name1 << " younger than, older than, or in the "
     << "same age as " << name2 << "?\n";
  if (style == PromptStyle::CoT)
    os << "Reason step by step using only the facts above, then state the final answer as a "
       << "single sentence of the form \"" << name1
       << " is younger than/older than/in the same age as " << name2 << "\".\n";
  else
    os << "Answer directly with exactly one of: \"younger than\", \"older than\", "
       << "\"in the same age as\". Do not explain.\n";
  return os.str();
}

std::vector<PromptJob> build_jobs(const ComplexDataset& d, const NameMap& names, PromptStyle style,
                                  ContextMode mode, Seed seed) {
  std::vector<PromptJob> jobs;
  jobs.reserve(d.test_queries.size());
  int id = 0;
  for (const CompFact& q : d.test_queries) {
    PromptJob job;
    job.id = id++;
    job.attribute = q.attribute;
    job.query = q;
    job.style = style;
    job.mode = mode;
    job.permutation_seed = Rng::mix(seed, static_cast<Seed>(job.id));
    job.name1 = names.of(q.e1);
    job.name2 = names.of(q.e2);

    std::vector<std::string> lines;
    if (mode == ContextMode::FullContext) {
      for (const auto& a : d.atomic_id)
        if (a.attribute == q.attribute) lines.push_back(render_fact(a, names));
      for (const auto& c : d.train_comp_id_id)
        if (c.attribute == q.attribute) lines.push_back(render_fact(c, names));
      for (const auto& c : d.train_comp_id_ood)
        if (c.attribute == q.attribute) lines.push_back(render_fact(c, names));
    } else {
      const TwoHopFacts facts = retrieve_two_hop(d, q.attribute, q.e1, q.e2);
      for (const auto& a : facts.atomics) lines.push_back(render_fact(a, names));
      for (const auto& c : facts.comparisons) lines.push_back(render_fact(c, names));
    }
    Rng rng(job.permutation_seed);
    rng.shuffle(lines);
    job.prompt = render_prompt(job.name1, job.name2, lines, style);
    jobs.push_back(std::move(job));
  }
  return jobs;
}

Parsed parse_answer(const std::string& response) {
  std::string lower(response.size(), '\0');
  std::transform(response.begin(), response.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });

  auto last_of = [&](std::initializer_list<const char*> needles) {
    std::ptrdiff_t best = -1;
    for (const char* n : needles) {
      const auto p = lower.rfind(n);
      if (p != std::string::npos) best = std::max<std::ptrdiff_t>(best, p);
    }
    return best;
  };

  const std::ptrdiff_t younger = last_of({"younger"});
  const std::ptrdiff_t older = last_of({"older"});
  const std::ptrdiff_t same = last_of({"same age", "same-age", "contemporary"});
  const std::ptrdiff_t undecided =
      last_of({"cannot be determined", "cannot be decided", "can't be determined",
               "can not be determined", "impossible to determine", "cannot decide"});

  const std::ptrdiff_t best_kw = std::max({younger, older, same});
  if (best_kw < 0) return undecided >= 0 ? Parsed::Undecided : Parsed::Unparseable;
  if (undecided > best_kw) return Parsed::Undecided;
  if (best_kw == younger) return Parsed::Less;
  if (best_kw == older) return Parsed::Greater;
  return Parsed::Equal;
}

// ---------------------------------------------------------------------------
// Transports
// ---------------------------------------------------------------------------

HttpChatTransport::HttpChatTransport(EndpointConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.base_url.empty()) throw ConfigError("endpoint config: base_url is required");
}

std::string HttpChatTransport::complete(const std::string& prompt) {
  httplib::Client client(cfg_.base_url);
  client.set_read_timeout(cfg_.timeout_seconds, 0);
  client.set_connection_timeout(cfg_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!cfg_.api_key_env.empty()) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (!key)
      throw ConfigError("endpoint config: environment variable " + cfg_.api_key_env + " not set");
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  nlohmann::json body = {
      {"model", cfg_.model},
      {"temperature", cfg_.temperature},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})}};
  auto res = client.Post(cfg_.path, headers, body.dump(), "application/json");
  if (!res) throw std::runtime_error("transport: no response from " + cfg_.base_url);
  if (res->status != 200)
    throw std::runtime_error("transport: HTTP " + std::to_string(res->status) + ": " + res->body);
  const auto parsed = nlohmann::json::parse(res->body);
  return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

BaselineReport run_baseline(const std::vector<PromptJob>& jobs, ChatTransport& transport,
                            const RunOptions& opts, const std::filesystem::path& transcript_path) {
  std::ofstream transcript(transcript_path, std::ios::trunc);
  if (!transcript) throw DataError("cannot open transcript: " + transcript_path.string());
  std::mutex mu;

  BaselineReport report;
  report.n_jobs = static_cast<int>(jobs.size());
  report.results.resize(jobs.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const PromptJob& job = jobs[i];
      JobResult r;
      r.job_id = job.id;
      r.gold = job.query.label;

      std::string response;
      bool got = false;
      for (int attempt = 0; attempt <= opts.max_retries && !got; ++attempt) {
        try {
          response = transport.complete(job.prompt);
          got = true;
        } catch (const std::exception& e) {
          if (attempt == opts.max_retries) {
            response = std::string("<transport failure: ") + e.what() + ">";
          } else {
            std::this_thread::sleep_for(std::chrono::duration<double>(
                opts.retry_backoff_seconds * (attempt + 1)));
          }
        }
      }
      r.failed = !got;
      r.parsed = got ? parse_answer(response) : Parsed::Unparseable;
      const Parsed want = job.query.label == Label::Less      ? Parsed::Less
                          : job.query.label == Label::Greater ? Parsed::Greater
                                                              : Parsed::Equal;
      r.correct = got && r.parsed == want;

      nlohmann::json line = {{"job_id", job.id},
                             {"prompt", job.prompt},
                             {"raw_response", response},
                             {"parsed", static_cast<int>(r.parsed)},
                             {"gold", label_name(r.gold)},
                             {"verdict", r.correct ? "correct" : "wrong"}};
      {
        std::lock_guard<std::mutex> lock(mu);
        transcript << line.dump() << '\n';
        report.results[i] = r;
      }
    }
  };

  const int n_threads = std::max(1, opts.concurrency);
  std::vector<std::thread> threads;
  for (int t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  for (const JobResult& r : report.results) {
    report.n_correct += r.correct;
    report.n_undecided += r.parsed == Parsed::Undecided;
    report.n_unparseable += r.parsed == Parsed::Unparseable && !r.failed;
    report.n_failed += r.failed;
  }
  report.accuracy =
      report.n_jobs ? static_cast<double>(report.n_correct) / report.n_jobs : 0.0;
  return report;
}

}  // namespace grokkit::llm
