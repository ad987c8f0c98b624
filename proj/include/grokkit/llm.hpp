#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "grokkit/datagen.hpp"

namespace grokkit::llm {

using datagen::AttrFact;
using datagen::CompFact;
using datagen::ComplexDataset;

/// Deterministic entity -> human-readable-name assignment, drawn without
/// replacement from the bundled first/last name lists. numeric_ids switches
/// to plain unique identifiers instead.
struct NameMap {
  std::vector<std::string> names;
  const std::string& of(EntityId e) const;
};

NameMap make_name_map(std::uint32_t n_entities, Seed seed, bool numeric_ids = false);

std::string render_fact(const AttrFact& f, const NameMap& names);
std::string render_fact(const CompFact& f, const NameMap& names);

enum class PromptStyle { Direct, CoT };
enum class ContextMode { FullContext, Retrieval };

struct PromptJob {
  int id = 0;
  AttributeId attribute = 0;
  CompFact query;
  PromptStyle style = PromptStyle::Direct;
  ContextMode mode = ContextMode::FullContext;
  Seed permutation_seed = 0;
  std::string prompt;
  std::string name1, name2;
};

/// All facts within two comparison hops of the query entities: comparisons
/// touching either entity, then every comparison and atomic fact touching an
/// entity reached by that first step.
struct TwoHopFacts {
  std::vector<AttrFact> atomics;
  std::vector<CompFact> comparisons;
};
TwoHopFacts retrieve_two_hop(const ComplexDataset& d, AttributeId attribute, EntityId e1,
                             EntityId e2);

/// Builds one job per test query of the dataset. Context lines are rendered
/// facts of the query's attribute (full or two-hop retrieved), permuted by a
/// per-job seed derived from `seed`.
std::vector<PromptJob> build_jobs(const ComplexDataset& d, const NameMap& names, PromptStyle style,
                                  ContextMode mode, Seed seed);

/// Builds the prompt text for a query over pre-rendered, pre-permuted fact
/// lines. Exposed so harness tests can synthesize jobs directly.
std::string render_prompt(const std::string& name1, const std::string& name2,
                          const std::vector<std::string>& fact_lines, PromptStyle style);

enum class Parsed { Less, Equal, Greater, Undecided, Unparseable };

/// Documented extraction rule: the last occurrence of an answer keyword
/// ("younger", "older", "same age") wins; an undecidability phrase after the
/// last keyword (or with no keyword at all) parses as Undecided.
Parsed parse_answer(const std::string& response);

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  /// Returns the assistant text; throws std::runtime_error on failure.
  virtual std::string complete(const std::string& prompt) = 0;
};

/// OpenAI-style chat-completions endpoint.
struct EndpointConfig {
  std::string base_url;          // e.g. http://localhost:8000
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env;       // environment variable holding the token
  double temperature = 0.0;
  int timeout_seconds = 120;
};

class HttpChatTransport : public ChatTransport {
 public:
  explicit HttpChatTransport(EndpointConfig cfg);
  std::string complete(const std::string& prompt) override;

 private:
  EndpointConfig cfg_;
};

class MockTransport : public ChatTransport {
 public:
  explicit MockTransport(std::function<std::string(const std::string&)> fn) : fn_(std::move(fn)) {}
  std::string complete(const std::string& prompt) override { return fn_(prompt); }

 private:
  std::function<std::string(const std::string&)> fn_;
};

struct RunOptions {
  int max_retries = 2;
  int concurrency = 1;
  double retry_backoff_seconds = 1.0;
};

struct JobResult {
  int job_id = 0;
  Parsed parsed = Parsed::Unparseable;
  Label gold = Label::Equal;
  bool correct = false;
  bool failed = false;  // transport failure after retries
};

struct BaselineReport {
  int n_jobs = 0;
  int n_correct = 0;
  int n_undecided = 0;
  int n_unparseable = 0;
  int n_failed = 0;
  double accuracy = 0.0;
  std::vector<JobResult> results;
};

/// One request per job with bounded retries; raw responses are persisted
/// verbatim to a line-delimited transcript. Unparseable and undecided
/// responses score wrong; transport failures are tallied and the run
/// continues.
BaselineReport run_baseline(const std::vector<PromptJob>& jobs, ChatTransport& transport,
                            const RunOptions& opts, const std::filesystem::path& transcript_path);

}  // namespace grokkit::llm
