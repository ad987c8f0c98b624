#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "grokkit/checkpoint.hpp"
#include "grokkit/vocab.hpp"

namespace grokkit::train {

using vocab::AnyFact;

/// Optional early-exit conditions, all of which must hold at an evaluation
/// point for the run to stop before total_steps.
struct StopRule {
  double id_acc = -1.0;        // acc_test_id >= id_acc
  double ood_acc = -1.0;       // acc_test_ood >= ood_acc
  double sat_multiple = -1.0;  // step >= sat_multiple * saturation step
  bool enabled() const { return id_acc >= 0 || ood_acc >= 0 || sat_multiple >= 0; }
};

struct RunConfig {
  model::ModelConfig model;  // vocab_size is filled in from the vocab
  optim::AdamConfig opt;
  std::int64_t total_steps = 20000;
  std::int64_t eval_every = 500;
  std::int64_t ckpt_every = 5000;  // must be a multiple of eval_every
  std::size_t eval_sample = 3000;
  Seed init_seed = 0;
  Seed train_seed = 0;  // epoch shuffling and evaluation sampling
  StopRule stop;

  void validate() const;
};

struct EvalRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double loss = 0;  // mean training loss over the evaluation interval
  double acc_train_atomic = 0;
  double acc_train_inferred = 0;
  double acc_test_id = 0;
  double acc_test_ood = 0;
  double acc_atomic_ood = 0;
};

struct RunMetrics {
  std::vector<EvalRecord> records;
};

/// First evaluation step with both training accuracies at or above 0.99.
std::optional<std::int64_t> detect_saturation(const RunMetrics& m);

/// First evaluation step with acc_test_id (or acc_test_ood) >= threshold.
std::optional<std::int64_t> first_step_at_id(const RunMetrics& m, double threshold);
std::optional<std::int64_t> first_step_at_ood(const RunMetrics& m, double threshold);

RunMetrics load_metrics_csv(const std::filesystem::path& path);

/// Evaluation splits in the fixed metrics-column order. `train_all` is the
/// training multiset the optimizer iterates over.
struct TaskView {
  std::vector<AnyFact> train_all;
  std::vector<AnyFact> train_atomic;
  std::vector<AnyFact> train_inferred;
  std::vector<AnyFact> test_id;
  std::vector<AnyFact> test_ood;
  std::vector<AnyFact> atomic_ood;  // trained atomics for the base tasks,
                                    // withheld value queries for the complex task
  static TaskView of(const datagen::Dataset& d);
};

/// Greedy answer accuracy over a uniform sample (the full set when it is
/// smaller than sample_size). Multi-token answers must match on both tokens.
double evaluate(const model::Weights<float>& w, const std::vector<AnyFact>& facts,
                const vocab::Vocab& v, std::size_t sample_size, Seed seed);

struct TrainOutcome {
  RunMetrics metrics;
  std::optional<std::int64_t> saturation_step;
  std::int64_t final_step = 0;
  std::filesystem::path run_dir;
  std::filesystem::path final_checkpoint;
};

/// Runs the full loop: deterministic epoch shuffling, AdamW updates, periodic
/// evaluation appended to run_dir/metrics.csv, checkpoints at the configured
/// cadence plus one at detected saturation and one at the end, and a final
/// report.json. `resume_from` continues a checkpointed run and reproduces the
/// uninterrupted trajectory exactly.
TrainOutcome run_training(const datagen::Dataset& dataset, const vocab::Vocab& v, const RunConfig& cfg,
                   const std::filesystem::path& run_dir,
                   const std::optional<std::filesystem::path>& resume_from = std::nullopt,
                   std::ostream* log = nullptr);

}  // namespace grokkit::train
