#include "grokkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "grokkit/rng.hpp"

namespace grokkit::train {

using model::TokenBatch;
using model::Weights;
using vocab::TokenSequence;
using vocab::Vocab;

void RunConfig::validate() const {
  if (total_steps < 1) throw ConfigError("run config: total_steps must be positive");
  if (eval_every < 1) throw ConfigError("run config: eval_every must be positive");
  if (ckpt_every % eval_every != 0)
    throw ConfigError("run config: ckpt_every must be a multiple of eval_every "
                      "(resume happens at evaluation boundaries)");
}

std::optional<std::int64_t> detect_saturation(const RunMetrics& m) {
  for (const EvalRecord& r : m.records)
    if (r.acc_train_atomic >= 0.99 && r.acc_train_inferred >= 0.99) return r.step;
  return std::nullopt;
}

std::optional<std::int64_t> first_step_at_id(const RunMetrics& m, double threshold) {
  for (const EvalRecord& r : m.records)
    if (r.acc_test_id >= threshold) return r.step;
  return std::nullopt;
}

std::optional<std::int64_t> first_step_at_ood(const RunMetrics& m, double threshold) {
  for (const EvalRecord& r : m.records)
    if (r.acc_test_ood >= threshold) return r.step;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Metrics CSV (frozen column order)
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCsvHeader =
    "step,epoch,loss,acc_train_atomic,acc_train_inferred,acc_test_id,acc_test_ood,acc_atomic_ood";

std::string csv_row(const EvalRecord& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.step << ',' << r.epoch << ',' << r.loss << ',' << r.acc_train_atomic << ','
     << r.acc_train_inferred << ',' << r.acc_test_id << ',' << r.acc_test_ood << ','
     << r.acc_atomic_ood;
  return os.str();
}
}  // namespace

RunMetrics load_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open metrics: " + path.string());
  RunMetrics m;
  std::string line;
  if (!std::getline(is, line)) return m;
  if (line != kCsvHeader) throw DataError(path.string() + ": unexpected metrics header");
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    EvalRecord r;
    char comma;
    std::istringstream ls(line);
    if (!(ls >> r.step >> comma >> r.epoch >> comma >> r.loss >> comma >> r.acc_train_atomic >>
          comma >> r.acc_train_inferred >> comma >> r.acc_test_id >> comma >> r.acc_test_ood >>
          comma >> r.acc_atomic_ood))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed metrics row");
    m.records.push_back(r);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Task views
// ---------------------------------------------------------------------------

TaskView TaskView::of(const datagen::Dataset& d) {
  TaskView t;
  auto add = [](std::vector<AnyFact>& dst, const auto& src) {
    dst.insert(dst.end(), src.begin(), src.end());
  };
  if (const auto* c = std::get_if<datagen::CompositionDataset>(&d)) {
    add(t.train_atomic, c->atomic_id);
    add(t.train_atomic, c->atomic_ood);
    add(t.train_inferred, c->train_inferred_id);
    add(t.test_id, c->test_inferred_id);
    add(t.test_ood, c->test_inferred_ood);
    add(t.atomic_ood, c->atomic_ood);
  } else if (const auto* c = std::get_if<datagen::ComparisonDataset>(&d)) {
    add(t.train_atomic, c->atomic_id);
    add(t.train_atomic, c->atomic_ood);
    add(t.train_inferred, c->train_inferred_id);
    add(t.test_id, c->test_inferred_id);
    add(t.test_ood, c->test_inferred_ood);
    add(t.atomic_ood, c->atomic_ood);
  } else if (const auto* c = std::get_if<datagen::ComplexDataset>(&d)) {
    add(t.train_atomic, c->atomic_id);
    add(t.train_inferred, c->train_comp_id_id);
    add(t.train_inferred, c->train_comp_id_ood);
    add(t.test_id, c->test_comp_id);
    add(t.test_ood, c->test_queries);
    add(t.atomic_ood, c->eval_atomic_ood);
  }
  add(t.train_all, t.train_atomic);
  add(t.train_all, t.train_inferred);
  return t;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

/// Greedy argmax with ties broken by the lowest token id.
int argmax_row(const float* row, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

struct EncodedSet {
  std::vector<TokenSequence> seqs;
};

EncodedSet encode_all(const std::vector<AnyFact>& facts, const Vocab& v) {
  EncodedSet s;
  s.seqs.reserve(facts.size());
  for (const AnyFact& f : facts) s.seqs.push_back(vocab::encode_fact(f, v));
  return s;
}

/// Fraction of sequences whose greedy answer tokens all match (two-step
/// decode for two-token answers).
double greedy_accuracy(const Weights<float>& w, const std::vector<const TokenSequence*>& seqs,
                       int eval_batch = 1024) {
  if (seqs.empty()) throw DataError("evaluate: empty fact set");
  // Bucket by input length (uniform within a dataset's fact kind).
  std::map<int, std::vector<const TokenSequence*>> buckets;
  for (const TokenSequence* s : seqs) buckets[static_cast<int>(s->tokens.size())].push_back(s);

  std::size_t correct = 0;
  for (auto& [len, group] : buckets) {
    const int n_targets = static_cast<int>(group[0]->targets.size());
    const int input_len = len - (n_targets == 2 ? 1 : 0);  // strip the teacher-forced token
    for (std::size_t start = 0; start < group.size(); start += eval_batch) {
      const int B = static_cast<int>(std::min<std::size_t>(eval_batch, group.size() - start));
      TokenBatch batch;
      batch.batch = B;
      batch.seq_len = input_len;
      batch.tokens.resize(static_cast<std::size_t>(B) * input_len);
      for (int b = 0; b < B; ++b)
        for (int t = 0; t < input_len; ++t)
          batch.tokens[std::size_t(b) * input_len + t] = group[start + b]->tokens[t];
      batch.target_positions = {input_len - 1};
      auto res = model::forward(w, batch);
      if (n_targets == 1) {
        for (int b = 0; b < B; ++b) {
          const int pred = argmax_row(res.logits.row(b).data(), w.cfg.vocab_size);
          correct += pred == group[start + b]->targets[0].second;
        }
      } else {
        // Two-step greedy decode: append the predicted first answer token.
        TokenBatch second;
        second.batch = B;
        second.seq_len = input_len + 1;
        second.tokens.resize(static_cast<std::size_t>(B) * (input_len + 1));
        std::vector<int> first_pred(B);
        for (int b = 0; b < B; ++b) {
          first_pred[b] = argmax_row(res.logits.row(b).data(), w.cfg.vocab_size);
          for (int t = 0; t < input_len; ++t)
            second.tokens[std::size_t(b) * (input_len + 1) + t] =
                batch.tokens[std::size_t(b) * input_len + t];
          second.tokens[std::size_t(b) * (input_len + 1) + input_len] = first_pred[b];
        }
        second.target_positions = {input_len};
        auto res2 = model::forward(w, second);
        for (int b = 0; b < B; ++b) {
          const int p2 = argmax_row(res2.logits.row(b).data(), w.cfg.vocab_size);
          correct += first_pred[b] == group[start + b]->targets[0].second &&
                     p2 == group[start + b]->targets[1].second;
        }
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(seqs.size());
}

std::vector<const TokenSequence*> sample_seqs(const EncodedSet& set, std::size_t sample_size,
                                              Seed seed) {
  std::vector<const TokenSequence*> out;
  if (set.seqs.size() <= sample_size) {
    for (const auto& s : set.seqs) out.push_back(&s);
    return out;
  }
  Rng rng(seed);
  for (auto i : rng.sample_without_replacement(set.seqs.size(), sample_size))
    out.push_back(&set.seqs[i]);
  return out;
}

}  // namespace

double evaluate(const Weights<float>& w, const std::vector<AnyFact>& facts, const Vocab& v,
                std::size_t sample_size, Seed seed) {
  if (facts.empty()) throw DataError("evaluate: empty fact set");
  EncodedSet enc = encode_all(facts, v);
  return greedy_accuracy(w, sample_seqs(enc, sample_size, seed));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainOutcome run_training(const datagen::Dataset& dataset, const Vocab& v, const RunConfig& cfg_in,
                   const std::filesystem::path& run_dir,
                   const std::optional<std::filesystem::path>& resume_from, std::ostream* log) {
  RunConfig cfg = cfg_in;
  cfg.model.vocab_size = static_cast<int>(v.size());
  cfg.model.validate();
  cfg.validate();
  std::filesystem::create_directories(run_dir);

  const TaskView view = TaskView::of(dataset);
  if (view.train_all.empty()) throw DataError("train: empty training set");

  // Encode the training set once; epochs gather from these.
  std::vector<TokenSequence> train_enc;
  train_enc.reserve(view.train_all.size());
  std::vector<std::uint16_t> lengths;
  lengths.reserve(view.train_all.size());
  for (const AnyFact& f : view.train_all) {
    train_enc.push_back(vocab::encode_fact(f, v));
    lengths.push_back(static_cast<std::uint16_t>(train_enc.back().tokens.size()));
  }
  EncodedSet ev_train_atomic = encode_all(view.train_atomic, v);
  EncodedSet ev_train_inferred = encode_all(view.train_inferred, v);
  EncodedSet ev_test_id = encode_all(view.test_id, v);
  EncodedSet ev_test_ood = encode_all(view.test_ood, v);
  EncodedSet ev_atomic_ood = encode_all(view.atomic_ood, v);

  // Model + optimizer state (fresh or resumed).
  Weights<float> weights;
  optim::AdamState<float> adam;
  std::int64_t step = 0, epoch = 0, batch_index = 0;
  RunMetrics metrics;
  const auto metrics_path = run_dir / "metrics.csv";
  if (resume_from) {
    checkpoint::Checkpoint c = checkpoint::load(*resume_from);
    if (!(c.weights.cfg == cfg.model))
      throw ConfigError("resume: checkpoint model config does not match the run config");
    weights = std::move(c.weights);
    adam = std::move(c.adam);
    step = c.step;
    epoch = c.epoch;
    batch_index = c.batch_index;
    if (std::filesystem::exists(metrics_path)) {
      RunMetrics all = load_metrics_csv(metrics_path);
      for (const auto& r : all.records)
        if (r.step <= step) metrics.records.push_back(r);
    }
    std::ofstream os(metrics_path, std::ios::trunc);
    os << kCsvHeader << '\n';
    for (const auto& r : metrics.records) os << csv_row(r) << '\n';
  } else {
    weights = model::init_model<float>(cfg.model, cfg.init_seed);
    adam = optim::AdamState<float>::zero_like(weights);
    std::ofstream os(metrics_path, std::ios::trunc);
    os << kCsvHeader << '\n';
  }

  Weights<float> grads = model::make_zero_like(weights);
  auto epoch_batches = optim::make_batches(lengths, cfg.opt.batch_size,
                                           Rng::mix(cfg.train_seed, static_cast<Seed>(epoch)));

  auto save_ckpt = [&](const std::filesystem::path& p) {
    checkpoint::Checkpoint c;
    c.weights = weights;
    c.adam = adam;
    c.step = step;
    c.epoch = epoch;
    c.batch_index = batch_index;
    checkpoint::save(c, p);
  };
  auto ckpt_name = [&](std::int64_t s) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_step%09lld.bin", static_cast<long long>(s));
    return run_dir / buf;
  };

  std::optional<std::int64_t> saturation = detect_saturation(metrics);
  double loss_accum = 0.0;
  std::int64_t loss_count = 0;
  bool stop_now = false;

  while (step < cfg.total_steps && !stop_now) {
    if (batch_index >= static_cast<std::int64_t>(epoch_batches.size())) {
      ++epoch;
      batch_index = 0;
      epoch_batches = optim::make_batches(lengths, cfg.opt.batch_size,
                                          Rng::mix(cfg.train_seed, static_cast<Seed>(epoch)));
    }
    const auto& idxs = epoch_batches[batch_index];
    TokenBatch batch;
    batch.batch = static_cast<int>(idxs.size());
    batch.seq_len = lengths[idxs[0]];
    batch.tokens.reserve(idxs.size() * batch.seq_len);
    batch.target_positions.clear();
    for (auto [pos, tok] : train_enc[idxs[0]].targets) batch.target_positions.push_back(pos);
    for (auto i : idxs) {
      const TokenSequence& s = train_enc[i];
      batch.tokens.insert(batch.tokens.end(), s.tokens.begin(), s.tokens.end());
      for (auto [pos, tok] : s.targets) batch.target_tokens.push_back(tok);
    }

    const float loss = model::loss_and_grads(weights, batch, grads);
    optim::adamw_step(adam, weights, grads, cfg.opt);
    ++step;
    ++batch_index;
    loss_accum += loss;
    ++loss_count;

    const bool at_eval = step % cfg.eval_every == 0 || step == cfg.total_steps;
    if (!at_eval) continue;

    EvalRecord r;
    r.step = step;
    r.epoch = epoch;
    r.loss = loss_accum / static_cast<double>(loss_count);
    loss_accum = 0.0;
    loss_count = 0;
    const Seed es = Rng::mix(cfg.train_seed, static_cast<Seed>(step));
    r.acc_train_atomic =
        greedy_accuracy(weights, sample_seqs(ev_train_atomic, cfg.eval_sample, Rng::mix(es, 1)));
    r.acc_train_inferred =
        greedy_accuracy(weights, sample_seqs(ev_train_inferred, cfg.eval_sample, Rng::mix(es, 2)));
    r.acc_test_id = ev_test_id.seqs.empty()
                        ? 0.0
                        : greedy_accuracy(weights, sample_seqs(ev_test_id, cfg.eval_sample,
                                                               Rng::mix(es, 3)));
    r.acc_test_ood = ev_test_ood.seqs.empty()
                         ? 0.0
                         : greedy_accuracy(weights, sample_seqs(ev_test_ood, cfg.eval_sample,
                                                                Rng::mix(es, 4)));
    r.acc_atomic_ood = ev_atomic_ood.seqs.empty()
                           ? 0.0
                           : greedy_accuracy(weights, sample_seqs(ev_atomic_ood, cfg.eval_sample,
                                                                  Rng::mix(es, 5)));
    metrics.records.push_back(r);
    {
      std::ofstream os(metrics_path, std::ios::app);
      os << csv_row(r) << '\n';
    }
    if (log)
      (*log) << "step " << r.step << " epoch " << r.epoch << " loss " << r.loss << " train_a "
             << r.acc_train_atomic << " train_i " << r.acc_train_inferred << " id "
             << r.acc_test_id << " ood " << r.acc_test_ood << " atomic_ood " << r.acc_atomic_ood
             << std::endl;

    if (!saturation && r.acc_train_atomic >= 0.99 && r.acc_train_inferred >= 0.99) {
      saturation = step;
      save_ckpt(run_dir / "ckpt_saturation.bin");
    }
    if (step % cfg.ckpt_every == 0) save_ckpt(ckpt_name(step));

    if (cfg.stop.enabled()) {
      bool ok = true;
      if (cfg.stop.id_acc >= 0 && r.acc_test_id < cfg.stop.id_acc) ok = false;
      if (cfg.stop.ood_acc >= 0 && r.acc_test_ood < cfg.stop.ood_acc) ok = false;
      if (cfg.stop.sat_multiple >= 0 &&
          !(saturation && step >= static_cast<std::int64_t>(cfg.stop.sat_multiple *
                                                            static_cast<double>(*saturation))))
        ok = false;
      if (ok) stop_now = true;
    }
  }

  TrainOutcome out;
  out.metrics = metrics;
  out.saturation_step = saturation;
  out.final_step = step;
  out.run_dir = run_dir;
  out.final_checkpoint = run_dir / "ckpt_final.bin";
  save_ckpt(out.final_checkpoint);

  // Final report.
  nlohmann::json rep;
  rep["model_config"] = cfg.model.to_text();
  rep["optimizer"] = {{"lr", cfg.opt.lr},          {"beta1", cfg.opt.beta1},
                      {"beta2", cfg.opt.beta2},    {"eps", cfg.opt.eps},
                      {"weight_decay", cfg.opt.weight_decay},
                      {"warmup_steps", cfg.opt.warmup_steps},
                      {"batch_size", cfg.opt.batch_size},
                      {"grad_clip", cfg.opt.grad_clip}};
  rep["seeds"] = {{"init", cfg.init_seed}, {"train", cfg.train_seed}};
  rep["final_step"] = out.final_step;
  rep["saturation_step"] = saturation ? nlohmann::json(*saturation) : nlohmann::json();
  const auto id09 = first_step_at_id(metrics, 0.9);
  rep["step_id_acc_0.9"] = id09 ? nlohmann::json(*id09) : nlohmann::json();
  if (saturation && id09 && *saturation > 0)
    rep["grokking_speed_ratio"] =
        static_cast<double>(*id09) / static_cast<double>(*saturation);
  else
    rep["grokking_speed_ratio"] = nullptr;
  if (!metrics.records.empty()) {
    const EvalRecord& r = metrics.records.back();
    rep["final"] = {{"loss", r.loss},
                    {"acc_train_atomic", r.acc_train_atomic},
                    {"acc_train_inferred", r.acc_train_inferred},
                    {"acc_test_id", r.acc_test_id},
                    {"acc_test_ood", r.acc_test_ood},
                    {"acc_atomic_ood", r.acc_atomic_ood}};
  }
  std::ofstream(run_dir / "report.json") << rep.dump(2) << '\n';
  return out;
}

}  // namespace grokkit::train
