#include <doctest.h>

#include <cmath>

#include "grokkit/model.hpp"

using namespace grokkit;
using namespace grokkit::model;

namespace {

ModelConfig tiny_config(bool shared = false) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.hidden_dim = 32;
  cfg.n_heads = 4;
  cfg.max_seq_len = 4;
  cfg.vocab_size = 12;
  if (shared) cfg.share_map = {0, 0};  // both layers alias one parameter set
  return cfg;
}

TokenBatch tiny_batch() {
  TokenBatch b;
  b.batch = 4;
  b.seq_len = 3;
  b.tokens = {0, 4, 7, 1, 5, 7, 2, 4, 8, 3, 6, 9};
  b.target_positions = {2};
  b.target_tokens = {10, 11, 1, 0};
  return b;
}

/// Central finite differences against the analytic gradients, coordinate by
/// coordinate, in double precision.
void check_gradients(const ModelConfig& cfg, const TokenBatch& batch, Seed seed) {
  Weights<double> w = init_model<double>(cfg, seed);
  Weights<double> grads = make_zero_like(w);
  loss_and_grads(w, batch, grads);

  Weights<double> scratch = make_zero_like(w);
  auto wt = w.named_tensors();
  auto gt = grads.named_tensors();
  for (std::size_t ti = 0; ti < wt.size(); ++ti) {
    INFO("tensor ", wt[ti].name);
    double* data = wt[ti].data();
    const double* g = gt[ti].data();
    for (Eigen::Index i = 0; i < wt[ti].size(); ++i) {
      const double orig = data[i];
      const double h = 1e-5 * std::max(1.0, std::abs(orig));
      data[i] = orig + h;
      const double lp = loss_and_grads(w, batch, scratch);
      data[i] = orig - h;
      const double lm = loss_and_grads(w, batch, scratch);
      data[i] = orig;
      const double fd = (lp - lm) / (2 * h);
      const double denom = std::max({1e-2, std::abs(fd), std::abs(g[i])});
      const double rel = std::abs(fd - g[i]) / denom;
      if (rel >= 1e-4) {
        CAPTURE(wt[ti].name);
        CAPTURE(i);
        CAPTURE(fd);
        CAPTURE(g[i]);
        REQUIRE(rel < 1e-4);
      }
    }
  }
}

}  // namespace

TEST_CASE("init_model: deterministic and bit-identical per seed") {
  const ModelConfig cfg = tiny_config();
  Weights<float> a = init_model<float>(cfg, 42);
  Weights<float> b = init_model<float>(cfg, 42);
  Weights<float> c = init_model<float>(cfg, 43);
  auto ta = a.named_tensors(), tb = b.named_tensors(), tc = c.named_tensors();
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (std::memcmp(ta[i].data(), tb[i].data(), sizeof(float) * ta[i].size()) != 0)
      all_equal = false;
    if (std::memcmp(ta[i].data(), tc[i].data(), sizeof(float) * ta[i].size()) != 0)
      any_diff = true;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("parameter sharing: aliased layers share storage") {
  ModelConfig cfg = tiny_config(true);  // share_map {0, 0}
  Weights<float> w = init_model<float>(cfg, 1);
  REQUIRE(w.blocks[0] == w.blocks[1]);
  const float before = w.blocks[0]->w_qkv(0, 0);
  w.blocks[1]->w_qkv(0, 0) = before + 1.0f;
  CHECK(w.blocks[0]->w_qkv(0, 0) == before + 1.0f);

  // An 8-layer half-shared stack groups {0..3} and {4..7}.
  auto m = ModelConfig::half_sharing(8);
  CHECK(m == std::vector<int>{0, 0, 0, 0, 4, 4, 4, 4});
}

TEST_CASE("parameter count matches the closed form") {
  ModelConfig cfg;
  cfg.n_layers = 8;
  cfg.hidden_dim = 768;
  cfg.n_heads = 12;
  cfg.max_seq_len = 16;
  cfg.vocab_size = 2300;
  Weights<float> w = init_model<float>(cfg, 0);
  const std::int64_t d = 768;
  const std::int64_t per_layer = 2 * d            // ln1
                                 + d * 3 * d + 3 * d    // qkv
                                 + d * d + d            // attn out
                                 + 2 * d                // ln2
                                 + d * 4 * d + 4 * d    // mlp in
                                 + 4 * d * d + d;       // mlp out
  const std::int64_t expect = 2300 * d + 16 * d + 8 * per_layer + 2 * d;
  CHECK(w.parameter_count() == expect);

  // Sharing halves the unique block parameters.
  cfg.share_map = ModelConfig::half_sharing(8);
  Weights<float> ws = init_model<float>(cfg, 0);
  CHECK(ws.parameter_count() == 2300 * d + 16 * d + 2 * per_layer + 2 * d);
}

TEST_CASE("uniform logits give ln(vocab) loss") {
  const ModelConfig cfg = tiny_config();
  Weights<double> w = init_model<double>(cfg, 3);
  set_zero(w);  // zero head => identical logits => uniform distribution
  Weights<double> g = make_zero_like(w);
  const double loss = loss_and_grads(w, tiny_batch(), g);
  CHECK(loss == doctest::Approx(std::log(12.0)).epsilon(1e-12));
}

TEST_CASE("analytic gradients match central finite differences") {
  check_gradients(tiny_config(), tiny_batch(), 7);
}

TEST_CASE("analytic gradients match finite differences under parameter sharing") {
  check_gradients(tiny_config(true), tiny_batch(), 9);
}

TEST_CASE("duplicating a batch leaves loss and gradients unchanged") {
  const ModelConfig cfg = tiny_config();
  Weights<double> w = init_model<double>(cfg, 5);
  const TokenBatch b = tiny_batch();
  TokenBatch doubled = b;
  doubled.batch = 2 * b.batch;
  doubled.tokens.insert(doubled.tokens.end(), b.tokens.begin(), b.tokens.end());
  doubled.target_tokens.insert(doubled.target_tokens.end(), b.target_tokens.begin(),
                               b.target_tokens.end());
  Weights<double> g1 = make_zero_like(w), g2 = make_zero_like(w);
  const double l1 = loss_and_grads(w, b, g1);
  const double l2 = loss_and_grads(w, doubled, g2);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  auto t1 = g1.named_tensors(), t2 = g2.named_tensors();
  for (std::size_t i = 0; i < t1.size(); ++i)
    for (Eigen::Index k = 0; k < t1[i].size(); ++k)
      CHECK(t1[i].data()[k] == doctest::Approx(t2[i].data()[k]).epsilon(1e-10));
}

TEST_CASE("permuting a batch permutes logits and keeps the loss") {
  const ModelConfig cfg = tiny_config();
  Weights<double> w = init_model<double>(cfg, 6);
  const TokenBatch b = tiny_batch();
  TokenBatch perm = b;
  const std::vector<int> order = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i) {
    for (int t = 0; t < b.seq_len; ++t)
      perm.tokens[i * b.seq_len + t] = b.tokens[order[i] * b.seq_len + t];
    perm.target_tokens[i] = b.target_tokens[order[i]];
  }
  Weights<double> g1 = make_zero_like(w), g2 = make_zero_like(w);
  const double l1 = loss_and_grads(w, b, g1);
  const double l2 = loss_and_grads(w, perm, g2);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));

  auto r1 = forward(w, b).logits;
  auto r2 = forward(w, perm).logits;
  for (int i = 0; i < 4; ++i) CHECK((r2.row(i) - r1.row(order[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cached final states reproduce the logits through the lens") {
  const ModelConfig cfg = tiny_config();
  Weights<float> w = init_model<float>(cfg, 8);
  const TokenBatch b = tiny_batch();
  ForwardOptions<float> opts;
  opts.capture = true;
  auto res = forward(w, b, opts);
  REQUIRE(res.cache.resid.size() == std::size_t(cfg.n_layers) + 1);
  for (int ex = 0; ex < b.batch; ++ex) {
    Vec<float> state = res.cache.resid[cfg.n_layers].row(res.cache.row(ex, 2));
    Vec<float> lens = lens_logits(w, state.data());
    CHECK((lens - res.logits.row(ex)).cwiseAbs().maxCoeff() < 1e-5f);
  }
}

TEST_CASE("interventions: identity patch changes nothing") {
  const ModelConfig cfg = tiny_config();
  Weights<float> w = init_model<float>(cfg, 10);
  const TokenBatch b = tiny_batch();
  ForwardOptions<float> opts;
  opts.capture = true;
  auto base = forward(w, b, opts);

  for (int layer = 0; layer <= cfg.n_layers; ++layer)
    for (int pos = 0; pos < b.seq_len; ++pos) {
      Patch<float> p;
      p.layer = layer;
      p.position = pos;
      p.replacement.resize(b.batch, cfg.hidden_dim);
      for (int ex = 0; ex < b.batch; ++ex)
        p.replacement.row(ex) = base.cache.resid[layer].row(base.cache.row(ex, pos));
      std::vector<Patch<float>> patches = {p};
      ForwardOptions<float> po;
      po.patches = &patches;
      auto patched = forward(w, b, po);
      CHECK((patched.logits - base.logits).cwiseAbs().maxCoeff() == 0.0f);
    }
}

TEST_CASE("interventions: replacing the final answer state replaces the logits") {
  const ModelConfig cfg = tiny_config();
  Weights<float> w = init_model<float>(cfg, 11);
  const TokenBatch b = tiny_batch();
  TokenBatch other = b;
  std::rotate(other.tokens.begin(), other.tokens.begin() + b.seq_len, other.tokens.end());

  ForwardOptions<float> cap;
  cap.capture = true;
  auto base = forward(w, b, cap);
  auto alt = forward(w, other, cap);

  Patch<float> p;
  p.layer = cfg.n_layers;
  p.position = 2;
  p.replacement.resize(b.batch, cfg.hidden_dim);
  for (int ex = 0; ex < b.batch; ++ex)
    p.replacement.row(ex) = alt.cache.resid[cfg.n_layers].row(alt.cache.row(ex, 2));
  std::vector<Patch<float>> patches = {p};
  ForwardOptions<float> po;
  po.patches = &patches;
  auto patched = forward(w, b, po);
  CHECK((patched.logits - alt.logits).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("causal mask: early positions ignore later tokens") {
  const ModelConfig cfg = tiny_config();
  Weights<float> w = init_model<float>(cfg, 12);
  TokenBatch b = tiny_batch();
  TokenBatch mutated = b;
  for (int ex = 0; ex < b.batch; ++ex) mutated.tokens[ex * b.seq_len + 2] = 11;

  ForwardOptions<float> cap;
  cap.capture = true;
  auto r1 = forward(w, b, cap);
  auto r2 = forward(w, mutated, cap);
  for (int layer = 0; layer <= cfg.n_layers; ++layer)
    for (int ex = 0; ex < b.batch; ++ex)
      for (int pos = 0; pos < 2; ++pos)
        CHECK((r1.cache.resid[layer].row(r1.cache.row(ex, pos)) -
               r2.cache.resid[layer].row(r2.cache.row(ex, pos)))
                  .cwiseAbs()
                  .maxCoeff() == 0.0f);
}

TEST_CASE("non-finite loss raises a numeric error naming the example") {
  const ModelConfig cfg = tiny_config();
  Weights<double> w = init_model<double>(cfg, 13);
  w.tok_emb(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Weights<double> g = make_zero_like(w);
  CHECK_THROWS_AS(loss_and_grads(w, tiny_batch(), g), NumericError);
}

TEST_CASE("model config text record round-trips") {
  ModelConfig cfg = tiny_config(true);
  const ModelConfig back = ModelConfig::from_text(cfg.to_text());
  CHECK(back == cfg);
}
