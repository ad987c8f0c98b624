#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "grokkit/optim.hpp"

using namespace grokkit;
using namespace grokkit::optim;
using grokkit::model::ModelConfig;
using grokkit::model::Weights;

namespace {

/// One-parameter model stand-in: a 1x1 decayed weight tensor.
struct Scalar {
  Weights<double> w;
  Weights<double> g;
  AdamState<double> st;

  explicit Scalar(double w0) {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.hidden_dim = 1;
    cfg.n_heads = 1;
    cfg.max_seq_len = 1;
    cfg.vocab_size = 1;
    w = model::init_model<double>(cfg, 0);
    model::set_zero(w);
    g = model::make_zero_like(w);
    st = AdamState<double>::zero_like(w);
    w.blocks[0]->w_qkv(0, 0) = w0;  // a decayed tensor (weight matrix)
  }
  double value() const { return w.blocks[0]->w_qkv(0, 0); }
  void step(double grad, const AdamConfig& cfg) {
    model::set_zero(g);
    g.blocks[0]->w_qkv(0, 0) = grad;
    adamw_step(st, w, g, cfg);
  }
};

}  // namespace

TEST_CASE("lr_at: linear warmup then constant") {
  AdamConfig cfg;  // lr 1e-4, warmup 2000
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(1000, cfg) == doctest::Approx(5e-5).epsilon(1e-15));
  CHECK(lr_at(2000, cfg) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(lr_at(1000000, cfg) == doctest::Approx(1e-4).epsilon(1e-15));
}

TEST_CASE("adamw_step: zero gradient and zero decay is a no-op") {
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.warmup_steps = 0;
  Scalar s(1.5);
  s.step(0.0, cfg);
  CHECK(s.value() == 1.5);
}

TEST_CASE("adamw_step: first-step hand evaluation") {
  AdamConfig cfg;
  cfg.warmup_steps = 0;  // use the full 1e-4 rate immediately
  Scalar s(1.0);
  s.step(1.0, cfg);
  // m_hat = 1, v_hat = 1: w = (1 - lr*wd) * 1 - lr * 1/(1 + eps)
  const double expect = (1.0 - 1e-4 * 0.1) - 1e-4 / (1.0 + 1e-8);
  CHECK(s.value() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(s.value() == doctest::Approx(0.99989).epsilon(1e-7));
}

TEST_CASE("adamw_step: matches a long-double reference trace") {
  AdamConfig cfg;
  cfg.warmup_steps = 0;
  Scalar s(0.8);

  // Independent high-precision reference of the same update rule.
  long double w = 0.8L, m = 0.0L, v = 0.0L;
  const long double lr = 1e-4L, b1 = 0.9L, b2 = 0.999L, eps = 1e-8L, wd = 0.1L;
  const double grads[2] = {0.7, -0.3};
  for (int t = 1; t <= 2; ++t) {
    const long double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const long double mh = m / (1 - std::pow(b1, (long double)t));
    const long double vh = v / (1 - std::pow(b2, (long double)t));
    w = w * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + eps);
    s.step(grads[t - 1], cfg);
    CHECK(s.value() == doctest::Approx((double)w).epsilon(1e-12));
  }
}

TEST_CASE("adamw_step: wd = 0 equals plain Adam exactly") {
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.warmup_steps = 0;
  Scalar s(0.5);
  double w = 0.5, m = 0.0, v = 0.0;
  const double grads[3] = {0.2, -0.1, 0.05};
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    w -= 1e-4 * mh / (std::sqrt(vh) + 1e-8);
    s.step(g, cfg);
    CHECK(s.value() == w);  // bit-exact: same operations
  }
}

TEST_CASE("adamw_step: gradient scale leaves the direction nearly invariant") {
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.warmup_steps = 0;
  cfg.eps = 1e-12;
  Scalar a(1.0), b(1.0);
  a.step(0.3, cfg);
  b.step(0.3 * 7.0, cfg);
  const double da = 1.0 - a.value(), db = 1.0 - b.value();
  CHECK(da == doctest::Approx(db).epsilon(1e-6));
}

TEST_CASE("adamw_step: decay skips biases, normalization and embeddings") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.hidden_dim = 4;
  cfg.n_heads = 1;
  cfg.max_seq_len = 2;
  cfg.vocab_size = 3;
  Weights<double> w = model::init_model<double>(cfg, 1);
  for (auto& t : w.named_tensors()) {
    const bool is_weight_matrix = t.name.find("w_") != std::string::npos;
    CHECK(t.decay == is_weight_matrix);
  }
}

TEST_CASE("make_batches: counts, shuffling and bucketing") {
  std::vector<std::uint16_t> lens(40000, 3);
  auto batches = make_batches(lens, 512, 1);
  CHECK(batches.size() == 79);  // ceil(40000 / 512)
  std::size_t total = 0;
  for (auto& b : batches) total += b.size();
  CHECK(total == 40000);

  // Two epochs: different order, identical multiset.
  auto b1 = make_batches(lens, 512, 1);
  auto b2 = make_batches(lens, 512, 2);
  CHECK(b1 != b2);
  std::multiset<std::uint32_t> s1, s2;
  for (auto& b : b1) s1.insert(b.begin(), b.end());
  for (auto& b : b2) s2.insert(b.begin(), b.end());
  CHECK(s1 == s2);

  // Mixed lengths: every batch is single-length, partial batches kept.
  std::vector<std::uint16_t> mixed;
  for (int i = 0; i < 700; ++i) mixed.push_back(2);
  for (int i = 0; i < 900; ++i) mixed.push_back(3);
  auto mb = make_batches(mixed, 256, 3);
  std::size_t seen = 0;
  for (auto& b : mb) {
    std::set<std::uint16_t> ls;
    for (auto i : b) ls.insert(mixed[i]);
    CHECK(ls.size() == 1);
    seen += b.size();
  }
  CHECK(seen == mixed.size());
  CHECK(mb.size() == std::size_t(3 + 4));  // ceil(700/256) + ceil(900/256)
}
