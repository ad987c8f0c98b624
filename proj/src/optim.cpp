#include "grokkit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "grokkit/rng.hpp"

namespace grokkit::optim {

double lr_at(std::int64_t step, const AdamConfig& cfg) {
  if (step < 0) throw ConfigError("lr_at: negative step");
  if (cfg.warmup_steps <= 0 || step >= cfg.warmup_steps) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

template <class S>
AdamState<S> AdamState<S>::zero_like(model::Weights<S>& w) {
  AdamState<S> st;
  for (auto& t : w.named_tensors()) {
    st.m.emplace_back(model::Mat<S>::Zero(1, t.size()));
    st.v.emplace_back(model::Mat<S>::Zero(1, t.size()));
  }
  return st;
}

template <class S>
void adamw_step(AdamState<S>& state, model::Weights<S>& weights, model::Weights<S>& grads,
                const AdamConfig& cfg) {
  auto wt = weights.named_tensors();
  auto gt = grads.named_tensors();
  if (wt.size() != state.m.size() || wt.size() != gt.size())
    throw ConfigError("adamw_step: optimizer state does not match the model");

  const double lr = lr_at(state.step, cfg);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

  // Optional global-norm clipping.
  double scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto& g : gt) {
      Eigen::Map<model::Mat<S>> gm(g.data(), 1, g.size());
      sq += static_cast<double>(gm.squaredNorm());
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
  }

  for (std::size_t i = 0; i < wt.size(); ++i) {
    Eigen::Map<model::Mat<S>> wm(wt[i].data(), 1, wt[i].size());
    Eigen::Map<model::Mat<S>> gm(gt[i].data(), 1, gt[i].size());
    auto& m = state.m[i];
    auto& v = state.v[i];
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    m.array() = b1 * m.array() + (S(1) - b1) * (static_cast<S>(scale) * gm.array());
    v.array() = b2 * v.array() +
                (S(1) - b2) * (static_cast<S>(scale) * gm.array()).square();
    const S inv_bc1 = static_cast<S>(1.0 / bc1);
    const S inv_bc2 = static_cast<S>(1.0 / bc2);
    auto update = (m.array() * inv_bc1) /
                  ((v.array() * inv_bc2).sqrt() + static_cast<S>(cfg.eps));
    // Decoupled decay draws on the pre-update parameter value.
    if (wt[i].decay && cfg.weight_decay != 0.0)
      wm.array() *= static_cast<S>(1.0 - lr * cfg.weight_decay);
    wm.array() -= static_cast<S>(lr) * update;
    if (!wm.allFinite())
      throw NumericError("adamw_step: non-finite update in tensor " + wt[i].name);
  }
}

std::vector<std::vector<std::uint32_t>> make_batches(const std::vector<std::uint16_t>& length_of,
                                                     int batch_size, Seed epoch_seed) {
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be at least 1");
  std::vector<std::uint32_t> order(length_of.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(epoch_seed);
  rng.shuffle(order);

  std::vector<std::vector<std::uint32_t>> batches;
  std::map<std::uint16_t, std::vector<std::uint32_t>> buckets;
  for (std::uint32_t idx : order) {
    auto& b = buckets[length_of[idx]];
    b.push_back(idx);
    if (static_cast<int>(b.size()) == batch_size) {
      batches.push_back(std::move(b));
      b.clear();
    }
  }
  for (auto& [len, b] : buckets)
    if (!b.empty()) batches.push_back(std::move(b));
  return batches;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adamw_step<float>(AdamState<float>&, model::Weights<float>&, model::Weights<float>&,
                                const AdamConfig&);
template void adamw_step<double>(AdamState<double>&, model::Weights<double>&,
                                 model::Weights<double>&, const AdamConfig&);

}  // namespace grokkit::optim
