#pragma once

#include <cstdint>
#include <vector>

#include "grokkit/model.hpp"

namespace grokkit::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
  std::int64_t warmup_steps = 2000;
  int batch_size = 512;
  double grad_clip = 0.0;  // 0 disables clipping

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Linear ramp 0 -> lr over warmup_steps, constant afterwards.
double lr_at(std::int64_t step, const AdamConfig& cfg);

/// First/second moment buffers in the weights' canonical tensor order.
template <class S>
struct AdamState {
  std::int64_t step = 0;
  std::vector<model::Mat<S>> m, v;

  static AdamState zero_like(model::Weights<S>& w);
};

/// Bias-corrected Adam update plus decoupled decay lr * wd * w, applied only
/// to tensors flagged for decay (weight matrices; never biases, normalization
/// parameters or embeddings). Throws NumericError naming the tensor if an
/// update is not finite. The learning rate comes from lr_at(state.step).
template <class S>
void adamw_step(AdamState<S>& state, model::Weights<S>& weights, model::Weights<S>& grads,
                const AdamConfig& cfg);

/// Deterministic epoch plan: one uniform shuffle of all examples, then
/// batches formed in shuffled order, bucketed so every batch holds sequences
/// of a single length; final partial batches are kept (flushed in ascending
/// length order).
std::vector<std::vector<std::uint32_t>> make_batches(const std::vector<std::uint16_t>& length_of,
                                                     int batch_size, Seed epoch_seed);

extern template struct AdamState<float>;
extern template struct AdamState<double>;

}  // namespace grokkit::optim
