#pragma once

#include <filesystem>

#include "grokkit/model.hpp"
#include "grokkit/optim.hpp"

namespace grokkit::checkpoint {

struct Checkpoint {
  model::Weights<float> weights;
  optim::AdamState<float> adam;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::int64_t batch_index = 0;  // next batch within the epoch
};

/// Binary format: magic, schema version, the model config as a text record,
/// the optimizer-step counters, then length-prefixed named tensors of
/// little-endian float32 in the canonical order (weights, then first and
/// second moments). Round-trips bit-exactly.
void save(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

/// Weights only (analysis tools).
model::Weights<float> load_weights(const std::filesystem::path& path);

}  // namespace grokkit::checkpoint
