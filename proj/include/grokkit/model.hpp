#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "grokkit/common.hpp"

namespace grokkit::model {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ModelConfig {
  int n_layers = 8;
  int hidden_dim = 768;
  int n_heads = 12;
  int max_seq_len = 16;
  int vocab_size = 0;
  // Parameter tying: share_map[l] names the layer whose parameters layer l
  // uses. Empty means every layer owns its parameters. share_map[l] <= l and
  // share_map[share_map[l]] == share_map[l].
  std::vector<int> share_map;

  int head_dim() const { return hidden_dim / n_heads; }
  int storage_layer(int l) const { return share_map.empty() ? l : share_map[l]; }
  bool is_storage(int l) const { return storage_layer(l) == l; }
  void validate() const;

  /// The tying used by the shared-parameter variant: the first half of the
  /// stack shares one parameter set, the second half another.
  static std::vector<int> half_sharing(int n_layers);

  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class S>
struct BlockParams {
  Vec<S> ln1_g, ln1_b;
  Mat<S> w_qkv;  // [D, 3D]
  Vec<S> b_qkv;
  Mat<S> w_attn_out;  // [D, D]
  Vec<S> b_attn_out;
  Vec<S> ln2_g, ln2_b;
  Mat<S> w_mlp_in;  // [D, 4D]
  Vec<S> b_mlp_in;
  Mat<S> w_mlp_out;  // [4D, D]
  Vec<S> b_mlp_out;
};

/// Reference to one parameter tensor (or its gradient / moment buffer).
template <class S>
struct NamedTensor {
  std::string name;
  Mat<S>* mat = nullptr;  // matrices and row vectors both live in Mat storage
  Vec<S>* vec = nullptr;
  bool decay = false;  // participates in decoupled weight decay

  S* data() const { return mat ? mat->data() : vec->data(); }
  Eigen::Index size() const { return mat ? mat->size() : vec->size(); }
};

template <class S>
struct Weights {
  ModelConfig cfg;
  Mat<S> tok_emb;  // [V, D]; also the (tied) output head
  Mat<S> pos_emb;  // [max_seq_len, D]
  Vec<S> lnf_g, lnf_b;
  std::vector<std::shared_ptr<BlockParams<S>>> blocks;  // aliased under share_map

  /// Unique parameter tensors in the frozen canonical order used by the
  /// optimizer and the checkpoint format. Aliased layers appear once.
  std::vector<NamedTensor<S>> named_tensors();
  std::int64_t parameter_count() const;
};

/// Gradients mirror the weight structure, including aliasing, so shared
/// layers accumulate their contributions into one buffer.
template <class S>
Weights<S> make_zero_like(const Weights<S>& w);

template <class S>
void set_zero(Weights<S>& w);

/// Normal(0, 0.02) weights with residual output projections scaled by
/// 1/sqrt(2 n_layers), zero biases, unit normalization gains.
template <class S>
Weights<S> init_model(const ModelConfig& cfg, Seed seed);

/// Converts weights between scalar types (float training checkpoints feed
/// double-precision gradient checks).
template <class T, class F>
Weights<T> cast_weights(const Weights<F>& w);

/// One batch of same-length sequences with shared scored positions.
struct TokenBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<std::int32_t> tokens;         // [batch * seq_len]
  std::vector<int> target_positions;        // ascending, same for every example
  std::vector<std::int32_t> target_tokens;  // [batch * target_positions.size()]

  std::int32_t token_at(int b, int t) const { return tokens[std::size_t(b) * seq_len + t]; }
};

/// Residual-stream states: resid[i] holds S[i, *] as rows (example-major),
/// i = 0 is the embedding+position sum, i = L the final block output.
template <class S>
struct ActivationCache {
  int batch = 0, seq_len = 0;
  std::vector<Mat<S>> resid;
  Eigen::Index row(int b, int pos) const { return static_cast<Eigen::Index>(b) * seq_len + pos; }
};

/// Replaces the residual stream entering block `layer + 1` at `position`:
/// row b of `replacement` substitutes S[layer, position] for example b.
template <class S>
struct Patch {
  int layer = 0;
  int position = 0;
  Mat<S> replacement;  // [batch, D]
};

template <class S>
struct ForwardOptions {
  bool capture = false;
  const std::vector<Patch<S>>* patches = nullptr;
  int stop_layer = -1;  // >= 0: stop after S[stop_layer] (no logits)
};

template <class S>
struct ForwardResult {
  // Row b * P + i holds the logits for example b at target_positions[i].
  Mat<S> logits;
  ActivationCache<S> cache;  // filled when capture or stop_layer >= 0
};

template <class S>
ForwardResult<S> forward(const Weights<S>& w, const TokenBatch& batch,
                         const ForwardOptions<S>& opts = {});

/// Mean cross-entropy over all scored positions plus exact analytic gradients
/// accumulated into `grads` (zeroed first). Throws NumericError (naming the
/// first offending example) if the loss is not finite.
template <class S>
S loss_and_grads(const Weights<S>& w, const TokenBatch& batch, Weights<S>& grads);

/// logits = unembed(final_norm(state)) for a single hidden-state row of
/// hidden_dim contiguous values.
template <class S>
Vec<S> lens_logits(const Weights<S>& w, const S* state);

extern template struct Weights<float>;
extern template struct Weights<double>;

}  // namespace grokkit::model
