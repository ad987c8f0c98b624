#pragma once

#include <map>
#include <optional>
#include <string>

#include "grokkit/rng.hpp"
#include "grokkit/trainer.hpp"

namespace grokkit::interp {

using model::Weights;
using vocab::AnyFact;
using vocab::Role;
using vocab::Vocab;

// ---------------------------------------------------------------------------
// Logit lens
// ---------------------------------------------------------------------------

/// 1-based rank of `token` in the lens ordering of `state` (descending logit,
/// ties broken by ascending token id).
int lens_rank(const Weights<float>& w, const float* state, TokenId token);

/// Top-ranked token of `state` under the same ordering.
TokenId lens_top1(const Weights<float>& w, const float* state);

double mrr(const std::vector<int>& ranks);

/// Mean fraction of each instance's rank set found within the top k.
double recall_at_k(const std::vector<std::vector<int>>& rank_sets, int k);

// ---------------------------------------------------------------------------
// Task-aware tracing support
// ---------------------------------------------------------------------------

/// Wraps a dataset with everything tracing needs: the inferred-fact input
/// layout, sampling of tracing examples, valid same-type token replacement,
/// and the designated symbols whose lens ranks the analyses track.
class TracingContext {
 public:
  /// Holds references into `d` and `v`; both must outlive the context.
  static TracingContext make(const datagen::Dataset& d, const Vocab& v);

  const Vocab& vocab() const { return *vocab_; }
  const std::vector<Role>& input_roles() const { return roles_; }
  int position_of(Role r) const;
  int answer_position() const { return static_cast<int>(roles_.size()) - 1; }

  /// Uniform sample from the training inferred facts.
  std::vector<AnyFact> sample_examples(int n, Seed seed) const;

  /// Same-type replacement at the site role such that the perturbed fact lies
  /// in the task's deductive closure and its gold target differs. nullopt
  /// after max_attempts failures (the example is skipped, never reused).
  std::optional<AnyFact> perturb(const AnyFact& example, Role site_role, Rng& rng,
                                 int max_attempts = 50) const;

  TokenId gold_token(const AnyFact& example) const;

  /// Designated (position, token) pairs tracked through the lens, tagged
  /// with stable metric names.
  struct Tracked {
    Role position_role;
    TokenId token;
    std::string tag;
  };
  std::vector<Tracked> tracked_symbols(const AnyFact& example) const;

  /// Comparative-label tokens (empty for the composition task).
  std::vector<TokenId> label_space() const;

  /// Restricts comparison perturbation and lens bookkeeping to the OOD side
  /// (examples must then come from the OOD split).
  void use_ood_side(bool ood) { ood_side_ = ood; }
  std::vector<AnyFact> sample_ood_examples(int n, Seed seed) const;

 private:
  const Vocab* vocab_ = nullptr;
  std::vector<Role> roles_;
  bool ood_side_ = false;

  // Composition state.
  const datagen::CompositionDataset* comp_ = nullptr;
  std::map<std::pair<EntityId, RelationId>, EntityId> hop_id_, hop_ood_;
  std::vector<EntityId> heads_id_;     // entities with outgoing ID edges
  std::vector<RelationId> rels_id_;    // relations appearing in ID edges

  // Comparison-style state (comparison or complex).
  const datagen::ComparisonDataset* cmp_ = nullptr;
  const datagen::ComplexDataset* cpx_ = nullptr;
  std::uint32_t n_entities_ = 0, n_attributes_ = 0;
  const std::vector<Value>* values_ = nullptr;
  std::vector<char> fact_ood_;  // [entity * n_attributes + attribute]

  const std::map<std::pair<EntityId, RelationId>, EntityId>& hops() const {
    return ood_side_ ? hop_ood_ : hop_id_;
  }
  bool pair_in_side(EntityId e, AttributeId a) const;
  Value value_of(EntityId e, AttributeId a) const {
    return (*values_)[std::size_t{e} * n_attributes_ + a];
  }
};

// ---------------------------------------------------------------------------
// Causal tracing
// ---------------------------------------------------------------------------

struct StateRef {
  int layer = 0;
  Role role = Role::H;
  friend bool operator==(const StateRef&, const StateRef&) = default;
};

struct CausalCell {
  int layer = 0;
  int position = 0;
  std::string role;
  double strength = 0.0;
  int used = 0;
  int skipped = 0;
  bool reachable = true;  // false: no causal path from site to target
};

struct CausalGrid {
  StateRef target;
  int target_position = 0;
  int n_examples = 0;
  std::vector<CausalCell> cells;

  const CausalCell* cell(int layer, Role role, const TracingContext& ctx) const;
};

/// Token-replacement activation patching: for every site, run the example
/// normally, run a perturbed variant, patch the perturbed activation into the
/// normal run at the site, and count how often the target state's lens top-1
/// changes. Strength is the alteration ratio over non-skipped examples.
CausalGrid causal_trace(const Weights<float>& w, const TracingContext& ctx,
                        const std::vector<AnyFact>& examples, const std::vector<StateRef>& sites,
                        StateRef target, Seed seed, int max_attempts = 50);

void save_grid_csv(const CausalGrid& grid, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Lens statistics over example sets
// ---------------------------------------------------------------------------

struct LensSiteStats {
  int layer = 0;
  int position = 0;
  std::string role;
  std::string top_token;  // most frequent lens top-1 across examples
  double top_fraction = 0.0;
  std::map<std::string, double> symbol_mrr;  // tag -> mean reciprocal rank
  double label_space_recall3 = -1.0;         // -1 when the task has no labels
};

struct LensStats {
  int n_examples = 0;
  std::vector<LensSiteStats> sites;  // every (layer 0..L, input position)
  const LensSiteStats* site(int layer, Role role, const TracingContext& ctx) const;
};

LensStats lens_stats(const Weights<float>& w, const TracingContext& ctx,
                     const std::vector<AnyFact>& examples);

void save_lens_csv(const LensStats& stats, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Circuit pruning
// ---------------------------------------------------------------------------

struct CircuitNode {
  int layer = 0;
  int position = 0;
  std::string role;
  std::string top_token;
  std::map<std::string, double> symbol_mrr;
};

struct CircuitEdge {
  int src_layer = 0, src_position = 0;
  int dst_layer = 0, dst_position = 0;
  double strength = 0.0;
};

struct CircuitReport {
  double tau = 0.5;
  std::vector<CircuitNode> nodes;
  std::vector<CircuitEdge> edges;
};

/// Drops topology-impossible edges (source layer >= target layer or source
/// position > target position), then edges below tau; surviving endpoints
/// become nodes annotated with lens statistics.
CircuitReport prune_circuit(const std::vector<CausalGrid>& grids, const LensStats& lens,
                            double tau);

void save_circuit_report(const CircuitReport& report, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Linear probing
// ---------------------------------------------------------------------------

/// Residual-stream states of every example at (layer, role), one row each.
model::Mat<float> collect_states(const Weights<float>& w, const TracingContext& ctx,
                                 const std::vector<AnyFact>& examples, int layer, Role role);

/// Multinomial linear classifier fit by gradient descent on a train split;
/// returns held-out accuracy. Deterministic under seed.
double linear_probe(const model::Mat<float>& states, const std::vector<int>& labels,
                    double train_fraction, Seed seed);

}  // namespace grokkit::interp
