#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "grokkit/common.hpp"

namespace grokkit::datagen {

// ---------------------------------------------------------------------------
// Composition task
// ---------------------------------------------------------------------------

/// Atomic fact of the composition task: (subject, relation, object).
struct Edge {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Two-hop fact (head, r1, r2, tail), witnessed by (head,r1,b) and (b,r2,tail).
struct ComposedFact {
  EntityId head = 0;
  RelationId r1 = 0;
  RelationId r2 = 0;
  EntityId tail = 0;
  friend bool operator==(const ComposedFact&, const ComposedFact&) = default;
  friend auto operator<=>(const ComposedFact&, const ComposedFact&) = default;
};

struct KnowledgeGraph {
  std::uint32_t n_entities = 0;
  std::uint32_t n_relations = 0;
  std::uint32_t out_degree = 0;
  std::vector<Edge> edges;  // sorted by (subject, relation, object)

  /// Checks all structural invariants; throws DataError on violation.
  void validate() const;
};

/// Random graph where every entity has `out_degree` edges with distinct
/// relations, each pointing at a uniformly random other entity.
KnowledgeGraph gen_knowledge_graph(std::uint32_t n_entities, std::uint32_t n_relations,
                                   std::uint32_t out_degree, Seed seed);

/// All (h,r1,r2,t) such that (h,r1,b) and (b,r2,t) are both in `atomic`.
/// Every witnessed tuple is kept; output is sorted and duplicate-free
/// (relations are functional per subject in generated graphs, which this
/// function asserts when `require_functional`).
std::vector<ComposedFact> deduce_compositions(const std::vector<Edge>& atomic,
                                              bool require_functional = true);

struct CompositionOptions {
  std::size_t test_id_sample = 3000;   // held-out inferred-ID eval sample
  std::size_t test_ood_sample = 3000;  // cap on the OOD eval set
  std::size_t min_ood_chains = 50;     // fail loudly if fewer OOD two-hop chains exist
  friend bool operator==(const CompositionOptions&, const CompositionOptions&) = default;
};

struct CompositionDataset {
  std::uint32_t n_entities = 0;
  std::uint32_t n_relations = 0;
  std::uint32_t out_degree = 0;
  double ood_fraction = 0.0;
  double phi = 0.0;
  Seed seed = 0;
  CompositionOptions options;

  std::vector<Edge> atomic_id, atomic_ood;
  std::vector<ComposedFact> train_inferred_id, test_inferred_id, test_inferred_ood;

  void validate() const;
  friend bool operator==(const CompositionDataset&, const CompositionDataset&) = default;
};

/// Splits the edge set (1-ood_fraction : ood_fraction), deduces inferred facts
/// per split, and draws train/test inferred-ID sets with
/// |train_inferred_id| = round(phi * |atomic_id|).
CompositionDataset build_composition_dataset(const KnowledgeGraph& graph, double ood_fraction,
                                             double phi, Seed seed, CompositionOptions opt = {});

// ---------------------------------------------------------------------------
// Comparison task
// ---------------------------------------------------------------------------

/// Atomic fact of the comparison tasks: (entity, attribute, value).
struct AttrFact {
  EntityId entity = 0;
  AttributeId attribute = 0;
  Value value = 0;
  friend bool operator==(const AttrFact&, const AttrFact&) = default;
  friend auto operator<=>(const AttrFact&, const AttrFact&) = default;
};

/// Inferred fact: (attribute, e1, e2, label).
struct CompFact {
  AttributeId attribute = 0;
  EntityId e1 = 0;
  EntityId e2 = 0;
  Label label = Label::Equal;
  friend bool operator==(const CompFact&, const CompFact&) = default;
  friend auto operator<=>(const CompFact&, const CompFact&) = default;
};

struct ComparisonOptions {
  std::size_t test_id_sample = 3000;
  std::size_t test_ood_sample = 3000;
  friend bool operator==(const ComparisonOptions&, const ComparisonOptions&) = default;
};

struct ComparisonDataset {
  std::uint32_t n_entities = 0;
  std::uint32_t n_attributes = 0;
  std::uint32_t n_values = 0;
  double ood_fraction = 0.0;
  double phi = 0.0;
  Seed seed = 0;
  ComparisonOptions options;

  std::vector<Value> values;  // ground truth, indexed [entity * n_attributes + attribute]
  std::vector<AttrFact> atomic_id, atomic_ood;
  std::vector<CompFact> train_inferred_id, test_inferred_id, test_inferred_ood;

  Value value_of(EntityId e, AttributeId a) const { return values[std::size_t{e} * n_attributes + a]; }
  bool is_ood(EntityId e, AttributeId a) const;
  void validate() const;
  friend bool operator==(const ComparisonDataset&, const ComparisonDataset&) = default;
};

/// Assigns a uniform value in 1..n_values to every (entity, attribute) pair,
/// splits the atomic facts (1-ood_fraction : ood_fraction), and samples
/// inferred comparisons uniformly over within-attribute ordered pairs whose
/// two atomic facts lie in the same split.
ComparisonDataset build_comparison_dataset(std::uint32_t n_entities, std::uint32_t n_attributes,
                                           std::uint32_t n_values, double ood_fraction, double phi,
                                           Seed seed, ComparisonOptions opt = {});

// ---------------------------------------------------------------------------
// Complex task (comparison with an enlarged search space)
// ---------------------------------------------------------------------------

struct ComplexOptions {
  std::size_t test_id_sample = 3000;  // held-out (ID,ID) comparisons for ID-generalization tracking
  friend bool operator==(const ComplexOptions&, const ComplexOptions&) = default;
};

struct ComplexDataset {
  std::uint32_t n_entities = 0;
  std::uint32_t n_attributes = 0;
  std::uint32_t n_values = 0;
  double ood_fraction = 0.0;
  double comparison_sample_rate = 0.0;
  std::uint32_t n_test_per_label = 0;
  Seed seed = 0;
  ComplexOptions options;

  std::vector<Value> values;  // generator-internal ground truth for every (e, a)

  // Training facts. OOD atomic facts are withheld entirely.
  std::vector<AttrFact> atomic_id;
  std::vector<CompFact> train_comp_id_id;   // comparisons between two ID entities
  std::vector<CompFact> train_comp_id_ood;  // comparisons between an ID and an OOD entity

  // Evaluation sets.
  std::vector<CompFact> test_queries;       // OOD-OOD, derivable, label-balanced
  std::vector<CompFact> test_comp_id;       // unseen (ID,ID) comparisons
  std::vector<AttrFact> eval_atomic_ood;    // value-inference queries for OOD entities

  Value value_of(EntityId e, AttributeId a) const { return values[std::size_t{e} * n_attributes + a]; }
  bool is_ood(EntityId e, AttributeId a) const;
  /// OOD entities of one attribute, ascending.
  std::vector<EntityId> ood_entities(AttributeId a) const;
  void validate() const;
  friend bool operator==(const ComplexDataset&, const ComplexDataset&) = default;
};

/// Builds the large-search-space variant: atomic facts for OOD entities are
/// dropped from training, ordered (ID,ID) and (ID,OOD) comparison pairs are
/// sampled independently at `comparison_sample_rate`, and the test set is a
/// balanced selection of OOD-OOD queries that are derivable from the training
/// facts but not by comparison-rule closure alone.
ComplexDataset build_complex_dataset(std::uint32_t n_entities, std::uint32_t n_attributes,
                                     std::uint32_t n_values, double ood_fraction,
                                     double comparison_sample_rate, std::uint32_t n_test_per_label,
                                     Seed seed, ComplexOptions opt = {});

// ---------------------------------------------------------------------------
// Derivability over training facts
// ---------------------------------------------------------------------------

inline constexpr Value kValueNegInf = std::numeric_limits<Value>::min();
inline constexpr Value kValuePosInf = std::numeric_limits<Value>::max();

/// Value interval implied for one entity by the training facts of one
/// attribute, plus the one-step comparison witnesses the rule closure needs.
struct DerivabilityBounds {
  Value lower = kValueNegInf;
  Value upper = kValuePosInf;
  std::optional<Value> exact;
  bool known = false;  // value comes from an atomic fact, not an equality chain

  // Witnesses against entities with a known value: (witness entity, its value).
  std::vector<std::pair<EntityId, Value>> above;  // e < b
  std::vector<std::pair<EntityId, Value>> below;  // b < e
  std::vector<std::pair<EntityId, Value>> equal;  // e = b
};

/// Training facts of one attribute, as the derivability ops consume them.
struct AttributeTrainFacts {
  std::vector<std::pair<EntityId, Value>> known_values;  // from atomic facts
  std::vector<CompFact> comparisons;                     // every training comparison of the attribute
};

/// Interval propagation over the training comparisons of one attribute.
/// Every comparison must touch at least one entity with a known value;
/// contradictory bounds signal a malformed dataset and throw DataError.
std::unordered_map<EntityId, DerivabilityBounds> derivable_bounds(const AttributeTrainFacts& facts,
                                                                  AttributeId attribute);

/// Label entailed for (e1, e2) by closing the training facts under the value
/// comparison rule plus symmetry and same-label transitivity; nullopt when no
/// label is derivable. Agrees with exhaustive forward-chaining proof search.
std::optional<Label> derivable_label(const std::unordered_map<EntityId, DerivabilityBounds>& bounds,
                                     EntityId e1, EntityId e2);

/// True iff the query's label follows from symmetry + same-label transitivity
/// over the training comparison quadruples alone, ignoring all atomic values.
bool derivable_eq3_only(const AttributeTrainFacts& facts, const CompFact& query);

/// Batched closure for the symmetry+transitivity-only entailment, reused by
/// the generator across many candidate queries of one attribute.
class ComparisonOnlyClosure {
 public:
  ComparisonOnlyClosure(const std::vector<CompFact>& comparisons, std::uint32_t n_entities);
  bool entails(EntityId e1, EntityId e2, Label label) const;

 private:
  std::uint32_t n_ = 0;
  std::vector<std::uint32_t> component_;       // equality classes (union-find, flattened)
  std::vector<std::vector<std::uint64_t>> descendants_;  // strict-order reachability bitsets
};

}  // namespace grokkit::datagen
