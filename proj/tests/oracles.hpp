#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive — nested loops and literal rule application — so they
// cannot share a bug with the production code paths they check.

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "grokkit/datagen.hpp"

namespace grokkit::oracle {

using datagen::AttrFact;
using datagen::CompFact;
using datagen::ComposedFact;
using datagen::Edge;

/// Two-hop deduction by a quadratic pairwise join over all fact pairs.
inline std::vector<ComposedFact> compose_pairwise(const std::vector<Edge>& atomic) {
  std::set<ComposedFact> out;
  for (const Edge& a : atomic)
    for (const Edge& b : atomic)
      if (a.object == b.subject) out.insert({a.subject, a.relation, b.relation, b.object});
  return {out.begin(), out.end()};
}

/// Literal re-application of the value-comparison rule.
inline Label compare_recompute(Value v1, Value v2) {
  if (v1 < v2) return Label::Less;
  if (v1 == v2) return Label::Equal;
  return Label::Greater;
}

/// Exhaustive forward chaining over the comparison rules: derive comparisons
/// from pairs of known-value facts, then close under anti-symmetry and
/// same-label transitivity until fixpoint. Intended for small instances.
class ForwardChain {
 public:
  ForwardChain(const std::vector<AttrFact>& atomics, const std::vector<CompFact>& comparisons,
               AttributeId attribute) {
    for (const AttrFact& f : atomics)
      if (f.attribute == attribute) known_.push_back({f.entity, f.value});
    // Seed: value rule over every pair of known facts.
    for (auto [e1, v1] : known_)
      for (auto [e2, v2] : known_)
        if (e1 != e2) derived_.insert({e1, e2, compare_recompute(v1, v2)});
    for (const CompFact& c : comparisons)
      if (c.attribute == attribute) derived_.insert({c.e1, c.e2, c.label});
    // Close under symmetry + same-label transitivity.
    bool changed = true;
    while (changed) {
      changed = false;
      std::set<Triple> next = derived_;
      for (const Triple& t : derived_) {
        Triple flipped{t.e2, t.e1, flip_label(t.label)};
        if (next.insert(flipped).second) changed = true;
      }
      for (const Triple& a : next)
        for (const Triple& b : next)
          if (a.e2 == b.e1 && a.label == b.label && a.e1 != b.e2) {
            Triple c{a.e1, b.e2, a.label};
            if (next.insert(c).second) changed = true;
          }
      derived_ = std::move(next);
    }
  }

  std::optional<Label> entailed(EntityId e1, EntityId e2) const {
    std::optional<Label> found;
    for (int l = 0; l < 3; ++l)
      if (derived_.count({e1, e2, static_cast<Label>(l)})) {
        if (found) throw DataError("forward chaining derived contradictory labels");
        found = static_cast<Label>(l);
      }
    return found;
  }

 private:
  struct Triple {
    EntityId e1, e2;
    Label label;
    friend auto operator<=>(const Triple&, const Triple&) = default;
  };
  std::vector<std::pair<EntityId, Value>> known_;
  std::set<Triple> derived_;
};

/// Symmetry + transitivity closure over the given comparisons alone
/// (no atomic values), by iterating the rules to fixpoint.
class ComparisonOnlyChain {
 public:
  ComparisonOnlyChain(const std::vector<CompFact>& comparisons, AttributeId attribute)
      : chain_({}, comparisons_of(comparisons, attribute), attribute) {}
  std::optional<Label> entailed(EntityId e1, EntityId e2) const { return chain_.entailed(e1, e2); }

 private:
  static std::vector<CompFact> comparisons_of(const std::vector<CompFact>& cs, AttributeId a) {
    std::vector<CompFact> out;
    for (const CompFact& c : cs)
      if (c.attribute == a) out.push_back(c);
    return out;
  }
  ForwardChain chain_;
};

}  // namespace grokkit::oracle
