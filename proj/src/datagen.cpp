#include "grokkit/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>

#include "grokkit/rng.hpp"

namespace grokkit::datagen {
namespace {

std::string fmt(const char* format, ...) {
  va_list args;
  va_start(args, format);
  char buf[512];
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

template <class T>
bool is_sorted_unique(const std::vector<T>& v) {
  return std::adjacent_find(v.begin(), v.end(), [](const T& a, const T& b) { return !(a < b); }) ==
         v.end();
}

template <class T>
bool disjoint_sorted(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j])
      ++i;
    else if (b[j] < a[i])
      ++j;
    else
      return false;
  }
  return true;
}

/// Lookup from (subject, relation) to object over a sorted edge set.
/// Relations are functional per subject in every generated graph.
class HopIndex {
 public:
  explicit HopIndex(const std::vector<Edge>& edges) {
    for (const Edge& e : edges) map_[key(e.subject, e.relation)] = e.object;
    if (map_.size() != edges.size())
      throw DataError("composition facts are not functional per (subject, relation)");
    for (const Edge& e : edges) by_subject_[e.subject].push_back(e);
  }
  std::optional<EntityId> object_of(EntityId s, RelationId r) const {
    auto it = map_.find(key(s, r));
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }
  const std::vector<Edge>* edges_of(EntityId s) const {
    auto it = by_subject_.find(s);
    return it == by_subject_.end() ? nullptr : &it->second;
  }

 private:
  static std::uint64_t key(EntityId s, RelationId r) { return (std::uint64_t{s} << 32) | r; }
  std::unordered_map<std::uint64_t, EntityId> map_;
  std::unordered_map<EntityId, std::vector<Edge>> by_subject_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Knowledge graph
// ---------------------------------------------------------------------------

void KnowledgeGraph::validate() const {
  if (edges.size() != std::size_t{n_entities} * out_degree)
    throw DataError("knowledge graph edge count mismatch");
  if (!is_sorted_unique(edges)) throw DataError("knowledge graph edges not sorted/unique");
  std::vector<std::uint32_t> deg(n_entities, 0);
  std::set<std::pair<EntityId, RelationId>> seen;
  for (const Edge& e : edges) {
    if (e.subject >= n_entities || e.object >= n_entities || e.relation >= n_relations)
      throw DataError("knowledge graph edge out of range");
    if (e.object == e.subject) throw DataError("knowledge graph self-edge");
    if (!seen.emplace(e.subject, e.relation).second)
      throw DataError("duplicate relation for subject");
    ++deg[e.subject];
  }
  for (std::uint32_t d : deg)
    if (d != out_degree) throw DataError("knowledge graph out-degree violated");
}

KnowledgeGraph gen_knowledge_graph(std::uint32_t n_entities, std::uint32_t n_relations,
                                   std::uint32_t out_degree, Seed seed) {
  if (n_entities < 2) throw DataError("gen_knowledge_graph: need at least 2 entities");
  if (out_degree > n_relations)
    throw DataError(fmt("gen_knowledge_graph: out_degree %u exceeds n_relations %u "
                        "(distinct relations per subject impossible)",
                        out_degree, n_relations));
  Rng rng(seed);
  KnowledgeGraph g{n_entities, n_relations, out_degree, {}};
  g.edges.reserve(std::size_t{n_entities} * out_degree);

  std::vector<RelationId> rel(n_relations);
  std::iota(rel.begin(), rel.end(), 0);
  std::vector<RelationId> chosen(out_degree);
  for (EntityId s = 0; s < n_entities; ++s) {
    // Partial Fisher-Yates: first `out_degree` positions become the draw.
    for (std::uint32_t i = 0; i < out_degree; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(n_relations - i));
      std::swap(rel[i], rel[j]);
      chosen[i] = rel[i];
    }
    std::sort(chosen.begin(), chosen.end());
    for (RelationId r : chosen) {
      EntityId o = static_cast<EntityId>(rng.below(n_entities - 1));
      if (o >= s) ++o;  // objects exclude the subject itself
      g.edges.push_back({s, r, o});
    }
  }
  return g;
}

std::vector<ComposedFact> deduce_compositions(const std::vector<Edge>& atomic,
                                              bool require_functional) {
  std::vector<Edge> sorted = atomic;
  std::sort(sorted.begin(), sorted.end());
  // Group second hops by subject.
  std::unordered_map<EntityId, std::pair<std::size_t, std::size_t>> span;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].subject == sorted[i].subject) ++j;
    span[sorted[i].subject] = {i, j};
    i = j;
  }
  std::vector<ComposedFact> out;
  for (const Edge& first : sorted) {
    auto it = span.find(first.object);
    if (it == span.end()) continue;
    for (std::size_t k = it->second.first; k < it->second.second; ++k) {
      const Edge& second = sorted[k];
      out.push_back({first.subject, first.relation, second.relation, second.object});
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (require_functional) {
    // (h, r1) determines the bridge uniquely, so (h, r1, r2) must determine t.
    for (std::size_t i = 1; i < out.size(); ++i) {
      const auto& a = out[i - 1];
      const auto& b = out[i];
      if (a.head == b.head && a.r1 == b.r1 && a.r2 == b.r2)
        throw DataError("deduce_compositions: conflicting tails for one (h, r1, r2)");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composition dataset
// ---------------------------------------------------------------------------

void CompositionDataset::validate() const {
  if (!is_sorted_unique(atomic_id) || !is_sorted_unique(atomic_ood))
    throw DataError("atomic splits not sorted/unique");
  if (!disjoint_sorted(atomic_id, atomic_ood)) throw DataError("atomic splits overlap");
  if (atomic_id.size() + atomic_ood.size() != std::size_t{n_entities} * out_degree)
    throw DataError("atomic splits do not cover the edge set");
  const std::size_t want_train =
      static_cast<std::size_t>(std::llround(phi * static_cast<double>(atomic_id.size())));
  if (train_inferred_id.size() != want_train)
    throw DataError("train_inferred_id size does not match round(phi * |atomic_id|)");
  if (!is_sorted_unique(train_inferred_id) || !is_sorted_unique(test_inferred_id) ||
      !is_sorted_unique(test_inferred_ood))
    throw DataError("inferred splits not sorted/unique");
  if (!disjoint_sorted(train_inferred_id, test_inferred_id))
    throw DataError("train/test inferred-ID overlap");

  HopIndex id_index(atomic_id), ood_index(atomic_ood);
  auto check_witnessed = [](const std::vector<ComposedFact>& facts, const HopIndex& idx,
                            const char* what) {
    for (const ComposedFact& f : facts) {
      auto b = idx.object_of(f.head, f.r1);
      if (!b) throw DataError(fmt("%s: missing first hop", what));
      auto t = idx.object_of(*b, f.r2);
      if (!t || *t != f.tail) throw DataError(fmt("%s: missing or mismatched second hop", what));
    }
  };
  check_witnessed(train_inferred_id, id_index, "train_inferred_id");
  check_witnessed(test_inferred_id, id_index, "test_inferred_id");
  check_witnessed(test_inferred_ood, ood_index, "test_inferred_ood");
}

CompositionDataset build_composition_dataset(const KnowledgeGraph& graph, double ood_fraction,
                                             double phi, Seed seed, CompositionOptions opt) {
  if (!(ood_fraction > 0.0 && ood_fraction < 1.0))
    throw DataError("build_composition_dataset: ood_fraction must lie in (0, 1)");
  if (phi < 0.0) throw DataError("build_composition_dataset: phi must be non-negative");

  Rng rng(Rng::mix(seed, 0x636f6d70));  // stream tag: composition
  CompositionDataset d;
  d.n_entities = graph.n_entities;
  d.n_relations = graph.n_relations;
  d.out_degree = graph.out_degree;
  d.ood_fraction = ood_fraction;
  d.phi = phi;
  d.seed = seed;
  d.options = opt;

  const std::size_t n_edges = graph.edges.size();
  const std::size_t n_ood =
      static_cast<std::size_t>(std::llround(ood_fraction * static_cast<double>(n_edges)));
  std::vector<std::uint64_t> ood_pick = rng.sample_without_replacement(n_edges, n_ood);
  std::vector<char> is_ood(n_edges, 0);
  for (auto i : ood_pick) is_ood[i] = 1;
  for (std::size_t i = 0; i < n_edges; ++i)
    (is_ood[i] ? d.atomic_ood : d.atomic_id).push_back(graph.edges[i]);

  std::vector<ComposedFact> inferred_id = deduce_compositions(d.atomic_id);
  std::vector<ComposedFact> inferred_ood = deduce_compositions(d.atomic_ood);

  const std::size_t n_train =
      static_cast<std::size_t>(std::llround(phi * static_cast<double>(d.atomic_id.size())));
  if (n_train > inferred_id.size())
    throw DataError(fmt("build_composition_dataset: phi=%.4f needs %zu inferred facts but only "
                        "%zu exist (max feasible phi is %.4f)",
                        phi, n_train, inferred_id.size(),
                        static_cast<double>(inferred_id.size()) /
                            static_cast<double>(d.atomic_id.size())));
  const std::size_t n_test = std::min(opt.test_id_sample, inferred_id.size() - n_train);
  std::vector<std::uint64_t> pick = rng.sample_without_replacement(inferred_id.size(), n_train + n_test);
  for (std::size_t i = 0; i < n_train; ++i) d.train_inferred_id.push_back(inferred_id[pick[i]]);
  for (std::size_t i = n_train; i < pick.size(); ++i)
    d.test_inferred_id.push_back(inferred_id[pick[i]]);
  std::sort(d.train_inferred_id.begin(), d.train_inferred_id.end());
  std::sort(d.test_inferred_id.begin(), d.test_inferred_id.end());

  if (inferred_ood.size() < opt.min_ood_chains)
    throw DataError(fmt("build_composition_dataset: only %zu OOD two-hop chains exist "
                        "(minimum configured: %zu); increase ood_fraction or entity count",
                        inferred_ood.size(), opt.min_ood_chains));
  const std::size_t n_test_ood = std::min(opt.test_ood_sample, inferred_ood.size());
  std::vector<std::uint64_t> pick_ood =
      rng.sample_without_replacement(inferred_ood.size(), n_test_ood);
  for (auto i : pick_ood) d.test_inferred_ood.push_back(inferred_ood[i]);
  std::sort(d.test_inferred_ood.begin(), d.test_inferred_ood.end());

  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Comparison dataset
// ---------------------------------------------------------------------------

bool ComparisonDataset::is_ood(EntityId e, AttributeId a) const {
  AttrFact probe{e, a, value_of(e, a)};
  return std::binary_search(atomic_ood.begin(), atomic_ood.end(), probe);
}

void ComparisonDataset::validate() const {
  if (values.size() != std::size_t{n_entities} * n_attributes)
    throw DataError("comparison value table has wrong size");
  for (Value v : values)
    if (v < 1 || v > static_cast<Value>(n_values)) throw DataError("value out of range");
  if (atomic_id.size() + atomic_ood.size() != values.size())
    throw DataError("atomic facts do not cover every (entity, attribute) pair");
  if (!disjoint_sorted(atomic_id, atomic_ood)) throw DataError("atomic splits overlap");

  auto check = [&](const std::vector<CompFact>& facts, bool ood, const char* what) {
    for (const CompFact& f : facts) {
      if (f.e1 == f.e2) throw DataError(fmt("%s: self-comparison", what));
      if (f.label != compare_label(value_of(f.e1, f.attribute), value_of(f.e2, f.attribute)))
        throw DataError(fmt("%s: label does not match the value table", what));
      if (is_ood(f.e1, f.attribute) != ood || is_ood(f.e2, f.attribute) != ood)
        throw DataError(fmt("%s: source atomic facts in the wrong split", what));
    }
  };
  check(train_inferred_id, false, "train_inferred_id");
  check(test_inferred_id, false, "test_inferred_id");
  check(test_inferred_ood, true, "test_inferred_ood");
  if (!disjoint_sorted(train_inferred_id, test_inferred_id))
    throw DataError("train/test inferred-ID overlap");
}

namespace {

/// Uniform sampling over the union of per-attribute ordered-pair pools,
/// without materializing the pools.
class PairPool {
 public:
  explicit PairPool(std::vector<std::vector<EntityId>> members) : members_(std::move(members)) {
    prefix_.push_back(0);
    for (const auto& m : members_) {
      const std::uint64_t n = m.size();
      prefix_.push_back(prefix_.back() + n * (n > 0 ? n - 1 : 0));
    }
  }
  std::uint64_t size() const { return prefix_.back(); }
  CompFact unpack(std::uint64_t index, const std::vector<Value>& values,
                  std::uint32_t n_attributes) const {
    const auto a_it = std::upper_bound(prefix_.begin(), prefix_.end(), index) - 1;
    const auto a = static_cast<AttributeId>(a_it - prefix_.begin());
    const std::uint64_t p = index - *a_it;
    const auto& m = members_[a];
    const std::uint64_t i = p / (m.size() - 1);
    std::uint64_t j = p % (m.size() - 1);
    if (j >= i) ++j;
    const EntityId e1 = m[i], e2 = m[j];
    const Value v1 = values[std::size_t{e1} * n_attributes + a];
    const Value v2 = values[std::size_t{e2} * n_attributes + a];
    return CompFact{a, e1, e2, compare_label(v1, v2)};
  }

 private:
  std::vector<std::vector<EntityId>> members_;
  std::vector<std::uint64_t> prefix_;
};

}  // namespace

ComparisonDataset build_comparison_dataset(std::uint32_t n_entities, std::uint32_t n_attributes,
                                           std::uint32_t n_values, double ood_fraction, double phi,
                                           Seed seed, ComparisonOptions opt) {
  if (n_entities < 1 || n_attributes < 1 || n_values < 1)
    throw DataError("build_comparison_dataset: counts must be at least 1");
  if (!(ood_fraction > 0.0 && ood_fraction < 1.0))
    throw DataError("build_comparison_dataset: ood_fraction must lie in (0, 1)");

  Rng rng(Rng::mix(seed, 0x636d7072));  // stream tag: comparison
  ComparisonDataset d;
  d.n_entities = n_entities;
  d.n_attributes = n_attributes;
  d.n_values = n_values;
  d.ood_fraction = ood_fraction;
  d.phi = phi;
  d.seed = seed;
  d.options = opt;

  const std::size_t n_facts = std::size_t{n_entities} * n_attributes;
  d.values.resize(n_facts);
  for (auto& v : d.values) v = 1 + static_cast<Value>(rng.below(n_values));

  const std::size_t n_ood =
      static_cast<std::size_t>(std::llround(ood_fraction * static_cast<double>(n_facts)));
  std::vector<char> ood_flag(n_facts, 0);
  for (auto i : rng.sample_without_replacement(n_facts, n_ood)) ood_flag[i] = 1;

  std::vector<std::vector<EntityId>> id_members(n_attributes), ood_members(n_attributes);
  for (EntityId e = 0; e < n_entities; ++e)
    for (AttributeId a = 0; a < n_attributes; ++a) {
      const std::size_t k = std::size_t{e} * n_attributes + a;
      AttrFact f{e, a, d.values[k]};
      if (ood_flag[k]) {
        d.atomic_ood.push_back(f);
        ood_members[a].push_back(e);
      } else {
        d.atomic_id.push_back(f);
        id_members[a].push_back(e);
      }
    }

  PairPool id_pool(id_members), ood_pool(ood_members);
  const std::size_t n_train =
      static_cast<std::size_t>(std::llround(phi * static_cast<double>(d.atomic_id.size())));
  if (n_train > id_pool.size())
    throw DataError(fmt("build_comparison_dataset: phi=%.4f needs %zu inferred facts but only "
                        "%llu ID pairs exist (max feasible phi is %.4f)",
                        phi, n_train, static_cast<unsigned long long>(id_pool.size()),
                        static_cast<double>(id_pool.size()) /
                            static_cast<double>(d.atomic_id.size())));
  const std::size_t n_test = std::min<std::uint64_t>(opt.test_id_sample, id_pool.size() - n_train);
  std::vector<std::uint64_t> pick = rng.sample_without_replacement(id_pool.size(), n_train + n_test);
  for (std::size_t i = 0; i < n_train; ++i)
    d.train_inferred_id.push_back(id_pool.unpack(pick[i], d.values, n_attributes));
  for (std::size_t i = n_train; i < pick.size(); ++i)
    d.test_inferred_id.push_back(id_pool.unpack(pick[i], d.values, n_attributes));
  std::sort(d.train_inferred_id.begin(), d.train_inferred_id.end());
  std::sort(d.test_inferred_id.begin(), d.test_inferred_id.end());

  const std::size_t n_test_ood = std::min<std::uint64_t>(opt.test_ood_sample, ood_pool.size());
  for (auto i : rng.sample_without_replacement(ood_pool.size(), n_test_ood))
    d.test_inferred_ood.push_back(ood_pool.unpack(i, d.values, n_attributes));
  std::sort(d.test_inferred_ood.begin(), d.test_inferred_ood.end());

  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Derivability over training facts
// ---------------------------------------------------------------------------

std::unordered_map<EntityId, DerivabilityBounds> derivable_bounds(const AttributeTrainFacts& facts,
                                                                  AttributeId attribute) {
  std::unordered_map<EntityId, Value> known;
  for (auto [e, v] : facts.known_values) known[e] = v;

  std::unordered_map<EntityId, DerivabilityBounds> bounds;
  auto touch = [&](EntityId e) -> DerivabilityBounds& { return bounds[e]; };

  for (auto [e, v] : facts.known_values) {
    auto& b = touch(e);
    b.lower = b.upper = v;
    b.exact = v;
    b.known = true;
  }

  for (const CompFact& c : facts.comparisons) {
    const auto k1 = known.find(c.e1), k2 = known.find(c.e2);
    if (k1 == known.end() && k2 == known.end())
      throw DataError("derivable_bounds: comparison between two entities of unknown value "
                      "is unsupported");
    // Record witnesses for the endpoint whose value is unknown; for two known
    // endpoints the comparison is already implied by the values.
    if (k1 == known.end()) {
      auto& b = touch(c.e1);
      const Value v = k2->second;
      switch (c.label) {
        case Label::Less: b.above.push_back({c.e2, v}); break;
        case Label::Greater: b.below.push_back({c.e2, v}); break;
        case Label::Equal: b.equal.push_back({c.e2, v}); break;
      }
    } else if (k2 == known.end()) {
      auto& b = touch(c.e2);
      const Value v = k1->second;
      switch (c.label) {  // flipped orientation
        case Label::Less: b.below.push_back({c.e1, v}); break;
        case Label::Greater: b.above.push_back({c.e1, v}); break;
        case Label::Equal: b.equal.push_back({c.e1, v}); break;
      }
    }
  }

  for (auto& [e, b] : bounds) {
    for (auto [w, v] : b.above) b.upper = std::min(b.upper, v - 1);
    for (auto [w, v] : b.below) b.lower = std::max(b.lower, v + 1);
    for (auto [w, v] : b.equal) {
      if (b.exact && *b.exact != v)
        throw DataError(fmt("derivable_bounds: conflicting exact values for entity %u "
                            "(attribute %u)",
                            e, attribute));
      b.exact = v;
      b.lower = std::max(b.lower, v);
      b.upper = std::min(b.upper, v);
    }
    if (b.lower > b.upper)
      throw DataError(fmt("derivable_bounds: contradictory bounds for entity %u (attribute %u); "
                          "the dataset is malformed",
                          e, attribute));
    std::sort(b.above.begin(), b.above.end());
    std::sort(b.below.begin(), b.below.end());
    std::sort(b.equal.begin(), b.equal.end());
  }
  return bounds;
}

namespace {

/// Anchors through which formal chains of one fixed label leave an entity:
/// the entity itself when its value is atomically known (the value-comparison
/// rule links it onward), plus its one-step comparison witnesses. Equality
/// witnesses never anchor strict chains — transitivity composes same-label
/// steps only, so an equality step cannot appear inside a strict proof.
struct Anchors {
  std::vector<std::pair<EntityId, Value>> items;

  static Anchors strict(const DerivabilityBounds& b, EntityId self, bool upward) {
    Anchors a;
    if (b.known) a.items.push_back({self, *b.exact});
    const auto& witnesses = upward ? b.above : b.below;
    a.items.insert(a.items.end(), witnesses.begin(), witnesses.end());
    std::sort(a.items.begin(), a.items.end());
    return a;
  }
  static Anchors equal(const DerivabilityBounds& b, EntityId self) {
    Anchors a;
    if (b.known) a.items.push_back({self, *b.exact});
    a.items.insert(a.items.end(), b.equal.begin(), b.equal.end());
    std::sort(a.items.begin(), a.items.end());
    return a;
  }
  bool shares_entity(const Anchors& other) const {
    std::size_t i = 0, j = 0;
    while (i < items.size() && j < other.items.size()) {
      if (items[i].first < other.items[j].first)
        ++i;
      else if (other.items[j].first < items[i].first)
        ++j;
      else
        return true;
    }
    return false;
  }
  std::optional<Value> min_value() const {
    std::optional<Value> m;
    for (auto [e, v] : items)
      if (!m || v < *m) m = v;
    return m;
  }
  std::optional<Value> max_value() const {
    std::optional<Value> m;
    for (auto [e, v] : items)
      if (!m || v > *m) m = v;
    return m;
  }
  bool shares_value(const Anchors& other) const {
    for (auto [e1, v1] : items)
      for (auto [e2, v2] : other.items)
        if (v1 == v2) return true;
    return false;
  }
};

}  // namespace

std::optional<Label> derivable_label(const std::unordered_map<EntityId, DerivabilityBounds>& bounds,
                                     EntityId e1, EntityId e2) {
  const auto it1 = bounds.find(e1), it2 = bounds.find(e2);
  if (it1 == bounds.end() || it2 == bounds.end()) return std::nullopt;
  const DerivabilityBounds& b1 = it1->second;
  const DerivabilityBounds& b2 = it2->second;

  // lo < hi iff some upward anchor of lo and downward anchor of hi either
  // connect through the known-value order (anchor values strictly ordered)
  // or coincide as the same entity (a direct two-step chain through it).
  auto less_than = [](const DerivabilityBounds& blo, EntityId lo, const DerivabilityBounds& bhi,
                      EntityId hi) {
    const Anchors up = Anchors::strict(blo, lo, /*upward=*/true);
    const Anchors down = Anchors::strict(bhi, hi, /*upward=*/false);
    const auto lo_min = up.min_value();
    const auto hi_max = down.max_value();
    if (lo_min && hi_max && *lo_min < *hi_max) return true;
    return up.shares_entity(down);
  };

  const bool lt = less_than(b1, e1, b2, e2);
  const bool gt = less_than(b2, e2, b1, e1);
  const bool eq = Anchors::equal(b1, e1).shares_value(Anchors::equal(b2, e2));

  if ((lt && gt) || (lt && eq) || (gt && eq))
    throw DataError("derivable_label: contradictory labels derivable; the dataset is malformed");
  if (lt) return Label::Less;
  if (gt) return Label::Greater;
  if (eq) return Label::Equal;
  return std::nullopt;
}

bool derivable_eq3_only(const AttributeTrainFacts& facts, const CompFact& query) {
  EntityId max_e = std::max(query.e1, query.e2);
  for (const CompFact& c : facts.comparisons) max_e = std::max({max_e, c.e1, c.e2});
  ComparisonOnlyClosure closure(facts.comparisons, max_e + 1);
  return closure.entails(query.e1, query.e2, query.label);
}

ComparisonOnlyClosure::ComparisonOnlyClosure(const std::vector<CompFact>& comparisons,
                                             std::uint32_t n_entities)
    : n_(n_entities) {
  // Union-find over equality edges. Equality classes answer only equality
  // queries; they are never contracted into the strict graph, because the
  // transitivity rule composes same-label steps only.
  component_.resize(n_);
  std::iota(component_.begin(), component_.end(), 0);
  std::function<std::uint32_t(std::uint32_t)> find = [&](std::uint32_t x) {
    while (component_[x] != x) {
      component_[x] = component_[component_[x]];
      x = component_[x];
    }
    return x;
  };
  for (const CompFact& c : comparisons)
    if (c.label == Label::Equal) component_[find(c.e1)] = find(c.e2);
  for (std::uint32_t i = 0; i < n_; ++i) component_[i] = find(i);

  // Strict digraph over raw entities, then reachability via
  // reverse-topological bitset accumulation. Consistent data is acyclic;
  // a cycle means the comparisons contradict each other.
  std::vector<std::vector<std::uint32_t>> succ(n_);
  std::vector<std::uint32_t> indeg(n_, 0);
  auto add_edge = [&](EntityId lo, EntityId hi) {
    if (component_[lo] == component_[hi])
      throw DataError("comparison closure: strict edge inside an equality class");
    succ[lo].push_back(hi);
    ++indeg[hi];
  };
  for (const CompFact& c : comparisons) {
    if (c.label == Label::Less) add_edge(c.e1, c.e2);
    if (c.label == Label::Greater) add_edge(c.e2, c.e1);
  }

  const std::size_t words = (n_ + 63) / 64;
  descendants_.assign(n_, std::vector<std::uint64_t>(words, 0));
  std::vector<std::uint32_t> order;
  order.reserve(n_);
  std::vector<std::uint32_t> q;
  std::vector<std::uint32_t> indeg_copy = indeg;
  for (std::uint32_t i = 0; i < n_; ++i)
    if (indeg_copy[i] == 0) q.push_back(i);
  while (!q.empty()) {
    std::uint32_t u = q.back();
    q.pop_back();
    order.push_back(u);
    for (std::uint32_t v : succ[u])
      if (--indeg_copy[v] == 0) q.push_back(v);
  }
  if (order.size() != n_) throw DataError("comparison closure: cyclic strict order");
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::uint32_t u = *it;
    for (std::uint32_t v : succ[u]) {
      auto& du = descendants_[u];
      const auto& dv = descendants_[v];
      for (std::size_t w = 0; w < words; ++w) du[w] |= dv[w];
      du[v / 64] |= std::uint64_t{1} << (v % 64);
    }
  }
}

bool ComparisonOnlyClosure::entails(EntityId e1, EntityId e2, Label label) const {
  if (e1 >= n_ || e2 >= n_) return false;
  switch (label) {
    case Label::Equal: return component_[e1] == component_[e2];
    case Label::Less: return (descendants_[e1][e2 / 64] >> (e2 % 64)) & 1;
    case Label::Greater: return (descendants_[e2][e1 / 64] >> (e1 % 64)) & 1;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Complex dataset
// ---------------------------------------------------------------------------

bool ComplexDataset::is_ood(EntityId e, AttributeId a) const {
  AttrFact probe{e, a, value_of(e, a)};
  return std::binary_search(eval_atomic_ood.begin(), eval_atomic_ood.end(), probe);
}

std::vector<EntityId> ComplexDataset::ood_entities(AttributeId a) const {
  std::vector<EntityId> out;
  for (const AttrFact& f : eval_atomic_ood)
    if (f.attribute == a) out.push_back(f.entity);
  std::sort(out.begin(), out.end());
  return out;
}

void ComplexDataset::validate() const {
  if (values.size() != std::size_t{n_entities} * n_attributes)
    throw DataError("complex value table has wrong size");
  if (atomic_id.size() + eval_atomic_ood.size() != values.size())
    throw DataError("complex atomic facts do not cover every (entity, attribute) pair");
  if (!disjoint_sorted(atomic_id, eval_atomic_ood)) throw DataError("complex atomic splits overlap");

  auto check_comp = [&](const std::vector<CompFact>& facts, int want_ood, const char* what) {
    for (const CompFact& f : facts) {
      if (f.e1 == f.e2) throw DataError(fmt("%s: self-comparison", what));
      if (f.label != compare_label(value_of(f.e1, f.attribute), value_of(f.e2, f.attribute)))
        throw DataError(fmt("%s: label does not match the value table", what));
      const int n_ood = int(is_ood(f.e1, f.attribute)) + int(is_ood(f.e2, f.attribute));
      if (n_ood != want_ood) throw DataError(fmt("%s: wrong ID/OOD membership", what));
    }
  };
  check_comp(train_comp_id_id, 0, "train_comp_id_id");
  check_comp(train_comp_id_ood, 1, "train_comp_id_ood");
  check_comp(test_comp_id, 0, "test_comp_id");
  check_comp(test_queries, 2, "test_queries");

  // Label balance.
  std::size_t counts[3] = {0, 0, 0};
  for (const CompFact& q : test_queries) counts[static_cast<int>(q.label)]++;
  if (!(counts[0] == counts[1] && counts[1] == counts[2]))
    throw DataError("complex test queries are not label-balanced");

  // Every query is derivable from the training facts and none is derivable
  // from the comparison rules alone.
  for (AttributeId a = 0; a < n_attributes; ++a) {
    AttributeTrainFacts facts;
    for (const AttrFact& f : atomic_id)
      if (f.attribute == a) facts.known_values.push_back({f.entity, f.value});
    for (const CompFact& c : train_comp_id_id)
      if (c.attribute == a) facts.comparisons.push_back(c);
    for (const CompFact& c : train_comp_id_ood)
      if (c.attribute == a) facts.comparisons.push_back(c);
    auto bounds = derivable_bounds(facts, a);
    ComparisonOnlyClosure closure(facts.comparisons, n_entities);
    for (const CompFact& q : test_queries) {
      if (q.attribute != a) continue;
      auto lbl = derivable_label(bounds, q.e1, q.e2);
      if (!lbl || *lbl != q.label)
        throw DataError("complex test query is not derivable with its gold label");
      if (closure.entails(q.e1, q.e2, q.label))
        throw DataError("complex test query is derivable from comparison rules alone");
    }
  }
}

ComplexDataset build_complex_dataset(std::uint32_t n_entities, std::uint32_t n_attributes,
                                     std::uint32_t n_values, double ood_fraction,
                                     double comparison_sample_rate, std::uint32_t n_test_per_label,
                                     Seed seed, ComplexOptions opt) {
  if (n_entities < 2 || n_attributes < 1 || n_values < 1)
    throw DataError("build_complex_dataset: counts too small");
  if (!(ood_fraction > 0.0 && ood_fraction < 1.0))
    throw DataError("build_complex_dataset: ood_fraction must lie in (0, 1)");
  if (!(comparison_sample_rate > 0.0 && comparison_sample_rate <= 1.0))
    throw DataError("build_complex_dataset: comparison_sample_rate must lie in (0, 1]");

  Rng rng(Rng::mix(seed, 0x636d706c));  // stream tag: complex
  ComplexDataset d;
  d.n_entities = n_entities;
  d.n_attributes = n_attributes;
  d.n_values = n_values;
  d.ood_fraction = ood_fraction;
  d.comparison_sample_rate = comparison_sample_rate;
  d.n_test_per_label = n_test_per_label;
  d.seed = seed;
  d.options = opt;

  const std::size_t n_facts = std::size_t{n_entities} * n_attributes;
  d.values.resize(n_facts);
  for (auto& v : d.values) v = 1 + static_cast<Value>(rng.below(n_values));

  const std::size_t n_ood =
      static_cast<std::size_t>(std::llround(ood_fraction * static_cast<double>(n_facts)));
  std::vector<char> ood_flag(n_facts, 0);
  for (auto i : rng.sample_without_replacement(n_facts, n_ood)) ood_flag[i] = 1;

  std::vector<std::vector<EntityId>> id_members(n_attributes), ood_members(n_attributes);
  for (EntityId e = 0; e < n_entities; ++e)
    for (AttributeId a = 0; a < n_attributes; ++a) {
      const std::size_t k = std::size_t{e} * n_attributes + a;
      AttrFact f{e, a, d.values[k]};
      if (ood_flag[k]) {
        d.eval_atomic_ood.push_back(f);
        ood_members[a].push_back(e);
      } else {
        d.atomic_id.push_back(f);
        id_members[a].push_back(e);
      }
    }

  // Sample ordered comparison pairs independently at the configured rate;
  // OOD-OOD pairs are never emitted. Held-out (ID, ID) pairs are collected by
  // reservoir for the ID-generalization eval split.
  std::vector<CompFact> held_out_reservoir;
  std::uint64_t held_out_seen = 0;
  auto comp_of = [&](AttributeId a, EntityId x, EntityId y) {
    return CompFact{a, x, y, compare_label(d.value_of(x, a), d.value_of(y, a))};
  };
  for (AttributeId a = 0; a < n_attributes; ++a) {
    const auto& ids = id_members[a];
    const auto& oods = ood_members[a];
    for (EntityId x : ids) {
      for (EntityId y : ids) {
        if (x == y) continue;
        if (rng.real01() < comparison_sample_rate) {
          d.train_comp_id_id.push_back(comp_of(a, x, y));
        } else {
          ++held_out_seen;
          if (held_out_reservoir.size() < opt.test_id_sample) {
            held_out_reservoir.push_back(comp_of(a, x, y));
          } else {
            const std::uint64_t j = rng.below(held_out_seen);
            if (j < opt.test_id_sample) held_out_reservoir[j] = comp_of(a, x, y);
          }
        }
      }
      for (EntityId y : oods)
        if (rng.real01() < comparison_sample_rate) d.train_comp_id_ood.push_back(comp_of(a, x, y));
    }
    for (EntityId x : oods)
      for (EntityId y : ids)
        if (rng.real01() < comparison_sample_rate) d.train_comp_id_ood.push_back(comp_of(a, x, y));
  }
  d.test_comp_id = std::move(held_out_reservoir);
  std::sort(d.test_comp_id.begin(), d.test_comp_id.end());

  // Candidate OOD-OOD queries: derivable from the training facts, not
  // derivable from the comparison rules alone, bucketed by gold label.
  for (AttributeId a = 0; a < n_attributes; ++a) {
    AttributeTrainFacts facts;
    for (EntityId e : id_members[a]) facts.known_values.push_back({e, d.value_of(e, a)});
    for (const CompFact& c : d.train_comp_id_id)
      if (c.attribute == a) facts.comparisons.push_back(c);
    for (const CompFact& c : d.train_comp_id_ood)
      if (c.attribute == a) facts.comparisons.push_back(c);
    auto bounds = derivable_bounds(facts, a);
    ComparisonOnlyClosure closure(facts.comparisons, n_entities);

    std::vector<CompFact> bucket[3];
    for (EntityId e1 : ood_members[a])
      for (EntityId e2 : ood_members[a]) {
        if (e1 == e2) continue;
        auto lbl = derivable_label(bounds, e1, e2);
        if (!lbl) continue;
        if (closure.entails(e1, e2, *lbl)) continue;
        bucket[static_cast<int>(*lbl)].push_back({a, e1, e2, *lbl});
      }
    for (int l = 0; l < 3; ++l) {
      if (bucket[l].size() < n_test_per_label)
        throw DataError(fmt("build_complex_dataset: attribute %u has only %zu derivable '%s' "
                            "queries (need %u per label)",
                            a, bucket[l].size(), label_name(static_cast<Label>(l)),
                            n_test_per_label));
      for (auto i : rng.sample_without_replacement(bucket[l].size(), n_test_per_label))
        d.test_queries.push_back(bucket[l][i]);
    }
  }

  std::sort(d.atomic_id.begin(), d.atomic_id.end());
  std::sort(d.eval_atomic_ood.begin(), d.eval_atomic_ood.end());
  std::sort(d.train_comp_id_id.begin(), d.train_comp_id_id.end());
  std::sort(d.train_comp_id_ood.begin(), d.train_comp_id_ood.end());
  std::sort(d.test_queries.begin(), d.test_queries.end());

  d.validate();
  return d;
}

}  // namespace grokkit::datagen
