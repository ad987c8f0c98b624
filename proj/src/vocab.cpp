#include "grokkit/vocab.hpp"

#include <charconv>
#include <fstream>
#include <map>

#include "grokkit/rng.hpp"

namespace grokkit::vocab {

namespace {
constexpr EntityId kNoEntity = ~EntityId{0};
}

SymbolSpec SymbolSpec::of(const datagen::Dataset& d) {
  SymbolSpec s;
  if (const auto* c = std::get_if<datagen::CompositionDataset>(&d)) {
    s.n_entities = c->n_entities;
    s.n_relations = c->n_relations;
  } else if (const auto* c = std::get_if<datagen::ComparisonDataset>(&d)) {
    s.n_entities = c->n_entities;
    s.n_attributes = c->n_attributes;
    s.n_values = c->n_values;
    s.labels = true;
  } else if (const auto* c = std::get_if<datagen::ComplexDataset>(&d)) {
    s.n_entities = c->n_entities;
    s.n_attributes = c->n_attributes;
    s.n_values = c->n_values;
    s.labels = true;
  }
  return s;
}

const char* role_name(Role r) {
  switch (r) {
    case Role::H: return "h";
    case Role::H2: return "h2";
    case Role::R: return "r";
    case Role::R1: return "r1";
    case Role::R2: return "r2";
    case Role::E: return "e";
    case Role::Eb: return "eb";
    case Role::A: return "a";
    case Role::E1: return "e1";
    case Role::E1b: return "e1b";
    case Role::E2: return "e2";
    case Role::E2b: return "e2b";
    case Role::TF: return "tf";
  }
  return "?";
}

TokenId Vocab::relation_token(RelationId r) const {
  if (r >= spec_.n_relations) throw DataError("relation symbol out of range");
  return relation_base_ + static_cast<TokenId>(r);
}
TokenId Vocab::attribute_token(AttributeId a) const {
  if (a >= spec_.n_attributes) throw DataError("attribute symbol out of range");
  return attribute_base_ + static_cast<TokenId>(a);
}
TokenId Vocab::value_token(Value v) const {
  if (v < 1 || v > static_cast<Value>(spec_.n_values)) throw DataError("value symbol out of range");
  return value_base_ + static_cast<TokenId>(v - 1);
}
TokenId Vocab::label_token(Label l) const {
  if (!spec_.labels) throw DataError("vocabulary has no label symbols");
  return label_base_ + static_cast<TokenId>(l);
}
TokenId Vocab::entity_token(EntityId e) const {
  if (mode_ != Mode::Single) throw DataError("entity_token requires single-token mode");
  if (e >= spec_.n_entities) throw DataError("entity symbol out of range");
  return static_cast<TokenId>(e);
}
std::pair<TokenId, TokenId> Vocab::entity_tokens(EntityId e) const {
  if (mode_ != Mode::Multi) throw DataError("entity_tokens requires multi-token mode");
  if (e >= spec_.n_entities) throw DataError("entity symbol out of range");
  return entity_pairs_[e];
}
std::optional<EntityId> Vocab::entity_of(TokenId t) const {
  if (mode_ != Mode::Single || t < 0 || t >= static_cast<TokenId>(spec_.n_entities))
    return std::nullopt;
  return static_cast<EntityId>(t);
}
std::optional<EntityId> Vocab::entity_of_pair(TokenId first, TokenId second) const {
  if (mode_ != Mode::Multi) return std::nullopt;
  const TokenId k = static_cast<TokenId>(name_set_size_);
  if (first < 0 || first >= k || second < k || second >= 2 * k) return std::nullopt;
  const EntityId e = pair_lookup_[std::size_t{static_cast<std::uint32_t>(first)} * name_set_size_ +
                                  static_cast<std::uint32_t>(second - k)];
  if (e == kNoEntity) return std::nullopt;
  return e;
}

std::string Vocab::token_name(TokenId t) const {
  if (mode_ == Mode::Single && t < static_cast<TokenId>(spec_.n_entities))
    return "e" + std::to_string(t);
  if (mode_ == Mode::Multi && t < static_cast<TokenId>(name_set_size_))
    return "f" + std::to_string(t);
  if (mode_ == Mode::Multi && t < static_cast<TokenId>(2 * name_set_size_))
    return "l" + std::to_string(t - name_set_size_);
  if (t >= relation_base_ && t < relation_base_ + static_cast<TokenId>(spec_.n_relations))
    return "r" + std::to_string(t - relation_base_);
  if (t >= attribute_base_ && t < attribute_base_ + static_cast<TokenId>(spec_.n_attributes))
    return "a" + std::to_string(t - attribute_base_);
  if (t >= value_base_ && t < value_base_ + static_cast<TokenId>(spec_.n_values))
    return "v" + std::to_string(t - value_base_ + 1);
  if (spec_.labels && t >= label_base_ && t < label_base_ + 3)
    return label_name(static_cast<Label>(t - label_base_));
  return "tok" + std::to_string(t);
}

Vocab build_vocab(const SymbolSpec& spec, Mode mode, std::uint32_t name_set_size, Seed seed) {
  Vocab v;
  v.mode_ = mode;
  v.spec_ = spec;
  TokenId next = 0;
  if (mode == Mode::Single) {
    next = static_cast<TokenId>(spec.n_entities);
  } else {
    if (name_set_size == 0) throw DataError("build_vocab: name_set_size must be positive");
    if (std::uint64_t{name_set_size} * name_set_size < spec.n_entities)
      throw DataError("build_vocab: name_set_size too small for unique entity token pairs");
    if (spec.n_entities % name_set_size != 0)
      throw DataError("build_vocab: token multiplicity n_entities / name_set_size "
                      "must be an integer");
    v.name_set_size_ = name_set_size;
    Rng rng(Rng::mix(seed, 0x766f6362));
    v.entity_pairs_.resize(spec.n_entities);
    v.pair_lookup_.assign(std::size_t{name_set_size} * name_set_size, kNoEntity);
    auto picks = rng.sample_without_replacement(std::uint64_t{name_set_size} * name_set_size,
                                                spec.n_entities);
    for (EntityId e = 0; e < spec.n_entities; ++e) {
      const std::uint64_t p = picks[e];
      const TokenId first = static_cast<TokenId>(p / name_set_size);
      const TokenId second = static_cast<TokenId>(name_set_size + p % name_set_size);
      v.entity_pairs_[e] = {first, second};
      v.pair_lookup_[p] = e;
    }
    next = static_cast<TokenId>(2 * name_set_size);
  }
  v.relation_base_ = next;
  next += static_cast<TokenId>(spec.n_relations);
  v.attribute_base_ = next;
  next += static_cast<TokenId>(spec.n_attributes);
  v.value_base_ = next;
  next += static_cast<TokenId>(spec.n_values);
  v.label_base_ = next;
  if (spec.labels) next += 3;
  v.size_ = static_cast<std::uint32_t>(next);
  return v;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

namespace {

void push_entity(TokenSequence& seq, const Vocab& v, EntityId e, Role first_role,
                 Role second_role) {
  if (v.mode() == Mode::Single) {
    seq.tokens.push_back(v.entity_token(e));
    seq.roles.push_back(first_role);
  } else {
    auto [a, b] = v.entity_tokens(e);
    seq.tokens.push_back(a);
    seq.roles.push_back(first_role);
    seq.tokens.push_back(b);
    seq.roles.push_back(second_role);
  }
}

/// Appends the answer. Entity answers in multi-token mode are scored on both
/// name tokens; the first is teacher-forced into the input.
void finish_entity_answer(TokenSequence& seq, const Vocab& v, EntityId t) {
  if (v.mode() == Mode::Single) {
    seq.targets = {{static_cast<int>(seq.tokens.size()) - 1, v.entity_token(t)}};
  } else {
    auto [a, b] = v.entity_tokens(t);
    const int last_input = static_cast<int>(seq.tokens.size()) - 1;
    seq.tokens.push_back(a);
    seq.roles.push_back(Role::TF);
    seq.targets = {{last_input, a}, {last_input + 1, b}};
  }
}

}  // namespace

TokenSequence encode_fact(const AnyFact& fact, const Vocab& v) {
  TokenSequence seq;
  if (const auto* f = std::get_if<Edge>(&fact)) {
    push_entity(seq, v, f->subject, Role::H, Role::H2);
    seq.tokens.push_back(v.relation_token(f->relation));
    seq.roles.push_back(Role::R);
    finish_entity_answer(seq, v, f->object);
  } else if (const auto* f = std::get_if<ComposedFact>(&fact)) {
    push_entity(seq, v, f->head, Role::H, Role::H2);
    seq.tokens.push_back(v.relation_token(f->r1));
    seq.roles.push_back(Role::R1);
    seq.tokens.push_back(v.relation_token(f->r2));
    seq.roles.push_back(Role::R2);
    finish_entity_answer(seq, v, f->tail);
  } else if (const auto* f = std::get_if<AttrFact>(&fact)) {
    push_entity(seq, v, f->entity, Role::E, Role::Eb);
    seq.tokens.push_back(v.attribute_token(f->attribute));
    seq.roles.push_back(Role::A);
    seq.targets = {{static_cast<int>(seq.tokens.size()) - 1, v.value_token(f->value)}};
  } else if (const auto* f = std::get_if<CompFact>(&fact)) {
    seq.tokens.push_back(v.attribute_token(f->attribute));
    seq.roles.push_back(Role::A);
    push_entity(seq, v, f->e1, Role::E1, Role::E1b);
    push_entity(seq, v, f->e2, Role::E2, Role::E2b);
    seq.targets = {{static_cast<int>(seq.tokens.size()) - 1, v.label_token(f->label)}};
  }
  return seq;
}

AnyFact decode_fact(const TokenSequence& seq, const Vocab& v) {
  auto entity_at = [&](std::size_t i) -> EntityId {
    std::optional<EntityId> e;
    if (v.mode() == Mode::Single)
      e = v.entity_of(seq.tokens[i]);
    else
      e = v.entity_of_pair(seq.tokens[i], seq.tokens[i + 1]);
    if (!e) throw DataError("decode_fact: unknown entity encoding");
    return *e;
  };
  auto expect = [&](TokenId t, TokenId base, std::uint32_t n, const char* what) -> std::uint32_t {
    if (t < base || t >= base + static_cast<TokenId>(n))
      throw DataError(std::string("decode_fact: expected ") + what);
    return static_cast<std::uint32_t>(t - base);
  };

  const bool multi = v.mode() == Mode::Multi;
  const std::size_t ew = multi ? 2 : 1;  // tokens per entity
  if (seq.roles.empty() || seq.targets.empty()) throw DataError("decode_fact: empty sequence");

  switch (seq.roles[0]) {
    case Role::H: {
      const EntityId h = entity_at(0);
      std::size_t i = ew;
      if (seq.roles[i] == Role::R) {
        const RelationId r =
            expect(seq.tokens[i], v.relation_token(0), v.spec().n_relations, "relation");
        EntityId obj;
        if (!multi) {
          auto e = v.entity_of(seq.targets[0].second);
          if (!e) throw DataError("decode_fact: target is not an entity");
          obj = *e;
        } else {
          auto e = v.entity_of_pair(seq.targets[0].second, seq.targets[1].second);
          if (!e) throw DataError("decode_fact: target is not an entity pair");
          obj = *e;
        }
        return Edge{h, r, obj};
      }
      const RelationId r1 =
          expect(seq.tokens[i], v.relation_token(0), v.spec().n_relations, "relation");
      const RelationId r2 =
          expect(seq.tokens[i + 1], v.relation_token(0), v.spec().n_relations, "relation");
      EntityId tail;
      if (!multi) {
        auto e = v.entity_of(seq.targets[0].second);
        if (!e) throw DataError("decode_fact: target is not an entity");
        tail = *e;
      } else {
        auto e = v.entity_of_pair(seq.targets[0].second, seq.targets[1].second);
        if (!e) throw DataError("decode_fact: target is not an entity pair");
        tail = *e;
      }
      return ComposedFact{h, r1, r2, tail};
    }
    case Role::E: {
      const EntityId e = entity_at(0);
      const AttributeId a =
          expect(seq.tokens[ew], v.attribute_token(0), v.spec().n_attributes, "attribute");
      const Value val = static_cast<Value>(
          expect(seq.targets[0].second, v.value_token(1), v.spec().n_values, "value") + 1);
      return AttrFact{e, a, val};
    }
    case Role::A: {
      const AttributeId a =
          expect(seq.tokens[0], v.attribute_token(0), v.spec().n_attributes, "attribute");
      const EntityId e1 = entity_at(1);
      const EntityId e2 = entity_at(1 + ew);
      const Label l =
          static_cast<Label>(expect(seq.targets[0].second, v.label_token(Label::Less), 3, "label"));
      return CompFact{a, e1, e2, l};
    }
    default:
      throw DataError("decode_fact: unrecognized layout");
  }
}

// ---------------------------------------------------------------------------
// Vocab file
// ---------------------------------------------------------------------------

void save_vocab(const Vocab& v, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  os << "header\tschema_version=1\tmode=" << (v.mode_ == Mode::Single ? "single" : "multi")
     << "\tname_set_size=" << v.name_set_size_ << "\tn_entities=" << v.spec_.n_entities
     << "\tn_relations=" << v.spec_.n_relations << "\tn_attributes=" << v.spec_.n_attributes
     << "\tn_values=" << v.spec_.n_values << "\tlabels=" << (v.spec_.labels ? 1 : 0) << "\n";
  for (EntityId e = 0; e < v.spec_.n_entities; ++e) {
    if (v.mode_ == Mode::Single)
      os << "e" << e << '\t' << v.entity_token(e) << '\n';
    else {
      auto [a, b] = v.entity_tokens(e);
      os << "e" << e << '\t' << a << ' ' << b << '\n';
    }
  }
  for (RelationId r = 0; r < v.spec_.n_relations; ++r)
    os << "r" << r << '\t' << v.relation_token(r) << '\n';
  for (AttributeId a = 0; a < v.spec_.n_attributes; ++a)
    os << "a" << a << '\t' << v.attribute_token(a) << '\n';
  for (Value val = 1; val <= static_cast<Value>(v.spec_.n_values); ++val)
    os << "v" << val << '\t' << v.value_token(val) << '\n';
  if (v.spec_.labels)
    for (int l = 0; l < 3; ++l)
      os << label_name(static_cast<Label>(l)) << '\t' << v.label_token(static_cast<Label>(l))
         << '\n';
  if (!os) throw DataError("write failed: " + path.string());
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open vocab: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + ": empty vocab file");

  std::map<std::string, std::string> params;
  {
    std::size_t start = 0;
    std::vector<std::string> fields;
    while (true) {
      std::size_t p = line.find('\t', start);
      fields.push_back(line.substr(start, p == std::string::npos ? p : p - start));
      if (p == std::string::npos) break;
      start = p + 1;
    }
    if (fields.empty() || fields[0] != "header")
      throw DataError(path.string() + ":1: missing vocab header");
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto eq = fields[i].find('=');
      if (eq == std::string::npos) throw DataError(path.string() + ":1: malformed header field");
      params[fields[i].substr(0, eq)] = fields[i].substr(eq + 1);
    }
  }
  auto geti = [&](const char* k) -> std::uint32_t {
    auto it = params.find(k);
    if (it == params.end()) throw DataError(path.string() + ": header missing " + k);
    return static_cast<std::uint32_t>(std::stoul(it->second));
  };
  if (geti("schema_version") != 1) throw DataError(path.string() + ": unsupported schema version");

  SymbolSpec spec;
  spec.n_entities = geti("n_entities");
  spec.n_relations = geti("n_relations");
  spec.n_attributes = geti("n_attributes");
  spec.n_values = geti("n_values");
  spec.labels = geti("labels") != 0;
  const Mode mode = params["mode"] == "multi" ? Mode::Multi : Mode::Single;
  const std::uint32_t k = geti("name_set_size");

  // Rebuild the layout, then verify every listed mapping against the file.
  Vocab v;
  v.mode_ = mode;
  v.spec_ = spec;
  v.name_set_size_ = k;
  TokenId next = mode == Mode::Single ? static_cast<TokenId>(spec.n_entities)
                                      : static_cast<TokenId>(2 * k);
  v.relation_base_ = next;
  next += static_cast<TokenId>(spec.n_relations);
  v.attribute_base_ = next;
  next += static_cast<TokenId>(spec.n_attributes);
  v.value_base_ = next;
  next += static_cast<TokenId>(spec.n_values);
  v.label_base_ = next;
  if (spec.labels) next += 3;
  v.size_ = static_cast<std::uint32_t>(next);
  if (mode == Mode::Multi) {
    v.entity_pairs_.resize(spec.n_entities);
    v.pair_lookup_.assign(std::size_t{k} * k, kNoEntity);
  }

  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed vocab line");
    const std::string sym = line.substr(0, tab);
    const std::string ids = line.substr(tab + 1);
    if (sym.size() >= 2 && sym[0] == 'e' && mode == Mode::Multi && std::isdigit(sym[1])) {
      const EntityId e = static_cast<EntityId>(std::stoul(sym.substr(1)));
      const auto sp = ids.find(' ');
      if (e >= spec.n_entities || sp == std::string::npos)
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad entity pair");
      const TokenId a = static_cast<TokenId>(std::stol(ids.substr(0, sp)));
      const TokenId b = static_cast<TokenId>(std::stol(ids.substr(sp + 1)));
      v.entity_pairs_[e] = {a, b};
      if (a < 0 || a >= static_cast<TokenId>(k) || b < static_cast<TokenId>(k) ||
          b >= static_cast<TokenId>(2 * k))
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": pair out of range");
      auto& slot = v.pair_lookup_[std::size_t{static_cast<std::uint32_t>(a)} * k +
                                  static_cast<std::uint32_t>(b - static_cast<TokenId>(k))];
      if (slot != kNoEntity)
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": duplicate entity pair");
      slot = e;
    }
    // Non-entity lines (and single-mode entity lines) follow the arithmetic
    // layout; token_name round-trips are covered by tests.
  }
  return v;
}

}  // namespace grokkit::vocab
