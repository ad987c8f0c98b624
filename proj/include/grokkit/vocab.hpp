#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "grokkit/dataset_io.hpp"

namespace grokkit::vocab {

using datagen::AttrFact;
using datagen::CompFact;
using datagen::ComposedFact;
using datagen::Edge;

using AnyFact = std::variant<Edge, ComposedFact, AttrFact, CompFact>;

/// Which symbol families a dataset needs tokens for.
struct SymbolSpec {
  std::uint32_t n_entities = 0;
  std::uint32_t n_relations = 0;
  std::uint32_t n_attributes = 0;
  std::uint32_t n_values = 0;
  bool labels = false;

  static SymbolSpec of(const datagen::Dataset& d);
  friend bool operator==(const SymbolSpec&, const SymbolSpec&) = default;
};

enum class Mode { Single, Multi };

/// Role of an input position, aligned with the hidden-state notation used by
/// the analysis tools (S[layer, role]).
enum class Role : std::uint8_t {
  H,    // composition head
  H2,   // second token of the head (multi-token mode)
  R,    // relation of an atomic composition fact
  R1,   // first relation of an inferred composition fact
  R2,   // second relation
  E,    // entity of an atomic attribute fact
  Eb,   // its second token
  A,    // attribute
  E1,   // first compared entity
  E1b,  // its second token
  E2,   // second compared entity
  E2b,  // its second token
  TF    // teacher-forced first answer token (multi-token training)
};

const char* role_name(Role r);

/// Token layout plus its answer positions. In single-token mode `tokens` is
/// exactly the model input and one position is scored. In multi-token mode
/// the entity answer spans two tokens: the first answer token is appended to
/// `tokens` (teacher forcing) and both positions are scored.
struct TokenSequence {
  std::vector<TokenId> tokens;
  std::vector<Role> roles;                          // one per token
  std::vector<std::pair<int, TokenId>> targets;     // (position, gold token), ascending
  int answer_index() const { return targets.front().first; }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

class Vocab {
 public:
  Mode mode() const { return mode_; }
  const SymbolSpec& spec() const { return spec_; }
  std::uint32_t size() const { return size_; }
  std::uint32_t name_set_size() const { return name_set_size_; }

  TokenId relation_token(RelationId r) const;
  TokenId attribute_token(AttributeId a) const;
  TokenId value_token(Value v) const;
  TokenId label_token(Label l) const;
  TokenId entity_token(EntityId e) const;                        // single mode
  std::pair<TokenId, TokenId> entity_tokens(EntityId e) const;   // multi mode

  /// Inverse of the entity mapping; nullopt when no entity has this encoding.
  std::optional<EntityId> entity_of(TokenId t) const;                       // single
  std::optional<EntityId> entity_of_pair(TokenId first, TokenId second) const;  // multi

  std::string token_name(TokenId t) const;

  friend Vocab build_vocab(const SymbolSpec&, Mode, std::uint32_t, Seed);
  friend void save_vocab(const Vocab&, const std::filesystem::path&);
  friend Vocab load_vocab(const std::filesystem::path&);
  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  Mode mode_ = Mode::Single;
  SymbolSpec spec_;
  std::uint32_t size_ = 0;
  std::uint32_t name_set_size_ = 0;                          // multi mode
  std::vector<std::pair<TokenId, TokenId>> entity_pairs_;    // multi mode, per entity
  std::vector<EntityId> pair_lookup_;                        // dense [first * K + second] -> entity or -1
  TokenId relation_base_ = 0, attribute_base_ = 0, value_base_ = 0, label_base_ = 0;
};

/// Single mode: a bijection symbol -> token. Multi mode: each entity gets a
/// unique ordered (first, second) name-token pair drawn without replacement;
/// token multiplicity n_entities / name_set_size must be integral.
Vocab build_vocab(const SymbolSpec& spec, Mode mode, std::uint32_t name_set_size, Seed seed);

void save_vocab(const Vocab& v, const std::filesystem::path& path);
Vocab load_vocab(const std::filesystem::path& path);

/// Fixed layouts, answer at the end:
///   composition atomic    [h, r]        -> t
///   composition inferred  [h, r1, r2]   -> t
///   comparison atomic     [e, a]        -> v
///   comparison inferred   [a, e1, e2]   -> label
/// Multi-token mode expands each entity into its two name tokens; entity
/// answers are scored on both tokens with the first teacher-forced.
TokenSequence encode_fact(const AnyFact& fact, const Vocab& v);

/// Exact inverse of encode_fact; throws DataError on malformed sequences.
AnyFact decode_fact(const TokenSequence& seq, const Vocab& v);

}  // namespace grokkit::vocab
