#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace grokkit {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using AttributeId = std::uint32_t;
using TokenId = std::int32_t;
using Value = std::int32_t;  // ordinal attribute value, 1-based
using Seed = std::uint64_t;

/// Comparative relation between two ordinal attribute values.
enum class Label : std::uint8_t { Less = 0, Equal = 1, Greater = 2 };

inline Label compare_label(Value v1, Value v2) {
  if (v1 < v2) return Label::Less;
  if (v1 > v2) return Label::Greater;
  return Label::Equal;
}

/// Anti-symmetric counterpart: (e1, e2, y) holds iff (e2, e1, flip(y)) holds.
inline Label flip_label(Label y) {
  switch (y) {
    case Label::Less: return Label::Greater;
    case Label::Greater: return Label::Less;
    default: return Label::Equal;
  }
}

inline const char* label_name(Label y) {
  switch (y) {
    case Label::Less: return "a<";
    case Label::Equal: return "a=";
    default: return "a>";
  }
}

// Error taxonomy; the CLI maps these to distinct exit codes
// (config = 2, data = 3, numeric = 4).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace grokkit
