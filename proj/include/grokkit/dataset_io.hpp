#pragma once

#include <filesystem>
#include <variant>

#include "grokkit/datagen.hpp"

namespace grokkit::datagen {

using Dataset = std::variant<CompositionDataset, ComparisonDataset, ComplexDataset>;

enum class Task { Composition, Comparison, Complex };

Task task_of(const Dataset& d);
const char* task_name(Task t);

/// Writes the line-delimited dataset format described in docs/formats.md:
/// a header line carrying schema version, task, seed and parameters, then one
/// fact per line with fields {kind, input symbols, target symbol, split}.
/// Output is canonical: regenerating from the recorded seed reproduces the
/// file byte for byte.
void save_dataset(const Dataset& d, const std::filesystem::path& path);

/// Inverse of save_dataset. Malformed records report their line number;
/// a schema-version mismatch is rejected.
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace grokkit::datagen
