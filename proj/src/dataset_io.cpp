#include "grokkit/dataset_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace grokkit::datagen {
namespace {

constexpr int kSchemaVersion = 1;

/// Shortest decimal form that parses back to the same double.
std::string format_double(double x) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) return buf;
  }
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t p = s.find(sep, start);
    if (p == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, p - start));
    start = p + 1;
  }
}

struct LineError {
  std::filesystem::path path;
  std::size_t line;
  [[noreturn]] void fail(const std::string& why) const {
    throw DataError(path.string() + ":" + std::to_string(line) + ": " + why);
  }
};

std::uint64_t parse_u64(const std::string& s, const LineError& at) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) at.fail("malformed integer '" + s + "'");
  return v;
}

double parse_f64(const std::string& s, const LineError& at) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || s.empty()) at.fail("malformed number '" + s + "'");
  return v;
}

std::uint32_t parse_symbol(const std::string& s, char prefix, const LineError& at) {
  if (s.size() < 2 || s[0] != prefix) at.fail("expected symbol '" + std::string(1, prefix) + "<n>', got '" + s + "'");
  return static_cast<std::uint32_t>(parse_u64(s.substr(1), at));
}

Label parse_label(const std::string& s, const LineError& at) {
  if (s == "a<") return Label::Less;
  if (s == "a=") return Label::Equal;
  if (s == "a>") return Label::Greater;
  at.fail("unknown label '" + s + "'");
}

std::string sym_e(EntityId e) { return "e" + std::to_string(e); }
std::string sym_r(RelationId r) { return "r" + std::to_string(r); }
std::string sym_a(AttributeId a) { return "a" + std::to_string(a); }
std::string sym_v(Value v) { return "v" + std::to_string(v); }

void write_edge(std::ostream& os, const Edge& f, const char* split) {
  os << "atomic\t" << sym_e(f.subject) << ' ' << sym_r(f.relation) << '\t' << sym_e(f.object)
     << '\t' << split << '\n';
}
void write_composed(std::ostream& os, const ComposedFact& f, const char* split) {
  os << "inferred\t" << sym_e(f.head) << ' ' << sym_r(f.r1) << ' ' << sym_r(f.r2) << '\t'
     << sym_e(f.tail) << '\t' << split << '\n';
}
void write_attr(std::ostream& os, const AttrFact& f, const char* split) {
  os << "atomic\t" << sym_e(f.entity) << ' ' << sym_a(f.attribute) << '\t' << sym_v(f.value)
     << '\t' << split << '\n';
}
void write_comp(std::ostream& os, const CompFact& f, const char* split) {
  os << "inferred\t" << sym_a(f.attribute) << ' ' << sym_e(f.e1) << ' ' << sym_e(f.e2) << '\t'
     << label_name(f.label) << '\t' << split << '\n';
}

using Params = std::map<std::string, std::string>;

void write_header(std::ostream& os, Task task, Seed seed, const Params& params) {
  os << "header\tschema_version=" << kSchemaVersion << "\ttask=" << task_name(task)
     << "\tseed=" << seed;
  for (const auto& [k, v] : params) os << '\t' << k << '=' << v;
  os << '\n';
}

}  // namespace

Task task_of(const Dataset& d) {
  if (std::holds_alternative<CompositionDataset>(d)) return Task::Composition;
  if (std::holds_alternative<ComparisonDataset>(d)) return Task::Comparison;
  return Task::Complex;
}

const char* task_name(Task t) {
  switch (t) {
    case Task::Composition: return "composition";
    case Task::Comparison: return "comparison";
    default: return "complex";
  }
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());

  if (const auto* c = std::get_if<CompositionDataset>(&d)) {
    Params p;
    p["n_entities"] = std::to_string(c->n_entities);
    p["n_relations"] = std::to_string(c->n_relations);
    p["out_degree"] = std::to_string(c->out_degree);
    p["ood_fraction"] = format_double(c->ood_fraction);
    p["phi"] = format_double(c->phi);
    p["test_id_sample"] = std::to_string(c->options.test_id_sample);
    p["test_ood_sample"] = std::to_string(c->options.test_ood_sample);
    p["min_ood_chains"] = std::to_string(c->options.min_ood_chains);
    write_header(os, Task::Composition, c->seed, p);
    for (const auto& f : c->atomic_id) write_edge(os, f, "train_atomic_id");
    for (const auto& f : c->atomic_ood) write_edge(os, f, "train_atomic_ood");
    for (const auto& f : c->train_inferred_id) write_composed(os, f, "train_inferred_id");
    for (const auto& f : c->test_inferred_id) write_composed(os, f, "test_inferred_id");
    for (const auto& f : c->test_inferred_ood) write_composed(os, f, "test_inferred_ood");
  } else if (const auto* c = std::get_if<ComparisonDataset>(&d)) {
    Params p;
    p["n_entities"] = std::to_string(c->n_entities);
    p["n_attributes"] = std::to_string(c->n_attributes);
    p["n_values"] = std::to_string(c->n_values);
    p["ood_fraction"] = format_double(c->ood_fraction);
    p["phi"] = format_double(c->phi);
    p["test_id_sample"] = std::to_string(c->options.test_id_sample);
    p["test_ood_sample"] = std::to_string(c->options.test_ood_sample);
    write_header(os, Task::Comparison, c->seed, p);
    for (const auto& f : c->atomic_id) write_attr(os, f, "train_atomic_id");
    for (const auto& f : c->atomic_ood) write_attr(os, f, "train_atomic_ood");
    for (const auto& f : c->train_inferred_id) write_comp(os, f, "train_inferred_id");
    for (const auto& f : c->test_inferred_id) write_comp(os, f, "test_inferred_id");
    for (const auto& f : c->test_inferred_ood) write_comp(os, f, "test_inferred_ood");
  } else if (const auto* c = std::get_if<ComplexDataset>(&d)) {
    Params p;
    p["n_entities"] = std::to_string(c->n_entities);
    p["n_attributes"] = std::to_string(c->n_attributes);
    p["n_values"] = std::to_string(c->n_values);
    p["ood_fraction"] = format_double(c->ood_fraction);
    p["comparison_sample_rate"] = format_double(c->comparison_sample_rate);
    p["n_test_per_label"] = std::to_string(c->n_test_per_label);
    p["test_id_sample"] = std::to_string(c->options.test_id_sample);
    write_header(os, Task::Complex, c->seed, p);
    for (const auto& f : c->atomic_id) write_attr(os, f, "train_atomic_id");
    for (const auto& f : c->train_comp_id_id) write_comp(os, f, "train_comp_id_id");
    for (const auto& f : c->train_comp_id_ood) write_comp(os, f, "train_comp_id_ood");
    for (const auto& f : c->test_comp_id) write_comp(os, f, "test_comp_id");
    for (const auto& f : c->test_queries) write_comp(os, f, "test_query_ood");
    for (const auto& f : c->eval_atomic_ood) write_attr(os, f, "eval_atomic_ood");
  }
  if (!os) throw DataError("write failed: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset: " + path.string());

  std::string line;
  LineError at{path, 0};
  if (!std::getline(is, line)) at.fail("empty file (missing header)");
  at.line = 1;

  auto fields = split(line, '\t');
  if (fields.empty() || fields[0] != "header") at.fail("first line is not a header record");
  Params params;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    auto kv = split(fields[i], '=');
    if (kv.size() != 2) at.fail("malformed header field '" + fields[i] + "'");
    params[kv[0]] = kv[1];
  }
  auto need = [&](const char* key) -> std::string {
    auto it = params.find(key);
    if (it == params.end()) at.fail(std::string("header missing '") + key + "'");
    return it->second;
  };
  if (parse_u64(need("schema_version"), at) != kSchemaVersion)
    at.fail("unsupported schema_version " + need("schema_version"));
  const std::string task = need("task");
  const Seed seed = parse_u64(need("seed"), at);

  // Accumulate fact lines per (kind, split); interpretation is per task.
  struct Row {
    std::vector<std::string> inputs;
    std::string target, split;
    std::size_t line;
  };
  std::vector<Row> atomic_rows, inferred_rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    at.line = line_no;
    auto f = split(line, '\t');
    if (f.size() != 4) at.fail("expected 4 tab-separated fields, got " + std::to_string(f.size()));
    Row row{split(f[1], ' '), f[2], f[3], line_no};
    if (f[0] == "atomic")
      atomic_rows.push_back(std::move(row));
    else if (f[0] == "inferred")
      inferred_rows.push_back(std::move(row));
    else
      at.fail("unknown fact kind '" + f[0] + "'");
  }

  auto row_at = [&](const Row& r) { return LineError{path, r.line}; };

  if (task == "composition") {
    CompositionDataset d;
    d.n_entities = static_cast<std::uint32_t>(parse_u64(need("n_entities"), at));
    d.n_relations = static_cast<std::uint32_t>(parse_u64(need("n_relations"), at));
    d.out_degree = static_cast<std::uint32_t>(parse_u64(need("out_degree"), at));
    d.ood_fraction = parse_f64(need("ood_fraction"), at);
    d.phi = parse_f64(need("phi"), at);
    d.seed = seed;
    d.options.test_id_sample = parse_u64(need("test_id_sample"), at);
    d.options.test_ood_sample = parse_u64(need("test_ood_sample"), at);
    d.options.min_ood_chains = parse_u64(need("min_ood_chains"), at);
    for (const Row& r : atomic_rows) {
      auto lat = row_at(r);
      if (r.inputs.size() != 2) lat.fail("composition atomic facts take 2 input symbols");
      Edge e{parse_symbol(r.inputs[0], 'e', lat), parse_symbol(r.inputs[1], 'r', lat),
             parse_symbol(r.target, 'e', lat)};
      if (r.split == "train_atomic_id")
        d.atomic_id.push_back(e);
      else if (r.split == "train_atomic_ood")
        d.atomic_ood.push_back(e);
      else
        lat.fail("unknown split '" + r.split + "'");
    }
    for (const Row& r : inferred_rows) {
      auto lat = row_at(r);
      if (r.inputs.size() != 3) lat.fail("composition inferred facts take 3 input symbols");
      ComposedFact f{parse_symbol(r.inputs[0], 'e', lat), parse_symbol(r.inputs[1], 'r', lat),
                     parse_symbol(r.inputs[2], 'r', lat), parse_symbol(r.target, 'e', lat)};
      if (r.split == "train_inferred_id")
        d.train_inferred_id.push_back(f);
      else if (r.split == "test_inferred_id")
        d.test_inferred_id.push_back(f);
      else if (r.split == "test_inferred_ood")
        d.test_inferred_ood.push_back(f);
      else
        lat.fail("unknown split '" + r.split + "'");
    }
    d.validate();
    return d;
  }

  if (task == "comparison" || task == "complex") {
    const std::uint32_t n_entities = static_cast<std::uint32_t>(parse_u64(need("n_entities"), at));
    const std::uint32_t n_attributes =
        static_cast<std::uint32_t>(parse_u64(need("n_attributes"), at));
    const std::uint32_t n_values = static_cast<std::uint32_t>(parse_u64(need("n_values"), at));

    std::vector<Value> values(std::size_t{n_entities} * n_attributes, 0);
    std::vector<std::pair<AttrFact, std::string>> attr_facts;
    for (const Row& r : atomic_rows) {
      auto lat = row_at(r);
      if (r.inputs.size() != 2) lat.fail("attribute atomic facts take 2 input symbols");
      AttrFact f{parse_symbol(r.inputs[0], 'e', lat), parse_symbol(r.inputs[1], 'a', lat),
                 static_cast<Value>(parse_symbol(r.target, 'v', lat))};
      if (f.entity >= n_entities || f.attribute >= n_attributes) lat.fail("symbol out of range");
      values[std::size_t{f.entity} * n_attributes + f.attribute] = f.value;
      attr_facts.push_back({f, r.split});
    }
    std::vector<std::pair<CompFact, std::string>> comp_facts;
    for (const Row& r : inferred_rows) {
      auto lat = row_at(r);
      if (r.inputs.size() != 3) lat.fail("comparison facts take 3 input symbols");
      CompFact f{parse_symbol(r.inputs[0], 'a', lat), parse_symbol(r.inputs[1], 'e', lat),
                 parse_symbol(r.inputs[2], 'e', lat), parse_label(r.target, lat)};
      comp_facts.push_back({f, r.split});
    }

    if (task == "comparison") {
      ComparisonDataset d;
      d.n_entities = n_entities;
      d.n_attributes = n_attributes;
      d.n_values = n_values;
      d.ood_fraction = parse_f64(need("ood_fraction"), at);
      d.phi = parse_f64(need("phi"), at);
      d.seed = seed;
      d.options.test_id_sample = parse_u64(need("test_id_sample"), at);
      d.options.test_ood_sample = parse_u64(need("test_ood_sample"), at);
      d.values = std::move(values);
      for (auto& [f, s] : attr_facts) {
        if (s == "train_atomic_id")
          d.atomic_id.push_back(f);
        else if (s == "train_atomic_ood")
          d.atomic_ood.push_back(f);
        else
          at.fail("unknown split '" + s + "' for atomic fact");
      }
      for (auto& [f, s] : comp_facts) {
        if (s == "train_inferred_id")
          d.train_inferred_id.push_back(f);
        else if (s == "test_inferred_id")
          d.test_inferred_id.push_back(f);
        else if (s == "test_inferred_ood")
          d.test_inferred_ood.push_back(f);
        else
          at.fail("unknown split '" + s + "' for inferred fact");
      }
      d.validate();
      return d;
    }

    ComplexDataset d;
    d.n_entities = n_entities;
    d.n_attributes = n_attributes;
    d.n_values = n_values;
    d.ood_fraction = parse_f64(need("ood_fraction"), at);
    d.comparison_sample_rate = parse_f64(need("comparison_sample_rate"), at);
    d.n_test_per_label = static_cast<std::uint32_t>(parse_u64(need("n_test_per_label"), at));
    d.seed = seed;
    d.options.test_id_sample = parse_u64(need("test_id_sample"), at);
    d.values = std::move(values);
    for (auto& [f, s] : attr_facts) {
      if (s == "train_atomic_id")
        d.atomic_id.push_back(f);
      else if (s == "eval_atomic_ood")
        d.eval_atomic_ood.push_back(f);
      else
        at.fail("unknown split '" + s + "' for atomic fact");
    }
    for (auto& [f, s] : comp_facts) {
      if (s == "train_comp_id_id")
        d.train_comp_id_id.push_back(f);
      else if (s == "train_comp_id_ood")
        d.train_comp_id_ood.push_back(f);
      else if (s == "test_comp_id")
        d.test_comp_id.push_back(f);
      else if (s == "test_query_ood")
        d.test_queries.push_back(f);
      else
        at.fail("unknown split '" + s + "' for inferred fact");
    }
    d.validate();
    return d;
  }

  at.fail("unknown task '" + task + "'");
}

}  // namespace grokkit::datagen
