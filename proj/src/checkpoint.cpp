#include "grokkit/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace grokkit::checkpoint {
namespace {

constexpr char kMagic[4] = {'G', 'K', 'C', 'K'};
constexpr std::uint32_t kSchema = 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void write_i64(std::ostream& os, std::int64_t v) { os.write(reinterpret_cast<char*>(&v), 8); }
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
std::int64_t read_i64(std::istream& is) {
  std::int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
std::string read_str(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

void write_tensor(std::ostream& os, const std::string& name, const float* data, std::int64_t rows,
                  std::int64_t cols) {
  write_str(os, name);
  write_i64(os, rows);
  write_i64(os, cols);
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(rows * cols * 4));
}

void read_tensor_into(std::istream& is, const std::string& want_name, float* data,
                      std::int64_t rows, std::int64_t cols, const std::filesystem::path& path) {
  const std::string name = read_str(is);
  if (name != want_name)
    throw DataError(path.string() + ": expected tensor '" + want_name + "', found '" + name + "'");
  const std::int64_t r = read_i64(is), c = read_i64(is);
  if (r != rows || c != cols)
    throw DataError(path.string() + ": tensor '" + name + "' has unexpected shape");
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(rows * cols * 4));
  if (!is) throw DataError(path.string() + ": truncated tensor payload");
}

}  // namespace

void save(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  write_u32(os, kSchema);
  write_str(os, c.weights.cfg.to_text());
  write_i64(os, c.step);
  write_i64(os, c.epoch);
  write_i64(os, c.batch_index);

  auto tensors = const_cast<model::Weights<float>&>(c.weights).named_tensors();
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (auto& t : tensors) {
    const std::int64_t rows = t.mat ? t.mat->rows() : 1;
    const std::int64_t cols = t.mat ? t.mat->cols() : t.vec->size();
    write_tensor(os, t.name, t.data(), rows, cols);
  }
  for (std::size_t i = 0; i < tensors.size(); ++i)
    write_tensor(os, "adam.m." + tensors[i].name, c.adam.m[i].data(), 1, c.adam.m[i].size());
  for (std::size_t i = 0; i < tensors.size(); ++i)
    write_tensor(os, "adam.v." + tensors[i].name, c.adam.v[i].data(), 1, c.adam.v[i].size());
  if (!os) throw DataError("checkpoint write failed: " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError(path.string() + ": not a checkpoint file");
  if (read_u32(is) != kSchema) throw DataError(path.string() + ": unsupported schema version");

  Checkpoint c;
  const model::ModelConfig cfg = model::ModelConfig::from_text(read_str(is));
  c.step = read_i64(is);
  c.epoch = read_i64(is);
  c.batch_index = read_i64(is);

  c.weights = model::init_model<float>(cfg, 0);
  c.adam = optim::AdamState<float>::zero_like(c.weights);
  c.adam.step = c.step;  // one optimizer step per training step
  auto tensors = c.weights.named_tensors();
  const std::uint32_t n = read_u32(is);
  if (n != tensors.size()) throw DataError(path.string() + ": tensor count mismatch");
  for (auto& t : tensors) {
    const std::int64_t rows = t.mat ? t.mat->rows() : 1;
    const std::int64_t cols = t.mat ? t.mat->cols() : t.vec->size();
    read_tensor_into(is, t.name, t.data(), rows, cols, path);
  }
  for (std::size_t i = 0; i < tensors.size(); ++i)
    read_tensor_into(is, "adam.m." + tensors[i].name, c.adam.m[i].data(), 1, c.adam.m[i].size(),
                     path);
  for (std::size_t i = 0; i < tensors.size(); ++i)
    read_tensor_into(is, "adam.v." + tensors[i].name, c.adam.v[i].data(), 1, c.adam.v[i].size(),
                     path);
  return c;
}

model::Weights<float> load_weights(const std::filesystem::path& path) { return load(path).weights; }

}  // namespace grokkit::checkpoint
