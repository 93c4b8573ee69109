#include "ilnet/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace ilnet {

Tensor& ParamStore::add(const std::string& name, Tensor t, bool trainable) {
  if (entries_.count(name)) throw TensorError("ParamStore: duplicate name '" + name + "'");
  t.set_requires_grad(trainable);
  auto [it, ok] = entries_.emplace(name, Entry{std::move(t), trainable});
  (void)ok;
  return it->second.tensor;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw TensorError("ParamStore: no entry '" + name + "'");
  return it->second.tensor;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw TensorError("ParamStore: no entry '" + name + "'");
  return it->second.tensor;
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const auto& [name, e] : entries_) {
    if (e.trainable) n += e.tensor.numel();
  }
  return n;
}

int64_t ParamStore::total_count() const {
  int64_t n = 0;
  for (const auto& [name, e] : entries_) n += e.tensor.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, e] : entries_) e.tensor.zero_grad();
}

std::map<std::string, std::vector<float>> ParamStore::snapshot_values() const {
  std::map<std::string, std::vector<float>> snap;
  for (const auto& [name, e] : entries_) {
    snap.emplace(name, std::vector<float>(e.tensor.values().begin(), e.tensor.values().end()));
  }
  return snap;
}

void ParamStore::restore_values(const std::map<std::string, std::vector<float>>& snap) {
  for (auto& [name, e] : entries_) {
    auto it = snap.find(name);
    if (it == snap.end()) throw TensorError("restore_values: missing snapshot for '" + name + "'");
    auto dst = e.tensor.mutable_values();
    std::copy(it->second.begin(), it->second.end(), dst.begin());
  }
}

Tensor conv_weight_init(Shape shape, RandomSource& rng) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v));
}

namespace {

constexpr char kMagic[6] = {'I', 'L', 'N', 'E', 'T', '1'};

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32_le(std::ostream& os, const float* p, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
  } else {
    for (size_t i = 0; i < n; ++i) {
      uint32_t v;
      std::memcpy(&v, p + i, 4);
      write_u32(os, v);
    }
  }
}

void read_f32_le(std::istream& is, float* p, size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4));
  } else {
    for (size_t i = 0; i < n; ++i) {
      uint32_t v = read_u32(is);
      std::memcpy(p + i, &v, 4);
    }
  }
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TensorError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  for (const auto& [name, e] : store.entries()) {  // std::map: ordered by name
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(e.tensor.rank()));
    for (int i = 0; i < e.tensor.rank(); ++i) write_u32(os, static_cast<uint32_t>(e.tensor.dim(i)));
    write_f32_le(os, e.tensor.values().data(), e.tensor.values().size());
  }
  if (!os) throw TensorError("checkpoint write failed: " + path);
}

std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("cannot open checkpoint: " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kMagic, 6) != 0) {
    throw TensorError("bad checkpoint magic in " + path);
  }
  std::vector<CheckpointEntry> entries;
  for (;;) {
    uint32_t name_len = read_u32(is);
    if (is.eof() || !is) break;
    CheckpointEntry e;
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    uint32_t rank = read_u32(is);
    if (rank > 8) throw TensorError("implausible tensor rank in checkpoint: " + std::to_string(rank));
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint32_t d = read_u32(is);
      e.shape.push_back(static_cast<int>(d));
      count *= d;
    }
    e.values.resize(static_cast<size_t>(count));
    read_f32_le(is, e.values.data(), e.values.size());
    if (!is) throw TensorError("truncated checkpoint: " + path);
    entries.push_back(std::move(e));
  }
  return entries;
}

void load_checkpoint_into(ParamStore& store, const std::string& path) {
  auto entries = load_checkpoint(path);
  size_t applied = 0;
  for (auto& e : entries) {
    if (!store.contains(e.name)) {
      throw TensorError("checkpoint entry '" + e.name + "' has no matching parameter");
    }
    Tensor& t = store.at(e.name);
    if (t.shape() != e.shape) {
      throw TensorError("checkpoint entry '" + e.name + "' shape " + shape_str(e.shape) +
                        " does not match parameter shape " + shape_str(t.shape()));
    }
    auto dst = t.mutable_values();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
    ++applied;
  }
  if (applied != store.entries().size()) {
    throw TensorError("checkpoint is missing " +
                      std::to_string(store.entries().size() - applied) + " parameters");
  }
}

}  // namespace ilnet
