#pragma once

#include <map>
#include <string>
#include <vector>

#include "ilnet/rng.hpp"
#include "ilnet/tensor.hpp"

namespace ilnet {

// Named parameter map with deterministic (lexicographic) iteration order.
// Trainable entries receive gradients; buffer entries (running statistics)
// are carried for checkpointing but excluded from the parameter count.
class ParamStore {
 public:
  struct Entry {
    Tensor tensor;
    bool trainable = true;
  };

  Tensor& add(const std::string& name, Tensor t, bool trainable = true);
  Tensor& buffer(const std::string& name, Tensor t) { return add(name, std::move(t), false); }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  // sum of product(shape) over trainable entries
  int64_t param_count() const;
  // every entry, buffers included
  int64_t total_count() const;

  void zero_grads();

  // snapshot/restore of raw values (used by finite-difference checking to
  // undo running-stat updates)
  std::map<std::string, std::vector<float>> snapshot_values() const;
  void restore_values(const std::map<std::string, std::vector<float>>& snap);

 private:
  std::map<std::string, Entry> entries_;
};

// Kaiming-style fan-in scaled uniform init for convolution weights.
Tensor conv_weight_init(Shape shape, RandomSource& rng);

// Binary checkpoint: magic "ILNET1", then per entry (name-ordered):
// u32 name length, name bytes, u32 rank, u32 dims, little-endian f32 payload.
void save_checkpoint(const ParamStore& store, const std::string& path);

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

// Copies payloads into an existing store; names and shapes must match the
// store exactly (missing or extra entries are errors).
void load_checkpoint_into(ParamStore& store, const std::string& path);

}  // namespace ilnet
