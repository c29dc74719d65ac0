#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lord/tensor.hpp"

namespace lord {

// Named parameter tensors with deterministic (insertion) ordering. Holds the
// base network and any adapters; adapter names carry the "adapter/" prefix so
// the two groups are separable on disk.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor value);
    bool has(const std::string& name) const { return map_.count(name) > 0; }
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t count() const { return order_.size(); }

    long total_size() const;
    long total_size_with_prefix(const std::string& prefix) const;

    bool same_values(const ParameterStore& other) const;  // bitwise, same names

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> map_;
};

// Per-parameter trainable flags. Valid masks carry exactly one flag for every
// parameter in the store.
struct TrainableMask {
    std::map<std::string, bool> flags;

    bool trainable(const std::string& name) const;
    long trainable_count(const ParameterStore& params) const;  // in scalars
    void validate_partition(const ParameterStore& params) const;
};

// Checkpoint file: text header listing (name, shape, offset) per tensor,
// then raw little-endian 64-bit floats. `meta` is a free-form single line
// (config hash, seed) embedded in the header. An optional prefix filter
// restricts which tensors are written (adapter-only files).
void save_checkpoint(const ParameterStore& params, const std::string& path, const std::string& meta,
                     const std::string& prefix_filter = {});

struct CheckpointData {
    ParameterStore params;
    std::string meta;
};

CheckpointData load_checkpoint(const std::string& path);

// Loads values into existing entries; shapes must match exactly. Names not in
// the file are left untouched; names in the file but not the store are an
// error unless allow_extra.
void load_checkpoint_into(ParameterStore& params, const std::string& path, bool allow_extra = false);

}  // namespace lord
