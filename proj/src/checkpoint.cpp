#include "lord/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lord/errors.hpp"

namespace lord {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes little-endian host");

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
    if (name.empty() || name.find(' ') != std::string::npos) {
        throw ContractError("ParameterStore: invalid name '" + name + "'");
    }
    auto [it, inserted] = map_.emplace(name, std::move(value));
    if (!inserted) throw ContractError("ParameterStore: duplicate name '" + name + "'");
    order_.push_back(name);
    return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("ParameterStore: missing '" + name + "'");
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ContractError("ParameterStore: missing '" + name + "'");
    return it->second;
}

long ParameterStore::total_size() const {
    long n = 0;
    for (const auto& name : order_) n += map_.at(name).size();
    return n;
}

long ParameterStore::total_size_with_prefix(const std::string& prefix) const {
    long n = 0;
    for (const auto& name : order_) {
        if (name.rfind(prefix, 0) == 0) n += map_.at(name).size();
    }
    return n;
}

bool ParameterStore::same_values(const ParameterStore& other) const {
    if (order_ != other.order_) return false;
    for (const auto& name : order_) {
        const Tensor& a = map_.at(name);
        const Tensor& b = other.map_.at(name);
        if (!(a == b)) return false;
    }
    return true;
}

bool TrainableMask::trainable(const std::string& name) const {
    auto it = flags.find(name);
    return it != flags.end() && it->second;
}

long TrainableMask::trainable_count(const ParameterStore& params) const {
    long n = 0;
    for (const auto& name : params.names()) {
        if (trainable(name)) n += params.get(name).size();
    }
    return n;
}

void TrainableMask::validate_partition(const ParameterStore& params) const {
    if (flags.size() != params.count()) {
        throw ContractError("TrainableMask: flag count " + std::to_string(flags.size()) +
                            " != parameter count " + std::to_string(params.count()));
    }
    for (const auto& name : params.names()) {
        if (flags.find(name) == flags.end()) throw ContractError("TrainableMask: no flag for '" + name + "'");
    }
}

void save_checkpoint(const ParameterStore& params, const std::string& path, const std::string& meta,
                     const std::string& prefix_filter) {
    std::vector<std::string> selected;
    for (const auto& name : params.names()) {
        if (prefix_filter.empty() || name.rfind(prefix_filter, 0) == 0) selected.push_back(name);
    }
    std::ostringstream header;
    header << "LORD-CKPT v1\n";
    header << "meta " << (meta.empty() ? "-" : meta) << "\n";
    header << "tensors " << selected.size() << "\n";
    long offset = 0;  // in doubles, from payload start
    for (const auto& name : selected) {
        const Tensor& t = params.get(name);
        header << name << " " << t.ndim();
        for (int d : t.shape()) header << " " << d;
        header << " " << offset << "\n";
        offset += t.size();
    }
    header << "END\n";

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    const std::string h = header.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& name : selected) {
        const Tensor& t = params.get(name);
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw DataError("write failure: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "LORD-CKPT v1") {
        throw DataError("bad checkpoint magic in " + path);
    }
    CheckpointData ck;
    if (!std::getline(in, line) || line.rfind("meta ", 0) != 0) throw DataError("bad checkpoint meta in " + path);
    ck.meta = line.substr(5);
    if (!std::getline(in, line) || line.rfind("tensors ", 0) != 0) throw DataError("bad tensor count in " + path);
    const long n = std::stol(line.substr(8));
    struct Entry {
        std::string name;
        std::vector<int> shape;
        long offset;
    };
    std::vector<Entry> entries;
    for (long i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw DataError("truncated checkpoint header in " + path);
        std::istringstream ls(line);
        Entry e;
        int ndim = 0;
        ls >> e.name >> ndim;
        e.shape.resize(static_cast<std::size_t>(ndim));
        for (int d = 0; d < ndim; ++d) ls >> e.shape[static_cast<std::size_t>(d)];
        ls >> e.offset;
        if (!ls) throw DataError("bad checkpoint entry '" + line + "' in " + path);
        entries.push_back(std::move(e));
    }
    if (!std::getline(in, line) || line != "END") throw DataError("missing END in " + path);
    const std::streampos payload = in.tellg();
    for (const auto& e : entries) {
        Tensor t(e.shape);
        in.seekg(payload + static_cast<std::streamoff>(e.offset * static_cast<long>(sizeof(double))));
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw DataError("truncated payload for '" + e.name + "' in " + path);
        ck.params.add(e.name, std::move(t));
    }
    return ck;
}

void load_checkpoint_into(ParameterStore& params, const std::string& path, bool allow_extra) {
    CheckpointData ck = load_checkpoint(path);
    for (const auto& name : ck.params.names()) {
        if (!params.has(name)) {
            if (allow_extra) continue;
            throw DataError("checkpoint tensor '" + name + "' not present in model (" + path + ")");
        }
        Tensor& dst = params.get(name);
        const Tensor& src = ck.params.get(name);
        if (!dst.same_shape(src)) {
            throw DataError("shape mismatch for '" + name + "': model " + shape_str(dst.shape()) +
                            " vs checkpoint " + shape_str(src.shape()));
        }
        dst = src;
    }
}

}  // namespace lord
