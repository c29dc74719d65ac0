#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "lord/tensor.hpp"

namespace lord {

// Handle to a node on a Tape. Only meaningful together with the tape that
// produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Tensor-valued nodes. Operations append nodes in
// topological order, so the backward pass is a single reverse sweep.
// Single-threaded by design; values are immutable once recorded.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. Named leaves are parameters: backward() reports their gradients.
    Var constant(Tensor v);
    Var leaf(Tensor v, std::string name = {});

    // Named-leaf cache: creates the leaf on first use and reuses it for the
    // rest of the tape's life, so every sample in a batch accumulates onto the
    // same parameter node.
    Var named_leaf(const std::string& name, const Tensor& value);

    // Elementwise, same shape unless noted.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var add_const(Var a, double c);
    Var scale_const(Var a, double c);
    Var neg(Var a) { return scale_const(a, -1.0); }
    Var scale(Var a, Var s);  // s is a scalar node
    Var tanh_(Var a);
    Var relu(Var a);
    Var softplus(Var a);
    Var exp_(Var a);
    Var log_(Var a);
    Var sqrt_(Var a);
    Var abs_(Var a);
    Var square(Var a);
    Var inv(Var a);
    Var sign(Var a);      // derivative treated as zero everywhere
    Var step_pos(Var a);  // 1 where a > 0, else 0; derivative zero
    Var max_const(Var a, double c);

    // Linear algebra (2-d matrices, 1-d vectors).
    Var matmul(Var a, Var b);
    Var matvec(Var w, Var x);
    Var dot(Var a, Var b);

    // Reductions and shaping.
    Var sum(Var a);
    Var mean(Var a);
    Var rowwise_sum(Var a);
    Var slice(Var a, int start, int len);          // 1-d
    Var slice_rows(Var a, int start, int nrows);   // 2-d
    Var row(Var a, int r);                         // 2-d -> 1-d
    Var at(Var a, int i);                          // 1-d -> scalar
    Var concat(const std::vector<Var>& parts);     // 1-d
    Var concat_rows(const std::vector<Var>& parts);// 2-d, equal column counts
    Var reshape(Var a, std::vector<int> shape);
    Var mul_rows(Var m, Var v);                    // row i of m scaled by v[i]
    Var stack(const std::vector<Var>& scalars);    // k scalar nodes -> 1-d

    Var softmax(Var a);      // 1-d, max-subtracted
    Var log_softmax(Var a);  // 1-d

    // Inverted dropout: keep probability 1-p, kept entries scaled by 1/(1-p).
    // Identity when training is false or p == 0. Mask is a pure function of
    // the seed. Requires p in [0, 1).
    Var dropout(Var a, double p, std::uint64_t seed, bool training);

    const Tensor& value(Var v) const;

    // Gradient of the last backward() root w.r.t. any node. Zero tensor if the
    // node was not reached.
    Tensor grad(Var v) const;

    // Reverse sweep from a scalar root. Returns gradients for every named leaf.
    std::map<std::string, Tensor> backward(Var root);

    std::size_t node_count() const { return nodes_.size(); }
    void clear();

private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched by backward
        bool needs_grad = false;
        std::string name;
        std::function<void(Tape&)> back;  // null for leaves and constants
    };

    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> leaf_cache_;

    Var push(Tensor value, bool needs_grad, std::function<void(Tape&)> back);
    Node& node(Var v);
    const Node& node(Var v) const;
    bool any_needs_grad(const std::vector<Var>& vs) const;

    // Gradient buffer of a node, allocated on first use.
    Tensor& grad_buf(int id);
    const Tensor& grad_of(int id) const;

    void check_same_shape(Var a, Var b, const char* op) const;
};

}  // namespace lord
