#include "lord/tape.hpp"

#include <algorithm>
#include <cmath>

#include "lord/rng.hpp"

namespace lord {

int shape_size(const std::vector<int>& shape) {
    int n = 1;
    for (int d : shape) {
        if (d <= 0) throw ContractError("shape_size: non-positive dimension");
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = needs_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw ContractError("Tape: invalid Var");
    return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) throw ContractError("Tape: invalid Var");
    return nodes_[static_cast<std::size_t>(v.id)];
}

bool Tape::any_needs_grad(const std::vector<Var>& vs) const {
    for (Var v : vs) {
        if (node(v).needs_grad) return true;
    }
    return false;
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

const Tensor& Tape::grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

void Tape::check_same_shape(Var a, Var b, const char* op) const {
    if (!node(a).value.same_shape(node(b).value)) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(node(a).value.shape()) + " vs " +
                            shape_str(node(b).value.shape()));
    }
}

Var Tape::constant(Tensor v) { return push(std::move(v), false, nullptr); }

Var Tape::leaf(Tensor v, std::string name) {
    Var out = push(std::move(v), true, nullptr);
    node(out).name = std::move(name);
    return out;
}

Var Tape::named_leaf(const std::string& name, const Tensor& value) {
    auto it = leaf_cache_.find(name);
    if (it != leaf_cache_.end()) return Var{it->second};
    Var v = leaf(value, name);
    leaf_cache_.emplace(name, v.id);
    return v;
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.value.shape());
    return n.grad;
}

void Tape::clear() {
    nodes_.clear();
    leaf_cache_.clear();
}

// ---------------------------------------------------------------------------
// elementwise

Var Tape::add(Var a, Var b) {
    check_same_shape(a, b, "add");
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    bool ng = any_needs_grad({a, b});
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id, bid = b.id;
        node(o).back = [oid, aid, bid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            if (t.nodes_[aid].needs_grad) {
                Tensor& ga = t.grad_buf(aid);
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (t.nodes_[bid].needs_grad) {
                Tensor& gb = t.grad_buf(bid);
                for (int i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        };
    }
    return o;
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    bool ng = any_needs_grad({a, b});
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id, bid = b.id;
        node(o).back = [oid, aid, bid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            if (t.nodes_[aid].needs_grad) {
                Tensor& ga = t.grad_buf(aid);
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (t.nodes_[bid].needs_grad) {
                Tensor& gb = t.grad_buf(bid);
                for (int i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        };
    }
    return o;
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    bool ng = any_needs_grad({a, b});
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id, bid = b.id;
        node(o).back = [oid, aid, bid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& va = t.nodes_[aid].value;
            const Tensor& vb = t.nodes_[bid].value;
            if (t.nodes_[aid].needs_grad) {
                Tensor& ga = t.grad_buf(aid);
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
            }
            if (t.nodes_[bid].needs_grad) {
                Tensor& gb = t.grad_buf(bid);
                for (int i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
            }
        };
    }
    return o;
}

Var Tape::div(Var a, Var b) {
    check_same_shape(a, b, "div");
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = va[i] / vb[i];
    bool ng = any_needs_grad({a, b});
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id, bid = b.id;
        node(o).back = [oid, aid, bid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& va = t.nodes_[aid].value;
            const Tensor& vb = t.nodes_[bid].value;
            if (t.nodes_[aid].needs_grad) {
                Tensor& ga = t.grad_buf(aid);
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[i];
            }
            if (t.nodes_[bid].needs_grad) {
                Tensor& gb = t.grad_buf(bid);
                for (int i = 0; i < g.size(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
            }
        };
    }
    return o;
}

Var Tape::add_const(Var a, double c) {
    const Tensor& va = node(a).value;
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = va[i] + c;
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return o;
}

Var Tape::scale_const(Var a, double c) {
    const Tensor& va = node(a).value;
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = va[i] * c;
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid, c](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
        };
    }
    return o;
}

Var Tape::scale(Var a, Var s) {
    if (node(s).value.size() != 1) throw ContractError("scale: scale factor must be scalar");
    const Tensor& va = node(a).value;
    const double sv = node(s).value[0];
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = va[i] * sv;
    bool ng = any_needs_grad({a, s});
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id, sid = s.id;
        node(o).back = [oid, aid, sid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& va = t.nodes_[aid].value;
            const double sv = t.nodes_[sid].value[0];
            if (t.nodes_[aid].needs_grad) {
                Tensor& ga = t.grad_buf(aid);
                for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * sv;
            }
            if (t.nodes_[sid].needs_grad) {
                Tensor& gs = t.grad_buf(sid);
                double acc = 0.0;
                for (int i = 0; i < g.size(); ++i) acc += g[i] * va[i];
                gs[0] += acc;
            }
        };
    }
    return o;
}

namespace {

double stable_softplus(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double z = std::exp(-x);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
}

}  // namespace

// Unary elementwise with a value function and a local-derivative function of
// (input value, output value).
#define LORD_UNARY_OP(NAME, FWD, BWD)                                              \
    Var Tape::NAME(Var a) {                                                        \
        const Tensor& va = node(a).value;                                          \
        Tensor out(va.shape());                                                    \
        for (int i = 0; i < out.size(); ++i) {                                     \
            const double x = va[i];                                                \
            out[i] = (FWD);                                                        \
        }                                                                          \
        bool ng = node(a).needs_grad;                                              \
        Var o = push(std::move(out), ng, nullptr);                                 \
        if (ng) {                                                                  \
            int oid = o.id, aid = a.id;                                            \
            node(o).back = [oid, aid](Tape& t) {                                   \
                const Tensor& g = t.grad_of(oid);                                  \
                const Tensor& va = t.nodes_[aid].value;                            \
                const Tensor& vo = t.nodes_[oid].value;                            \
                Tensor& ga = t.grad_buf(aid);                                      \
                for (int i = 0; i < g.size(); ++i) {                               \
                    const double x = va[i];                                        \
                    const double y = vo[i];                                        \
                    (void)x;                                                       \
                    (void)y;                                                       \
                    ga[i] += g[i] * (BWD);                                         \
                }                                                                  \
            };                                                                     \
        }                                                                          \
        return o;                                                                  \
    }

LORD_UNARY_OP(tanh_, std::tanh(x), (1.0 - y * y))
LORD_UNARY_OP(relu, (x > 0.0 ? x : 0.0), (x > 0.0 ? 1.0 : 0.0))
LORD_UNARY_OP(softplus, stable_softplus(x), stable_sigmoid(x))
LORD_UNARY_OP(exp_, std::exp(x), y)
LORD_UNARY_OP(log_, std::log(x), 1.0 / x)
LORD_UNARY_OP(sqrt_, std::sqrt(x), 0.5 / y)
LORD_UNARY_OP(abs_, std::fabs(x), (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)))
LORD_UNARY_OP(square, x* x, 2.0 * x)
LORD_UNARY_OP(inv, 1.0 / x, -y * y)
LORD_UNARY_OP(sign, (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)), 0.0)
LORD_UNARY_OP(step_pos, (x > 0.0 ? 1.0 : 0.0), 0.0)

#undef LORD_UNARY_OP

Var Tape::max_const(Var a, double c) {
    const Tensor& va = node(a).value;
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = std::max(va[i], c);
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid, c](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& va = t.nodes_[aid].value;
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < g.size(); ++i) {
                if (va[i] > c) ga[i] += g[i];
            }
        };
    }
    return o;
}

// ---------------------------------------------------------------------------
// linear algebra

Var Tape::matmul(Var a, Var b) {
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    if (va.ndim() != 2 || vb.ndim() != 2 || va.cols() != vb.rows()) {
        throw ContractError("matmul: incompatible shapes " + shape_str(va.shape()) + " x " + shape_str(vb.shape()));
    }
    const int m = va.rows(), k = va.cols(), n = vb.cols();
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = va.at2(i, p);
            for (int j = 0; j < n; ++j) out.at2(i, j) += aip * vb.at2(p, j);
        }
    }
    bool ng = any_needs_grad({a, b});
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id, bid = b.id;
        node(o).back = [oid, aid, bid, m, k, n](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& va = t.nodes_[aid].value;
            const Tensor& vb = t.nodes_[bid].value;
            if (t.nodes_[aid].needs_grad) {
                Tensor& ga = t.grad_buf(aid);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double gij = g.at2(i, j);
                        for (int p = 0; p < k; ++p) ga.at2(i, p) += gij * vb.at2(p, j);
                    }
            }
            if (t.nodes_[bid].needs_grad) {
                Tensor& gb = t.grad_buf(bid);
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        const double aip = va.at2(i, p);
                        for (int j = 0; j < n; ++j) gb.at2(p, j) += aip * g.at2(i, j);
                    }
            }
        };
    }
    return o;
}

Var Tape::matvec(Var w, Var x) {
    const Tensor& vw = node(w).value;
    const Tensor& vx = node(x).value;
    if (vw.ndim() != 2 || vx.ndim() != 1 || vw.cols() != vx.size()) {
        throw ContractError("matvec: incompatible shapes " + shape_str(vw.shape()) + " x " + shape_str(vx.shape()));
    }
    const int m = vw.rows(), n = vw.cols();
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* wr = vw.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) acc += wr[j] * vx[j];
        out[i] = acc;
    }
    bool ng = any_needs_grad({w, x});
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, wid = w.id, xid = x.id;
        node(o).back = [oid, wid, xid, m, n](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& vw = t.nodes_[wid].value;
            const Tensor& vx = t.nodes_[xid].value;
            if (t.nodes_[wid].needs_grad) {
                Tensor& gw = t.grad_buf(wid);
                for (int i = 0; i < m; ++i) {
                    const double gi = g[i];
                    double* gwr = gw.data() + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) gwr[j] += gi * vx[j];
                }
            }
            if (t.nodes_[xid].needs_grad) {
                Tensor& gx = t.grad_buf(xid);
                for (int i = 0; i < m; ++i) {
                    const double gi = g[i];
                    const double* wr = vw.data() + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) gx[j] += gi * wr[j];
                }
            }
        };
    }
    return o;
}

Var Tape::dot(Var a, Var b) {
    check_same_shape(a, b, "dot");
    const Tensor& va = node(a).value;
    const Tensor& vb = node(b).value;
    double acc = 0.0;
    for (int i = 0; i < va.size(); ++i) acc += va[i] * vb[i];
    bool ng = any_needs_grad({a, b});
    Var o = push(Tensor::scalar(acc), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id, bid = b.id;
        node(o).back = [oid, aid, bid](Tape& t) {
            const double g = t.grad_of(oid)[0];
            const Tensor& va = t.nodes_[aid].value;
            const Tensor& vb = t.nodes_[bid].value;
            if (t.nodes_[aid].needs_grad) {
                Tensor& ga = t.grad_buf(aid);
                for (int i = 0; i < va.size(); ++i) ga[i] += g * vb[i];
            }
            if (t.nodes_[bid].needs_grad) {
                Tensor& gb = t.grad_buf(bid);
                for (int i = 0; i < vb.size(); ++i) gb[i] += g * va[i];
            }
        };
    }
    return o;
}

// ---------------------------------------------------------------------------
// reductions and shaping

Var Tape::sum(Var a) {
    const Tensor& va = node(a).value;
    double acc = 0.0;
    for (int i = 0; i < va.size(); ++i) acc += va[i];
    bool ng = node(a).needs_grad;
    Var o = push(Tensor::scalar(acc), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid](Tape& t) {
            const double g = t.grad_of(oid)[0];
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < ga.size(); ++i) ga[i] += g;
        };
    }
    return o;
}

Var Tape::mean(Var a) {
    const int n = node(a).value.size();
    return scale_const(sum(a), 1.0 / static_cast<double>(n));
}

Var Tape::rowwise_sum(Var a) {
    const Tensor& va = node(a).value;
    const int r = va.rows(), c = va.cols();
    Tensor out({r});
    for (int i = 0; i < r; ++i) {
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += va.at2(i, j);
        out[i] = acc;
    }
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid, r, c](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) ga.at2(i, j) += g[i];
        };
    }
    return o;
}

Var Tape::slice(Var a, int start, int len) {
    const Tensor& va = node(a).value;
    if (va.ndim() != 1 || start < 0 || len < 1 || start + len > va.size()) {
        throw ContractError("slice: bad range");
    }
    Tensor out({len});
    for (int i = 0; i < len; ++i) out[i] = va[start + i];
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid, start, len](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < len; ++i) ga[start + i] += g[i];
        };
    }
    return o;
}

Var Tape::slice_rows(Var a, int start, int nrows) {
    const Tensor& va = node(a).value;
    if (va.ndim() != 2 || start < 0 || nrows < 1 || start + nrows > va.rows()) {
        throw ContractError("slice_rows: bad range");
    }
    const int c = va.cols();
    Tensor out({nrows, c});
    for (int i = 0; i < nrows * c; ++i) out[i] = va[start * c + i];
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid, start, nrows, c](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < nrows * c; ++i) ga[start * c + i] += g[i];
        };
    }
    return o;
}

Var Tape::row(Var a, int r) { return reshape(slice_rows(a, r, 1), {node(a).value.cols()}); }

Var Tape::at(Var a, int i) { return slice(a, i, 1); }

Var Tape::concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat: empty");
    int total = 0;
    for (Var p : parts) {
        if (node(p).value.ndim() != 1) throw ContractError("concat: 1-d only");
        total += node(p).value.size();
    }
    Tensor out({total});
    int off = 0;
    for (Var p : parts) {
        const Tensor& vp = node(p).value;
        for (int i = 0; i < vp.size(); ++i) out[off + i] = vp[i];
        off += vp.size();
    }
    bool ng = any_needs_grad(parts);
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id;
        std::vector<int> ids;
        std::vector<int> sizes;
        for (Var p : parts) {
            ids.push_back(p.id);
            sizes.push_back(node(p).value.size());
        }
        node(o).back = [oid, ids, sizes](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            int off = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (t.nodes_[ids[k]].needs_grad) {
                    Tensor& gp = t.grad_buf(ids[k]);
                    for (int i = 0; i < sizes[k]; ++i) gp[i] += g[off + i];
                }
                off += sizes[k];
            }
        };
    }
    return o;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: empty");
    const int c = node(parts[0]).value.cols();
    int total = 0;
    for (Var p : parts) {
        if (node(p).value.ndim() != 2 || node(p).value.cols() != c) {
            throw ContractError("concat_rows: column mismatch");
        }
        total += node(p).value.rows();
    }
    Tensor out({total, c});
    int off = 0;
    for (Var p : parts) {
        const Tensor& vp = node(p).value;
        for (int i = 0; i < vp.size(); ++i) out[off + i] = vp[i];
        off += vp.size();
    }
    bool ng = any_needs_grad(parts);
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id;
        std::vector<int> ids, sizes;
        for (Var p : parts) {
            ids.push_back(p.id);
            sizes.push_back(node(p).value.size());
        }
        node(o).back = [oid, ids, sizes](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            int off = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (t.nodes_[ids[k]].needs_grad) {
                    Tensor& gp = t.grad_buf(ids[k]);
                    for (int i = 0; i < sizes[k]; ++i) gp[i] += g[off + i];
                }
                off += sizes[k];
            }
        };
    }
    return o;
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    const Tensor& va = node(a).value;
    if (shape_size(shape) != va.size()) throw ContractError("reshape: size mismatch");
    Tensor out(std::move(shape), va.vec());
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return o;
}

Var Tape::mul_rows(Var m, Var v) {
    const Tensor& vm = node(m).value;
    const Tensor& vv = node(v).value;
    if (vm.ndim() != 2 || vv.ndim() != 1 || vm.rows() != vv.size()) {
        throw ContractError("mul_rows: incompatible shapes");
    }
    const int r = vm.rows(), c = vm.cols();
    Tensor out({r, c});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at2(i, j) = vm.at2(i, j) * vv[i];
    bool ng = any_needs_grad({m, v});
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, mid = m.id, vid = v.id;
        node(o).back = [oid, mid, vid, r, c](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& vm = t.nodes_[mid].value;
            const Tensor& vv = t.nodes_[vid].value;
            if (t.nodes_[mid].needs_grad) {
                Tensor& gm = t.grad_buf(mid);
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) gm.at2(i, j) += g.at2(i, j) * vv[i];
            }
            if (t.nodes_[vid].needs_grad) {
                Tensor& gv = t.grad_buf(vid);
                for (int i = 0; i < r; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < c; ++j) acc += g.at2(i, j) * vm.at2(i, j);
                    gv[i] += acc;
                }
            }
        };
    }
    return o;
}

Var Tape::stack(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw ContractError("stack: empty");
    Tensor out({static_cast<int>(scalars.size())});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (node(scalars[i]).value.size() != 1) throw ContractError("stack: scalar nodes only");
        out[static_cast<int>(i)] = node(scalars[i]).value[0];
    }
    bool ng = any_needs_grad(scalars);
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id;
        std::vector<int> ids;
        for (Var s : scalars) ids.push_back(s.id);
        node(o).back = [oid, ids](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (t.nodes_[ids[i]].needs_grad) t.grad_buf(ids[i])[0] += g[static_cast<int>(i)];
            }
        };
    }
    return o;
}

Var Tape::softmax(Var a) {
    const Tensor& va = node(a).value;
    if (va.ndim() != 1) throw ContractError("softmax: 1-d only");
    double mx = va[0];
    for (int i = 1; i < va.size(); ++i) mx = std::max(mx, va[i]);
    Tensor out(va.shape());
    double z = 0.0;
    for (int i = 0; i < va.size(); ++i) {
        out[i] = std::exp(va[i] - mx);
        z += out[i];
    }
    for (int i = 0; i < va.size(); ++i) out[i] /= z;
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& y = t.nodes_[oid].value;
            Tensor& ga = t.grad_buf(aid);
            double gy = 0.0;
            for (int i = 0; i < g.size(); ++i) gy += g[i] * y[i];
            for (int i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
        };
    }
    return o;
}

Var Tape::log_softmax(Var a) {
    const Tensor& va = node(a).value;
    if (va.ndim() != 1) throw ContractError("log_softmax: 1-d only");
    double mx = va[0];
    for (int i = 1; i < va.size(); ++i) mx = std::max(mx, va[i]);
    double z = 0.0;
    for (int i = 0; i < va.size(); ++i) z += std::exp(va[i] - mx);
    const double lse = mx + std::log(z);
    Tensor out(va.shape());
    for (int i = 0; i < va.size(); ++i) out[i] = va[i] - lse;
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            const Tensor& y = t.nodes_[oid].value;  // log-probs
            Tensor& ga = t.grad_buf(aid);
            double gsum = 0.0;
            for (int i = 0; i < g.size(); ++i) gsum += g[i];
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i] - std::exp(y[i]) * gsum;
        };
    }
    return o;
}

Var Tape::dropout(Var a, double p, std::uint64_t seed, bool training) {
    if (p >= 1.0 || p < 0.0) throw ContractError("dropout: rate must be in [0, 1)");
    if (!training || p == 0.0) return a;  // exact identity
    const Tensor& va = node(a).value;
    Rng rng(seed);
    Tensor mask(va.shape());
    const double keep_scale = 1.0 / (1.0 - p);
    for (int i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    Tensor out(va.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = va[i] * mask[i];
    bool ng = node(a).needs_grad;
    Var o = push(std::move(out), ng, nullptr);
    if (ng) {
        int oid = o.id, aid = a.id;
        node(o).back = [oid, aid, mask](Tape& t) {
            const Tensor& g = t.grad_of(oid);
            Tensor& ga = t.grad_buf(aid);
            for (int i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
        };
    }
    return o;
}

std::map<std::string, Tensor> Tape::backward(Var root) {
    Node& r = node(root);
    if (r.value.size() != 1) {
        throw ContractError("backward: root must be scalar, got shape " + shape_str(r.value.shape()));
    }
    // Reset gradients from any previous sweep.
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buf(root.id)[0] = 1.0;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.empty() || !n.back) continue;
        n.back(*this);
    }
    std::map<std::string, Tensor> grads;
    for (const Node& n : nodes_) {
        if (n.name.empty()) continue;
        grads[n.name] = n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
    }
    return grads;
}

}  // namespace lord
