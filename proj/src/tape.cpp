#include "zerocon/tape.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace zerocon {

using RMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MMap = Eigen::Map<RMat>;
using CMap = Eigen::Map<const RMat>;

static CMap cmap(const Tensor& t, int64_t r, int64_t c) { return CMap(t.ptr(), r, c); }
static MMap mmap(Tensor& t, int64_t r, int64_t c) { return MMap(t.ptr(), r, c); }

// ---------------------------------------------------------------------------
// node machinery
// ---------------------------------------------------------------------------

Tape::Id Tape::push(Tensor value, bool req, Back back) {
    if (nodes_.capacity() == 0) nodes_.reserve(1024);
    Node n;
    n.owned = std::move(value);
    n.req = req;
    if (req) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(Tensor v, bool requires_grad) { return push(std::move(v), requires_grad, nullptr); }

Tape::Id Tape::leaf_ref(const Tensor* v, bool requires_grad) {
    if (nodes_.capacity() == 0) nodes_.reserve(1024);
    Node n;
    n.external = v;
    n.req = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

const Tensor& Tape::val(Id id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
}

bool Tape::any_req(std::initializer_list<Id> ids) const {
    for (Id i : ids)
        if (i >= 0 && nodes_[i].req) return true;
    return false;
}

Tensor& Tape::grad_buf(Id id) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(val(id).shape);
    return n.grad;
}

void Tape::accumulate(Id id, const Tensor& g) {
    if (!nodes_[id].req) return;
    Tensor& buf = grad_buf(id);
    check_same_shape(buf, g, "gradient accumulate");
    for (int64_t i = 0; i < buf.numel(); ++i) buf.data[i] += g.data[i];
}

void Tape::accumulate_raw(Id id, const real* g, int64_t n) {
    if (!nodes_[id].req) return;
    Tensor& buf = grad_buf(id);
    if (buf.numel() != n) throw Error("gradient accumulate: numel mismatch");
    for (int64_t i = 0; i < n; ++i) buf.data[i] += g[i];
}

Tensor Tape::grad_of(Id id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.data.empty()) return Tensor::zeros(val(id).shape);
    return n.grad;
}

void Tape::backward(Id root) {
    if (val(root).numel() != 1) throw Error("backward: root must be a scalar");
    if (!nodes_[root].req) return;  // constant graph, nothing to do
    grad_buf(root).data[0] = 1;
    for (Id i = root; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.back || n.grad.data.empty()) continue;
        n.back(*this, n.grad);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tape::Id Tape::add(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "tape.add");
    Tensor out = Tensor::uninit(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] + vb.data[i];
    return push(std::move(out), any_req({a, b}), [a, b](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

Tape::Id Tape::sub(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "tape.sub");
    Tensor out = Tensor::uninit(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] - vb.data[i];
    return push(std::move(out), any_req({a, b}), [a, b](Tape& tp, const Tensor& g) {
        tp.accumulate(a, g);
        if (tp.nodes_[b].req) {
            Tensor& buf = tp.grad_buf(b);
            for (int64_t i = 0; i < buf.numel(); ++i) buf.data[i] -= g.data[i];
        }
    });
}

Tape::Id Tape::mul(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_same_shape(va, vb, "tape.mul");
    Tensor out = Tensor::uninit(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] * vb.data[i];
    return push(std::move(out), any_req({a, b}), [a, b](Tape& tp, const Tensor& g) {
        if (tp.nodes_[a].req) {
            const Tensor& vb = tp.val(b);
            Tensor& buf = tp.grad_buf(a);
            for (int64_t i = 0; i < buf.numel(); ++i) buf.data[i] += g.data[i] * vb.data[i];
        }
        if (tp.nodes_[b].req) {
            const Tensor& va = tp.val(a);
            Tensor& buf = tp.grad_buf(b);
            for (int64_t i = 0; i < buf.numel(); ++i) buf.data[i] += g.data[i] * va.data[i];
        }
    });
}

Tape::Id Tape::scale(Id a, real s) {
    const Tensor& va = val(a);
    Tensor out = Tensor::uninit(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = va.data[i] * s;
    return push(std::move(out), any_req({a}), [a, s](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[a].req) return;
        Tensor& buf = tp.grad_buf(a);
        for (int64_t i = 0; i < buf.numel(); ++i) buf.data[i] += s * g.data[i];
    });
}

Tape::Id Tape::add_scalar(Id a, real s) {
    Tensor out = val(a);
    for (auto& v : out.data) v += s;
    return push(std::move(out), any_req({a}), [a](Tape& tp, const Tensor& g) { tp.accumulate(a, g); });
}

Tape::Id Tape::pow_scalar(Id a, real p) {
    const Tensor& va = val(a);
    Tensor out = va;
    for (auto& v : out.data) v = std::pow(v, p);
    return push(std::move(out), any_req({a}), [a, p](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[a].req) return;
        const Tensor& va = tp.val(a);
        Tensor& buf = tp.grad_buf(a);
        for (int64_t i = 0; i < buf.numel(); ++i) {
            real x = va.data[i];
            if (x == 0) continue;  // subgradient 0 at the origin
            buf.data[i] += g.data[i] * p * std::pow(x, p - 1);
        }
    });
}

Tape::Id Tape::silu(Id a) {
    const Tensor& va = val(a);
    Tensor out = Tensor::uninit(va.shape);
    for (int64_t i = 0; i < out.numel(); ++i) {
        real x = va.data[i];
        out.data[i] = x / (real(1) + std::exp(-x));
    }
    return push(std::move(out), any_req({a}), [a](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[a].req) return;
        const Tensor& va = tp.val(a);
        Tensor& buf = tp.grad_buf(a);
        for (int64_t i = 0; i < buf.numel(); ++i) {
            real x = va.data[i];
            real s = real(1) / (real(1) + std::exp(-x));
            buf.data[i] += g.data[i] * s * (real(1) + x * (real(1) - s));
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tape::Id Tape::matmul(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_shape(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0),
                "matmul " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    int64_t n = va.dim(0), k = va.dim(1), m = vb.dim(1);
    Tensor out({n, m});
    mmap(out, n, m).noalias() = cmap(va, n, k) * cmap(vb, k, m);
    return push(std::move(out), any_req({a, b}), [a, b, n, k, m](Tape& tp, const Tensor& g) {
        CMap gm = cmap(g, n, m);
        if (tp.nodes_[a].req) mmap(tp.grad_buf(a), n, k).noalias() += gm * cmap(tp.val(b), k, m).transpose();
        if (tp.nodes_[b].req) mmap(tp.grad_buf(b), k, m).noalias() += cmap(tp.val(a), n, k).transpose() * gm;
    });
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_shape(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1),
                "matmul_nt " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    int64_t n = va.dim(0), k = va.dim(1), m = vb.dim(0);
    Tensor out({n, m});
    mmap(out, n, m).noalias() = cmap(va, n, k) * cmap(vb, m, k).transpose();
    return push(std::move(out), any_req({a, b}), [a, b, n, k, m](Tape& tp, const Tensor& g) {
        CMap gm = cmap(g, n, m);
        if (tp.nodes_[a].req) mmap(tp.grad_buf(a), n, k).noalias() += gm * cmap(tp.val(b), m, k);
        if (tp.nodes_[b].req) mmap(tp.grad_buf(b), m, k).noalias() += gm.transpose() * cmap(tp.val(a), n, k);
    });
}

Tape::Id Tape::bmm(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_shape(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(1),
                "bmm " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    int64_t bs = va.dim(0), n = va.dim(1), k = va.dim(2), m = vb.dim(2);
    Tensor out({bs, n, m});
    for (int64_t i = 0; i < bs; ++i)
        MMap(out.ptr() + i * n * m, n, m).noalias() =
            CMap(va.ptr() + i * n * k, n, k) * CMap(vb.ptr() + i * k * m, k, m);
    return push(std::move(out), any_req({a, b}), [a, b, bs, n, k, m](Tape& tp, const Tensor& g) {
        for (int64_t i = 0; i < bs; ++i) {
            CMap gm(g.ptr() + i * n * m, n, m);
            if (tp.nodes_[a].req)
                MMap(tp.grad_buf(a).ptr() + i * n * k, n, k).noalias() +=
                    gm * CMap(tp.val(b).ptr() + i * k * m, k, m).transpose();
            if (tp.nodes_[b].req)
                MMap(tp.grad_buf(b).ptr() + i * k * m, k, m).noalias() +=
                    CMap(tp.val(a).ptr() + i * n * k, n, k).transpose() * gm;
        }
    });
}

Tape::Id Tape::bmm_nt(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_shape(va.rank() == 3 && vb.rank() == 3 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2),
                "bmm_nt " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    int64_t bs = va.dim(0), n = va.dim(1), k = va.dim(2), m = vb.dim(1);
    Tensor out({bs, n, m});
    for (int64_t i = 0; i < bs; ++i)
        MMap(out.ptr() + i * n * m, n, m).noalias() =
            CMap(va.ptr() + i * n * k, n, k) * CMap(vb.ptr() + i * m * k, m, k).transpose();
    return push(std::move(out), any_req({a, b}), [a, b, bs, n, k, m](Tape& tp, const Tensor& g) {
        for (int64_t i = 0; i < bs; ++i) {
            CMap gm(g.ptr() + i * n * m, n, m);
            if (tp.nodes_[a].req)
                MMap(tp.grad_buf(a).ptr() + i * n * k, n, k).noalias() +=
                    gm * CMap(tp.val(b).ptr() + i * m * k, m, k);
            if (tp.nodes_[b].req)
                MMap(tp.grad_buf(b).ptr() + i * m * k, m, k).noalias() +=
                    gm.transpose() * CMap(tp.val(a).ptr() + i * n * k, n, k);
        }
    });
}

Tape::Id Tape::add_rowvec(Id x, Id b) {
    const Tensor& vx = val(x);
    const Tensor& vb = val(b);
    check_shape(vx.rank() == 2 && vb.rank() == 1 && vx.dim(1) == vb.dim(0), "add_rowvec");
    int64_t r = vx.dim(0), c = vx.dim(1);
    Tensor out = vx;
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.data[i * c + j] += vb.data[j];
    return push(std::move(out), any_req({x, b}), [x, b, r, c](Tape& tp, const Tensor& g) {
        tp.accumulate(x, g);
        if (tp.nodes_[b].req) {
            Tensor& buf = tp.grad_buf(b);
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) buf.data[j] += g.data[i * c + j];
        }
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tape::Id Tape::reshape(Id x, std::vector<int64_t> shape) {
    const Tensor& vx = val(x);
    if (numel_of(shape) != vx.numel())
        throw Error("reshape: numel mismatch " + shape_str(vx.shape) + " -> " + shape_str(shape));
    Tensor out = Tensor::from(std::move(shape), vx.data);
    return push(std::move(out), any_req({x}), [x](Tape& tp, const Tensor& g) {
        tp.accumulate_raw(x, g.ptr(), g.numel());
    });
}

Tape::Id Tape::transpose(Id x) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 2, "transpose expects 2-D");
    int64_t r = vx.dim(0), c = vx.dim(1);
    Tensor out({c, r});
    mmap(out, c, r) = cmap(vx, r, c).transpose();
    return push(std::move(out), any_req({x}), [x, r, c](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        mmap(tp.grad_buf(x), r, c) += cmap(g, c, r).transpose();
    });
}

Tape::Id Tape::chw_to_nc(Id x) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 4, "chw_to_nc expects (B,C,H,W)");
    int64_t b = vx.dim(0), c = vx.dim(1), n = vx.dim(2) * vx.dim(3);
    Tensor out({b, n, c});
    for (int64_t i = 0; i < b; ++i)
        MMap(out.ptr() + i * n * c, n, c) = CMap(vx.ptr() + i * c * n, c, n).transpose();
    return push(std::move(out), any_req({x}), [x, b, c, n](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        for (int64_t i = 0; i < b; ++i)
            MMap(buf.ptr() + i * c * n, c, n) += CMap(g.ptr() + i * n * c, n, c).transpose();
    });
}

Tape::Id Tape::nc_to_chw(Id x, int64_t h, int64_t w) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 3 && vx.dim(1) == h * w, "nc_to_chw expects (B,HW,C)");
    int64_t b = vx.dim(0), n = vx.dim(1), c = vx.dim(2);
    Tensor out({b, c, h, w});
    for (int64_t i = 0; i < b; ++i)
        MMap(out.ptr() + i * c * n, c, n) = CMap(vx.ptr() + i * n * c, n, c).transpose();
    return push(std::move(out), any_req({x}), [x, b, c, n](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        for (int64_t i = 0; i < b; ++i)
            MMap(buf.ptr() + i * n * c, n, c) += CMap(g.ptr() + i * c * n, c, n).transpose();
    });
}

Tape::Id Tape::split_heads(Id x, int heads) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 3 && vx.dim(2) % heads == 0, "split_heads");
    int64_t b = vx.dim(0), n = vx.dim(1), c = vx.dim(2), dh = c / heads;
    Tensor out({b * heads, n, dh});
    for (int64_t i = 0; i < b; ++i)
        for (int64_t hh = 0; hh < heads; ++hh)
            for (int64_t j = 0; j < n; ++j)
                for (int64_t d = 0; d < dh; ++d)
                    out.data[((i * heads + hh) * n + j) * dh + d] = vx.data[(i * n + j) * c + hh * dh + d];
    return push(std::move(out), any_req({x}), [x, b, n, c, dh, heads](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        for (int64_t i = 0; i < b; ++i)
            for (int64_t hh = 0; hh < heads; ++hh)
                for (int64_t j = 0; j < n; ++j)
                    for (int64_t d = 0; d < dh; ++d)
                        buf.data[(i * n + j) * c + hh * dh + d] += g.data[((i * heads + hh) * n + j) * dh + d];
    });
}

Tape::Id Tape::merge_heads(Id x, int heads) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 3 && vx.dim(0) % heads == 0, "merge_heads");
    int64_t b = vx.dim(0) / heads, n = vx.dim(1), dh = vx.dim(2), c = dh * heads;
    Tensor out({b, n, c});
    for (int64_t i = 0; i < b; ++i)
        for (int64_t hh = 0; hh < heads; ++hh)
            for (int64_t j = 0; j < n; ++j)
                for (int64_t d = 0; d < dh; ++d)
                    out.data[(i * n + j) * c + hh * dh + d] = vx.data[((i * heads + hh) * n + j) * dh + d];
    return push(std::move(out), any_req({x}), [x, b, n, c, dh, heads](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        for (int64_t i = 0; i < b; ++i)
            for (int64_t hh = 0; hh < heads; ++hh)
                for (int64_t j = 0; j < n; ++j)
                    for (int64_t d = 0; d < dh; ++d)
                        buf.data[((i * heads + hh) * n + j) * dh + d] += g.data[(i * n + j) * c + hh * dh + d];
    });
}

Tape::Id Tape::concat_ch(Id a, Id b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    check_shape(va.rank() == 4 && vb.rank() == 4 && va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2) &&
                    va.dim(3) == vb.dim(3),
                "concat_ch");
    int64_t bs = va.dim(0), c1 = va.dim(1), c2 = vb.dim(1), hw = va.dim(2) * va.dim(3);
    Tensor out({bs, c1 + c2, va.dim(2), va.dim(3)});
    for (int64_t i = 0; i < bs; ++i) {
        std::copy_n(va.ptr() + i * c1 * hw, c1 * hw, out.ptr() + i * (c1 + c2) * hw);
        std::copy_n(vb.ptr() + i * c2 * hw, c2 * hw, out.ptr() + i * (c1 + c2) * hw + c1 * hw);
    }
    return push(std::move(out), any_req({a, b}), [a, b, bs, c1, c2, hw](Tape& tp, const Tensor& g) {
        for (int64_t i = 0; i < bs; ++i) {
            if (tp.nodes_[a].req) {
                Tensor& buf = tp.grad_buf(a);
                const real* gp = g.ptr() + i * (c1 + c2) * hw;
                real* bp = buf.ptr() + i * c1 * hw;
                for (int64_t j = 0; j < c1 * hw; ++j) bp[j] += gp[j];
            }
            if (tp.nodes_[b].req) {
                Tensor& buf = tp.grad_buf(b);
                const real* gp = g.ptr() + i * (c1 + c2) * hw + c1 * hw;
                real* bp = buf.ptr() + i * c2 * hw;
                for (int64_t j = 0; j < c2 * hw; ++j) bp[j] += gp[j];
            }
        }
    });
}

Tape::Id Tape::gather_rows(Id x, std::vector<int64_t> idx) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 2, "gather_rows expects 2-D");
    int64_t c = vx.dim(1);
    for (int64_t i : idx)
        if (i < 0 || i >= vx.dim(0)) throw Error("gather_rows: index out of range");
    Tensor out({static_cast<int64_t>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) std::copy_n(vx.ptr() + idx[i] * c, c, out.ptr() + i * c);
    return push(std::move(out), any_req({x}), [x, idx = std::move(idx), c](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        for (size_t i = 0; i < idx.size(); ++i) {
            const real* gp = g.ptr() + i * c;
            real* bp = buf.ptr() + idx[i] * c;
            for (int64_t j = 0; j < c; ++j) bp[j] += gp[j];
        }
    });
}

// ---------------------------------------------------------------------------
// reductions / broadcasts
// ---------------------------------------------------------------------------

Tape::Id Tape::row_sum(Id x) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 2, "row_sum expects 2-D");
    int64_t r = vx.dim(0), c = vx.dim(1);
    Tensor out({r, 1});
    for (int64_t i = 0; i < r; ++i) {
        real acc = 0;
        for (int64_t j = 0; j < c; ++j) acc += vx.data[i * c + j];
        out.data[i] = acc;
    }
    return push(std::move(out), any_req({x}), [x, r, c](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) buf.data[i * c + j] += g.data[i];
    });
}

Tape::Id Tape::row_mean(Id x) {
    Id s = row_sum(x);
    return scale(s, real(1) / static_cast<real>(val(x).dim(1)));
}

Tape::Id Tape::broadcast_cols(Id v, int64_t cols) {
    const Tensor& vv = val(v);
    check_shape(vv.rank() == 2 && vv.dim(1) == 1, "broadcast_cols expects (R,1)");
    int64_t r = vv.dim(0);
    Tensor out({r, cols});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < cols; ++j) out.data[i * cols + j] = vv.data[i];
    return push(std::move(out), any_req({v}), [v, r, cols](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[v].req) return;
        Tensor& buf = tp.grad_buf(v);
        for (int64_t i = 0; i < r; ++i) {
            real acc = 0;
            for (int64_t j = 0; j < cols; ++j) acc += g.data[i * cols + j];
            buf.data[i] += acc;
        }
    });
}

Tape::Id Tape::mean_rowgroups(Id x, int64_t g_) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 2 && vx.dim(0) % g_ == 0, "mean_rowgroups");
    int64_t r = vx.dim(0) / g_, c = vx.dim(1);
    Tensor out({r, c});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) {
            real acc = 0;
            for (int64_t k = 0; k < g_; ++k) acc += vx.data[(i * g_ + k) * c + j];
            out.data[i * c + j] = acc / static_cast<real>(g_);
        }
    return push(std::move(out), any_req({x}), [x, r, c, g_](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        real inv = real(1) / static_cast<real>(g_);
        for (int64_t i = 0; i < r; ++i)
            for (int64_t k = 0; k < g_; ++k)
                for (int64_t j = 0; j < c; ++j) buf.data[(i * g_ + k) * c + j] += g.data[i * c + j] * inv;
    });
}

Tape::Id Tape::sum_all(Id x) {
    const Tensor& vx = val(x);
    real acc = 0;
    for (real v : vx.data) acc += v;
    Tensor out = Tensor::scalar(acc);
    return push(std::move(out), any_req({x}), [x](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        for (auto& v : buf.data) v += g.data[0];
    });
}

Tape::Id Tape::mean_all(Id x) {
    return scale(sum_all(x), real(1) / static_cast<real>(val(x).numel()));
}

Tape::Id Tape::softmax_rows(Id x) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 2, "softmax_rows expects 2-D");
    int64_t r = vx.dim(0), c = vx.dim(1);
    Tensor out = vx;
    for (int64_t i = 0; i < r; ++i) {
        real* row = out.ptr() + i * c;
        real m = row[0];
        for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        real z = 0;
        for (int64_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - m);
            z += row[j];
        }
        for (int64_t j = 0; j < c; ++j) row[j] /= z;
    }
    Id out_id = push(std::move(out), any_req({x}), nullptr);
    if (nodes_[out_id].req) {
        nodes_[out_id].back = [x, out_id, r, c](Tape& tp, const Tensor& g) {
            if (!tp.nodes_[x].req) return;
            const Tensor& y = tp.val(out_id);
            Tensor& buf = tp.grad_buf(x);
            for (int64_t i = 0; i < r; ++i) {
                real dotgy = 0;
                for (int64_t j = 0; j < c; ++j) dotgy += g.data[i * c + j] * y.data[i * c + j];
                for (int64_t j = 0; j < c; ++j)
                    buf.data[i * c + j] += y.data[i * c + j] * (g.data[i * c + j] - dotgy);
            }
        };
    }
    return out_id;
}

Tape::Id Tape::logsumexp_rows(Id x) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 2, "logsumexp_rows expects 2-D");
    int64_t r = vx.dim(0), c = vx.dim(1);
    Tensor out({r, 1});
    for (int64_t i = 0; i < r; ++i) {
        const real* row = vx.ptr() + i * c;
        real m = row[0];
        for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        real z = 0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
        out.data[i] = m + std::log(z);
    }
    Id out_id = push(std::move(out), any_req({x}), nullptr);
    if (nodes_[out_id].req) {
        nodes_[out_id].back = [x, out_id, r, c](Tape& tp, const Tensor& g) {
            if (!tp.nodes_[x].req) return;
            const Tensor& vx = tp.val(x);
            const Tensor& y = tp.val(out_id);
            Tensor& buf = tp.grad_buf(x);
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j)
                    buf.data[i * c + j] += g.data[i] * std::exp(vx.data[i * c + j] - y.data[i]);
        };
    }
    return out_id;
}

// ---------------------------------------------------------------------------
// conv / spatial
// ---------------------------------------------------------------------------

static void im2col(const real* x, int64_t C, int64_t H, int64_t W, int k, int stride, int pad, int64_t OH,
                   int64_t OW, real* col, int64_t col_stride) {
    // col is (C*k*k, col_stride) row-major; this item's block starts at `col`
    for (int64_t c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                real* dst = col + ((c * k + ki) * k + kj) * col_stride;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        dst[oh * OW + ow] =
                            (ih >= 0 && ih < H && iw >= 0 && iw < W) ? x[(c * H + ih) * W + iw] : real(0);
                    }
                }
            }
}

static void col2im_acc(const real* col, int64_t C, int64_t H, int64_t W, int k, int stride, int pad, int64_t OH,
                       int64_t OW, real* x, int64_t col_stride) {
    for (int64_t c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const real* src = col + ((c * k + ki) * k + kj) * col_stride;
                for (int64_t oh = 0; oh < OH; ++oh) {
                    int64_t ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        int64_t iw = ow * stride - pad + kj;
                        if (iw < 0 || iw >= W) continue;
                        x[(c * H + ih) * W + iw] += src[oh * OW + ow];
                    }
                }
            }
}

// columns of the batched col matrix are ordered (item, spatial position)
static Tensor batched_im2col(const Tensor& x, int64_t B, int64_t C, int64_t H, int64_t W, int k, int stride,
                             int pad, int64_t OH, int64_t OW) {
    int64_t ck2 = C * k * k;
    Tensor col = Tensor::uninit({ck2, B * OH * OW});
    for (int64_t i = 0; i < B; ++i)
        im2col(x.ptr() + i * C * H * W, C, H, W, k, stride, pad, OH, OW, col.ptr() + i * OH * OW,
               B * OH * OW);
    return col;
}

namespace {

using OSMap = Eigen::Map<const RMat, 0, Eigen::OuterStride<>>;
using OSMapMut = Eigen::Map<RMat, 0, Eigen::OuterStride<>>;

// zero-padded per-item plane copy, (C,H,W) -> (C,H+2p,W+2p)
void pad_plane(const real* x, int64_t C, int64_t H, int64_t W, int pad, real* xp, int64_t Hp, int64_t Wp) {
    std::fill(xp, xp + C * Hp * Wp, real(0));
    for (int64_t c = 0; c < C; ++c)
        for (int64_t h = 0; h < H; ++h)
            std::copy_n(x + (c * H + h) * W, W, xp + (c * Hp + h + pad) * Wp + pad);
}

}  // namespace

// Stride-1 convolution evaluated as k*k accumulating GEMMs over shifted flat
// views of an explicitly padded plane. The pad positions of the padded output
// accumulate garbage and are discarded when un-padding; interior positions
// read exactly the right (zero-padded) inputs.
static void conv_s1_forward(const Tensor& vx, const Tensor& vw, const Tensor& vb, Tensor& out,
                            int64_t B, int64_t C, int64_t H, int64_t W, int64_t Co, int k, int pad) {
    int64_t Hp = H + 2 * pad, Wp = W + 2 * pad, plane = Hp * Wp;
    Tensor xp = Tensor::uninit({C, Hp, Wp});
    Tensor op = Tensor::uninit({Co, Hp, Wp});
    int64_t lo = pad * Wp + pad;                 // first interior flat index
    int64_t hi = (Hp - pad - 1) * Wp + (Wp - pad);  // one past the last interior index
    int64_t len = hi - lo;
    for (int64_t i = 0; i < B; ++i) {
        pad_plane(vx.ptr() + i * C * H * W, C, H, W, pad, xp.ptr(), Hp, Wp);
        OSMapMut om(op.ptr() + lo, Co, len, Eigen::OuterStride<>(plane));
        om.setZero();
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                int64_t off = (ki - pad) * Wp + (kj - pad);
                CMap wm(vw.ptr(), Co, C * k * k);
                // weight slice (Co, C) for this tap: columns c*k*k + ki*k + kj
                Tensor wslice = Tensor::uninit({Co, C});
                for (int64_t co = 0; co < Co; ++co)
                    for (int64_t c = 0; c < C; ++c)
                        wslice.data[co * C + c] = vw.data[((co * C + c) * k + ki) * k + kj];
                OSMap xm(xp.ptr() + lo + off, C, len, Eigen::OuterStride<>(plane));
                om.noalias() += cmap(wslice, Co, C) * xm;
            }
        // un-pad and add bias
        for (int64_t co = 0; co < Co; ++co) {
            real bias = vb.data[co];
            for (int64_t h = 0; h < H; ++h) {
                const real* src = op.ptr() + (co * Hp + h + pad) * Wp + pad;
                real* dst = out.ptr() + ((i * Co + co) * H + h) * W;
                for (int64_t w2 = 0; w2 < W; ++w2) dst[w2] = src[w2] + bias;
            }
        }
    }
}

static void conv_s1_backward(Tape& tp, Tape::Id x, Tape::Id w, Tape::Id b, const Tensor& g, int64_t B,
                             int64_t C, int64_t H, int64_t W, int64_t Co, int k, int pad) {
    int64_t Hp = H + 2 * pad, Wp = W + 2 * pad, plane = Hp * Wp;
    bool need_x = tp.requires_grad(x), need_w = tp.requires_grad(w), need_b = tp.requires_grad(b);
    const Tensor& vx = tp.val(x);
    const Tensor& vw = tp.val(w);
    Tensor gp = Tensor::uninit({Co, Hp, Wp});
    Tensor xp = need_w ? Tensor::uninit({C, Hp, Wp}) : Tensor();
    Tensor dxp = need_x ? Tensor::uninit({C, Hp, Wp}) : Tensor();
    Tensor dw_acc = need_w ? Tensor::zeros({Co, C, k, k}) : Tensor();
    int64_t lo = pad * Wp + pad;
    int64_t hi = (Hp - pad - 1) * Wp + (Wp - pad);
    int64_t len = hi - lo;

    for (int64_t i = 0; i < B; ++i) {
        pad_plane(g.ptr() + i * Co * H * W, Co, H, W, pad, gp.ptr(), Hp, Wp);
        if (need_w) pad_plane(vx.ptr() + i * C * H * W, C, H, W, pad, xp.ptr(), Hp, Wp);
        if (need_x) std::fill(dxp.data.begin(), dxp.data.end(), real(0));
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                int64_t off = (ki - pad) * Wp + (kj - pad);
                if (need_w) {
                    // dW_slice += G_interior . shifted(X)^T
                    OSMap gm(gp.ptr() + lo, Co, len, Eigen::OuterStride<>(plane));
                    OSMap xm(xp.ptr() + lo + off, C, len, Eigen::OuterStride<>(plane));
                    Tensor dslice = Tensor::uninit({Co, C});
                    mmap(dslice, Co, C).noalias() = gm * xm.transpose();
                    for (int64_t co = 0; co < Co; ++co)
                        for (int64_t c = 0; c < C; ++c)
                            dw_acc.data[((co * C + c) * k + ki) * k + kj] += dslice.data[co * C + c];
                }
                if (need_x) {
                    // dX_shifted += W_slice^T . G_interior
                    Tensor wslice = Tensor::uninit({Co, C});
                    for (int64_t co = 0; co < Co; ++co)
                        for (int64_t c = 0; c < C; ++c)
                            wslice.data[co * C + c] = vw.data[((co * C + c) * k + ki) * k + kj];
                    OSMap gm(gp.ptr() + lo, Co, len, Eigen::OuterStride<>(plane));
                    OSMapMut dxm(dxp.ptr() + lo + off, C, len, Eigen::OuterStride<>(plane));
                    dxm.noalias() += cmap(wslice, Co, C).transpose() * gm;
                }
            }
        if (need_x) {
            Tensor& buf = tp.grad_buf(x);
            for (int64_t c = 0; c < C; ++c)
                for (int64_t h = 0; h < H; ++h) {
                    const real* src = dxp.ptr() + (c * Hp + h + pad) * Wp + pad;
                    real* dst = buf.ptr() + ((i * C + c) * H + h) * W;
                    for (int64_t w2 = 0; w2 < W; ++w2) dst[w2] += src[w2];
                }
        }
        if (need_b) {
            Tensor& buf = tp.grad_buf(b);
            for (int64_t co = 0; co < Co; ++co) {
                const real* src = g.ptr() + (i * Co + co) * H * W;
                real acc = 0;
                for (int64_t j = 0; j < H * W; ++j) acc += src[j];
                buf.data[co] += acc;
            }
        }
    }
    if (need_w) {
        Tensor& buf = tp.grad_buf(w);
        for (int64_t j = 0; j < buf.numel(); ++j) buf.data[j] += dw_acc.data[j];
    }
}

Tape::Id Tape::conv2d(Id x, Id w, Id b, int stride, int pad) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const Tensor& vb = val(b);
    check_shape(vx.rank() == 4 && vw.rank() == 4 && vb.rank() == 1, "conv2d ranks");
    check_shape(vw.dim(2) == vw.dim(3) && vx.dim(1) == vw.dim(1) && vb.dim(0) == vw.dim(0), "conv2d dims");
    int64_t B = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
    int64_t Co = vw.dim(0);
    int k = static_cast<int>(vw.dim(2));
    int64_t OH = (H + 2 * pad - k) / stride + 1;
    int64_t OW = (W + 2 * pad - k) / stride + 1;
    int64_t ck2 = C * k * k;
    int64_t n = OH * OW;

    if (stride == 1 && 2 * pad == k - 1) {
        Tensor out = Tensor::uninit({B, Co, OH, OW});
        conv_s1_forward(vx, vw, vb, out, B, C, H, W, Co, k, pad);
        return push(std::move(out), any_req({x, w, b}),
                    [x, w, b, B, C, H, W, Co, k, pad](Tape& tp, const Tensor& g) {
                        conv_s1_backward(tp, x, w, b, g, B, C, H, W, Co, k, pad);
                    });
    }

    Tensor col = batched_im2col(vx, B, C, H, W, k, stride, pad, OH, OW);
    Tensor flat = Tensor::uninit({Co, B * n});
    mmap(flat, Co, B * n).noalias() = cmap(vw, Co, ck2) * cmap(col, ck2, B * n);
    // (Co, B*n) -> (B, Co, OH, OW) with the bias folded into the pass
    Tensor out = Tensor::uninit({B, Co, OH, OW});
    for (int64_t i = 0; i < B; ++i)
        for (int64_t co = 0; co < Co; ++co) {
            const real* src = flat.ptr() + co * B * n + i * n;
            real* dst = out.ptr() + (i * Co + co) * n;
            real bias = vb.data[co];
            for (int64_t j = 0; j < n; ++j) dst[j] = src[j] + bias;
        }
    return push(std::move(out), any_req({x, w, b}),
                [x, w, b, B, C, H, W, Co, k, stride, pad, OH, OW, ck2, n](Tape& tp, const Tensor& g) {
                    bool need_x = tp.nodes_[x].req, need_w = tp.nodes_[w].req, need_b = tp.nodes_[b].req;
                    // (B, Co, OH, OW) -> (Co, B*n)
                    Tensor gm = Tensor::uninit({Co, B * n});
                    for (int64_t i = 0; i < B; ++i)
                        for (int64_t co = 0; co < Co; ++co)
                            std::copy_n(g.ptr() + (i * Co + co) * n, n, gm.ptr() + co * B * n + i * n);
                    if (need_w) {
                        Tensor col = batched_im2col(tp.val(x), B, C, H, W, k, stride, pad, OH, OW);
                        mmap(tp.grad_buf(w), Co, ck2).noalias() +=
                            cmap(gm, Co, B * n) * cmap(col, ck2, B * n).transpose();
                    }
                    if (need_x) {
                        Tensor dcol = Tensor::uninit({ck2, B * n});
                        mmap(dcol, ck2, B * n).noalias() =
                            cmap(tp.val(w), Co, ck2).transpose() * cmap(gm, Co, B * n);
                        Tensor& buf = tp.grad_buf(x);
                        for (int64_t i = 0; i < B; ++i)
                            col2im_acc(dcol.ptr() + i * n, C, H, W, k, stride, pad, OH, OW,
                                       buf.ptr() + i * C * H * W, B * n);
                    }
                    if (need_b) {
                        Tensor& buf = tp.grad_buf(b);
                        for (int64_t co = 0; co < Co; ++co) {
                            const real* row = gm.ptr() + co * B * n;
                            real acc = 0;
                            for (int64_t j = 0; j < B * n; ++j) acc += row[j];
                            buf.data[co] += acc;
                        }
                    }
                });
}

Tape::Id Tape::upsample2x(Id x) {
    const Tensor& vx = val(x);
    check_shape(vx.rank() == 4, "upsample2x expects (B,C,H,W)");
    int64_t B = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
    Tensor out({B, C, 2 * H, 2 * W});
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const real* src = vx.ptr() + bc * H * W;
        real* dst = out.ptr() + bc * 4 * H * W;
        for (int64_t h = 0; h < H; ++h)
            for (int64_t w2 = 0; w2 < W; ++w2) {
                real v = src[h * W + w2];
                dst[(2 * h) * 2 * W + 2 * w2] = v;
                dst[(2 * h) * 2 * W + 2 * w2 + 1] = v;
                dst[(2 * h + 1) * 2 * W + 2 * w2] = v;
                dst[(2 * h + 1) * 2 * W + 2 * w2 + 1] = v;
            }
    }
    return push(std::move(out), any_req({x}), [x, B, C, H, W](Tape& tp, const Tensor& g) {
        if (!tp.nodes_[x].req) return;
        Tensor& buf = tp.grad_buf(x);
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const real* gp = g.ptr() + bc * 4 * H * W;
            real* bp = buf.ptr() + bc * H * W;
            for (int64_t h = 0; h < H; ++h)
                for (int64_t w2 = 0; w2 < W; ++w2)
                    bp[h * W + w2] += gp[(2 * h) * 2 * W + 2 * w2] + gp[(2 * h) * 2 * W + 2 * w2 + 1] +
                                      gp[(2 * h + 1) * 2 * W + 2 * w2] + gp[(2 * h + 1) * 2 * W + 2 * w2 + 1];
        }
    });
}

// ---------------------------------------------------------------------------
// per-channel affine
// ---------------------------------------------------------------------------

Tape::Id Tape::mul_chan(Id x, Id g_) {
    const Tensor& vx = val(x);
    const Tensor& vg = val(g_);
    check_shape(vx.rank() == 4 && vg.rank() == 1 && vg.dim(0) == vx.dim(1), "mul_chan");
    int64_t B = vx.dim(0), C = vx.dim(1), HW = vx.dim(2) * vx.dim(3);
    Tensor out = vx;
    for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < C; ++c) {
            real s = vg.data[c];
            real* p = out.ptr() + (i * C + c) * HW;
            for (int64_t j = 0; j < HW; ++j) p[j] *= s;
        }
    return push(std::move(out), any_req({x, g_}), [x, g_, B, C, HW](Tape& tp, const Tensor& g) {
        if (tp.nodes_[x].req) {
            const Tensor& vg = tp.val(g_);
            Tensor& buf = tp.grad_buf(x);
            for (int64_t i = 0; i < B; ++i)
                for (int64_t c = 0; c < C; ++c) {
                    real s = vg.data[c];
                    const real* gp = g.ptr() + (i * C + c) * HW;
                    real* bp = buf.ptr() + (i * C + c) * HW;
                    for (int64_t j = 0; j < HW; ++j) bp[j] += gp[j] * s;
                }
        }
        if (tp.nodes_[g_].req) {
            const Tensor& vx = tp.val(x);
            Tensor& buf = tp.grad_buf(g_);
            for (int64_t i = 0; i < B; ++i)
                for (int64_t c = 0; c < C; ++c) {
                    const real* gp = g.ptr() + (i * C + c) * HW;
                    const real* xp = vx.ptr() + (i * C + c) * HW;
                    real acc = 0;
                    for (int64_t j = 0; j < HW; ++j) acc += gp[j] * xp[j];
                    buf.data[c] += acc;
                }
        }
    });
}

Tape::Id Tape::add_chan(Id x, Id b) {
    const Tensor& vx = val(x);
    const Tensor& vb = val(b);
    check_shape(vx.rank() == 4 && vb.rank() == 1 && vb.dim(0) == vx.dim(1), "add_chan");
    int64_t B = vx.dim(0), C = vx.dim(1), HW = vx.dim(2) * vx.dim(3);
    Tensor out = vx;
    for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < C; ++c) {
            real s = vb.data[c];
            real* p = out.ptr() + (i * C + c) * HW;
            for (int64_t j = 0; j < HW; ++j) p[j] += s;
        }
    return push(std::move(out), any_req({x, b}), [x, b, B, C, HW](Tape& tp, const Tensor& g) {
        tp.accumulate(x, g);
        if (tp.nodes_[b].req) {
            Tensor& buf = tp.grad_buf(b);
            for (int64_t i = 0; i < B; ++i)
                for (int64_t c = 0; c < C; ++c) {
                    const real* gp = g.ptr() + (i * C + c) * HW;
                    real acc = 0;
                    for (int64_t j = 0; j < HW; ++j) acc += gp[j];
                    buf.data[c] += acc;
                }
        }
    });
}

Tape::Id Tape::add_chanvec(Id x, Id v) {
    const Tensor& vx = val(x);
    const Tensor& vv = val(v);
    check_shape(vx.rank() == 4 && vv.rank() == 2 && vv.dim(0) == vx.dim(0) && vv.dim(1) == vx.dim(1),
                "add_chanvec");
    int64_t B = vx.dim(0), C = vx.dim(1), HW = vx.dim(2) * vx.dim(3);
    Tensor out = vx;
    for (int64_t i = 0; i < B; ++i)
        for (int64_t c = 0; c < C; ++c) {
            real s = vv.data[i * C + c];
            real* p = out.ptr() + (i * C + c) * HW;
            for (int64_t j = 0; j < HW; ++j) p[j] += s;
        }
    return push(std::move(out), any_req({x, v}), [x, v, B, C, HW](Tape& tp, const Tensor& g) {
        tp.accumulate(x, g);
        if (tp.nodes_[v].req) {
            Tensor& buf = tp.grad_buf(v);
            for (int64_t i = 0; i < B; ++i)
                for (int64_t c = 0; c < C; ++c) {
                    const real* gp = g.ptr() + (i * C + c) * HW;
                    real acc = 0;
                    for (int64_t j = 0; j < HW; ++j) acc += gp[j];
                    buf.data[i * C + c] += acc;
                }
        }
    });
}

}  // namespace zerocon
