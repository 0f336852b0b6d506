#pragma once

#include <cstring>
#include <utility>
#include <vector>

#include "zerocon/tensor.hpp"

namespace zerocon {

class Tape;

// Inline-storage closure for backward rules. Keeps per-op captures out of the
// heap; they are created and destroyed hundreds of times per training step.
template <size_t Cap>
class BackwardFn {
public:
    BackwardFn() = default;
    BackwardFn(std::nullptr_t) {}

    template <class F, class = std::enable_if_t<!std::is_same_v<std::decay_t<F>, BackwardFn> &&
                                                !std::is_same_v<std::decay_t<F>, std::nullptr_t>>>
    BackwardFn(F&& f) {
        using Fn = std::decay_t<F>;
        static_assert(sizeof(Fn) <= Cap, "backward capture exceeds inline storage");
        new (buf_) Fn(std::forward<F>(f));
        invoke_ = [](void* p, Tape& t, const Tensor& g) { (*static_cast<Fn*>(p))(t, g); };
        relocate_ = [](void* src, void* dst) {
            Fn* s = static_cast<Fn*>(src);
            new (dst) Fn(std::move(*s));
            s->~Fn();
        };
        destroy_ = [](void* p) { static_cast<Fn*>(p)->~Fn(); };
    }

    BackwardFn(BackwardFn&& o) noexcept { steal(o); }
    BackwardFn& operator=(BackwardFn&& o) noexcept {
        if (this != &o) {
            reset();
            steal(o);
        }
        return *this;
    }
    BackwardFn(const BackwardFn&) = delete;
    BackwardFn& operator=(const BackwardFn&) = delete;
    ~BackwardFn() { reset(); }

    explicit operator bool() const { return invoke_ != nullptr; }
    void operator()(Tape& t, const Tensor& g) { invoke_(buf_, t, g); }

private:
    void steal(BackwardFn& o) {
        if (o.invoke_) {
            o.relocate_(o.buf_, buf_);
            invoke_ = o.invoke_;
            relocate_ = o.relocate_;
            destroy_ = o.destroy_;
            o.invoke_ = nullptr;
            o.destroy_ = nullptr;
        }
    }
    void reset() {
        if (destroy_) destroy_(buf_);
        invoke_ = nullptr;
        destroy_ = nullptr;
    }

    alignas(16) unsigned char buf_[Cap];
    void (*invoke_)(void*, Tape&, const Tensor&) = nullptr;
    void (*relocate_)(void*, void*) = nullptr;
    void (*destroy_)(void*) = nullptr;
};

// Reverse-mode autodiff over Tensor values. A Tape owns the whole forward
// graph of one computation; ops append nodes and capture the backward rule as
// a closure. backward(root) accumulates gradients for every node that
// requires them. Tapes are single-use and not thread-safe; independent tapes
// are fully independent.
class Tape {
public:
    using Id = int32_t;

    Id leaf(Tensor v, bool requires_grad = false);
    // Leaf backed by caller-owned storage (weights); caller guarantees the
    // tensor outlives the tape.
    Id leaf_ref(const Tensor* v, bool requires_grad = false);

    const Tensor& val(Id id) const;
    bool requires_grad(Id id) const { return nodes_[id].req; }
    // Gradient of the last backward() root w.r.t. this node. Zeros if the
    // node was never reached.
    Tensor grad_of(Id id) const;

    void backward(Id root);

    // gradient accumulation buffer (allocated zeros on first use); exposed
    // for op implementations
    Tensor& grad_buf(Id id);

    size_t size() const { return nodes_.size(); }

    // ---- elementwise ----
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id scale(Id a, real s);
    Id add_scalar(Id a, real s);
    // x^p for x >= 0; gradient defined as 0 at x == 0 (subgradient choice so
    // norms are usable at exact equality)
    Id pow_scalar(Id a, real p);
    Id silu(Id a);

    // ---- linear algebra (2-D and batched 3-D) ----
    Id matmul(Id a, Id b);     // (n,k)x(k,m) -> (n,m)
    Id matmul_nt(Id a, Id b);  // (n,k)x(m,k)^T -> (n,m)
    Id bmm(Id a, Id b);        // (B,n,k)x(B,k,m) -> (B,n,m)
    Id bmm_nt(Id a, Id b);     // (B,n,k)x(B,m,k)^T -> (B,n,m)
    Id add_rowvec(Id x, Id b); // (R,M)+(M,) broadcast over rows

    // ---- shape ----
    Id reshape(Id x, std::vector<int64_t> shape);
    Id transpose(Id x);                         // 2-D
    Id chw_to_nc(Id x);                         // (B,C,H,W) -> (B,HW,C)
    Id nc_to_chw(Id x, int64_t h, int64_t w);   // (B,HW,C) -> (B,C,H,W)
    Id split_heads(Id x, int heads);            // (B,N,C) -> (B*h,N,C/h)
    Id merge_heads(Id x, int heads);            // (B*h,N,d) -> (B,N,h*d)
    Id concat_ch(Id a, Id b);                   // channel concat, 4-D
    Id gather_rows(Id x, std::vector<int64_t> idx);

    // ---- reductions / broadcasts ----
    Id row_sum(Id x);   // (R,C) -> (R,1)
    Id row_mean(Id x);  // (R,C) -> (R,1)
    Id broadcast_cols(Id v, int64_t cols);  // (R,1) -> (R,cols)
    Id mean_rowgroups(Id x, int64_t g);     // (R,C) -> (R/g,C), mean over consecutive row groups
    Id sum_all(Id x);   // -> (1,)
    Id mean_all(Id x);  // -> (1,)
    Id softmax_rows(Id x);    // (R,C), numerically stable
    Id logsumexp_rows(Id x);  // (R,C) -> (R,1), numerically stable

    // ---- conv / spatial ----
    // x (B,C,H,W), w (Co,C,k,k), b (Co,); stride 1 or 2, zero padding
    Id conv2d(Id x, Id w, Id b, int stride, int pad);
    Id upsample2x(Id x);  // nearest neighbour, (B,C,H,W) -> (B,C,2H,2W)

    // ---- per-channel affine on 4-D maps ----
    Id mul_chan(Id x, Id g);    // (B,C,H,W) * (C,)
    Id add_chan(Id x, Id b);    // (B,C,H,W) + (C,)
    Id add_chanvec(Id x, Id v); // (B,C,H,W) + (B,C) broadcast over H,W

private:
    using Back = BackwardFn<160>;
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        bool req = false;
        Back back;
    };
    std::vector<Node> nodes_;

    Id push(Tensor value, bool req, Back back);
    bool any_req(std::initializer_list<Id> ids) const;
    void accumulate(Id id, const Tensor& g);
    void accumulate_raw(Id id, const real* g, int64_t n);
};

}  // namespace zerocon
