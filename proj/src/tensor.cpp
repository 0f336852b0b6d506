#include "zerocon/tensor.hpp"

#include <cmath>
#include <unordered_map>

namespace zerocon {

namespace detail {

namespace {

struct BufferCache {
    // size -> stack of free buffers; bounded so long runs cannot hoard
    std::unordered_map<size_t, std::vector<void*>> lists;
    size_t held_bytes = 0;
    static constexpr size_t kMaxHeldBytes = size_t(256) << 20;

    ~BufferCache() {
        for (auto& [bytes, list] : lists)
            for (void* p : list) ::operator delete(p, std::align_val_t(64));
    }
};

thread_local BufferCache t_cache;

}  // namespace

void* cached_alloc(size_t bytes) {
    if (bytes == 0) bytes = 64;
    auto it = t_cache.lists.find(bytes);
    if (it != t_cache.lists.end() && !it->second.empty()) {
        void* p = it->second.back();
        it->second.pop_back();
        t_cache.held_bytes -= bytes;
        return p;
    }
    return ::operator new(bytes, std::align_val_t(64));
}

void cached_free(void* p, size_t bytes) noexcept {
    if (bytes == 0) bytes = 64;
    if (t_cache.held_bytes + bytes > BufferCache::kMaxHeldBytes) {
        ::operator delete(p, std::align_val_t(64));
        return;
    }
    try {
        t_cache.lists[bytes].push_back(p);
        t_cache.held_bytes += bytes;
    } catch (...) {
        ::operator delete(p, std::align_val_t(64));
    }
}

}  // namespace detail

int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw Error("tensor dimension must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)), data(numel_of(shape), real(0)) {}

Tensor Tensor::uninit(std::vector<int64_t> s) {
    Tensor t;
    int64_t n = numel_of(s);
    t.shape = std::move(s);
    t.data.resize(n);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> s, real v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
}

Tensor Tensor::from(std::vector<int64_t> s, RealVec d) {
    if (numel_of(s) != static_cast<int64_t>(d.size()))
        throw Error("tensor data size " + std::to_string(d.size()) + " does not match shape " + shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
}

real Tensor::item() const {
    if (numel() != 1) throw Error("item() on tensor of shape " + shape_str(shape));
    return data[0];
}

void check_shape(bool ok, const std::string& what) {
    if (!ok) throw Error("shape mismatch: " + what);
}

void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
    if (!a.same_shape(b))
        throw Error("shape mismatch in " + what + ": " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

bool all_finite(const Tensor& t) {
    for (real v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= b.data[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= b.data[i];
    return out;
}

Tensor scale(const Tensor& a, real s) {
    Tensor out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

Tensor axpy(const Tensor& a, real s, const Tensor& b) {
    check_same_shape(a, b, "axpy");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += s * b.data[i];
    return out;
}

real dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    real acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

real l2_norm(const Tensor& t) { return std::sqrt(dot(t, t)); }

real max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    real m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

real mean_sq(const Tensor& t) {
    if (t.numel() == 0) return 0;
    real acc = 0;
    for (real v : t.data) acc += v * v;
    return acc / static_cast<real>(t.numel());
}

real cosine(const Tensor& a, const Tensor& b) {
    real na = l2_norm(a), nb = l2_norm(b);
    if (na == 0 || nb == 0) return 0;
    return dot(a, b) / (na * nb);
}

}  // namespace zerocon
