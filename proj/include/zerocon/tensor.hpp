#pragma once

#include <cstdint>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace zerocon {

using real = double;

// 64-byte aligned storage. Eigen's GEMM packing depends on pointer alignment;
// pinning every buffer to one alignment keeps results bit-identical across
// allocations, which the determinism contracts rely on.
namespace detail {
// Thread-local exact-size free lists for tensor buffers. A training step
// allocates and frees hundreds of identically-sized arrays; recycling them
// keeps the hot loop out of the system allocator.
void* cached_alloc(size_t bytes);
void cached_free(void* p, size_t bytes) noexcept;
}  // namespace detail

template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(size_t n) { return static_cast<T*>(detail::cached_alloc(n * sizeof(T))); }
    void deallocate(T* p, size_t n) noexcept { detail::cached_free(p, n * sizeof(T)); }

    // default-initialize (a no-op for arithmetic types) so sized resizes do
    // not zero-fill; Tensor constructors zero explicitly where promised
    template <class U>
    void construct(U* p) {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

using RealVec = std::vector<real, AlignedAllocator<real>>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Configuration / usage errors; the CLI maps these to exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// External provider failures carry the provider's own diagnostics.
struct ProviderError : Error {
    using Error::Error;
};

/// Dense row-major tensor of `real` with a dynamic shape.
struct Tensor {
    std::vector<int64_t> shape;
    RealVec data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s);

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    // allocated but uninitialized; for outputs that are fully overwritten
    static Tensor uninit(std::vector<int64_t> s);
    static Tensor full(std::vector<int64_t> s, real v);
    static Tensor from(std::vector<int64_t> s, RealVec d);
    static Tensor scalar(real v) { return from({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    size_t rank() const { return shape.size(); }
    int64_t dim(size_t i) const { return shape.at(i); }
    bool defined() const { return !shape.empty(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    real* ptr() { return data.data(); }
    const real* ptr() const { return data.data(); }
    real item() const;
};

int64_t numel_of(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

void check_shape(bool ok, const std::string& what);
void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

bool all_finite(const Tensor& t);

// Elementwise helpers used by the non-taped math paths (schedule, optimizers,
// metric code). Shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real s);
// a + s*b
Tensor axpy(const Tensor& a, real s, const Tensor& b);

real dot(const Tensor& a, const Tensor& b);
real l2_norm(const Tensor& t);
real max_abs_diff(const Tensor& a, const Tensor& b);
real mean_sq(const Tensor& t);
real cosine(const Tensor& a, const Tensor& b);

}  // namespace zerocon
