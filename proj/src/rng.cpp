#include "zerocon/rng.hpp"

#include <cmath>
#include <numbers>

namespace zerocon {

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t split_seed(uint64_t seed, const std::string& tag, uint64_t step) {
    uint64_t x = seed ^ fnv1a64(tag) ^ (step * 0x9e3779b97f4a7c15ull);
    // one mixing round so nearby steps decorrelate
    return splitmix64(x);
}

uint64_t Rng::next_u64() { return splitmix64(state_); }

real Rng::uniform() {
    // 53 high bits -> double in [0,1)
    return static_cast<real>(next_u64() >> 11) * 0x1.0p-53;
}

real Rng::uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
}

real Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    real u1 = 0;
    while (u1 <= 1e-300) u1 = uniform();
    real u2 = uniform();
    real r = std::sqrt(real(-2) * std::log(u1));
    real a = real(2) * std::numbers::pi_v<real> * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

Tensor Rng::normal_tensor(std::vector<int64_t> shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = normal();
    return t;
}

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
    if (k > n) throw Error("sample_without_replacement: k=" + std::to_string(k) + " > n=" + std::to_string(n));
    std::vector<int64_t> pool(n);
    for (int64_t i = 0; i < n; ++i) pool[i] = i;
    for (int64_t i = 0; i < k; ++i) {
        int64_t j = i + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace zerocon
