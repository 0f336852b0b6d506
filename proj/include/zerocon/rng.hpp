#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zerocon/tensor.hpp"

namespace zerocon {

// Counter-based generator built on SplitMix64. Every random draw in the
// project flows from one root seed expanded as seed ^ fnv1a(tag) ^ step, so
// any stream can be reproduced from the run manifest alone and streams with
// different tags are independent.
uint64_t fnv1a64(const std::string& s);
uint64_t split_seed(uint64_t seed, const std::string& tag, uint64_t step = 0);

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}
    Rng(uint64_t seed, const std::string& tag, uint64_t step = 0) : state_(split_seed(seed, tag, step)) {}

    uint64_t next_u64();
    // uniform in [0, 1)
    real uniform();
    real uniform(real lo, real hi);
    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi);
    // standard normal via Box-Muller (stdlib distributions are not
    // implementation-stable)
    real normal();

    Tensor normal_tensor(std::vector<int64_t> shape);
    // k distinct indices from {0..n-1}, uniform without replacement
    std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

private:
    uint64_t state_;
    bool have_spare_ = false;
    real spare_ = 0;
};

}  // namespace zerocon
