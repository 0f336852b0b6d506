#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>

#include "zerocon/rng.hpp"
#include "zerocon/tape.hpp"

namespace zc_test {

using zerocon::real;
using zerocon::Rng;
using zerocon::Tape;
using zerocon::Tensor;

// Central-difference check of every input gradient of a taped computation.
// `build` must be a pure function of the input leaves; the output is reduced
// to a scalar through a fixed random weighting.
inline void check_gradients(std::vector<Tensor> inputs,
                            const std::function<Tape::Id(Tape&, const std::vector<Tape::Id>&)>& build,
                            real eps = 1e-5, real tol = 1e-6, uint64_t seed = 42) {
    Tensor weights;
    {
        Tape t;
        std::vector<Tape::Id> ids;
        for (auto& in : inputs) ids.push_back(t.leaf(in));
        Tape::Id out = build(t, ids);
        Rng rng(seed, "gradcheck-w");
        weights = rng.normal_tensor(t.val(out).shape);
    }
    auto loss_of = [&](const std::vector<Tensor>& ins) {
        Tape t;
        std::vector<Tape::Id> ids;
        for (const auto& in : ins) ids.push_back(t.leaf(in));
        Tape::Id loss = t.sum_all(t.mul(build(t, ids), t.leaf(weights)));
        return t.val(loss).item();
    };

    Tape t;
    std::vector<Tape::Id> ids;
    for (auto& in : inputs) ids.push_back(t.leaf(in, true));
    Tape::Id loss = t.sum_all(t.mul(build(t, ids), t.leaf(weights)));
    t.backward(loss);

    Rng pick(seed, "gradcheck-pick");
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor grad = t.grad_of(ids[k]);
        int64_t n = inputs[k].numel();
        int64_t checks = std::min<int64_t>(n, 24);
        for (int64_t c = 0; c < checks; ++c) {
            int64_t idx = (n <= checks) ? c : pick.uniform_int(0, n - 1);
            auto ins = inputs;
            real orig = ins[k].data[idx];
            ins[k].data[idx] = orig + eps;
            real lp = loss_of(ins);
            ins[k].data[idx] = orig - eps;
            real lm = loss_of(ins);
            real fd = (lp - lm) / (2 * eps);
            real an = grad.data[idx];
            INFO("input ", k, " coord ", idx, " analytic ", an, " fd ", fd);
            CHECK(std::abs(an - fd) <= tol * (1 + std::max(std::abs(an), std::abs(fd))));
        }
    }
}

inline Tensor randn(std::vector<int64_t> shape, uint64_t seed) {
    Rng rng(seed, "test-randn");
    return rng.normal_tensor(std::move(shape));
}

}  // namespace zc_test

#include "zerocon/denoiser.hpp"

namespace zc_test {

// test baseline denoiser: returns a fixed eps (default zero) whatever the
// latent, timestep or conditioning
class FixedEpsDenoiser : public zerocon::Denoiser {
public:
    FixedEpsDenoiser(std::array<int64_t, 3> shape, Tensor eps)
        : shape_(shape), eps_(std::move(eps)) {}
    explicit FixedEpsDenoiser(std::array<int64_t, 3> shape)
        : shape_(shape), eps_(Tensor::zeros({shape[0], shape[1], shape[2]})) {}

    std::array<int64_t, 3> latent_shape() const override { return shape_; }
    int64_t text_len() const override { return 8; }
    int64_t text_dim() const override { return 16; }
    zerocon::DenoiserOutput predict(const Tensor& x_t, int, const zerocon::TextEmbedding&,
                                    zerocon::RecordFlags) const override {
        zerocon::check_same_shape(x_t, eps_, "FixedEpsDenoiser");
        zerocon::DenoiserOutput out;
        out.eps = eps_;
        return out;
    }

private:
    std::array<int64_t, 3> shape_;
    Tensor eps_;
};

}  // namespace zc_test
