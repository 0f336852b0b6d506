#pragma once

#include <vector>

#include "zerocon/tensor.hpp"

namespace zerocon {

enum class ScheduleKind { linear, scaled_linear };

ScheduleKind schedule_kind_from(const std::string& s);
std::string to_string(ScheduleKind k);

// Per-step diffusion coefficients. Timesteps are 1-based: beta(t), alpha(t)
// for t in [1,T]; alpha_bar(t) for t in [0,T] with alpha_bar(0) == 1 (clean
// data endpoint).
struct NoiseSchedule {
    int step_count = 0;  // T
    std::vector<real> betas;
    std::vector<real> alphas;
    std::vector<real> alpha_bars;
    std::vector<int> substep_indices;  // strictly increasing, ends at T

    real beta(int t) const;
    real alpha(int t) const;
    real alpha_bar(int t) const;

    // substeps in descending order with a trailing 0, i.e. the denoising
    // visit order T = s_S > ... > s_1 > 0
    std::vector<int> descending_steps() const;
    // 0, s_1, ..., s_S = T
    std::vector<int> ascending_steps() const;

    void validate() const;
};

NoiseSchedule make_schedule(ScheduleKind kind, int T, real beta_start, real beta_end, int substeps);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);
// (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t); identity at t == 0
Tensor one_step_x0(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched);
// standard DDPM posterior mean (1/sqrt(alpha_t)) (x_t - beta_t/sqrt(1-abar_t) eps)
Tensor posterior_mean(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched);
// deterministic DDIM update from t to t_prev < t (t_prev == 0 is the final step)
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& sched);
// deterministic DDIM inversion from t to t_next > t (t == 0 starts from clean data)
Tensor ddim_invert_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_next, const NoiseSchedule& sched);

}  // namespace zerocon
