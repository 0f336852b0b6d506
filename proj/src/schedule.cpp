#include "zerocon/schedule.hpp"

#include <cmath>

namespace zerocon {

ScheduleKind schedule_kind_from(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "scaled_linear") return ScheduleKind::scaled_linear;
    throw ConfigError("unknown schedule kind '" + s + "' (expected linear|scaled_linear)");
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "scaled_linear";
}

real NoiseSchedule::beta(int t) const {
    if (t < 1 || t > step_count) throw Error("beta(t): t=" + std::to_string(t) + " out of [1," + std::to_string(step_count) + "]");
    return betas[t - 1];
}

real NoiseSchedule::alpha(int t) const {
    if (t < 1 || t > step_count) throw Error("alpha(t): t=" + std::to_string(t) + " out of range");
    return alphas[t - 1];
}

real NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1;
    if (t < 0 || t > step_count) throw Error("alpha_bar(t): t=" + std::to_string(t) + " out of range");
    return alpha_bars[t - 1];
}

std::vector<int> NoiseSchedule::descending_steps() const {
    std::vector<int> out(substep_indices.rbegin(), substep_indices.rend());
    out.push_back(0);
    return out;
}

std::vector<int> NoiseSchedule::ascending_steps() const {
    std::vector<int> out{0};
    out.insert(out.end(), substep_indices.begin(), substep_indices.end());
    return out;
}

void NoiseSchedule::validate() const {
    if (step_count < 1) throw Error("schedule: T must be >= 1");
    if (static_cast<int>(betas.size()) != step_count || alphas.size() != betas.size() ||
        alpha_bars.size() != betas.size())
        throw Error("schedule: coefficient arrays must all have length T");
    real running = 1;
    real prev_bar = 1;
    for (int i = 0; i < step_count; ++i) {
        if (!(betas[i] > 0 && betas[i] < 1)) throw Error("schedule: beta out of (0,1) at t=" + std::to_string(i + 1));
        if (!(alphas[i] > 0 && alphas[i] < 1)) throw Error("schedule: alpha out of (0,1) at t=" + std::to_string(i + 1));
        running *= alphas[i];
        if (std::abs(alpha_bars[i] - running) > 1e-6 * std::abs(running))
            throw Error("schedule: alpha_bar is not the running product at t=" + std::to_string(i + 1));
        if (!(alpha_bars[i] < prev_bar)) throw Error("schedule: alpha_bar not strictly decreasing");
        prev_bar = alpha_bars[i];
    }
    if (substep_indices.empty()) throw Error("schedule: substep_indices empty");
    int last = 0;
    for (int s : substep_indices) {
        if (s <= last) throw Error("schedule: substep_indices not strictly increasing");
        last = s;
    }
    if (last != step_count) throw Error("schedule: substep_indices must end at T");
}

NoiseSchedule make_schedule(ScheduleKind kind, int T, real beta_start, real beta_end, int substeps) {
    if (T < 1) throw ConfigError("make_schedule: T must be >= 1");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    if (substeps < 1 || substeps > T)
        throw ConfigError("make_schedule: substeps must be in [1,T], got " + std::to_string(substeps));

    NoiseSchedule s;
    s.step_count = T;
    s.betas.resize(T);
    for (int i = 0; i < T; ++i) {
        real frac = (T == 1) ? real(0) : static_cast<real>(i) / static_cast<real>(T - 1);
        if (kind == ScheduleKind::linear) {
            s.betas[i] = beta_start + (beta_end - beta_start) * frac;
        } else {
            real r = std::sqrt(beta_start) + (std::sqrt(beta_end) - std::sqrt(beta_start)) * frac;
            s.betas[i] = r * r;
        }
    }
    s.alphas.resize(T);
    s.alpha_bars.resize(T);
    real running = 1;
    for (int i = 0; i < T; ++i) {
        s.alphas[i] = 1 - s.betas[i];
        running *= s.alphas[i];
        s.alpha_bars[i] = running;
    }
    s.substep_indices.resize(substeps);
    for (int i = 0; i < substeps; ++i)
        s.substep_indices[i] = static_cast<int>(std::llround(static_cast<double>(i + 1) * T / static_cast<double>(substeps)));
    s.validate();
    return s;
}

static void check_t(int t, const NoiseSchedule& sched, const char* op) {
    if (t < 1 || t > sched.step_count)
        throw Error(std::string(op) + ": t=" + std::to_string(t) + " out of [1," + std::to_string(sched.step_count) + "]");
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    check_t(t, sched, "q_sample");
    check_same_shape(x0, eps, "q_sample");
    real ab = sched.alpha_bar(t);
    real a = std::sqrt(ab), b = std::sqrt(1 - ab);
    Tensor out = x0;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

Tensor one_step_x0(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_pred, "one_step_x0");
    if (t == 0) return x_t;  // alpha_bar(0) == 1
    check_t(t, sched, "one_step_x0");
    real ab = sched.alpha_bar(t);
    real b = std::sqrt(1 - ab), inv = 1 / std::sqrt(ab);
    Tensor out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = (x_t.data[i] - b * eps_pred.data[i]) * inv;
    return out;
}

Tensor posterior_mean(const Tensor& x_t, const Tensor& eps_pred, int t, const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_pred, "posterior_mean");
    if (t < 1) throw Error("posterior_mean: t=0 has no predecessor");
    check_t(t, sched, "posterior_mean");
    real a = sched.alpha(t), b = sched.beta(t), ab = sched.alpha_bar(t);
    real inv = 1 / std::sqrt(a), coef = b / std::sqrt(1 - ab);
    Tensor out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] = (x_t.data[i] - coef * eps_pred.data[i]) * inv;
    return out;
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_prev, const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_pred, "ddim_step");
    check_t(t, sched, "ddim_step");
    if (t_prev >= t) throw Error("ddim_step: t_prev=" + std::to_string(t_prev) + " must be < t=" + std::to_string(t));
    if (t_prev < 0) throw Error("ddim_step: t_prev must be >= 0");
    real ab_t = sched.alpha_bar(t), ab_p = sched.alpha_bar(t_prev);
    real b_t = std::sqrt(1 - ab_t), inv = 1 / std::sqrt(ab_t);
    real a_p = std::sqrt(ab_p), b_p = std::sqrt(1 - ab_p);
    Tensor out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i) {
        real f = (x_t.data[i] - b_t * eps_pred.data[i]) * inv;
        out.data[i] = a_p * f + b_p * eps_pred.data[i];
    }
    return out;
}

Tensor ddim_invert_step(const Tensor& x_t, const Tensor& eps_pred, int t, int t_next, const NoiseSchedule& sched) {
    check_same_shape(x_t, eps_pred, "ddim_invert_step");
    if (t < 0) throw Error("ddim_invert_step: t must be >= 0");
    if (t > 0) check_t(t, sched, "ddim_invert_step");
    if (t_next <= t) throw Error("ddim_invert_step: t_next=" + std::to_string(t_next) + " must be > t=" + std::to_string(t));
    check_t(t_next, sched, "ddim_invert_step");
    real ab_t = sched.alpha_bar(t), ab_n = sched.alpha_bar(t_next);
    real b_t = std::sqrt(1 - ab_t), inv = 1 / std::sqrt(ab_t);
    real a_n = std::sqrt(ab_n), b_n = std::sqrt(1 - ab_n);
    Tensor out = x_t;
    for (int64_t i = 0; i < out.numel(); ++i) {
        real f = (x_t.data[i] - b_t * eps_pred.data[i]) * inv;
        out.data[i] = a_n * f + b_n * eps_pred.data[i];
    }
    return out;
}

}  // namespace zerocon
