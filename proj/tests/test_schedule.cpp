#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "zerocon/rng.hpp"
#include "zerocon/schedule.hpp"

using namespace zerocon;
using zc_test::randn;

TEST_CASE("make_schedule linear and scaled_linear") {
    NoiseSchedule s1 = make_schedule(ScheduleKind::linear, 1, 0.5, 0.5, 1);
    CHECK(s1.betas == std::vector<real>{0.5});
    CHECK(s1.alphas == std::vector<real>{0.5});
    CHECK(s1.alpha_bars == std::vector<real>{0.5});

    NoiseSchedule s3 = make_schedule(ScheduleKind::linear, 3, 0.1, 0.3, 3);
    CHECK(s3.betas[0] == doctest::Approx(0.1));
    CHECK(s3.betas[1] == doctest::Approx(0.2));
    CHECK(s3.betas[2] == doctest::Approx(0.3));
    CHECK(s3.alpha_bars[0] == doctest::Approx(0.9));
    CHECK(s3.alpha_bars[1] == doctest::Approx(0.72));
    CHECK(s3.alpha_bars[2] == doctest::Approx(0.504));

    // sqrt-interpolation endpoints are exact
    NoiseSchedule s2 = make_schedule(ScheduleKind::scaled_linear, 2, 0.01, 0.04, 2);
    CHECK(s2.betas[0] == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(s2.betas[1] == doctest::Approx(0.04).epsilon(1e-12));
}

TEST_CASE("make_schedule rejects bad arguments") {
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 0, 0.1, 0.2, 1), ConfigError);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 10, 0.3, 0.1, 5), ConfigError);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 10, 0.0, 0.1, 5), ConfigError);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 10, 0.1, 1.0, 5), ConfigError);
    CHECK_THROWS_AS(make_schedule(ScheduleKind::linear, 10, 0.1, 0.2, 11), ConfigError);
}

TEST_CASE("substep indices are strictly increasing and end at T") {
    for (int T : {1, 3, 5, 7, 50, 200, 1000}) {
        for (int S : {1, 2, 3, 5, T}) {
            if (S > T) continue;
            NoiseSchedule s = make_schedule(ScheduleKind::linear, T, 1e-4, 0.02, S);
            CHECK(static_cast<int>(s.substep_indices.size()) == S);
            CHECK(s.substep_indices.back() == T);
            for (size_t i = 1; i < s.substep_indices.size(); ++i)
                CHECK(s.substep_indices[i] > s.substep_indices[i - 1]);
        }
    }
}

TEST_CASE("alpha_bar matches the running product") {
    NoiseSchedule s = make_schedule(ScheduleKind::scaled_linear, 1000, 0.00085, 0.012, 50);
    real running = 1;
    for (int t = 1; t <= 1000; ++t) {
        running *= s.alpha(t);
        CHECK(std::abs(s.alpha_bar(t) - running) <= 1e-6 * std::abs(running));
    }
    CHECK(s.alpha_bar(0) == 1.0);
}

TEST_CASE("q_sample") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 3, 0.1, 0.3, 3);
    Tensor x0 = Tensor::full({2, 2, 2}, 1.0);
    Tensor zero = Tensor::zeros({2, 2, 2});

    Tensor noiseless = q_sample(x0, 2, zero, s);
    for (real v : noiseless.data) CHECK(v == doctest::Approx(std::sqrt(0.72)));

    Tensor ones = Tensor::full({2, 2, 2}, 1.0);
    Tensor mixed = q_sample(x0, 3, ones, s);
    real expect = std::sqrt(0.504) + std::sqrt(1 - 0.504);
    for (real v : mixed.data) CHECK(v == doctest::Approx(expect));
    CHECK(expect == doctest::Approx(1.41422).epsilon(1e-4));

    CHECK_THROWS(q_sample(x0, 0, zero, s));
    CHECK_THROWS(q_sample(x0, 4, zero, s));
    CHECK_THROWS(q_sample(x0, 1, Tensor::zeros({1, 2, 2}), s));
}

TEST_CASE("q_sample empirical mean over many draws") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 3, 0.1, 0.3, 3);
    Tensor x0 = Tensor::full({1, 1, 1}, 0.3);
    Rng rng(11, "qsample-stat");
    int n = 10000;
    real sum = 0;
    for (int i = 0; i < n; ++i) sum += q_sample(x0, 3, rng.normal_tensor({1, 1, 1}), s).data[0];
    real mean = sum / n;
    real expect = std::sqrt(0.504) * 0.3;
    real bound = 3 * std::sqrt((1 - 0.504) / n);
    CHECK(std::abs(mean - expect) <= bound);
}

TEST_CASE("one_step_x0") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 3, 0.1, 0.3, 3);
    Tensor x = Tensor::full({1, 2, 2}, 2.0);
    Tensor eps = Tensor::full({1, 2, 2}, 1.0);

    // identity at the clean endpoint
    Tensor same = one_step_x0(x, Tensor::zeros({1, 2, 2}), 0, s);
    CHECK(max_abs_diff(same, x) == 0);

    Tensor rec = one_step_x0(x, eps, 2, s);
    real expect = (2.0 - std::sqrt(1 - 0.72)) / std::sqrt(0.72);
    for (real v : rec.data) CHECK(v == doctest::Approx(expect));

    // algebraic inverse of q_sample
    Tensor x0 = randn({3, 4, 4}, 7);
    Tensor noise = randn({3, 4, 4}, 8);
    for (int t = 1; t <= 3; ++t) {
        Tensor roundtrip = one_step_x0(q_sample(x0, t, noise, s), noise, t, s);
        CHECK(max_abs_diff(roundtrip, x0) <= 1e-12);
    }
}

TEST_CASE("posterior_mean") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 3, 0.1, 0.3, 3);
    Tensor x = Tensor::full({1, 1, 1}, 1.0);
    Tensor eps = Tensor::full({1, 1, 1}, 1.0);

    Tensor noise_free = posterior_mean(x, Tensor::zeros({1, 1, 1}), 2, s);
    CHECK(noise_free.data[0] == doctest::Approx(1.0 / std::sqrt(0.8)));

    // alpha_2 = 0.8, abar_2 = 0.72
    Tensor m = posterior_mean(x, eps, 2, s);
    real expect = (1.0 - 0.2 / std::sqrt(1 - 0.72)) / std::sqrt(0.8);
    CHECK(m.data[0] == doctest::Approx(expect));
    CHECK(expect == doctest::Approx(0.69538).epsilon(2e-4));

    CHECK_THROWS(posterior_mean(x, eps, 0, s));

    // at T=1 recovering x0 from x1 = q_sample(x0,1,eps) with the true eps
    NoiseSchedule s1 = make_schedule(ScheduleKind::linear, 1, 0.2, 0.2, 1);
    Tensor x0 = randn({2, 3, 3}, 9);
    Tensor noise = randn({2, 3, 3}, 10);
    Tensor x1 = q_sample(x0, 1, noise, s1);
    CHECK(max_abs_diff(posterior_mean(x1, noise, 1, s1), x0) <= 1e-12);
}

TEST_CASE("ddim_step") {
    // alpha_bars: t=2 -> 0.5, t=1 -> 0.9 via a hand-built schedule
    NoiseSchedule s;
    s.step_count = 2;
    s.betas = {0.1, 1 - 0.5 / 0.9};
    s.alphas = {0.9, 0.5 / 0.9};
    s.alpha_bars = {0.9, 0.5};
    s.substep_indices = {1, 2};
    s.validate();

    Tensor x = Tensor::full({1, 1, 1}, 1.0);
    Tensor eps = Tensor::full({1, 1, 1}, 0.5);

    Tensor out = ddim_step(x, eps, 2, 1, s);
    real f = (1.0 - std::sqrt(0.5) * 0.5) / std::sqrt(0.5);
    real expect = std::sqrt(0.9) * f + std::sqrt(0.1) * 0.5;
    CHECK(out.data[0] == doctest::Approx(expect));
    CHECK(f == doctest::Approx(0.91421).epsilon(1e-4));
    CHECK(expect == doctest::Approx(1.02545).epsilon(2e-4));

    // t_prev = 0 reduces to the one-step reconstruction
    Tensor endpoint = ddim_step(x, eps, 1, 0, s);
    CHECK(max_abs_diff(endpoint, one_step_x0(x, eps, 1, s)) == 0);

    // zero predicted noise is a pure rescaling
    Tensor rescale = ddim_step(x, Tensor::zeros({1, 1, 1}), 2, 1, s);
    CHECK(rescale.data[0] == doctest::Approx(std::sqrt(0.9 / 0.5)));

    CHECK_THROWS(ddim_step(x, eps, 1, 1, s));
    CHECK_THROWS(ddim_step(x, eps, 1, 2, s));
}

TEST_CASE("ddim_invert_step") {
    NoiseSchedule s;
    s.step_count = 2;
    s.betas = {0.1, 1 - 0.5 / 0.9};
    s.alphas = {0.9, 0.5 / 0.9};
    s.alpha_bars = {0.9, 0.5};
    s.substep_indices = {1, 2};
    s.validate();

    Tensor x = Tensor::full({1, 1, 1}, 1.0);
    Tensor eps = Tensor::full({1, 1, 1}, 0.5);

    Tensor out = ddim_invert_step(x, eps, 1, 2, s);
    real f = (1.0 - std::sqrt(0.1) * 0.5) / std::sqrt(0.9);
    real expect = std::sqrt(0.5) * f + std::sqrt(0.5) * 0.5;
    CHECK(out.data[0] == doctest::Approx(expect));
    CHECK(expect == doctest::Approx(0.98103).epsilon(1e-4));

    Tensor rescale = ddim_invert_step(x, Tensor::zeros({1, 1, 1}), 1, 2, s);
    CHECK(rescale.data[0] == doctest::Approx(std::sqrt(0.5 / 0.9)));

    // mutual inverse under a shared eps
    Tensor x0 = randn({2, 3, 3}, 20);
    Tensor noise = randn({2, 3, 3}, 21);
    Tensor up = ddim_invert_step(x0, noise, 1, 2, s);
    Tensor back = ddim_step(up, noise, 2, 1, s);
    CHECK(max_abs_diff(back, x0) <= 1e-12);

    CHECK_THROWS(ddim_invert_step(x, eps, 2, 2, s));
    CHECK_THROWS(ddim_invert_step(x, eps, 2, 1, s));
}

TEST_CASE("ddim chain mutual inverse over 100 steps") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 100, 1e-4, 0.02, 100);
    Tensor x0 = randn({3, 8, 8}, 30);
    // fixed eps per step, same both directions
    std::vector<Tensor> eps;
    for (int t = 0; t < 100; ++t) eps.push_back(randn({3, 8, 8}, 100 + t));

    Tensor x = x0;
    auto up = s.ascending_steps();
    for (size_t i = 0; i + 1 < up.size(); ++i) x = ddim_invert_step(x, eps[i], up[i], up[i + 1], s);
    auto down = s.descending_steps();
    for (size_t i = 0; i + 1 < down.size(); ++i)
        x = ddim_step(x, eps[down.size() - 2 - i], down[i], down[i + 1], s);
    CHECK(max_abs_diff(x, x0) <= 1e-4);
}

TEST_CASE("schedule ops are pure") {
    NoiseSchedule s = make_schedule(ScheduleKind::linear, 10, 1e-3, 0.02, 5);
    Tensor x = randn({2, 4, 4}, 40), eps = randn({2, 4, 4}, 41);
    Tensor a = ddim_step(x, eps, 8, 6, s), b = ddim_step(x, eps, 8, 6, s);
    CHECK(max_abs_diff(a, b) == 0);
    Tensor c = q_sample(x, 5, eps, s), d = q_sample(x, 5, eps, s);
    CHECK(max_abs_diff(c, d) == 0);
}
