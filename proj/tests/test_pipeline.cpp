#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "testutil.hpp"
#include "zerocon/pipeline.hpp"
#include "zerocon/train.hpp"

using namespace zerocon;
using zc_test::FixedEpsDenoiser;
using zc_test::randn;

namespace {

NoiseSchedule toy_schedule(int substeps = 10) {
    return make_schedule(ScheduleKind::linear, 50, 1e-4, 0.02, substeps);
}

UNetConfig small_config() {
    UNetConfig cfg;
    cfg.image_size = 16;
    cfg.width0 = 8;
    cfg.width1 = 16;
    cfg.heads = 2;
    cfg.time_dim = 16;
    cfg.max_timestep = 100;
    return cfg;
}

// one quick-trained model shared by the tests in this binary
const ToyTraining& trained_fixture() {
    static ToyTraining trained = [] {
        CaptionedImageSet data = generate_toy_dataset(48, 16, 6);
        TrainConfig tc;
        tc.steps = 260;
        tc.batch = 8;
        tc.lr = 3e-3;
        tc.holdout = 8;
        tc.seed = 3;
        return train_toy(data, toy_schedule(), tc, small_config());
    }();
    return trained;
}

TextEmbedding caption_embedding(const ToyUNet& model, const std::string& caption) {
    return model.make_text_encoder().encode(Prompt{caption});
}

}  // namespace

TEST_CASE("invert with a zero denoiser is the telescoped rescale") {
    NoiseSchedule sched = toy_schedule();
    FixedEpsDenoiser zero({3, 16, 16});
    Tensor x0 = randn({3, 16, 16}, 1);
    TextEmbedding c = zero_embedding(8, 16);
    Tensor xT = invert(x0, c, zero, sched);
    real s = std::sqrt(sched.alpha_bar(sched.step_count));
    CHECK(max_abs_diff(xT, scale(x0, s)) <= 1e-12);

    // and reconstruct undoes it exactly: x0 = xT / sqrt(abar_T)
    Tensor back = reconstruct(xT, c, zero, sched);
    CHECK(max_abs_diff(back, x0) <= 1e-10);
}

TEST_CASE("invert/reconstruct round trip under a fixed-eps denoiser") {
    NoiseSchedule sched = toy_schedule();
    FixedEpsDenoiser stub({3, 16, 16}, scale(randn({3, 16, 16}, 2), 0.3));
    Tensor x0 = randn({3, 16, 16}, 3);
    TextEmbedding c = zero_embedding(8, 16);
    Tensor xT = invert(x0, c, stub, sched);
    Tensor back = reconstruct(xT, c, stub, sched);
    CHECK(max_abs_diff(back, x0) <= 1e-4);
}

TEST_CASE("invert is deterministic") {
    const ToyUNet& model = trained_fixture().model;
    NoiseSchedule sched = toy_schedule();
    Tensor x0 = randn({3, 16, 16}, 4);
    TextEmbedding c = caption_embedding(model, "a red circle on a white background");
    Tensor a = invert(x0, c, model, sched);
    Tensor b = invert(x0, c, model, sched);
    CHECK(max_abs_diff(a, b) == 0);
}

TEST_CASE("invert aborts on non-finite latents naming the timestep") {
    NoiseSchedule sched = toy_schedule();
    Tensor bad = Tensor::full({3, 16, 16}, std::numeric_limits<real>::quiet_NaN());
    FixedEpsDenoiser stub({3, 16, 16}, bad);
    Tensor x0 = randn({3, 16, 16}, 5);
    CHECK_THROWS_WITH_AS(invert(x0, zero_embedding(8, 16), stub, sched), doctest::Contains("t="),
                         Error);
}

TEST_CASE("record_source bookkeeping") {
    const ToyUNet& model = trained_fixture().model;
    NoiseSchedule sched = toy_schedule();
    Tensor x0 = encode_latent(generate_toy_dataset(1, 16, 9).items[0].image);
    TextEmbedding c = caption_embedding(model, "a red circle on a white background");
    Tensor xT = invert(x0, c, model, sched);
    SourceTrajectory traj = record_source(xT, c, model, sched);
    traj.validate(sched);

    std::vector<int> expected(sched.substep_indices.rbegin(), sched.substep_indices.rend());
    CHECK(traj.timesteps == expected);
    CHECK(max_abs_diff(traj.x_T, xT) == 0);
    CHECK(max_abs_diff(traj.latents[0], xT) == 0);

    // every stored map is row-stochastic
    for (const auto& set : traj.attention)
        for (const auto& entry : set.maps) {
            int64_t n = entry.map.dim(0), L = entry.map.dim(1);
            for (int64_t i = 0; i < n; ++i) {
                real sum = 0;
                for (int64_t j = 0; j < L; ++j) sum += entry.map.data[i * L + j];
                CHECK(std::abs(sum - 1) <= 1e-5);
            }
        }

    // stored latents follow the exact reconstruct path
    auto steps = sched.descending_steps();
    Tensor x = xT;
    for (size_t i = 0; i + 1 < steps.size(); ++i) {
        CHECK(max_abs_diff(traj.latents[i], x) == 0);
        Tensor eps = model.predict(x, steps[i], c, RecordFlags::none()).eps;
        x = ddim_step(x, eps, steps[i], steps[i + 1], sched);
    }
    CHECK(max_abs_diff(x, reconstruct(xT, c, model, sched)) == 0);
}

TEST_CASE("edit degeneracy: zero direction and zero weights reproduce reconstruct bit-exactly") {
    const ToyUNet& model = trained_fixture().model;
    NoiseSchedule sched = toy_schedule();
    Tensor x0 = encode_latent(generate_toy_dataset(2, 16, 10).items[1].image);
    TextEmbedding c = caption_embedding(model, "a blue square on a gray background");
    Tensor xT = invert(x0, c, model, sched);
    SourceTrajectory traj = record_source(xT, c, model, sched);

    GuidanceConfig cfg;
    cfg.lambda_c = 0;
    cfg.lambda_e = 0;
    cfg.patches_per_layer = 4;
    EditDirection zero{Tensor::zeros(c.tokens.shape)};
    EditResult res = edit(traj, c, zero, model, sched, cfg);
    Tensor ref = reconstruct(xT, c, model, sched);
    CHECK(max_abs_diff(res.latent, ref) == 0);
    CHECK(res.losses.size() == sched.substep_indices.size());
}

TEST_CASE("edit with zero learning rate equals unguided sampling under the edited conditioning") {
    const ToyUNet& model = trained_fixture().model;
    NoiseSchedule sched = toy_schedule();
    Tensor x0 = encode_latent(generate_toy_dataset(3, 16, 11).items[2].image);
    TextEmbedding c = caption_embedding(model, "a green triangle on a black background");
    Tensor xT = invert(x0, c, model, sched);
    SourceTrajectory traj = record_source(xT, c, model, sched);

    EditDirection delta{scale(randn(c.tokens.shape, 12), 0.1)};
    GuidanceConfig cfg;
    cfg.lambda_lr = 0;
    cfg.patches_per_layer = 4;
    EditResult res = edit(traj, c, delta, model, sched, cfg);

    TextEmbedding c_hat = apply_direction(c, delta);
    Tensor ref = reconstruct(xT, c_hat, model, sched);
    CHECK(max_abs_diff(res.latent, ref) == 0);
    // losses logged but inert
    for (const auto& r : res.losses) {
        CHECK(std::isfinite(r.l_c));
        CHECK(std::isfinite(r.l_e));
        CHECK(r.grad_norm >= 0);
    }
}

TEST_CASE("edit does not mutate the source trajectory") {
    const ToyUNet& model = trained_fixture().model;
    NoiseSchedule sched = toy_schedule(5);
    Tensor x0 = encode_latent(generate_toy_dataset(4, 16, 13).items[3].image);
    TextEmbedding c = caption_embedding(model, "a red circle on a white background");
    Tensor xT = invert(x0, c, model, sched);
    SourceTrajectory traj = record_source(xT, c, model, sched);
    SourceTrajectory before = traj;

    GuidanceConfig cfg;
    cfg.patches_per_layer = 4;
    EditDirection delta{scale(randn(c.tokens.shape, 14), 0.05)};
    (void)edit(traj, c, delta, model, sched, cfg);

    CHECK(max_abs_diff(traj.x_T, before.x_T) == 0);
    for (size_t i = 0; i < traj.latents.size(); ++i) {
        CHECK(max_abs_diff(traj.latents[i], before.latents[i]) == 0);
        for (size_t l = 0; l < traj.attention[i].maps.size(); ++l)
            CHECK(max_abs_diff(traj.attention[i].maps[l].map, before.attention[i].maps[l].map) == 0);
    }
}

TEST_CASE("edit is deterministic given identical inputs") {
    const ToyUNet& model = trained_fixture().model;
    NoiseSchedule sched = toy_schedule(5);
    Tensor x0 = encode_latent(generate_toy_dataset(5, 16, 15).items[4].image);
    TextEmbedding c = caption_embedding(model, "a yellow square on a white background");
    Tensor xT = invert(x0, c, model, sched);
    SourceTrajectory traj = record_source(xT, c, model, sched);
    GuidanceConfig cfg;
    cfg.patches_per_layer = 4;
    cfg.patch_seed = 9;
    EditDirection delta{scale(randn(c.tokens.shape, 16), 0.05)};
    EditResult a = edit(traj, c, delta, model, sched, cfg);
    EditResult b = edit(traj, c, delta, model, sched, cfg);
    CHECK(max_abs_diff(a.latent, b.latent) == 0);
    CHECK(a.image.rgb == b.image.rgb);
}

TEST_CASE("trajectory persistence round trip") {
    namespace fs = std::filesystem;
    const ToyUNet& model = trained_fixture().model;
    NoiseSchedule sched = toy_schedule(5);
    Tensor x0 = encode_latent(generate_toy_dataset(6, 16, 18).items[5].image);
    TextEmbedding c = caption_embedding(model, "a red circle on a white background");
    SourceTrajectory traj = record_source(invert(x0, c, model, sched), c, model, sched);

    fs::path dir = fs::temp_directory_path() / "zerocon_traj";
    fs::remove_all(dir);
    save_trajectory(dir.string(), traj);
    SourceTrajectory back = load_trajectory(dir.string());
    back.validate(sched);
    CHECK(back.timesteps == traj.timesteps);
    CHECK(max_abs_diff(back.x_T, quantize_f32(traj.x_T)) == 0);
    for (size_t i = 0; i < traj.latents.size(); ++i) {
        CHECK(max_abs_diff(back.latents[i], quantize_f32(traj.latents[i])) == 0);
        for (size_t l = 0; l < traj.attention[i].maps.size(); ++l) {
            CHECK(back.attention[i].maps[l].layer == traj.attention[i].maps[l].layer);
            CHECK(max_abs_diff(back.attention[i].maps[l].map,
                               quantize_f32(traj.attention[i].maps[l].map)) == 0);
        }
    }
}

TEST_CASE("losses csv shape") {
    std::vector<StepLossRecord> recs{{0, 50, 0.5, 0.25, 0.0625, 0.01}, {1, 45, 0.4, 0.2, 0.05, 0.02}};
    std::string csv = losses_csv(recs);
    CHECK(csv.find("step,t,l_c,l_e,l_total,grad_norm\n") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("inversion-path trajectory matches the inversion latents") {
    const ToyUNet& model = trained_fixture().model;
    NoiseSchedule sched = toy_schedule(5);
    Tensor x0 = encode_latent(generate_toy_dataset(7, 16, 19).items[6].image);
    TextEmbedding c = caption_embedding(model, "a red circle on a white background");

    SourceTrajectory traj = record_source_from_inversion(x0, c, model, sched);
    traj.validate(sched);
    CHECK(max_abs_diff(traj.x_T, invert(x0, c, model, sched)) == 0);
    CHECK(max_abs_diff(traj.latents[0], traj.x_T) == 0);

    // latents follow the ascending inversion path, stored descending
    std::vector<int> ts = sched.ascending_steps();
    Tensor x = x0;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        Tensor eps = model.predict(x, ts[i], c, RecordFlags::none()).eps;
        x = ddim_invert_step(x, eps, ts[i], ts[i + 1], sched);
        size_t row = traj.latents.size() - 1 - i;
        CHECK(max_abs_diff(traj.latents[row], x) == 0);
    }

    // an edit over the inversion-path trajectory runs cleanly
    GuidanceConfig cfg;
    cfg.patches_per_layer = 4;
    EditDirection delta{scale(randn(c.tokens.shape, 20), 0.05)};
    EditResult res = edit(traj, c, delta, model, sched, cfg);
    CHECK(all_finite(res.latent));
}
