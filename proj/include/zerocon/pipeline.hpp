#pragma once

#include <vector>

#include "zerocon/guidance.hpp"
#include "zerocon/schedule.hpp"
#include "zerocon/textdir.hpp"

namespace zerocon {

// Phase-1 record: per selected timestep (descending) the pre-step latent and
// its cross-attention maps under the source conditioning.
struct SourceTrajectory {
    Tensor x_T;
    std::vector<int> timesteps;  // == schedule substeps, descending
    std::vector<Tensor> latents;
    std::vector<AttentionMapSet> attention;
    TextEmbedding cond;

    void validate(const NoiseSchedule& sched) const;
};

struct StepLossRecord {
    int step = 0;
    int t = 0;
    real l_c = 0;
    real l_e = 0;
    real l_total = 0;
    real grad_norm = 0;
};

struct EditResult {
    Tensor latent;  // edited x0
    Image image;    // decoded
    std::vector<StepLossRecord> losses;
    GuidanceConfig config;
    real wall_seconds = 0;
};

// deterministic DDIM inversion of a clean latent along ascending substeps
Tensor invert(const Tensor& x0, const TextEmbedding& c, const Denoiser& model, const NoiseSchedule& sched);

// phase 1: denoise from x_T under c, recording latents and attention maps
SourceTrajectory record_source(const Tensor& x_T, const TextEmbedding& c, const Denoiser& model,
                               const NoiseSchedule& sched);

// Alternative phase 1: take the per-timestep latents from the inversion path
// of x0 instead of re-denoising, recording attention at each stored latent.
SourceTrajectory record_source_from_inversion(const Tensor& x0, const TextEmbedding& c,
                                              const Denoiser& model, const NoiseSchedule& sched);

// plain DDIM denoising, no recording, no guidance
Tensor reconstruct(const Tensor& x_T, const TextEmbedding& c, const Denoiser& model,
                   const NoiseSchedule& sched);

// phase 2: guided editing along the recorded trajectory
EditResult edit(const SourceTrajectory& traj, const TextEmbedding& c, const EditDirection& delta,
                const Denoiser& model, const NoiseSchedule& sched, const GuidanceConfig& config);

// trajectory persistence: directory of ZCT1 tensors plus a manifest
void save_trajectory(const std::string& dir, const SourceTrajectory& traj);
SourceTrajectory load_trajectory(const std::string& dir);

std::string losses_csv(const std::vector<StepLossRecord>& records);

}  // namespace zerocon
