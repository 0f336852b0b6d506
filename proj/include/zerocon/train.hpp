#pragma once

#include "zerocon/dataset.hpp"
#include "zerocon/denoiser.hpp"
#include "zerocon/eval.hpp"
#include "zerocon/schedule.hpp"

namespace zerocon {

class Adam {
public:
    Adam(ParamStore& params, real lr, real beta1 = 0.9, real beta2 = 0.999, real eps = 1e-8);

    // grads keyed by parameter name; missing names are treated as zero grad
    void step(const std::vector<std::pair<std::string, Tensor>>& grads);
    void set_lr(real lr) { lr_ = lr; }

private:
    ParamStore* params_;
    real lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// global-norm gradient clip; returns the pre-clip norm
real clip_grads(std::vector<std::pair<std::string, Tensor>>& grads, real max_norm);

struct TrainConfig {
    int steps = 1400;
    int batch = 8;
    real lr = 2e-3;
    int holdout = 48;  // items reserved for the held-out loss
    int holdout_draws = 2;  // (t, eps) draws per held-out item
    real grad_clip = 1.0;
    uint64_t seed = 7;
    bool verbose = false;
};

struct TrainStats {
    std::vector<real> loss_curve;  // per-step training loss
    real holdout_loss = 0;
    real baseline_loss = 0;  // all-zeros predictor on the same draws
};

struct ToyTraining {
    ToyUNet model;
    TrainStats stats;
};

// Trains the noise predictor (and its caption embedding table) on the
// captioned set; throws on divergence with the offending step in the message.
ToyTraining train_toy(const CaptionedImageSet& data, const NoiseSchedule& sched, const TrainConfig& cfg,
                      UNetConfig arch = {});

// held-out Eq.-7-style losses for an existing model on the same fixed draws
// train_toy uses
TrainStats evaluate_holdout(const ToyUNet& model, const CaptionedImageSet& data, const NoiseSchedule& sched,
                            const TrainConfig& cfg);

struct JointTrainConfig {
    int steps = 400;
    int batch = 16;
    real lr = 3e-3;
    real tau = 0.1;
    uint64_t seed = 7;
};

// contrastive training of the joint image tower against the frozen text tower
void train_joint_encoder(ToyJointEncoder& joint, const CaptionedImageSet& data, const JointTrainConfig& cfg);

}  // namespace zerocon
