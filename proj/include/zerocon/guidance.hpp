#pragma once

#include <string>
#include <vector>

#include "zerocon/denoiser.hpp"

namespace zerocon {

struct GuidanceConfig {
    real lambda_c = 0.1;   // cross-attention loss weight
    real lambda_e = 0.05;  // CUT loss weight
    real lambda_lr = 1.0;  // latent learning rate (Eq. "x <- x - lambda grad")
    real tau = 0.07;       // InfoNCE temperature
    int patches_per_layer = 16;
    std::vector<std::string> tap_layers = {"enc1.sa", "enc2.sa"};
    uint64_t patch_seed = 0;
    bool normalize_patches = true;
    // whether the source branch runs under the edited conditioning instead of
    // the source conditioning
    bool source_uses_edited_cond = false;

    void validate() const;
};

// spatial indices selected per tap layer
struct PatchSelection {
    std::vector<std::pair<std::string, std::vector<int64_t>>> layers;

    const std::vector<int64_t>& at(const std::string& layer) const;
};

// mean over recorded layers of the entrywise L2 (Frobenius) norm of the
// difference; layer sets and shapes must match
real cross_attention_loss(const AttentionMapSet& m_hat, const AttentionMapSet& m_ref);

// deterministic uniform selection without replacement, per layer
PatchSelection sample_patches(const std::vector<std::pair<std::string, int64_t>>& layer_sizes,
                              int patches_per_layer, uint64_t seed);

// -log softmax contrast of one positive against K negatives, stable
// log-sum-exp evaluation
real info_nce(const std::vector<real>& query, const std::vector<real>& positive,
              const std::vector<std::vector<real>>& negatives, real tau);

// Patch-wise contrastive loss: query = source patch, positive = edited patch
// at the same position, negatives = edited patches at the other selected
// positions of the same layer; normalized by total query count.
real cut_loss(const FeatureStack& src_features, const FeatureStack& edit_features,
              const GuidanceConfig& config, const PatchSelection& selection);

real total_loss(real l_c, real l_e, const GuidanceConfig& config);

// x - lambda_lr * grad
Tensor guided_update(const Tensor& x, const Tensor& grad, real lambda_lr);

// the source-branch quantities for one timestep; all constants w.r.t. the
// gradient
struct SourceStepContext {
    const Tensor* latent = nullptr;             // x_t of the source trajectory
    const AttentionMapSet* attention = nullptr; // M_t recorded in phase 1
    const TextEmbedding* cond = nullptr;        // source conditioning c
};

struct LossGradient {
    Tensor grad;  // d total_loss / d x_edit
    real l_c = 0;
    real l_e = 0;
};

// Exact gradient of total_loss w.r.t. x_edit, propagated through the denoiser
// forward pass that produced M_hat and h_hat. Source-branch features are
// recomputed from src.latent and treated as constants.
LossGradient loss_gradient(const Denoiser& model, const Tensor& x_edit, int t, const TextEmbedding& c_hat,
                           const SourceStepContext& src, const GuidanceConfig& config);

}  // namespace zerocon
