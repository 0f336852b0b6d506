#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "zerocon/io.hpp"
#include "zerocon/tape.hpp"
#include "zerocon/text.hpp"

namespace zerocon {

// ---------------------------------------------------------------------------
// attention primitive
// ---------------------------------------------------------------------------

struct AttentionResult {
    Tensor out;  // (n, d_v)
    Tensor map;  // (n, m), row-stochastic
};

// M = softmax(Q K^T / sqrt(d)) rowwise, out = M V
AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v);

// ---------------------------------------------------------------------------
// recorded artifacts
// ---------------------------------------------------------------------------

struct RecordFlags {
    bool attention = false;
    bool features = false;
    bool per_head = false;  // additionally record each head's map

    static RecordFlags none() { return {}; }
    static RecordFlags all() { return {true, true, false}; }
};

struct AttentionMapEntry {
    std::string layer;
    bool head_averaged = true;
    Tensor map;  // (spatial positions N_l, text tokens L)
};

struct AttentionMapSet {
    std::vector<AttentionMapEntry> maps;
};

struct FeatureTapEntry {
    std::string layer;
    Tensor features;  // (channels d_l, spatial positions N_l)
};

struct FeatureStack {
    std::vector<FeatureTapEntry> taps;
};

struct DenoiserOutput {
    Tensor eps;  // same shape as the input latent
    std::optional<AttentionMapSet> attention;
    std::optional<FeatureStack> features;
};

// taped counterparts used by the guidance gradient; all ids live on the tape
// that produced them
struct TapedForward {
    Tape::Id eps = -1;
    std::vector<std::pair<std::string, Tape::Id>> attention;       // head-averaged (B,N,L)
    std::vector<std::pair<std::string, Tape::Id>> attention_heads; // raw per-head (B*h,N,L)
    std::vector<std::pair<std::string, Tape::Id>> features;        // (B,N,C)
};

// ---------------------------------------------------------------------------
// denoiser interface
// ---------------------------------------------------------------------------

class Denoiser {
public:
    virtual ~Denoiser() = default;

    virtual std::array<int64_t, 3> latent_shape() const = 0;
    virtual int64_t text_len() const = 0;
    virtual int64_t text_dim() const = 0;

    // Deterministic forward pass. Recording is observation-only: eps is
    // bit-identical whatever the flags.
    virtual DenoiserOutput predict(const Tensor& x_t, int t, const TextEmbedding& c,
                                   RecordFlags rec = RecordFlags::none()) const = 0;

    virtual bool differentiable() const { return false; }
    // Taped forward for gradient guidance; x must be (1,C,H,W) on the tape.
    virtual TapedForward forward_latent(Tape& tape, Tape::Id x, int t, const TextEmbedding& c,
                                        bool want_attention, bool want_features) const;
};

// ---------------------------------------------------------------------------
// toy U-Net
// ---------------------------------------------------------------------------

struct UNetConfig {
    int64_t channels = 3;
    int64_t image_size = 32;
    int64_t width0 = 32;
    int64_t width1 = 64;
    int64_t text_len = 8;
    int64_t text_dim = 16;
    int heads = 2;
    int64_t time_dim = 64;
    int64_t groups = 8;
    int max_timestep = 1000;
    uint64_t init_seed = 1234;
};

// Named parameter tensors in a stable order (checkpoint layout and optimizer
// slots key off the names).
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> items;

    Tensor& add(const std::string& name, Tensor init);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
};

// per-tape leaf binding of a ParamStore
struct ParamBinding {
    std::vector<std::pair<std::string, Tape::Id>> leaves;
    Tape::Id at(const std::string& name) const;
};

// 2-down/2-up conditional U-Net on pixel-space latents. Channel widths
// (width0, width1); one self-attention and one cross-attention block at each
// of the two lowest resolutions; sinusoidal timestep embedding added in every
// residual block. The caption embedding table ("text.embed") is a model
// parameter trained jointly with the denoiser.
class ToyUNet : public Denoiser {
public:
    explicit ToyUNet(UNetConfig cfg);

    std::array<int64_t, 3> latent_shape() const override {
        return {cfg_.channels, cfg_.image_size, cfg_.image_size};
    }
    int64_t text_len() const override { return cfg_.text_len; }
    int64_t text_dim() const override { return cfg_.text_dim; }

    DenoiserOutput predict(const Tensor& x_t, int t, const TextEmbedding& c, RecordFlags rec) const override;
    bool differentiable() const override { return true; }
    TapedForward forward_latent(Tape& tape, Tape::Id x, int t, const TextEmbedding& c, bool want_attention,
                                bool want_features) const override;

    // training plumbing
    ParamBinding bind_params(Tape& tape, bool requires_grad) const;
    TapedForward run(Tape& tape, const ParamBinding& pb, Tape::Id x, const std::vector<int>& ts,
                     Tape::Id cond, bool want_attention, bool want_features) const;

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const UNetConfig& config() const { return cfg_; }

    ToyTextEncoder make_text_encoder() const;

    void save(const std::string& path) const;
    static ToyUNet load(const std::string& path);

    // sinusoidal embedding of a batch of timesteps, (B, time_dim)
    static Tensor timestep_embedding(const std::vector<int>& ts, int64_t dim);

private:
    UNetConfig cfg_;
    ParamStore params_;

    Tape::Id resblock(Tape& t, const ParamBinding& pb, const std::string& name, Tape::Id x, Tape::Id temb,
                      int64_t cin, int64_t cout) const;
    Tape::Id self_attention(Tape& t, const ParamBinding& pb, const std::string& name, Tape::Id x,
                            int64_t c) const;
    Tape::Id cross_attention(Tape& t, const ParamBinding& pb, const std::string& name, Tape::Id x,
                             Tape::Id cond, int64_t c, Tape::Id* avg_map_out,
                             Tape::Id* head_maps_out = nullptr) const;
    Tape::Id group_norm(Tape& t, const ParamBinding& pb, const std::string& name, Tape::Id x,
                        int64_t channels) const;
};

// ---------------------------------------------------------------------------
// latent codec boundary
// ---------------------------------------------------------------------------

// Toy identity codec: the image itself is the latent, rescaled to [-1,1].
Tensor encode_latent(const Image& img);
Image decode_latent(const Tensor& x0);

// Shape contract a full-scale VAE adapter must honor (factor-8 spatial
// compression into 4 channels). No weights are bundled; this only validates
// and computes shapes.
struct LatentShapeContract {
    int spatial_factor = 8;
    int64_t latent_channels = 4;

    std::array<int64_t, 3> latent_shape_for(int width, int height) const;
};

}  // namespace zerocon
