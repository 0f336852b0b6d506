#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zerocon/pipeline.hpp"

namespace zerocon {

// ---------------------------------------------------------------------------
// joint text/image embedding space
// ---------------------------------------------------------------------------

class JointTextImageEncoder {
public:
    virtual ~JointTextImageEncoder() = default;
    virtual Tensor encode_text(const Prompt& p) const = 0;
    virtual Tensor encode_image(const Image& img) const = 0;
};

// Text tower: the toy caption embedding table, mean-pooled. Image tower: a
// small conv head trained contrastively against the (frozen) text tower.
class ToyJointEncoder : public JointTextImageEncoder {
public:
    struct Config {
        int64_t image_size = 32;
        int64_t text_len = 8;
        int64_t embed_dim = 16;
        int64_t conv_width = 16;
        uint64_t init_seed = 99;
    };

    ToyJointEncoder(Config cfg, Tensor text_table);

    Tensor encode_text(const Prompt& p) const override;
    Tensor encode_image(const Image& img) const override;

    // taped image-tower forward used by the contrastive trainer
    Tape::Id image_forward(Tape& tape, const ParamBinding& pb, Tape::Id x) const;
    ParamBinding bind_params(Tape& tape, bool requires_grad) const;

    ParamStore& params() { return params_; }
    const Config& config() const { return cfg_; }

    void save(const std::string& path) const;
    static ToyJointEncoder load(const std::string& path);

private:
    Config cfg_;
    ParamStore params_;
    Tensor text_table_;
};

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

// cosine similarity of pooled embeddings, in [-1,1]
real text_alignment(const Image& image, const Prompt& prompt, const JointTextImageEncoder& enc);

using FeatureProvider = std::function<FeatureStack(const Image&)>;

// feature stack of the clean image at t=0 under zero conditioning, from the
// denoiser's tap layers
FeatureProvider denoiser_feature_provider(const Denoiser& model);

// Mean L2 distance between L2-normalized tap-feature patches of src and
// edited, restricted to background positions (mask marks foreground at image
// resolution; a tap position counts as background when no covered pixel is
// foreground). Labelled "bg-patch-dist" in reports; this is the toy analogue
// of a background-masked perceptual distance, not LPIPS.
real background_preservation(const Image& src, const Image& edited, const std::vector<uint8_t>& mask,
                             const FeatureProvider& features);

struct DirectionSimilarity {
    real sim_text1_image = 0;  // cos(pooled(enc(source)+delta), image)
    real sim_text2_image = 0;  // cos(pooled(enc(target)), image)
    real sim_text1_text2 = 0;
};

DirectionSimilarity direction_similarity_report(const Image& image, const Prompt& source_prompt,
                                                const Prompt& target_prompt, const EditDirection& delta,
                                                const JointTextImageEncoder& joint,
                                                const TextEncoder& encoder);

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

struct TaskSpec {
    std::string name;         // e.g. "red->blue"
    std::string from_phrase;  // e.g. "red"
    std::string to_phrase;    // e.g. "blue"
};

// method variants of the ablation/reporting protocol
enum class Variant {
    full,        // bank direction + both losses
    no_cut,      // lambda_e = 0
    no_guidance, // lambda_c = lambda_e = 0
    word_swap,   // c_hat = enc(target) directly, no guidance ("DDIM" baseline)
};

Variant variant_from(const std::string& name);
std::string to_string(Variant v);

struct ExperimentSpec {
    std::vector<TaskSpec> tasks;
    std::vector<Variant> variants;
    std::vector<uint64_t> seeds;
    GuidanceConfig guidance;
    int bank_size = 16;
    int workers = 1;
};

struct RunRecord {
    std::string variant;
    std::string task;
    uint64_t seed = 0;
    // missing when the run failed; failures never abort the sweep
    std::optional<real> alignment;
    std::optional<real> bg_distance;
    std::string error;
};

struct MetricCell {
    std::string variant;
    std::string task;
    real alignment = 0;
    real bg_distance = 0;
    int n_images = 0;
};

struct MetricReport {
    std::vector<RunRecord> runs;
    std::vector<MetricCell> cells;

    // columns variant,task,seed,alignment,bg_distance
    std::string runs_csv() const;
    std::string summary_csv() const;
    std::string summary_table() const;
};

MetricReport run_experiment(const ExperimentSpec& spec, const CaptionedImageSet& data, const Denoiser& model,
                            const NoiseSchedule& sched, const JointTextImageEncoder& joint,
                            const TextEncoder& encoder);

// aggregation used by both run_experiment and the report command
std::vector<MetricCell> aggregate_runs(const std::vector<RunRecord>& runs);
std::vector<RunRecord> parse_runs_csv(const std::string& csv);

}  // namespace zerocon
