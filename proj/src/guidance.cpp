#include "zerocon/guidance.hpp"

#include <cmath>

#include "zerocon/rng.hpp"

namespace zerocon {

void GuidanceConfig::validate() const {
    if (lambda_c < 0 || lambda_e < 0 || lambda_lr < 0)
        throw ConfigError("guidance: loss weights and learning rate must be nonnegative");
    if (!(tau > 0)) throw ConfigError("guidance: tau must be positive");
    if (lambda_e > 0 && patches_per_layer < 2)
        throw ConfigError("guidance: patches_per_layer must be >= 2 when lambda_e > 0");
    if (patches_per_layer < 1) throw ConfigError("guidance: patches_per_layer must be >= 1");
}

const std::vector<int64_t>& PatchSelection::at(const std::string& layer) const {
    for (const auto& [name, idx] : layers)
        if (name == layer) return idx;
    throw Error("no patch selection for layer " + layer);
}

real cross_attention_loss(const AttentionMapSet& m_hat, const AttentionMapSet& m_ref) {
    if (m_hat.maps.size() != m_ref.maps.size())
        throw Error("cross_attention_loss: layer counts differ (" + std::to_string(m_hat.maps.size()) +
                    " vs " + std::to_string(m_ref.maps.size()) + ")");
    if (m_hat.maps.empty()) throw Error("cross_attention_loss: no recorded layers");
    real acc = 0;
    for (size_t i = 0; i < m_hat.maps.size(); ++i) {
        const auto& a = m_hat.maps[i];
        const auto& b = m_ref.maps[i];
        if (a.layer != b.layer) throw Error("cross_attention_loss: layer sets differ at " + a.layer);
        check_same_shape(a.map, b.map, "cross_attention_loss layer " + a.layer);
        real sq = 0;
        for (int64_t j = 0; j < a.map.numel(); ++j) {
            real d = a.map.data[j] - b.map.data[j];
            sq += d * d;
        }
        acc += std::sqrt(sq);
    }
    return acc / static_cast<real>(m_hat.maps.size());
}

PatchSelection sample_patches(const std::vector<std::pair<std::string, int64_t>>& layer_sizes,
                              int patches_per_layer, uint64_t seed) {
    PatchSelection sel;
    for (const auto& [name, n] : layer_sizes) {
        if (patches_per_layer > n)
            throw Error("sample_patches: " + std::to_string(patches_per_layer) + " patches from layer " +
                        name + " of size " + std::to_string(n));
        Rng rng(seed, "patches:" + name);
        sel.layers.emplace_back(name, rng.sample_without_replacement(n, patches_per_layer));
    }
    return sel;
}

real info_nce(const std::vector<real>& query, const std::vector<real>& positive,
              const std::vector<std::vector<real>>& negatives, real tau) {
    if (negatives.empty()) throw Error("info_nce: needs at least one negative");
    if (query.size() != positive.size()) throw Error("info_nce: query/positive dims differ");
    auto dot = [&](const std::vector<real>& v) {
        if (v.size() != query.size()) throw Error("info_nce: negative dim differs from query");
        real acc = 0;
        for (size_t i = 0; i < v.size(); ++i) acc += query[i] * v[i];
        return acc / tau;
    };
    real pos = dot(positive);
    real mx = pos;
    std::vector<real> neg_sims;
    neg_sims.reserve(negatives.size());
    for (const auto& n : negatives) {
        neg_sims.push_back(dot(n));
        mx = std::max(mx, neg_sims.back());
    }
    real z_neg = 0;
    for (real s : neg_sims) z_neg += std::exp(s - mx);
    // pulled-out positive keeps the value strictly positive when it dominates
    if (pos >= mx) return std::log1p(z_neg);
    return (mx - pos) + std::log(std::exp(pos - mx) + z_neg);
}

real total_loss(real l_c, real l_e, const GuidanceConfig& config) {
    if (!std::isfinite(l_c) || !std::isfinite(l_e)) throw Error("total_loss: non-finite inputs");
    return config.lambda_c * l_c + config.lambda_e * l_e;
}

Tensor guided_update(const Tensor& x, const Tensor& grad, real lambda_lr) {
    check_same_shape(x, grad, "guided_update");
    if (lambda_lr == 0) return x;
    Tensor out = x;
    for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= lambda_lr * grad.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// taped loss builders (shared by cut_loss and loss_gradient)
// ---------------------------------------------------------------------------

namespace {

// (S,C) matrix of the channel vectors at the selected positions of a (C,N)
// feature map, optionally row-normalized
Tensor select_source_patches(const Tensor& features, const std::vector<int64_t>& idx, bool normalize) {
    int64_t c = features.dim(0), n = features.dim(1);
    Tensor out({static_cast<int64_t>(idx.size()), c});
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= n) throw Error("patch index out of range");
        for (int64_t j = 0; j < c; ++j) out.data[i * c + j] = features.data[j * n + idx[i]];
        if (normalize) {
            real sq = 0;
            for (int64_t j = 0; j < c; ++j) sq += out.data[i * c + j] * out.data[i * c + j];
            real inv = 1 / std::sqrt(sq + real(1e-12));
            for (int64_t j = 0; j < c; ++j) out.data[i * c + j] *= inv;
        }
    }
    return out;
}

Tape::Id normalize_rows(Tape& t, Tape::Id x) {
    int64_t cols = t.val(x).dim(1);
    Tape::Id sq = t.row_sum(t.mul(x, x));
    Tape::Id inv = t.pow_scalar(t.add_scalar(sq, real(1e-12)), real(-0.5));
    return t.mul(x, t.broadcast_cols(inv, cols));
}

struct CutLayerInput {
    std::string layer;
    Tape::Id edit_nc;          // (N,C) on tape
    const Tensor* src_cn;      // (C,N) constant
};

// sum over layers and queries of the InfoNCE terms, / total query count
Tape::Id build_cut_loss(Tape& t, const std::vector<CutLayerInput>& layers, const GuidanceConfig& cfg,
                        const PatchSelection& sel) {
    Tape::Id total = -1;
    int64_t queries = 0;
    for (const auto& li : layers) {
        const auto& idx = sel.at(li.layer);
        int64_t s = static_cast<int64_t>(idx.size());
        Tensor src = select_source_patches(*li.src_cn, idx, cfg.normalize_patches);
        Tape::Id src_id = t.leaf(std::move(src));
        Tape::Id edit_sel = t.gather_rows(li.edit_nc, idx);
        if (cfg.normalize_patches) edit_sel = normalize_rows(t, edit_sel);
        // Z[i][j] = h_i . h_hat_j / tau; positives on the diagonal
        Tape::Id z = t.scale(t.matmul_nt(src_id, edit_sel), 1 / cfg.tau);
        Tape::Id lse = t.logsumexp_rows(z);
        Tensor eye({s, s});
        for (int64_t i = 0; i < s; ++i) eye.data[i * s + i] = 1;
        Tape::Id diag = t.row_sum(t.mul(z, t.leaf(std::move(eye))));
        Tape::Id layer_loss = t.sum_all(t.sub(lse, diag));
        total = (total < 0) ? layer_loss : t.add(total, layer_loss);
        queries += s;
    }
    if (total < 0) return t.leaf(Tensor::scalar(0));
    return t.scale(total, real(1) / static_cast<real>(queries));
}

// mean over layers of the Frobenius norm of (M_hat - M_ref)
Tape::Id build_ca_loss(Tape& t, const std::vector<std::pair<std::string, Tape::Id>>& m_hat,
                       const AttentionMapSet& m_ref) {
    if (m_hat.size() != m_ref.maps.size())
        throw Error("cross-attention loss: recorded layer counts differ");
    Tape::Id total = -1;
    for (size_t i = 0; i < m_hat.size(); ++i) {
        if (m_hat[i].first != m_ref.maps[i].layer)
            throw Error("cross-attention loss: layer sets differ at " + m_hat[i].first);
        const Tensor& ref = m_ref.maps[i].map;  // (N,L)
        Tape::Id hat = t.reshape(m_hat[i].second, {ref.dim(0), ref.dim(1)});
        Tape::Id diff = t.sub(hat, t.leaf(ref));
        Tape::Id norm = t.pow_scalar(t.sum_all(t.mul(diff, diff)), real(0.5));
        total = (total < 0) ? norm : t.add(total, norm);
    }
    if (total < 0) return t.leaf(Tensor::scalar(0));
    return t.scale(total, real(1) / static_cast<real>(m_hat.size()));
}

}  // namespace

real cut_loss(const FeatureStack& src_features, const FeatureStack& edit_features,
              const GuidanceConfig& config, const PatchSelection& selection) {
    config.validate();
    if (src_features.taps.size() != edit_features.taps.size())
        throw Error("cut_loss: tap sets differ in size");
    Tape tape;
    std::vector<CutLayerInput> layers;
    std::vector<Tensor> transposed(edit_features.taps.size());
    for (size_t i = 0; i < src_features.taps.size(); ++i) {
        const auto& s = src_features.taps[i];
        const auto& e = edit_features.taps[i];
        if (s.layer != e.layer) throw Error("cut_loss: tap sets differ at " + s.layer);
        check_same_shape(s.features, e.features, "cut_loss tap " + s.layer);
        int64_t c = e.features.dim(0), n = e.features.dim(1);
        transposed[i] = Tensor({n, c});
        for (int64_t p = 0; p < n; ++p)
            for (int64_t j = 0; j < c; ++j) transposed[i].data[p * c + j] = e.features.data[j * n + p];
        layers.push_back({s.layer, tape.leaf_ref(&transposed[i]), &s.features});
    }
    Tape::Id loss = build_cut_loss(tape, layers, config, selection);
    return tape.val(loss).item();
}

LossGradient loss_gradient(const Denoiser& model, const Tensor& x_edit, int t, const TextEmbedding& c_hat,
                           const SourceStepContext& src, const GuidanceConfig& config) {
    config.validate();
    if (!src.latent || !src.attention || !src.cond) throw Error("loss_gradient: incomplete source context");
    if (!model.differentiable()) throw Error("loss_gradient: denoiser is not differentiable");
    auto ls = model.latent_shape();
    check_shape(x_edit.rank() == 3 && x_edit.dim(0) == ls[0] && x_edit.dim(1) == ls[1] && x_edit.dim(2) == ls[2],
                "loss_gradient latent " + shape_str(x_edit.shape));

    // edited branch, taped
    Tape tape;
    Tape::Id x = tape.leaf(Tensor::from({1, ls[0], ls[1], ls[2]}, x_edit.data), true);
    TapedForward fw = model.forward_latent(tape, x, t, c_hat, true, true);

    // source branch, constants; features recomputed from the stored latent
    const TextEmbedding& source_cond = config.source_uses_edited_cond ? c_hat : *src.cond;
    DenoiserOutput source = model.predict(*src.latent, t, source_cond, RecordFlags{false, true, false});

    Tape::Id lc_node = build_ca_loss(tape, fw.attention, *src.attention);

    std::vector<CutLayerInput> layers;
    std::vector<std::pair<std::string, int64_t>> layer_sizes;
    for (const auto& tap_name : config.tap_layers) {
        const Tensor* src_cn = nullptr;
        for (const auto& tap : source.features->taps)
            if (tap.layer == tap_name) src_cn = &tap.features;
        Tape::Id edit_nc = -1;
        for (const auto& [name, id] : fw.features)
            if (name == tap_name) edit_nc = id;
        if (!src_cn || edit_nc < 0) throw Error("loss_gradient: tap layer not recorded: " + tap_name);
        const Tensor& e3 = tape.val(edit_nc);  // (1,N,C)
        layers.push_back({tap_name, tape.reshape(edit_nc, {e3.dim(1), e3.dim(2)}), src_cn});
        layer_sizes.emplace_back(tap_name, src_cn->dim(1));
    }
    PatchSelection sel =
        sample_patches(layer_sizes, config.patches_per_layer, config.patch_seed ^ static_cast<uint64_t>(t));
    Tape::Id le_node = build_cut_loss(tape, layers, config, sel);

    LossGradient out;
    out.l_c = tape.val(lc_node).item();
    out.l_e = tape.val(le_node).item();
    if (!std::isfinite(out.l_c) || !std::isfinite(out.l_e))
        throw Error("loss_gradient: non-finite loss at t=" + std::to_string(t) + " (l_c=" +
                    std::to_string(out.l_c) + ", l_e=" + std::to_string(out.l_e) + ")");

    if (config.lambda_c == 0 && config.lambda_e == 0) {
        out.grad = Tensor::zeros({ls[0], ls[1], ls[2]});
        return out;
    }
    Tape::Id total = tape.add(tape.scale(lc_node, config.lambda_c), tape.scale(le_node, config.lambda_e));
    tape.backward(total);
    Tensor g = tape.grad_of(x);
    out.grad = Tensor::from({ls[0], ls[1], ls[2]}, std::move(g.data));
    if (!all_finite(out.grad))
        throw Error("loss_gradient: non-finite gradient at t=" + std::to_string(t) + " (l_c=" +
                    std::to_string(out.l_c) + ", l_e=" + std::to_string(out.l_e) + ")");
    return out;
}

}  // namespace zerocon
