#include "zerocon/train.hpp"

#include <cmath>
#include <cstdio>

#include "zerocon/rng.hpp"

namespace zerocon {

Adam::Adam(ParamStore& params, real lr, real beta1, real beta2, real eps)
    : params_(&params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(params.items.size());
    v_.reserve(params.items.size());
    for (const auto& [name, t] : params.items) {
        m_.push_back(Tensor::zeros(t.shape));
        v_.push_back(Tensor::zeros(t.shape));
    }
}

void Adam::step(const std::vector<std::pair<std::string, Tensor>>& grads) {
    ++t_;
    real bc1 = 1 - std::pow(beta1_, static_cast<real>(t_));
    real bc2 = 1 - std::pow(beta2_, static_cast<real>(t_));
    for (size_t i = 0; i < params_->items.size(); ++i) {
        auto& [name, p] = params_->items[i];
        const Tensor* g = nullptr;
        for (const auto& [gn, gt] : grads)
            if (gn == name) g = &gt;
        if (!g) continue;
        check_same_shape(p, *g, "adam step " + name);
        for (int64_t j = 0; j < p.numel(); ++j) {
            real gj = g->data[j];
            m_[i].data[j] = beta1_ * m_[i].data[j] + (1 - beta1_) * gj;
            v_[i].data[j] = beta2_ * v_[i].data[j] + (1 - beta2_) * gj * gj;
            real mhat = m_[i].data[j] / bc1;
            real vhat = v_[i].data[j] / bc2;
            p.data[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

real clip_grads(std::vector<std::pair<std::string, Tensor>>& grads, real max_norm) {
    real sq = 0;
    for (const auto& [name, g] : grads)
        for (real v : g.data) sq += v * v;
    real norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        real s = max_norm / norm;
        for (auto& [name, g] : grads)
            for (auto& v : g.data) v *= s;
    }
    return norm;
}

namespace {

struct Batch {
    Tensor x_t;   // (B,C,H,W)
    Tensor eps;   // (B,C,H,W)
    Tensor cond;  // (B,L,d) when built by table values
    std::vector<int64_t> token_ids;  // B*L, for taped embedding lookups
    std::vector<int> ts;
};

Batch make_batch(const CaptionedImageSet& data, const std::vector<int>& items, Rng& rng,
                 const NoiseSchedule& sched, const UNetConfig& arch) {
    int64_t b = static_cast<int64_t>(items.size());
    auto ls = std::array<int64_t, 3>{arch.channels, arch.image_size, arch.image_size};
    Batch batch;
    batch.x_t = Tensor({b, ls[0], ls[1], ls[2]});
    batch.eps = Tensor({b, ls[0], ls[1], ls[2]});
    int64_t per = ls[0] * ls[1] * ls[2];
    for (int64_t i = 0; i < b; ++i) {
        const CaptionedImage& item = data.items[items[i]];
        int t = static_cast<int>(rng.uniform_int(1, sched.step_count));
        batch.ts.push_back(t);
        Tensor x0 = encode_latent(item.image);
        Tensor eps = rng.normal_tensor(x0.shape);
        Tensor xt = q_sample(x0, t, eps, sched);
        std::copy_n(xt.ptr(), per, batch.x_t.ptr() + i * per);
        std::copy_n(eps.ptr(), per, batch.eps.ptr() + i * per);
        auto ids = Vocab::instance().encode_ids(item.caption, arch.text_len);
        batch.token_ids.insert(batch.token_ids.end(), ids.begin(), ids.end());
    }
    return batch;
}

}  // namespace

ToyTraining train_toy(const CaptionedImageSet& data, const NoiseSchedule& sched, const TrainConfig& cfg,
                      UNetConfig arch) {
    if (data.items.empty()) throw Error("train_toy: dataset is empty");
    int n = static_cast<int>(data.items.size());
    int holdout = std::min(cfg.holdout, n / 4);
    int train_n = n - holdout;
    if (train_n < 1) throw Error("train_toy: dataset too small for the holdout split");
    if (!data.items[0].image.rgb.empty() &&
        (data.items[0].image.width != arch.image_size || data.items[0].image.height != arch.image_size))
        throw Error("train_toy: dataset image size does not match the model config");

    arch.init_seed = split_seed(cfg.seed, "init");
    arch.max_timestep = std::max(arch.max_timestep, sched.step_count);
    ToyTraining result{ToyUNet(arch), {}};
    ToyUNet& model = result.model;
    Adam opt(model.params(), cfg.lr);

    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng(cfg.seed, "train", static_cast<uint64_t>(step));
        std::vector<int> items(cfg.batch);
        for (auto& i : items) i = static_cast<int>(rng.uniform_int(0, train_n - 1));
        Batch batch = make_batch(data, items, rng, sched, arch);

        Tape tape;
        ParamBinding pb = model.bind_params(tape, true);
        Tape::Id x = tape.leaf(std::move(batch.x_t));
        Tape::Id cond = tape.reshape(tape.gather_rows(pb.at("text.embed"), batch.token_ids),
                                     {static_cast<int64_t>(cfg.batch), arch.text_len, arch.text_dim});
        TapedForward fw = model.run(tape, pb, x, batch.ts, cond, false, false);
        Tape::Id diff = tape.sub(fw.eps, tape.leaf(std::move(batch.eps)));
        Tape::Id loss = tape.mean_all(tape.mul(diff, diff));
        real loss_v = tape.val(loss).item();
        if (!std::isfinite(loss_v))
            throw Error("training diverged: non-finite loss " + std::to_string(loss_v) + " at step " +
                        std::to_string(step));
        result.stats.loss_curve.push_back(loss_v);

        tape.backward(loss);
        std::vector<std::pair<std::string, Tensor>> grads;
        grads.reserve(pb.leaves.size());
        for (const auto& [name, id] : pb.leaves) grads.emplace_back(name, tape.grad_of(id));
        clip_grads(grads, cfg.grad_clip);
        opt.step(grads);

        if (cfg.verbose && (step % 50 == 0 || step + 1 == cfg.steps))
            std::fprintf(stderr, "step %d  loss %.4f\n", step, loss_v);
    }

    TrainStats hold = evaluate_holdout(model, data, sched, cfg);
    result.stats.holdout_loss = hold.holdout_loss;
    result.stats.baseline_loss = hold.baseline_loss;
    return result;
}

TrainStats evaluate_holdout(const ToyUNet& model, const CaptionedImageSet& data, const NoiseSchedule& sched,
                            const TrainConfig& cfg) {
    int n = static_cast<int>(data.items.size());
    int holdout = std::min(cfg.holdout, n / 4);
    if (holdout < 1) throw Error("evaluate_holdout: no held-out items");
    const UNetConfig& arch = model.config();
    ToyTextEncoder enc = model.make_text_encoder();

    real err_sum = 0, base_sum = 0;
    int64_t count = 0;
    for (int i = n - holdout; i < n; ++i) {
        const CaptionedImage& item = data.items[i];
        TextEmbedding c = enc.encode(Prompt{item.caption});
        Tensor x0 = encode_latent(item.image);
        for (int k = 0; k < cfg.holdout_draws; ++k) {
            Rng rng(cfg.seed, "holdout", static_cast<uint64_t>(i) * 997 + k);
            int t = static_cast<int>(rng.uniform_int(1, sched.step_count));
            Tensor eps = rng.normal_tensor(x0.shape);
            Tensor xt = q_sample(x0, t, eps, sched);
            Tensor pred = model.predict(xt, t, c, RecordFlags::none()).eps;
            err_sum += mean_sq(sub(pred, eps));
            base_sum += mean_sq(eps);
            ++count;
        }
    }
    TrainStats stats;
    stats.holdout_loss = err_sum / static_cast<real>(count);
    stats.baseline_loss = base_sum / static_cast<real>(count);
    return stats;
}

void train_joint_encoder(ToyJointEncoder& joint, const CaptionedImageSet& data, const JointTrainConfig& cfg) {
    if (data.items.empty()) throw Error("train_joint_encoder: dataset is empty");
    const auto& jc = joint.config();
    Adam opt(joint.params(), cfg.lr);
    int n = static_cast<int>(data.items.size());

    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng(cfg.seed, "joint-train", static_cast<uint64_t>(step));
        int64_t b = cfg.batch;
        Tensor x({b, 3, jc.image_size, jc.image_size});
        Tensor txt({b, jc.embed_dim});
        int64_t per = 3 * jc.image_size * jc.image_size;
        for (int64_t i = 0; i < b; ++i) {
            const CaptionedImage& item = data.items[rng.uniform_int(0, n - 1)];
            Tensor x0 = encode_latent(item.image);
            std::copy_n(x0.ptr(), per, x.ptr() + i * per);
            Tensor pooled = joint.encode_text(Prompt{item.caption});
            real norm = l2_norm(pooled) + real(1e-12);
            for (int64_t j = 0; j < jc.embed_dim; ++j) txt.data[i * jc.embed_dim + j] = pooled.data[j] / norm;
        }

        Tape tape;
        ParamBinding pb = joint.bind_params(tape, true);
        Tape::Id img = joint.image_forward(tape, pb, tape.leaf(std::move(x)));  // (B,d)
        Tape::Id sq = tape.row_sum(tape.mul(img, img));
        Tape::Id inv = tape.pow_scalar(tape.add_scalar(sq, real(1e-12)), real(-0.5));
        Tape::Id img_n = tape.mul(img, tape.broadcast_cols(inv, jc.embed_dim));
        Tape::Id logits = tape.scale(tape.matmul_nt(img_n, tape.leaf(std::move(txt))), 1 / cfg.tau);
        Tensor eye({b, b});
        for (int64_t i = 0; i < b; ++i) eye.data[i * b + i] = 1;
        Tape::Id diag = tape.row_sum(tape.mul(logits, tape.leaf(std::move(eye))));
        Tape::Id loss = tape.mean_all(tape.sub(tape.logsumexp_rows(logits), diag));
        real loss_v = tape.val(loss).item();
        if (!std::isfinite(loss_v))
            throw Error("joint encoder training diverged at step " + std::to_string(step));
        tape.backward(loss);
        std::vector<std::pair<std::string, Tensor>> grads;
        for (const auto& [name, id] : pb.leaves) grads.emplace_back(name, tape.grad_of(id));
        clip_grads(grads, real(5));
        opt.step(grads);
    }
}

}  // namespace zerocon
