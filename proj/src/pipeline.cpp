#include "zerocon/pipeline.hpp"

#include <chrono>
#include <filesystem>

namespace zerocon {

namespace {

void check_finite_latent(const Tensor& x, int t, const char* stage) {
    if (!all_finite(x))
        throw Error(std::string(stage) + ": non-finite latent at t=" + std::to_string(t));
}

}  // namespace

void SourceTrajectory::validate(const NoiseSchedule& sched) const {
    std::vector<int> expected(sched.substep_indices.rbegin(), sched.substep_indices.rend());
    if (timesteps != expected) throw Error("trajectory timesteps do not match the schedule substeps");
    if (latents.size() != timesteps.size() || attention.size() != timesteps.size())
        throw Error("trajectory must hold one latent and one attention set per timestep");
}

Tensor invert(const Tensor& x0, const TextEmbedding& c, const Denoiser& model, const NoiseSchedule& sched) {
    std::vector<int> ts = sched.ascending_steps();
    Tensor x = x0;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        Tensor eps = model.predict(x, ts[i], c, RecordFlags::none()).eps;
        x = ddim_invert_step(x, eps, ts[i], ts[i + 1], sched);
        check_finite_latent(x, ts[i + 1], "invert");
    }
    return x;
}

Tensor reconstruct(const Tensor& x_T, const TextEmbedding& c, const Denoiser& model,
                   const NoiseSchedule& sched) {
    std::vector<int> ts = sched.descending_steps();
    Tensor x = x_T;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        Tensor eps = model.predict(x, ts[i], c, RecordFlags::none()).eps;
        x = ddim_step(x, eps, ts[i], ts[i + 1], sched);
        check_finite_latent(x, ts[i + 1], "reconstruct");
    }
    return x;
}

SourceTrajectory record_source(const Tensor& x_T, const TextEmbedding& c, const Denoiser& model,
                               const NoiseSchedule& sched) {
    SourceTrajectory traj;
    traj.x_T = x_T;
    traj.cond = c;
    std::vector<int> ts = sched.descending_steps();
    Tensor x = x_T;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        DenoiserOutput out = model.predict(x, ts[i], c, RecordFlags{true, false, false});
        traj.timesteps.push_back(ts[i]);
        traj.latents.push_back(x);
        traj.attention.push_back(std::move(*out.attention));
        x = ddim_step(x, out.eps, ts[i], ts[i + 1], sched);
        check_finite_latent(x, ts[i + 1], "record_source");
    }
    return traj;
}

SourceTrajectory record_source_from_inversion(const Tensor& x0, const TextEmbedding& c,
                                              const Denoiser& model, const NoiseSchedule& sched) {
    SourceTrajectory traj;
    traj.cond = c;
    std::vector<int> ts = sched.ascending_steps();
    Tensor x = x0;
    std::vector<Tensor> path;  // latents at the substep timesteps, ascending
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        Tensor eps = model.predict(x, ts[i], c, RecordFlags::none()).eps;
        x = ddim_invert_step(x, eps, ts[i], ts[i + 1], sched);
        check_finite_latent(x, ts[i + 1], "record_source_from_inversion");
        path.push_back(x);
    }
    traj.x_T = x;
    for (size_t i = path.size(); i-- > 0;) {
        int t = ts[i + 1];
        DenoiserOutput out = model.predict(path[i], t, c, RecordFlags{true, false, false});
        traj.timesteps.push_back(t);
        traj.latents.push_back(std::move(path[i]));
        traj.attention.push_back(std::move(*out.attention));
    }
    return traj;
}

EditResult edit(const SourceTrajectory& traj, const TextEmbedding& c, const EditDirection& delta,
                const Denoiser& model, const NoiseSchedule& sched, const GuidanceConfig& config) {
    config.validate();
    traj.validate(sched);
    auto start = std::chrono::steady_clock::now();

    TextEmbedding c_hat = apply_direction(c, delta);
    std::vector<int> ts = sched.descending_steps();
    Tensor x = traj.x_T;
    EditResult result;
    result.config = config;
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        int t = ts[i], t_prev = ts[i + 1];
        SourceStepContext src{&traj.latents[i], &traj.attention[i], &traj.cond};
        LossGradient lg = loss_gradient(model, x, t, c_hat, src, config);
        Tensor nudged = guided_update(x, lg.grad, config.lambda_lr);
        Tensor eps = model.predict(nudged, t, c_hat, RecordFlags::none()).eps;
        Tensor x_next = ddim_step(x, eps, t, t_prev, sched);
        check_finite_latent(x_next, t_prev, "edit");
        result.losses.push_back({static_cast<int>(i), t, lg.l_c, lg.l_e,
                                 total_loss(lg.l_c, lg.l_e, config), l2_norm(lg.grad)});
        x = std::move(x_next);
    }
    result.latent = std::move(x);
    result.image = decode_latent(result.latent);
    result.wall_seconds =
        std::chrono::duration<real>(std::chrono::steady_clock::now() - start).count();
    return result;
}

// ---------------------------------------------------------------------------
// trajectory persistence
// ---------------------------------------------------------------------------

void save_trajectory(const std::string& dir, const SourceTrajectory& traj) {
    ensure_dir(dir);
    std::filesystem::path base(dir);
    KeyValueFile manifest;
    manifest.set("format", "zerocon-trajectory-1");
    manifest.set("steps", std::to_string(traj.timesteps.size()));
    std::string steps;
    for (size_t i = 0; i < traj.timesteps.size(); ++i) {
        if (i) steps += ",";
        steps += std::to_string(traj.timesteps[i]);
    }
    manifest.set("timesteps", steps);
    std::string layers;
    if (!traj.attention.empty()) {
        for (size_t i = 0; i < traj.attention[0].maps.size(); ++i) {
            if (i) layers += ",";
            layers += traj.attention[0].maps[i].layer;
        }
    }
    manifest.set("attention_layers", layers);

    write_zct1((base / "x_T.zct").string(), traj.x_T);
    write_zct1((base / "cond_tokens.zct").string(), traj.cond.tokens);
    write_zct1((base / "cond_pooled.zct").string(), traj.cond.pooled);
    char name[64];
    for (size_t i = 0; i < traj.latents.size(); ++i) {
        std::snprintf(name, sizeof name, "lat_%03zu.zct", i);
        write_zct1((base / name).string(), traj.latents[i]);
        for (size_t l = 0; l < traj.attention[i].maps.size(); ++l) {
            std::snprintf(name, sizeof name, "att_%03zu_%zu.zct", i, l);
            write_zct1((base / name).string(), traj.attention[i].maps[l].map);
        }
    }
    manifest.save((base / "manifest.txt").string());
}

SourceTrajectory load_trajectory(const std::string& dir) {
    std::filesystem::path base(dir);
    KeyValueFile manifest = KeyValueFile::load((base / "manifest.txt").string());
    if (manifest.get_str("format", "") != "zerocon-trajectory-1")
        throw Error("not a trajectory directory: " + dir);
    SourceTrajectory traj;
    std::string steps = manifest.get_str("timesteps", "");
    size_t pos = 0;
    while (pos < steps.size()) {
        size_t end = steps.find(',', pos);
        if (end == std::string::npos) end = steps.size();
        traj.timesteps.push_back(std::stoi(steps.substr(pos, end - pos)));
        pos = end + 1;
    }
    std::vector<std::string> layers;
    std::string layer_str = manifest.get_str("attention_layers", "");
    pos = 0;
    while (pos < layer_str.size()) {
        size_t end = layer_str.find(',', pos);
        if (end == std::string::npos) end = layer_str.size();
        layers.push_back(layer_str.substr(pos, end - pos));
        pos = end + 1;
    }
    traj.x_T = read_zct1((base / "x_T.zct").string());
    traj.cond.tokens = read_zct1((base / "cond_tokens.zct").string());
    traj.cond.pooled = read_zct1((base / "cond_pooled.zct").string());
    char name[64];
    for (size_t i = 0; i < traj.timesteps.size(); ++i) {
        std::snprintf(name, sizeof name, "lat_%03zu.zct", i);
        traj.latents.push_back(read_zct1((base / name).string()));
        AttentionMapSet set;
        for (size_t l = 0; l < layers.size(); ++l) {
            std::snprintf(name, sizeof name, "att_%03zu_%zu.zct", i, l);
            set.maps.push_back({layers[l], true, read_zct1((base / name).string())});
        }
        traj.attention.push_back(std::move(set));
    }
    return traj;
}

std::string losses_csv(const std::vector<StepLossRecord>& records) {
    std::string out = "step,t,l_c,l_e,l_total,grad_norm\n";
    for (const auto& r : records) {
        out += std::to_string(r.step) + "," + std::to_string(r.t) + "," + format_real(r.l_c) + "," +
               format_real(r.l_e) + "," + format_real(r.l_total) + "," + format_real(r.grad_norm) + "\n";
    }
    return out;
}

}  // namespace zerocon
