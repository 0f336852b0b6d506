#include "zerocon/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "zerocon/rng.hpp"

namespace zerocon {

// ---------------------------------------------------------------------------
// attention primitive
// ---------------------------------------------------------------------------

AttentionResult attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    check_shape(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention expects 2-D inputs");
    check_shape(q.dim(1) == k.dim(1), "attention: Q and K dims disagree");
    check_shape(k.dim(0) == v.dim(0), "attention: K and V row counts disagree");
    if (q.dim(1) < 1) throw Error("attention: d must be >= 1");
    int64_t n = q.dim(0), m = k.dim(0), d = q.dim(1), dv = v.dim(1);
    real inv = 1 / std::sqrt(static_cast<real>(d));

    AttentionResult r;
    r.map = Tensor({n, m});
    r.out = Tensor({n, dv});
    for (int64_t i = 0; i < n; ++i) {
        real* row = r.map.ptr() + i * m;
        real mx = -std::numeric_limits<real>::infinity();
        for (int64_t j = 0; j < m; ++j) {
            real s = 0;
            for (int64_t e = 0; e < d; ++e) s += q.data[i * d + e] * k.data[j * d + e];
            row[j] = s * inv;
            mx = std::max(mx, row[j]);
        }
        real z = 0;
        for (int64_t j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (int64_t j = 0; j < m; ++j) row[j] /= z;
        for (int64_t e = 0; e < dv; ++e) {
            real acc = 0;
            for (int64_t j = 0; j < m; ++j) acc += row[j] * v.data[j * dv + e];
            r.out.data[i * dv + e] = acc;
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// interface defaults
// ---------------------------------------------------------------------------

TapedForward Denoiser::forward_latent(Tape&, Tape::Id, int, const TextEmbedding&, bool, bool) const {
    throw Error("this denoiser does not support taped forwards");
}

// ---------------------------------------------------------------------------
// parameter store
// ---------------------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    for (auto& [n, t] : items)
        if (n == name) throw Error("duplicate parameter: " + name);
    items.emplace_back(name, std::move(init));
    return items.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
    for (auto& [n, t] : items)
        if (n == name) return t;
    throw Error("unknown parameter: " + name);
}

const Tensor& ParamStore::at(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return t;
    throw Error("unknown parameter: " + name);
}

Tape::Id ParamBinding::at(const std::string& name) const {
    for (const auto& [n, id] : leaves)
        if (n == name) return id;
    throw Error("parameter not bound: " + name);
}

// ---------------------------------------------------------------------------
// toy U-Net
// ---------------------------------------------------------------------------

namespace {

int64_t pick_groups(int64_t channels, int64_t preferred) {
    for (int64_t g = std::min(channels, preferred); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

Tensor conv_init(Rng& rng, int64_t co, int64_t ci, int64_t k) {
    Tensor w = rng.normal_tensor({co, ci, k, k});
    real s = std::sqrt(real(2) / static_cast<real>(ci * k * k));
    for (auto& v : w.data) v *= s;
    return w;
}

Tensor linear_init(Rng& rng, int64_t in, int64_t out) {
    Tensor w = rng.normal_tensor({in, out});
    real s = std::sqrt(real(1) / static_cast<real>(in));
    for (auto& v : w.data) v *= s;
    return w;
}

}  // namespace

ToyUNet::ToyUNet(UNetConfig cfg) : cfg_(cfg) {
    if (cfg_.image_size % 4 != 0) throw ConfigError("unet: image_size must be divisible by 4");
    if (cfg_.width1 % cfg_.heads != 0) throw ConfigError("unet: width1 must be divisible by heads");
    Rng rng(cfg_.init_seed, "unet-init");
    int64_t w0 = cfg_.width0, w1 = cfg_.width1, td = cfg_.time_dim, dt = cfg_.text_dim;

    params_.add("text.embed", scale(rng.normal_tensor({Vocab::instance().size(), dt}), real(0.2)));

    params_.add("time.fc1.w", linear_init(rng, td, td));
    params_.add("time.fc1.b", Tensor({td}));
    params_.add("time.fc2.w", linear_init(rng, td, td));
    params_.add("time.fc2.b", Tensor({td}));
    // pooled-text projection into the timestep embedding; the global
    // conditioning pathway alongside the spatial cross-attention blocks
    params_.add("time.text.w", linear_init(rng, dt, td));

    params_.add("in.conv.w", conv_init(rng, w0, cfg_.channels, 3));
    params_.add("in.conv.b", Tensor({w0}));

    auto add_resblock = [&](const std::string& name, int64_t cin, int64_t cout) {
        params_.add(name + ".gn1.g", Tensor::full({cin}, 1));
        params_.add(name + ".gn1.b", Tensor({cin}));
        params_.add(name + ".conv1.w", conv_init(rng, cout, cin, 3));
        params_.add(name + ".conv1.b", Tensor({cout}));
        params_.add(name + ".temb.w", linear_init(rng, td, cout));
        params_.add(name + ".temb.b", Tensor({cout}));
        params_.add(name + ".gn2.g", Tensor::full({cout}, 1));
        params_.add(name + ".gn2.b", Tensor({cout}));
        // zero-init so each block starts as the identity
        params_.add(name + ".conv2.w", Tensor({cout, cout, 3, 3}));
        params_.add(name + ".conv2.b", Tensor({cout}));
        if (cin != cout) {
            params_.add(name + ".skip.w", conv_init(rng, cout, cin, 1));
            params_.add(name + ".skip.b", Tensor({cout}));
        }
    };
    // out projections start small but nonzero so the conditioning pathway
    // receives gradient from the first step
    auto add_selfattn = [&](const std::string& name, int64_t c) {
        params_.add(name + ".gn.g", Tensor::full({c}, 1));
        params_.add(name + ".gn.b", Tensor({c}));
        params_.add(name + ".q.w", linear_init(rng, c, c));
        params_.add(name + ".k.w", linear_init(rng, c, c));
        params_.add(name + ".v.w", linear_init(rng, c, c));
        params_.add(name + ".o.w", scale(linear_init(rng, c, c), real(0.2)));
        params_.add(name + ".o.b", Tensor({c}));
    };
    auto add_crossattn = [&](const std::string& name, int64_t c) {
        params_.add(name + ".gn.g", Tensor::full({c}, 1));
        params_.add(name + ".gn.b", Tensor({c}));
        params_.add(name + ".q.w", linear_init(rng, c, c));
        params_.add(name + ".k.w", linear_init(rng, dt, c));
        params_.add(name + ".v.w", linear_init(rng, dt, c));
        params_.add(name + ".o.w", scale(linear_init(rng, c, c), real(0.2)));
        params_.add(name + ".o.b", Tensor({c}));
    };

    add_resblock("enc0", w0, w0);
    params_.add("down1.conv.w", conv_init(rng, w0, w0, 3));
    params_.add("down1.conv.b", Tensor({w0}));
    add_resblock("enc1", w0, w1);
    add_selfattn("enc1.sa", w1);
    add_crossattn("enc1.ca", w1);
    params_.add("down2.conv.w", conv_init(rng, w1, w1, 3));
    params_.add("down2.conv.b", Tensor({w1}));
    add_resblock("enc2", w1, w1);
    add_selfattn("enc2.sa", w1);
    add_crossattn("enc2.ca", w1);
    add_resblock("mid", w1, w1);
    add_resblock("dec1", 2 * w1, w1);
    add_resblock("dec2", w1 + w0, w0);
    params_.add("out.gn.g", Tensor::full({w0}, 1));
    params_.add("out.gn.b", Tensor({w0}));
    // zero-init so an untrained model predicts eps == 0
    params_.add("out.conv.w", Tensor({cfg_.channels, w0, 3, 3}));
    params_.add("out.conv.b", Tensor({cfg_.channels}));
}

Tensor ToyUNet::timestep_embedding(const std::vector<int>& ts, int64_t dim) {
    int64_t half = dim / 2;
    Tensor out({static_cast<int64_t>(ts.size()), dim});
    for (size_t i = 0; i < ts.size(); ++i) {
        for (int64_t j = 0; j < half; ++j) {
            real freq = std::exp(-std::log(real(10000)) * static_cast<real>(j) / static_cast<real>(half - 1));
            real a = static_cast<real>(ts[i]) * freq;
            out.data[i * dim + j] = std::sin(a);
            out.data[i * dim + half + j] = std::cos(a);
        }
    }
    return out;
}

ParamBinding ToyUNet::bind_params(Tape& tape, bool requires_grad) const {
    ParamBinding pb;
    pb.leaves.reserve(params_.items.size());
    for (const auto& [name, t] : params_.items)
        pb.leaves.emplace_back(name, tape.leaf_ref(&t, requires_grad));
    return pb;
}

Tape::Id ToyUNet::group_norm(Tape& t, const ParamBinding& pb, const std::string& name, Tape::Id x,
                             int64_t channels) const {
    const Tensor& vx = t.val(x);
    int64_t b = vx.dim(0), h = vx.dim(2), w = vx.dim(3);
    int64_t g = pick_groups(channels, cfg_.groups);
    int64_t cols = (channels / g) * h * w;
    Tape::Id xr = t.reshape(x, {b * g, cols});
    Tape::Id mu = t.row_mean(xr);
    Tape::Id xc = t.sub(xr, t.broadcast_cols(mu, cols));
    Tape::Id var = t.row_mean(t.mul(xc, xc));
    Tape::Id rstd = t.pow_scalar(t.add_scalar(var, real(1e-5)), real(-0.5));
    Tape::Id xn = t.mul(xc, t.broadcast_cols(rstd, cols));
    Tape::Id x4 = t.reshape(xn, {b, channels, h, w});
    return t.add_chan(t.mul_chan(x4, pb.at(name + ".g")), pb.at(name + ".b"));
}

Tape::Id ToyUNet::resblock(Tape& t, const ParamBinding& pb, const std::string& name, Tape::Id x,
                           Tape::Id temb, int64_t cin, int64_t cout) const {
    Tape::Id h = group_norm(t, pb, name + ".gn1", x, cin);
    h = t.silu(h);
    h = t.conv2d(h, pb.at(name + ".conv1.w"), pb.at(name + ".conv1.b"), 1, 1);
    Tape::Id tproj = t.add_rowvec(t.matmul(t.silu(temb), pb.at(name + ".temb.w")), pb.at(name + ".temb.b"));
    h = t.add_chanvec(h, tproj);
    h = group_norm(t, pb, name + ".gn2", h, cout);
    h = t.silu(h);
    h = t.conv2d(h, pb.at(name + ".conv2.w"), pb.at(name + ".conv2.b"), 1, 1);
    Tape::Id skip = x;
    if (cin != cout) skip = t.conv2d(x, pb.at(name + ".skip.w"), pb.at(name + ".skip.b"), 1, 0);
    return t.add(h, skip);
}

Tape::Id ToyUNet::self_attention(Tape& t, const ParamBinding& pb, const std::string& name, Tape::Id x,
                                 int64_t c) const {
    const Tensor& vx = t.val(x);
    int64_t b = vx.dim(0), hgt = vx.dim(2), wid = vx.dim(3), n = hgt * wid;
    int64_t dh = c / cfg_.heads;
    Tape::Id xn = group_norm(t, pb, name + ".gn", x, c);
    Tape::Id nc = t.chw_to_nc(xn);
    Tape::Id flat = t.reshape(nc, {b * n, c});
    auto proj = [&](const char* which) {
        return t.split_heads(t.reshape(t.matmul(flat, pb.at(name + "." + which + ".w")), {b, n, c}),
                             cfg_.heads);
    };
    Tape::Id q = proj("q"), k = proj("k"), v = proj("v");
    Tape::Id scores = t.scale(t.bmm_nt(q, k), 1 / std::sqrt(static_cast<real>(dh)));
    Tape::Id probs = t.reshape(t.softmax_rows(t.reshape(scores, {b * cfg_.heads * n, n})),
                               {b * cfg_.heads, n, n});
    Tape::Id o = t.merge_heads(t.bmm(probs, v), cfg_.heads);
    o = t.add_rowvec(t.matmul(t.reshape(o, {b * n, c}), pb.at(name + ".o.w")), pb.at(name + ".o.b"));
    return t.add(x, t.nc_to_chw(t.reshape(o, {b, n, c}), hgt, wid));
}

Tape::Id ToyUNet::cross_attention(Tape& t, const ParamBinding& pb, const std::string& name, Tape::Id x,
                                  Tape::Id cond, int64_t c, Tape::Id* avg_map_out,
                                  Tape::Id* head_maps_out) const {
    const Tensor& vx = t.val(x);
    const Tensor& vc = t.val(cond);
    int64_t b = vx.dim(0), hgt = vx.dim(2), wid = vx.dim(3), n = hgt * wid;
    int64_t L = vc.dim(1), dt = vc.dim(2);
    int64_t dh = c / cfg_.heads;
    Tape::Id xn = group_norm(t, pb, name + ".gn", x, c);
    Tape::Id flat = t.reshape(t.chw_to_nc(xn), {b * n, c});
    Tape::Id q = t.split_heads(t.reshape(t.matmul(flat, pb.at(name + ".q.w")), {b, n, c}), cfg_.heads);
    Tape::Id cflat = t.reshape(cond, {b * L, dt});
    Tape::Id k = t.split_heads(t.reshape(t.matmul(cflat, pb.at(name + ".k.w")), {b, L, c}), cfg_.heads);
    Tape::Id v = t.split_heads(t.reshape(t.matmul(cflat, pb.at(name + ".v.w")), {b, L, c}), cfg_.heads);
    Tape::Id scores = t.scale(t.bmm_nt(q, k), 1 / std::sqrt(static_cast<real>(dh)));
    Tape::Id probs = t.reshape(t.softmax_rows(t.reshape(scores, {b * cfg_.heads * n, L})),
                               {b * cfg_.heads, n, L});
    if (avg_map_out) {
        Tape::Id rows = t.reshape(probs, {b * cfg_.heads, n * L});
        *avg_map_out = t.reshape(t.mean_rowgroups(rows, cfg_.heads), {b, n, L});
    }
    if (head_maps_out) *head_maps_out = probs;  // (B*heads, N, L)
    Tape::Id o = t.merge_heads(t.bmm(probs, v), cfg_.heads);
    o = t.add_rowvec(t.matmul(t.reshape(o, {b * n, c}), pb.at(name + ".o.w")), pb.at(name + ".o.b"));
    return t.add(x, t.nc_to_chw(t.reshape(o, {b, n, c}), hgt, wid));
}

TapedForward ToyUNet::run(Tape& t, const ParamBinding& pb, Tape::Id x, const std::vector<int>& ts,
                          Tape::Id cond, bool want_attention, bool want_features) const {
    const Tensor& vx = t.val(x);
    check_shape(vx.rank() == 4 && vx.dim(1) == cfg_.channels && vx.dim(2) == cfg_.image_size &&
                    vx.dim(3) == cfg_.image_size,
                "unet input must be (B," + std::to_string(cfg_.channels) + "," +
                    std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) + "), got " +
                    shape_str(vx.shape));
    if (static_cast<int64_t>(ts.size()) != vx.dim(0)) throw Error("unet: one timestep per batch item");
    for (int tt : ts)
        if (tt < 0 || tt > cfg_.max_timestep)
            throw Error("unet: timestep " + std::to_string(tt) + " out of [0," +
                        std::to_string(cfg_.max_timestep) + "]");
    const Tensor& vc = t.val(cond);
    check_shape(vc.rank() == 3 && vc.dim(0) == vx.dim(0) && vc.dim(1) == cfg_.text_len &&
                    vc.dim(2) == cfg_.text_dim,
                "unet conditioning must be (B,L,d), got " + shape_str(vc.shape));

    TapedForward fw;
    int64_t w0 = cfg_.width0, w1 = cfg_.width1;

    Tape::Id temb0 = t.leaf(timestep_embedding(ts, cfg_.time_dim));
    Tape::Id temb = t.add_rowvec(t.matmul(temb0, pb.at("time.fc1.w")), pb.at("time.fc1.b"));
    temb = t.add_rowvec(t.matmul(t.silu(temb), pb.at("time.fc2.w")), pb.at("time.fc2.b"));
    Tape::Id pooled = t.mean_rowgroups(t.reshape(cond, {vx.dim(0) * cfg_.text_len, cfg_.text_dim}),
                                       cfg_.text_len);
    temb = t.add(temb, t.matmul(pooled, pb.at("time.text.w")));

    Tape::Id h = t.conv2d(x, pb.at("in.conv.w"), pb.at("in.conv.b"), 1, 1);
    Tape::Id e0 = resblock(t, pb, "enc0", h, temb, w0, w0);
    Tape::Id d1 = t.conv2d(e0, pb.at("down1.conv.w"), pb.at("down1.conv.b"), 2, 1);
    Tape::Id e1 = resblock(t, pb, "enc1", d1, temb, w0, w1);
    e1 = self_attention(t, pb, "enc1.sa", e1, w1);
    if (want_features) fw.features.emplace_back("enc1.sa", t.chw_to_nc(e1));
    Tape::Id m1 = -1, h1 = -1;
    e1 = cross_attention(t, pb, "enc1.ca", e1, cond, w1, want_attention ? &m1 : nullptr,
                         want_attention ? &h1 : nullptr);
    if (want_attention) {
        fw.attention.emplace_back("enc1.ca", m1);
        fw.attention_heads.emplace_back("enc1.ca", h1);
    }
    Tape::Id d2 = t.conv2d(e1, pb.at("down2.conv.w"), pb.at("down2.conv.b"), 2, 1);
    Tape::Id e2 = resblock(t, pb, "enc2", d2, temb, w1, w1);
    e2 = self_attention(t, pb, "enc2.sa", e2, w1);
    if (want_features) fw.features.emplace_back("enc2.sa", t.chw_to_nc(e2));
    Tape::Id m2 = -1, h2 = -1;
    e2 = cross_attention(t, pb, "enc2.ca", e2, cond, w1, want_attention ? &m2 : nullptr,
                         want_attention ? &h2 : nullptr);
    if (want_attention) {
        fw.attention.emplace_back("enc2.ca", m2);
        fw.attention_heads.emplace_back("enc2.ca", h2);
    }

    Tape::Id mid = resblock(t, pb, "mid", e2, temb, w1, w1);
    Tape::Id u1 = resblock(t, pb, "dec1", t.concat_ch(t.upsample2x(mid), e1), temb, 2 * w1, w1);
    Tape::Id u2 = resblock(t, pb, "dec2", t.concat_ch(t.upsample2x(u1), e0), temb, w1 + w0, w0);
    Tape::Id out = group_norm(t, pb, "out.gn", u2, w0);
    fw.eps = t.conv2d(t.silu(out), pb.at("out.conv.w"), pb.at("out.conv.b"), 1, 1);
    return fw;
}

TapedForward ToyUNet::forward_latent(Tape& tape, Tape::Id x, int t, const TextEmbedding& c,
                                     bool want_attention, bool want_features) const {
    check_shape(c.tokens.rank() == 2 && c.tokens.dim(0) == cfg_.text_len && c.tokens.dim(1) == cfg_.text_dim,
                "conditioning tokens must be (L,d)");
    ParamBinding pb = bind_params(tape, false);
    Tensor cond3 = Tensor::from({1, cfg_.text_len, cfg_.text_dim}, c.tokens.data);
    Tape::Id cond = tape.leaf(std::move(cond3));
    return run(tape, pb, x, {t}, cond, want_attention, want_features);
}

DenoiserOutput ToyUNet::predict(const Tensor& x_t, int t, const TextEmbedding& c, RecordFlags rec) const {
    auto ls = latent_shape();
    check_shape(x_t.rank() == 3 && x_t.dim(0) == ls[0] && x_t.dim(1) == ls[1] && x_t.dim(2) == ls[2],
                "predict latent shape " + shape_str(x_t.shape));
    Tape tape;
    Tape::Id x = tape.leaf(Tensor::from({1, ls[0], ls[1], ls[2]}, x_t.data));
    TapedForward fw = forward_latent(tape, x, t, c, rec.attention || rec.per_head, rec.features);

    DenoiserOutput out;
    out.eps = Tensor::from({ls[0], ls[1], ls[2]}, tape.val(fw.eps).data);
    if (rec.attention || rec.per_head) {
        AttentionMapSet set;
        for (const auto& [layer, id] : fw.attention) {
            const Tensor& m = tape.val(id);  // (1,N,L)
            if (rec.attention)
                set.maps.push_back({layer, true, Tensor::from({m.dim(1), m.dim(2)}, m.data)});
        }
        if (rec.per_head) {
            for (const auto& [layer, id] : fw.attention_heads) {
                const Tensor& m = tape.val(id);  // (heads,N,L)
                int64_t n = m.dim(1), L = m.dim(2);
                for (int h = 0; h < cfg_.heads; ++h) {
                    Tensor per({n, L});
                    std::copy_n(m.ptr() + static_cast<int64_t>(h) * n * L, n * L, per.ptr());
                    set.maps.push_back({layer + "#h" + std::to_string(h), false, std::move(per)});
                }
            }
        }
        out.attention = std::move(set);
    }
    if (rec.features) {
        FeatureStack stack;
        for (const auto& [layer, id] : fw.features) {
            const Tensor& f = tape.val(id);  // (1,N,C)
            int64_t n = f.dim(1), ch = f.dim(2);
            Tensor t2({ch, n});
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < ch; ++j) t2.data[j * n + i] = f.data[i * ch + j];
            stack.taps.push_back({layer, std::move(t2)});
        }
        out.features = std::move(stack);
    }
    return out;
}

ToyTextEncoder ToyUNet::make_text_encoder() const {
    return ToyTextEncoder(params_.at("text.embed"), cfg_.text_len);
}

void ToyUNet::save(const std::string& path) const {
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.emplace_back("__config__",
                         Tensor::from({10}, {static_cast<real>(cfg_.channels), static_cast<real>(cfg_.image_size),
                                             static_cast<real>(cfg_.width0), static_cast<real>(cfg_.width1),
                                             static_cast<real>(cfg_.text_len), static_cast<real>(cfg_.text_dim),
                                             static_cast<real>(cfg_.heads), static_cast<real>(cfg_.time_dim),
                                             static_cast<real>(cfg_.groups), static_cast<real>(cfg_.max_timestep)}));
    for (const auto& [name, t] : params_.items) entries.emplace_back(name, t);
    write_zckp(path, entries);
}

ToyUNet ToyUNet::load(const std::string& path) {
    auto entries = read_zckp(path);
    if (entries.empty() || entries[0].first != "__config__" || entries[0].second.numel() != 10)
        throw Error("checkpoint missing __config__ entry: " + path);
    const auto& c = entries[0].second.data;
    UNetConfig cfg;
    cfg.channels = static_cast<int64_t>(c[0]);
    cfg.image_size = static_cast<int64_t>(c[1]);
    cfg.width0 = static_cast<int64_t>(c[2]);
    cfg.width1 = static_cast<int64_t>(c[3]);
    cfg.text_len = static_cast<int64_t>(c[4]);
    cfg.text_dim = static_cast<int64_t>(c[5]);
    cfg.heads = static_cast<int>(c[6]);
    cfg.time_dim = static_cast<int64_t>(c[7]);
    cfg.groups = static_cast<int64_t>(c[8]);
    cfg.max_timestep = static_cast<int>(c[9]);

    ToyUNet model(cfg);
    if (entries.size() - 1 != model.params_.items.size())
        throw Error("checkpoint parameter count mismatch in " + path);
    for (size_t i = 1; i < entries.size(); ++i) {
        Tensor& dst = model.params_.at(entries[i].first);
        check_same_shape(dst, entries[i].second, "checkpoint parameter " + entries[i].first);
        dst = std::move(entries[i].second);
    }
    return model;
}

// ---------------------------------------------------------------------------
// latent codec
// ---------------------------------------------------------------------------

Tensor encode_latent(const Image& img) {
    if (img.width <= 0 || img.height <= 0 || img.rgb.size() != static_cast<size_t>(img.width) * img.height * 3)
        throw Error("encode_latent: malformed image");
    Tensor x({3, img.height, img.width});
    int64_t hw = static_cast<int64_t>(img.width) * img.height;
    for (int64_t i = 0; i < hw; ++i)
        for (int64_t c = 0; c < 3; ++c)
            x.data[c * hw + i] = static_cast<real>(img.rgb[3 * i + c]) / real(255) * 2 - 1;
    return x;
}

Image decode_latent(const Tensor& x0) {
    check_shape(x0.rank() == 3 && x0.dim(0) == 3, "decode_latent expects (3,H,W)");
    Image img;
    img.height = static_cast<int>(x0.dim(1));
    img.width = static_cast<int>(x0.dim(2));
    int64_t hw = static_cast<int64_t>(img.width) * img.height;
    img.rgb.resize(hw * 3);
    for (int64_t i = 0; i < hw; ++i)
        for (int64_t c = 0; c < 3; ++c) {
            real v = (x0.data[c * hw + i] + 1) / 2 * 255;
            img.rgb[3 * i + c] = static_cast<uint8_t>(std::clamp<real>(std::round(v), 0, 255));
        }
    return img;
}

std::array<int64_t, 3> LatentShapeContract::latent_shape_for(int width, int height) const {
    if (width % spatial_factor != 0 || height % spatial_factor != 0)
        throw Error("latent codec: image dims must be divisible by " + std::to_string(spatial_factor));
    return {latent_channels, height / spatial_factor, width / spatial_factor};
}

}  // namespace zerocon
