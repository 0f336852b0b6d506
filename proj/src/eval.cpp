#include "zerocon/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "zerocon/rng.hpp"

namespace zerocon {

// ---------------------------------------------------------------------------
// joint encoder
// ---------------------------------------------------------------------------

namespace {

Tensor conv_init_j(Rng& rng, int64_t co, int64_t ci, int64_t k) {
    Tensor w = rng.normal_tensor({co, ci, k, k});
    real s = std::sqrt(real(2) / static_cast<real>(ci * k * k));
    for (auto& v : w.data) v *= s;
    return w;
}

}  // namespace

ToyJointEncoder::ToyJointEncoder(Config cfg, Tensor text_table) : cfg_(cfg), text_table_(std::move(text_table)) {
    check_shape(text_table_.rank() == 2 && text_table_.dim(1) == cfg_.embed_dim,
                "joint encoder text table must be (vocab, embed_dim)");
    Rng rng(cfg_.init_seed, "joint-init");
    int64_t cw = cfg_.conv_width;
    params_.add("conv1.w", conv_init_j(rng, cw, 3, 3));
    params_.add("conv1.b", Tensor({cw}));
    params_.add("conv2.w", conv_init_j(rng, cw, cw, 3));
    params_.add("conv2.b", Tensor({cw}));
    Tensor fcw = rng.normal_tensor({cw, cfg_.embed_dim});
    real s = std::sqrt(real(1) / static_cast<real>(cw));
    for (auto& v : fcw.data) v *= s;
    params_.add("fc.w", std::move(fcw));
    params_.add("fc.b", Tensor({cfg_.embed_dim}));
}

ParamBinding ToyJointEncoder::bind_params(Tape& tape, bool requires_grad) const {
    ParamBinding pb;
    for (const auto& [name, t] : params_.items) pb.leaves.emplace_back(name, tape.leaf_ref(&t, requires_grad));
    return pb;
}

Tape::Id ToyJointEncoder::image_forward(Tape& tape, const ParamBinding& pb, Tape::Id x) const {
    const Tensor& vx = tape.val(x);
    check_shape(vx.rank() == 4 && vx.dim(1) == 3 && vx.dim(2) == cfg_.image_size && vx.dim(3) == cfg_.image_size,
                "joint encoder image must be (B,3,S,S)");
    int64_t b = vx.dim(0);
    Tape::Id h = tape.silu(tape.conv2d(x, pb.at("conv1.w"), pb.at("conv1.b"), 2, 1));
    h = tape.silu(tape.conv2d(h, pb.at("conv2.w"), pb.at("conv2.b"), 2, 1));
    int64_t n = (cfg_.image_size / 4) * (cfg_.image_size / 4);
    Tape::Id nc = tape.reshape(tape.chw_to_nc(h), {b * n, cfg_.conv_width});
    Tape::Id pooled = tape.mean_rowgroups(nc, n);  // (B, conv_width)
    return tape.add_rowvec(tape.matmul(pooled, pb.at("fc.w")), pb.at("fc.b"));
}

Tensor ToyJointEncoder::encode_image(const Image& img) const {
    Tensor x0 = encode_latent(img);
    if (x0.dim(1) != cfg_.image_size || x0.dim(2) != cfg_.image_size)
        throw Error("joint encoder: image size mismatch");
    Tape tape;
    ParamBinding pb = bind_params(tape, false);
    Tape::Id x = tape.leaf(Tensor::from({1, 3, cfg_.image_size, cfg_.image_size}, std::move(x0.data)));
    Tape::Id emb = image_forward(tape, pb, x);
    return Tensor::from({cfg_.embed_dim}, tape.val(emb).data);
}

Tensor ToyJointEncoder::encode_text(const Prompt& p) const {
    ToyTextEncoder enc(text_table_, cfg_.text_len);
    return enc.encode(p).pooled;
}

void ToyJointEncoder::save(const std::string& path) const {
    std::vector<std::pair<std::string, Tensor>> entries;
    entries.emplace_back("__config__", Tensor::from({5}, {static_cast<real>(cfg_.image_size),
                                                          static_cast<real>(cfg_.text_len),
                                                          static_cast<real>(cfg_.embed_dim),
                                                          static_cast<real>(cfg_.conv_width),
                                                          static_cast<real>(0)}));
    entries.emplace_back("text.table", text_table_);
    for (const auto& [name, t] : params_.items) entries.emplace_back(name, t);
    write_zckp(path, entries);
}

ToyJointEncoder ToyJointEncoder::load(const std::string& path) {
    auto entries = read_zckp(path);
    if (entries.size() < 2 || entries[0].first != "__config__" || entries[1].first != "text.table")
        throw Error("not a joint encoder checkpoint: " + path);
    const auto& c = entries[0].second.data;
    Config cfg;
    cfg.image_size = static_cast<int64_t>(c[0]);
    cfg.text_len = static_cast<int64_t>(c[1]);
    cfg.embed_dim = static_cast<int64_t>(c[2]);
    cfg.conv_width = static_cast<int64_t>(c[3]);
    ToyJointEncoder joint(cfg, std::move(entries[1].second));
    for (size_t i = 2; i < entries.size(); ++i) {
        Tensor& dst = joint.params_.at(entries[i].first);
        check_same_shape(dst, entries[i].second, "joint encoder parameter " + entries[i].first);
        dst = std::move(entries[i].second);
    }
    return joint;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

real text_alignment(const Image& image, const Prompt& prompt, const JointTextImageEncoder& enc) {
    Tensor a = enc.encode_image(image);
    Tensor b = enc.encode_text(prompt);
    check_same_shape(a, b, "text_alignment embeddings");
    return cosine(a, b);
}

FeatureProvider denoiser_feature_provider(const Denoiser& model) {
    const Denoiser* m = &model;
    return [m](const Image& img) {
        Tensor x0 = encode_latent(img);
        TextEmbedding zero = zero_embedding(m->text_len(), m->text_dim());
        DenoiserOutput out = m->predict(x0, 0, zero, RecordFlags{false, true, false});
        if (!out.features) throw Error("feature provider: denoiser recorded no features");
        return std::move(*out.features);
    };
}

real background_preservation(const Image& src, const Image& edited, const std::vector<uint8_t>& mask,
                             const FeatureProvider& features) {
    if (!src.same_dims(edited)) throw Error("background_preservation: image dims differ");
    if (mask.size() != static_cast<size_t>(src.width) * src.height)
        throw Error("background_preservation: mask size mismatch");
    FeatureStack fs = features(src);
    FeatureStack fe = features(edited);
    if (fs.taps.size() != fe.taps.size()) throw Error("background_preservation: tap sets differ");

    real acc = 0;
    int64_t count = 0;
    for (size_t l = 0; l < fs.taps.size(); ++l) {
        const Tensor& a = fs.taps[l].features;  // (C,N)
        const Tensor& b = fe.taps[l].features;
        check_same_shape(a, b, "background_preservation tap " + fs.taps[l].layer);
        int64_t c = a.dim(0), n = a.dim(1);
        int64_t side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
        if (side * side != n) throw Error("background_preservation: non-square tap layer");
        int64_t fy = src.height / side, fx = src.width / side;
        for (int64_t p = 0; p < n; ++p) {
            int64_t py = p / side, px = p % side;
            bool background = true;
            for (int64_t y = py * fy; y < (py + 1) * fy && background; ++y)
                for (int64_t x = px * fx; x < (px + 1) * fx; ++x)
                    if (mask[y * src.width + x]) {
                        background = false;
                        break;
                    }
            if (!background) continue;
            real na = 0, nb = 0;
            for (int64_t j = 0; j < c; ++j) {
                na += a.data[j * n + p] * a.data[j * n + p];
                nb += b.data[j * n + p] * b.data[j * n + p];
            }
            na = std::sqrt(na) + real(1e-12);
            nb = std::sqrt(nb) + real(1e-12);
            real d = 0;
            for (int64_t j = 0; j < c; ++j) {
                real diff = a.data[j * n + p] / na - b.data[j * n + p] / nb;
                d += diff * diff;
            }
            acc += std::sqrt(d);
            ++count;
        }
    }
    if (count == 0) throw Error("background_preservation: empty background");
    return acc / static_cast<real>(count);
}

DirectionSimilarity direction_similarity_report(const Image& image, const Prompt& source_prompt,
                                                const Prompt& target_prompt, const EditDirection& delta,
                                                const JointTextImageEncoder& joint,
                                                const TextEncoder& encoder) {
    Tensor img = joint.encode_image(image);
    TextEmbedding src = encoder.encode(source_prompt);
    TextEmbedding tgt = encoder.encode(target_prompt);
    TextEmbedding shifted = apply_direction(src, delta);
    DirectionSimilarity out;
    out.sim_text1_image = cosine(shifted.pooled, img);
    out.sim_text2_image = cosine(tgt.pooled, img);
    out.sim_text1_text2 = cosine(shifted.pooled, tgt.pooled);
    return out;
}

// ---------------------------------------------------------------------------
// experiment runner
// ---------------------------------------------------------------------------

Variant variant_from(const std::string& name) {
    if (name == "full") return Variant::full;
    if (name == "no_cut") return Variant::no_cut;
    if (name == "no_guidance") return Variant::no_guidance;
    if (name == "word_swap") return Variant::word_swap;
    throw ConfigError("unknown variant '" + name + "' (expected full|no_cut|no_guidance|word_swap)");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_cut: return "no_cut";
        case Variant::no_guidance: return "no_guidance";
        case Variant::word_swap: return "word_swap";
    }
    return "?";
}

namespace {

RunRecord run_one(const TaskSpec& task, Variant variant, uint64_t seed, const ExperimentSpec& spec,
                  const CaptionedImageSet& data, const Denoiser& model, const NoiseSchedule& sched,
                  const JointTextImageEncoder& joint, const TextEncoder& encoder) {
    RunRecord rec;
    rec.variant = to_string(variant);
    rec.task = task.name;
    rec.seed = seed;
    try {
        std::vector<int> candidates;
        for (size_t i = 0; i < data.items.size(); ++i)
            if (data.items[i].caption.find(task.from_phrase) != std::string::npos &&
                !data.items[i].mask.empty())
                candidates.push_back(static_cast<int>(i));
        if (candidates.empty())
            throw Error("no dataset item matches task phrase '" + task.from_phrase + "'");
        Rng rng(seed, "eval-pick:" + task.name);
        const CaptionedImage& item = data.items[candidates[rng.uniform_int(0, candidates.size() - 1)]];

        Prompt source{item.caption};
        Prompt target = build_target_prompt(source, {task.from_phrase, task.to_phrase});
        TextEmbedding c = encoder.encode(source);

        EditDirection delta;
        if (variant == Variant::word_swap) {
            delta.delta = sub(encoder.encode(target).tokens, c.tokens);
        } else {
            SentenceBank bank = generate_bank(source, target, spec.bank_size, ToySentenceGenerator{});
            delta = edit_direction(bank, encoder);
        }

        GuidanceConfig gcfg = spec.guidance;
        gcfg.patch_seed = seed;
        if (variant == Variant::no_cut) gcfg.lambda_e = 0;
        if (variant == Variant::no_guidance || variant == Variant::word_swap) {
            gcfg.lambda_c = 0;
            gcfg.lambda_e = 0;
        }

        Tensor x0 = encode_latent(item.image);
        Tensor xT = invert(x0, c, model, sched);
        SourceTrajectory traj = record_source(xT, c, model, sched);
        EditResult res = edit(traj, c, delta, model, sched, gcfg);

        rec.alignment = text_alignment(res.image, target, joint);
        rec.bg_distance =
            background_preservation(item.image, res.image, item.mask, denoiser_feature_provider(model));
    } catch (const std::exception& e) {
        rec.error = e.what();
    }
    return rec;
}

}  // namespace

MetricReport run_experiment(const ExperimentSpec& spec, const CaptionedImageSet& data, const Denoiser& model,
                            const NoiseSchedule& sched, const JointTextImageEncoder& joint,
                            const TextEncoder& encoder) {
    struct RunKey {
        const TaskSpec* task;
        Variant variant;
        uint64_t seed;
    };
    std::vector<RunKey> keys;
    for (Variant v : spec.variants)
        for (const auto& task : spec.tasks)
            for (uint64_t seed : spec.seeds) keys.push_back({&task, v, seed});

    MetricReport report;
    report.runs.resize(keys.size());
    int workers = std::max(1, spec.workers);
    if (workers == 1) {
        for (size_t i = 0; i < keys.size(); ++i)
            report.runs[i] =
                run_one(*keys[i].task, keys[i].variant, keys[i].seed, spec, data, model, sched, joint, encoder);
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= keys.size()) break;
                report.runs[i] = run_one(*keys[i].task, keys[i].variant, keys[i].seed, spec, data, model,
                                         sched, joint, encoder);
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    report.cells = aggregate_runs(report.runs);
    return report;
}

std::vector<MetricCell> aggregate_runs(const std::vector<RunRecord>& runs) {
    std::vector<MetricCell> cells;
    for (const auto& r : runs) {
        MetricCell* cell = nullptr;
        for (auto& c : cells)
            if (c.variant == r.variant && c.task == r.task) cell = &c;
        if (!cell) {
            cells.push_back({r.variant, r.task, 0, 0, 0});
            cell = &cells.back();
        }
        if (r.alignment && r.bg_distance) {
            cell->alignment += *r.alignment;
            cell->bg_distance += *r.bg_distance;
            cell->n_images += 1;
        }
    }
    for (auto& c : cells) {
        if (c.n_images > 0) {
            c.alignment /= c.n_images;
            c.bg_distance /= c.n_images;
        }
    }
    return cells;
}

std::string MetricReport::runs_csv() const {
    std::string out = "variant,task,seed,alignment,bg_distance\n";
    for (const auto& r : runs) {
        out += r.variant + "," + r.task + "," + std::to_string(r.seed) + ",";
        out += (r.alignment ? format_real(*r.alignment) : std::string()) + ",";
        out += (r.bg_distance ? format_real(*r.bg_distance) : std::string()) + "\n";
    }
    return out;
}

std::string MetricReport::summary_csv() const {
    std::string out = "variant,task,alignment,bg_distance,n_images\n";
    for (const auto& c : cells)
        out += c.variant + "," + c.task + "," + format_real(c.alignment) + "," + format_real(c.bg_distance) +
               "," + std::to_string(c.n_images) + "\n";
    return out;
}

std::string MetricReport::summary_table() const {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-14s %-16s %12s %14s %6s\n", "variant", "task", "alignment",
                  "bg-patch-dist", "n");
    out += buf;
    out += std::string(66, '-') + "\n";
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof buf, "%-14s %-16s %12.4f %14.4f %6d\n", c.variant.c_str(), c.task.c_str(),
                      static_cast<double>(c.alignment), static_cast<double>(c.bg_distance), c.n_images);
        out += buf;
    }
    return out;
}

std::vector<RunRecord> parse_runs_csv(const std::string& csv) {
    std::vector<RunRecord> runs;
    size_t pos = 0;
    bool header = true;
    while (pos < csv.size()) {
        size_t end = csv.find('\n', pos);
        if (end == std::string::npos) end = csv.size();
        std::string line = csv.substr(pos, end - pos);
        pos = end + 1;
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> fields;
        size_t p = 0;
        while (true) {
            size_t comma = line.find(',', p);
            if (comma == std::string::npos) {
                fields.push_back(line.substr(p));
                break;
            }
            fields.push_back(line.substr(p, comma - p));
            p = comma + 1;
        }
        if (fields.size() != 5) throw Error("malformed runs CSV line: " + line);
        RunRecord r;
        r.variant = fields[0];
        r.task = fields[1];
        r.seed = std::stoull(fields[2]);
        if (!fields[3].empty()) r.alignment = std::stod(fields[3]);
        if (!fields[4].empty()) r.bg_distance = std::stod(fields[4]);
        runs.push_back(std::move(r));
    }
    return runs;
}

}  // namespace zerocon
