// zerocon: text-guided image-to-image translation on a toy diffusion stack.
// Subcommands wrap one library operation each; every run writes a manifest
// that reproduces it.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "zerocon/dataset.hpp"
#include "zerocon/eval.hpp"
#include "zerocon/pipeline.hpp"
#include "zerocon/rng.hpp"
#include "zerocon/train.hpp"

namespace fs = std::filesystem;
using namespace zerocon;

namespace {

constexpr const char* kVersion = "zerocon 0.1.0";

struct ConfigKey {
    const char* name;
    const char* type;
    const char* def;
    const char* help;
};

const std::vector<ConfigKey>& config_registry() {
    static const std::vector<ConfigKey> keys = {
        {"seed", "int", "7", "root seed; all randomness derives from it"},
        {"out.dir", "path", "run", "output directory"},
        {"dataset.path", "path", "", "captioned image set directory"},
        {"dataset.autogen", "bool", "false", "generate the toy dataset if the path is missing"},
        {"dataset.count", "int", "256", "generated dataset size"},
        {"dataset.size", "int", "32", "generated image side length"},
        {"schedule.kind", "str", "linear", "linear | scaled_linear"},
        {"schedule.steps", "int", "200", "training timesteps T"},
        {"schedule.beta_start", "real", "0.0001", "first beta"},
        {"schedule.beta_end", "real", "0.05", "last beta"},
        {"schedule.substeps", "int", "50", "sampling substeps"},
        {"model.checkpoint", "path", "denoiser.zckp", "denoiser checkpoint"},
        {"model.joint_checkpoint", "path", "joint.zckp", "joint encoder checkpoint"},
        {"unet.width0", "int", "32", "channels at full resolution"},
        {"unet.width1", "int", "64", "channels at the attention resolutions"},
        {"unet.heads", "int", "2", "attention heads"},
        {"unet.time_dim", "int", "64", "timestep embedding width"},
        {"unet.text_len", "int", "8", "conditioning sequence length"},
        {"unet.text_dim", "int", "16", "conditioning embedding width"},
        {"train.steps", "int", "1400", "denoiser training steps"},
        {"train.batch", "int", "8", "training batch size"},
        {"train.lr", "real", "0.002", "Adam learning rate"},
        {"train.holdout", "int", "48", "held-out items"},
        {"train.grad_clip", "real", "1", "global-norm gradient clip"},
        {"joint.steps", "int", "400", "joint encoder training steps"},
        {"joint.batch", "int", "16", "joint encoder batch size"},
        {"joint.lr", "real", "0.003", "joint encoder learning rate"},
        {"guidance.lambda_c", "real", "0.1", "cross-attention loss weight"},
        {"guidance.lambda_e", "real", "0.05", "CUT loss weight"},
        {"guidance.lambda_lr", "real", "1", "latent learning rate"},
        {"guidance.tau", "real", "0.07", "InfoNCE temperature"},
        {"guidance.patches", "int", "16", "patches per tap layer"},
        {"guidance.normalize_patches", "bool", "true", "L2-normalize patches before dot products"},
        {"guidance.source_uses_edited_cond", "bool", "false", "source branch runs under the edited conditioning"},
        {"pipeline.source_latents", "str", "denoised", "phase-1 latents: denoised | inversion"},
        {"direction.bank_size", "int", "16", "sentence bank size n"},
        {"backend.caption_endpoint", "str", "", "external caption service URL (empty: toy provider)"},
        {"backend.sentence_endpoint", "str", "", "external sentence service URL (empty: toy templates)"},
        {"backend.token_env", "str", "ZEROCON_BACKEND_TOKEN", "env var holding the backend auth token"},
        {"backend.timeout", "real", "10", "backend timeout in seconds"},
        {"eval.tasks", "str", "red->blue;circle->square", "semicolon-separated from->to tasks"},
        {"eval.variants", "str", "full,no_cut,no_guidance,word_swap", "comma-separated variants"},
        {"eval.seeds", "str", "1,2,3,4,5", "comma-separated run seeds"},
        {"eval.workers", "int", "1", "concurrent eval runs"},
        {"input.image", "path", "", "input image (set by --image)"},
        {"input.prompt", "str", "", "source prompt override (set by --prompt)"},
        {"input.latent", "path", "", "input latent tensor (set by --latent)"},
        {"input.bank", "path", "", "sentence bank file (set by --bank)"},
        {"input.runs", "path", "", "runs CSV for report (set by --runs)"},
        {"edit.from", "str", "", "phrase to replace (set by --edit-from)"},
        {"edit.to", "str", "", "replacement phrase (set by --edit-to)"},
        {"edit.zero_delta", "bool", "false", "use an all-zeros edit direction"},
    };
    return keys;
}

std::string registry_help() {
    std::string out = "\nConfig keys (config file and --set override; flags take precedence):\n";
    for (const auto& k : config_registry()) {
        out += "  ";
        out += k.name;
        out += " (";
        out += k.type;
        out += ", default ";
        out += (k.def[0] ? k.def : "\"\"");
        out += "): ";
        out += k.help;
        out += "\n";
    }
    return out;
}

struct Run {
    KeyValueFile cfg;
    std::string command;

    void load_defaults() {
        for (const auto& k : config_registry()) cfg.set(k.name, k.def);
    }

    void merge_file(const std::string& path) {
        KeyValueFile file = KeyValueFile::load(path);
        std::string unknown;
        for (const auto& [k, v] : file.items) {
            if (k == "command" || k == "version") continue;
            bool known = false;
            for (const auto& reg : config_registry())
                if (k == reg.name) known = true;
            if (!known) unknown += (unknown.empty() ? "" : ", ") + k;
        }
        if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
        for (const auto& [k, v] : file.items)
            if (k != "command" && k != "version") cfg.set(k, v);
    }

    void set_kv(const std::string& kv) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        std::string key = kv.substr(0, eq);
        bool known = false;
        for (const auto& reg : config_registry())
            if (key == reg.name) known = true;
        if (!known) throw ConfigError("unknown config keys: " + key);
        cfg.set(key, kv.substr(eq + 1));
    }

    fs::path out_dir() const { return cfg.get_str("out.dir", "run"); }

    uint64_t seed() const { return static_cast<uint64_t>(cfg.get_int("seed", 7)); }

    NoiseSchedule schedule() const {
        return make_schedule(schedule_kind_from(cfg.get_str("schedule.kind", "linear")),
                             static_cast<int>(cfg.get_int("schedule.steps", 200)),
                             cfg.get_real("schedule.beta_start", 1e-4), cfg.get_real("schedule.beta_end", 0.05),
                             static_cast<int>(cfg.get_int("schedule.substeps", 50)));
    }

    UNetConfig unet_config() const {
        UNetConfig u;
        u.image_size = cfg.get_int("dataset.size", 32);
        u.width0 = cfg.get_int("unet.width0", 32);
        u.width1 = cfg.get_int("unet.width1", 64);
        u.heads = static_cast<int>(cfg.get_int("unet.heads", 2));
        u.time_dim = cfg.get_int("unet.time_dim", 64);
        u.text_len = cfg.get_int("unet.text_len", 8);
        u.text_dim = cfg.get_int("unet.text_dim", 16);
        return u;
    }

    GuidanceConfig guidance_config() const {
        GuidanceConfig g;
        g.lambda_c = cfg.get_real("guidance.lambda_c", 0.1);
        g.lambda_e = cfg.get_real("guidance.lambda_e", 0.05);
        g.lambda_lr = cfg.get_real("guidance.lambda_lr", 1.0);
        g.tau = cfg.get_real("guidance.tau", 0.07);
        g.patches_per_layer = static_cast<int>(cfg.get_int("guidance.patches", 16));
        g.normalize_patches = cfg.get_bool("guidance.normalize_patches", true);
        g.source_uses_edited_cond = cfg.get_bool("guidance.source_uses_edited_cond", false);
        g.patch_seed = split_seed(seed(), "guidance-patches");
        return g;
    }

    BackendConfig backend_config(const std::string& endpoint_key) const {
        BackendConfig b;
        b.endpoint = cfg.get_str(endpoint_key, "");
        b.token_env = cfg.get_str("backend.token_env", "ZEROCON_BACKEND_TOKEN");
        b.timeout_seconds = cfg.get_real("backend.timeout", 10);
        return b;
    }

    CaptionedImageSet load_dataset(bool allow_autogen = true) const {
        std::string path = cfg.get_str("dataset.path", "");
        if (path.empty()) throw ConfigError("dataset.path is not set");
        if (!file_exists(path) || !file_exists((fs::path(path) / "manifest.tsv").string())) {
            if (allow_autogen && cfg.get_bool("dataset.autogen", false)) {
                CaptionedImageSet set =
                    generate_toy_dataset(static_cast<int>(cfg.get_int("dataset.count", 256)),
                                         static_cast<int>(cfg.get_int("dataset.size", 32)),
                                         split_seed(seed(), "dataset"));
                set.save(path);
                return set;
            }
            throw ConfigError("dataset path does not exist: " + path);
        }
        return CaptionedImageSet::load(path);
    }

    ToyUNet load_model() const {
        std::string path = cfg.get_str("model.checkpoint", "");
        if (!file_exists(path)) throw ConfigError("model checkpoint not found: " + path);
        return ToyUNet::load(path);
    }

    ToyJointEncoder load_joint() const {
        std::string path = cfg.get_str("model.joint_checkpoint", "");
        if (!file_exists(path)) throw ConfigError("joint encoder checkpoint not found: " + path);
        return ToyJointEncoder::load(path);
    }

    Prompt caption_of(const Image& img, const CaptionedImageSet* set) const {
        std::string override = cfg.get_str("input.prompt", "");
        if (!override.empty()) return Prompt{override};
        std::string endpoint = cfg.get_str("backend.caption_endpoint", "");
        if (!endpoint.empty()) return HttpCaptionProvider(backend_config("backend.caption_endpoint")).caption(img);
        if (!set) throw ConfigError("caption lookup needs dataset.path (or --prompt)");
        return ToyCaptionProvider(*set).caption(img);
    }

    std::vector<std::string> bank_sentences(const Prompt& p, int n) const {
        std::string endpoint = cfg.get_str("backend.sentence_endpoint", "");
        if (!endpoint.empty()) return HttpSentenceGenerator(backend_config("backend.sentence_endpoint")).variations(p, n);
        return ToySentenceGenerator().variations(p, n);
    }

    void write_manifest() const {
        ensure_dir(out_dir().string());
        KeyValueFile m;
        m.set("command", command);
        m.set("version", kVersion);
        for (const auto& k : config_registry()) m.set(k.name, cfg.get_str(k.name, k.def));
        m.save((out_dir() / "manifest.txt").string());
    }

    void write_timing(real seconds) const {
        write_text_file((out_dir() / "timing.txt").string(), format_real(seconds) + "\n");
    }
};

// light manifest-only caption table (avoids decoding every dataset PNG)
ToyCaptionProvider manifest_caption_provider(const std::string& dataset_dir) {
    std::string text = read_text_file((fs::path(dataset_dir) / "manifest.tsv").string());
    std::vector<std::pair<std::string, std::string>> pairs;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        size_t tab = line.find('\t');
        if (tab != std::string::npos) pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    return ToyCaptionProvider(std::move(pairs));
}

template <class F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(std::string(name) + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_train_toy(Run& run) {
    auto t0 = std::chrono::steady_clock::now();
    CaptionedImageSet data = stage("dataset", [&] { return run.load_dataset(); });
    NoiseSchedule sched = run.schedule();

    TrainConfig tc;
    tc.steps = static_cast<int>(run.cfg.get_int("train.steps", 1400));
    tc.batch = static_cast<int>(run.cfg.get_int("train.batch", 8));
    tc.lr = run.cfg.get_real("train.lr", 2e-3);
    tc.holdout = static_cast<int>(run.cfg.get_int("train.holdout", 48));
    tc.grad_clip = run.cfg.get_real("train.grad_clip", 1.0);
    tc.seed = run.seed();

    ToyTraining trained = stage("train", [&] { return train_toy(data, sched, tc, run.unet_config()); });

    JointTrainConfig jc;
    jc.steps = static_cast<int>(run.cfg.get_int("joint.steps", 400));
    jc.batch = static_cast<int>(run.cfg.get_int("joint.batch", 16));
    jc.lr = run.cfg.get_real("joint.lr", 3e-3);
    jc.seed = run.seed();
    ToyJointEncoder::Config jcfg;
    jcfg.image_size = trained.model.config().image_size;
    jcfg.text_len = trained.model.config().text_len;
    jcfg.embed_dim = trained.model.config().text_dim;
    jcfg.init_seed = split_seed(run.seed(), "joint-init");
    ToyJointEncoder joint(jcfg, trained.model.params().at("text.embed"));
    stage("train-joint", [&] {
        train_joint_encoder(joint, data, jc);
        return 0;
    });

    ensure_dir(run.out_dir().string());
    trained.model.save((run.out_dir() / "denoiser.zckp").string());
    joint.save((run.out_dir() / "joint.zckp").string());

    std::string curve = "step,loss\n";
    for (size_t i = 0; i < trained.stats.loss_curve.size(); ++i)
        curve += std::to_string(i) + "," + format_real(trained.stats.loss_curve[i]) + "\n";
    write_text_file((run.out_dir() / "losses.csv").string(), curve);
    KeyValueFile stats;
    stats.set("holdout_loss", format_real(trained.stats.holdout_loss));
    stats.set("baseline_loss", format_real(trained.stats.baseline_loss));
    stats.save((run.out_dir() / "train_stats.txt").string());
    run.write_manifest();
    run.write_timing(std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count());
    std::cout << "holdout_loss " << format_real(trained.stats.holdout_loss) << " (baseline "
              << format_real(trained.stats.baseline_loss) << ")\n";
    return 0;
}

int cmd_caption(Run& run) {
    std::string image_path = run.cfg.get_str("input.image", "");
    if (image_path.empty()) throw ConfigError("caption: --image is required");
    Image img = stage("read-image", [&] { return read_png(image_path); });
    Prompt p = stage("caption", [&] {
        std::string ds = run.cfg.get_str("dataset.path", "");
        if (!ds.empty() && run.cfg.get_str("input.prompt", "").empty() &&
            run.cfg.get_str("backend.caption_endpoint", "").empty()) {
            return manifest_caption_provider(ds).caption(img);
        }
        return run.caption_of(img, nullptr);
    });
    ensure_dir(run.out_dir().string());
    write_text_file((run.out_dir() / "caption.txt").string(), p.text + "\n");
    run.write_manifest();
    std::cout << p.text << "\n";
    return 0;
}

// shared by direction/invert/edit: the source prompt for an image
Prompt source_prompt_for(Run& run, const Image& img) {
    std::string override = run.cfg.get_str("input.prompt", "");
    if (!override.empty()) return Prompt{override};
    std::string endpoint = run.cfg.get_str("backend.caption_endpoint", "");
    if (!endpoint.empty()) return HttpCaptionProvider(run.backend_config("backend.caption_endpoint")).caption(img);
    std::string ds = run.cfg.get_str("dataset.path", "");
    if (ds.empty()) throw ConfigError("need --prompt, a caption backend, or dataset.path for captions");
    return manifest_caption_provider(ds).caption(img);
}

EditDirection direction_for(Run& run, const Prompt& source, const Prompt& target, const TextEncoder& enc,
                            SentenceBank* bank_out) {
    std::string bank_path = run.cfg.get_str("input.bank", "");
    SentenceBank bank;
    if (!bank_path.empty()) {
        bank = load_bank(bank_path);
    } else {
        int n = static_cast<int>(run.cfg.get_int("direction.bank_size", 16));
        auto src = run.bank_sentences(source, n);
        auto tgt = run.bank_sentences(target, n);
        if (static_cast<int>(src.size()) < n || static_cast<int>(tgt.size()) < n)
            throw ProviderError("sentence generator yielded fewer than " + std::to_string(n) + " sentences");
        for (int i = 0; i < n; ++i) {
            bank.source.push_back(Prompt{src[i]});
            bank.target.push_back(Prompt{tgt[i]});
        }
    }
    if (bank_out) *bank_out = bank;
    return edit_direction(bank, enc);
}

int cmd_direction(Run& run) {
    ToyUNet model = stage("load-model", [&] { return run.load_model(); });
    ToyTextEncoder enc = model.make_text_encoder();

    Prompt source;
    std::string bank_path = run.cfg.get_str("input.bank", "");
    std::string image_path = run.cfg.get_str("input.image", "");
    if (bank_path.empty()) {
        if (!image_path.empty()) {
            Image img = stage("read-image", [&] { return read_png(image_path); });
            source = stage("caption", [&] { return source_prompt_for(run, img); });
        } else {
            std::string p = run.cfg.get_str("input.prompt", "");
            if (p.empty()) throw ConfigError("direction: need --bank, --image or --prompt");
            source = Prompt{p};
        }
    }
    Prompt target;
    if (bank_path.empty()) {
        EditSpec spec{run.cfg.get_str("edit.from", ""), run.cfg.get_str("edit.to", "")};
        if (spec.to_phrase.empty()) throw ConfigError("direction: --edit-to is required");
        target = stage("target-prompt", [&] { return build_target_prompt(source, spec); });
    }
    SentenceBank bank;
    EditDirection delta = stage("direction", [&] { return direction_for(run, source, target, enc, &bank); });

    ensure_dir(run.out_dir().string());
    write_zct1((run.out_dir() / "delta.zct").string(), delta.delta);
    save_bank((run.out_dir() / "bank.txt").string(), bank);
    run.write_manifest();
    std::cout << "delta norm " << format_real(l2_norm(delta.delta)) << "\n";
    return 0;
}

int cmd_invert(Run& run) {
    auto t0 = std::chrono::steady_clock::now();
    std::string image_path = run.cfg.get_str("input.image", "");
    if (image_path.empty()) throw ConfigError("invert: --image is required");
    ToyUNet model = stage("load-model", [&] { return run.load_model(); });
    NoiseSchedule sched = run.schedule();
    Image img = stage("read-image", [&] { return read_png(image_path); });
    Prompt source = stage("caption", [&] { return source_prompt_for(run, img); });
    TextEmbedding c = model.make_text_encoder().encode(source);
    Tensor x0 = encode_latent(img);
    Tensor xT = stage("invert", [&] { return invert(x0, c, model, sched); });
    ensure_dir(run.out_dir().string());
    write_zct1((run.out_dir() / "x_T.zct").string(), xT);
    write_text_file((run.out_dir() / "caption.txt").string(), source.text + "\n");
    run.write_manifest();
    run.write_timing(std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count());
    return 0;
}

int cmd_reconstruct(Run& run) {
    auto t0 = std::chrono::steady_clock::now();
    std::string latent_path = run.cfg.get_str("input.latent", "");
    if (latent_path.empty()) throw ConfigError("reconstruct: --latent is required");
    ToyUNet model = stage("load-model", [&] { return run.load_model(); });
    NoiseSchedule sched = run.schedule();
    std::string prompt = run.cfg.get_str("input.prompt", "");
    if (prompt.empty()) throw ConfigError("reconstruct: --prompt is required (the inversion conditioning)");
    TextEmbedding c = model.make_text_encoder().encode(Prompt{prompt});
    Tensor xT = stage("read-latent", [&] { return read_zct1(latent_path); });
    Tensor x0 = stage("reconstruct", [&] { return reconstruct(xT, c, model, sched); });
    ensure_dir(run.out_dir().string());
    write_png((run.out_dir() / "output.png").string(), decode_latent(x0));
    run.write_manifest();
    run.write_timing(std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count());
    return 0;
}

int cmd_edit(Run& run) {
    auto t0 = std::chrono::steady_clock::now();
    std::string image_path = run.cfg.get_str("input.image", "");
    if (image_path.empty()) throw ConfigError("edit: --image is required");
    bool zero_delta = run.cfg.get_bool("edit.zero_delta", false);
    EditSpec spec{run.cfg.get_str("edit.from", ""), run.cfg.get_str("edit.to", "")};
    if (!zero_delta && spec.to_phrase.empty()) throw ConfigError("edit: --edit-to is required");

    ToyUNet model = stage("load-model", [&] { return run.load_model(); });
    NoiseSchedule sched = run.schedule();
    ToyTextEncoder enc = model.make_text_encoder();
    Image img = stage("read-image", [&] { return read_png(image_path); });

    Prompt source = stage("caption", [&] { return source_prompt_for(run, img); });
    TextEmbedding c = enc.encode(source);

    EditDirection delta;
    if (zero_delta) {
        delta.delta = Tensor::zeros(c.tokens.shape);
    } else {
        Prompt target = stage("target-prompt", [&] { return build_target_prompt(source, spec); });
        delta = stage("direction", [&] { return direction_for(run, source, target, enc, nullptr); });
    }

    Tensor x0 = encode_latent(img);
    // persist the inverted latent; downstream phases consume the same
    // float32-quantized tensor a reload would yield
    std::string phase1 = run.cfg.get_str("pipeline.source_latents", "denoised");
    if (phase1 != "denoised" && phase1 != "inversion")
        throw ConfigError("pipeline.source_latents must be denoised|inversion, got '" + phase1 + "'");
    Tensor xT = quantize_f32(stage("invert", [&] { return invert(x0, c, model, sched); }));
    SourceTrajectory traj = stage("record-source", [&] {
        if (phase1 == "inversion") return record_source_from_inversion(x0, c, model, sched);
        return record_source(xT, c, model, sched);
    });
    if (phase1 == "inversion") xT = quantize_f32(traj.x_T);
    EditResult result = stage("edit", [&] { return edit(traj, c, delta, model, sched, run.guidance_config()); });

    ensure_dir(run.out_dir().string());
    write_zct1((run.out_dir() / "x_T.zct").string(), xT);
    write_png((run.out_dir() / "output.png").string(), result.image);
    write_text_file((run.out_dir() / "losses.csv").string(), losses_csv(result.losses));
    run.write_manifest();
    run.write_timing(std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count());
    return 0;
}

int cmd_eval(Run& run) {
    auto t0 = std::chrono::steady_clock::now();
    CaptionedImageSet data = stage("dataset", [&] { return run.load_dataset(); });
    ToyUNet model = stage("load-model", [&] { return run.load_model(); });
    ToyJointEncoder joint = stage("load-joint", [&] { return run.load_joint(); });
    NoiseSchedule sched = run.schedule();
    ToyTextEncoder enc = model.make_text_encoder();

    ExperimentSpec spec;
    spec.guidance = run.guidance_config();
    spec.bank_size = static_cast<int>(run.cfg.get_int("direction.bank_size", 16));
    spec.workers = static_cast<int>(run.cfg.get_int("eval.workers", 1));
    std::string tasks = run.cfg.get_str("eval.tasks", "");
    size_t pos = 0;
    while (pos < tasks.size()) {
        size_t end = tasks.find(';', pos);
        if (end == std::string::npos) end = tasks.size();
        std::string t = tasks.substr(pos, end - pos);
        pos = end + 1;
        size_t arrow = t.find("->");
        if (arrow == std::string::npos) throw ConfigError("eval task must be from->to, got '" + t + "'");
        spec.tasks.push_back({t, t.substr(0, arrow), t.substr(arrow + 2)});
    }
    std::string variants = run.cfg.get_str("eval.variants", "");
    pos = 0;
    while (pos < variants.size()) {
        size_t end = variants.find(',', pos);
        if (end == std::string::npos) end = variants.size();
        spec.variants.push_back(variant_from(variants.substr(pos, end - pos)));
        pos = end + 1;
    }
    std::string seeds = run.cfg.get_str("eval.seeds", "");
    pos = 0;
    while (pos < seeds.size()) {
        size_t end = seeds.find(',', pos);
        if (end == std::string::npos) end = seeds.size();
        spec.seeds.push_back(std::stoull(seeds.substr(pos, end - pos)));
        pos = end + 1;
    }

    MetricReport report =
        stage("experiment", [&] { return run_experiment(spec, data, model, sched, joint, enc); });

    ensure_dir(run.out_dir().string());
    write_text_file((run.out_dir() / "runs.csv").string(), report.runs_csv());
    write_text_file((run.out_dir() / "summary.csv").string(), report.summary_csv());
    write_text_file((run.out_dir() / "summary.txt").string(), report.summary_table());
    run.write_manifest();
    run.write_timing(std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count());
    std::cout << report.summary_table();
    return 0;
}

int cmd_report(Run& run) {
    std::string runs_path = run.cfg.get_str("input.runs", "");
    if (runs_path.empty()) throw ConfigError("report: --runs is required");
    auto runs = stage("parse-runs", [&] { return parse_runs_csv(read_text_file(runs_path)); });
    MetricReport report;
    report.runs = std::move(runs);
    report.cells = aggregate_runs(report.runs);
    ensure_dir(run.out_dir().string());
    write_text_file((run.out_dir() / "summary.csv").string(), report.summary_csv());
    write_text_file((run.out_dir() / "summary.txt").string(), report.summary_table());
    run.write_manifest();
    std::cout << report.summary_table();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"zerocon: text-guided image-to-image translation (toy diffusion stack)"};
    app.footer(registry_help());
    app.require_subcommand(1);

    Run run;
    run.load_defaults();

    std::string config_path, out_dir, image, prompt, latent, bank, runs_csv, edit_from, edit_to;
    std::vector<std::string> sets;
    int64_t seed = -1;
    bool zero_delta = false;
    double lambda_c = -1, lambda_e = -1, lambda_lr = -1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config or manifest file (key=value)");
        cmd->add_option("--set", sets, "override one config key (key=value)")->take_all();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "root seed");
        return cmd;
    };

    auto* c_train = add_common(app.add_subcommand("train-toy", "train the toy denoiser and joint encoder"));
    auto* c_caption = add_common(app.add_subcommand("caption", "caption an image"));
    c_caption->add_option("--image", image, "input PNG");
    auto* c_direction = add_common(app.add_subcommand("direction", "compute an edit direction"));
    c_direction->add_option("--image", image, "source image (captioned for the source prompt)");
    c_direction->add_option("--prompt", prompt, "source prompt override");
    c_direction->add_option("--bank", bank, "sentence bank file (S/T lines)");
    c_direction->add_option("--edit-from", edit_from, "phrase to replace");
    c_direction->add_option("--edit-to", edit_to, "replacement phrase");
    auto* c_invert = add_common(app.add_subcommand("invert", "deterministic DDIM inversion of an image"));
    c_invert->add_option("--image", image, "input PNG");
    c_invert->add_option("--prompt", prompt, "source prompt override");
    auto* c_recon = add_common(app.add_subcommand("reconstruct", "denoise a latent back to an image"));
    c_recon->add_option("--latent", latent, "x_T tensor file");
    c_recon->add_option("--prompt", prompt, "conditioning prompt");
    auto* c_edit = add_common(app.add_subcommand("edit", "guided text-driven edit of an image"));
    c_edit->add_option("--image", image, "input PNG");
    c_edit->add_option("--prompt", prompt, "source prompt override");
    c_edit->add_option("--edit-from", edit_from, "phrase to replace");
    c_edit->add_option("--edit-to", edit_to, "replacement phrase");
    c_edit->add_option("--bank", bank, "sentence bank file");
    c_edit->add_flag("--zero-delta", zero_delta, "use an all-zeros edit direction");
    c_edit->add_option("--lambda-c", lambda_c, "cross-attention loss weight");
    c_edit->add_option("--lambda-e", lambda_e, "CUT loss weight");
    c_edit->add_option("--lambda-lr", lambda_lr, "latent learning rate");
    auto* c_eval = add_common(app.add_subcommand("eval", "run the toy experiment sweep"));
    auto* c_report = add_common(app.add_subcommand("report", "aggregate a runs CSV into summary tables"));
    c_report->add_option("--runs", runs_csv, "runs.csv from a previous eval");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (!config_path.empty()) run.merge_file(config_path);
        for (const auto& kv : sets) run.set_kv(kv);
        if (!out_dir.empty()) run.cfg.set("out.dir", out_dir);
        if (seed >= 0) run.cfg.set("seed", std::to_string(seed));
        if (!image.empty()) run.cfg.set("input.image", image);
        if (!prompt.empty()) run.cfg.set("input.prompt", prompt);
        if (!latent.empty()) run.cfg.set("input.latent", latent);
        if (!bank.empty()) run.cfg.set("input.bank", bank);
        if (!runs_csv.empty()) run.cfg.set("input.runs", runs_csv);
        if (!edit_from.empty()) run.cfg.set("edit.from", edit_from);
        if (!edit_to.empty()) run.cfg.set("edit.to", edit_to);
        if (zero_delta) run.cfg.set("edit.zero_delta", "true");
        if (lambda_c >= 0) run.cfg.set("guidance.lambda_c", format_real(lambda_c));
        if (lambda_e >= 0) run.cfg.set("guidance.lambda_e", format_real(lambda_e));
        if (lambda_lr >= 0) run.cfg.set("guidance.lambda_lr", format_real(lambda_lr));

        if (c_train->parsed()) {
            run.command = "train-toy";
            return cmd_train_toy(run);
        }
        if (c_caption->parsed()) {
            run.command = "caption";
            return cmd_caption(run);
        }
        if (c_direction->parsed()) {
            run.command = "direction";
            return cmd_direction(run);
        }
        if (c_invert->parsed()) {
            run.command = "invert";
            return cmd_invert(run);
        }
        if (c_recon->parsed()) {
            run.command = "reconstruct";
            return cmd_reconstruct(run);
        }
        if (c_edit->parsed()) {
            run.command = "edit";
            return cmd_edit(run);
        }
        if (c_eval->parsed()) {
            run.command = "eval";
            return cmd_eval(run);
        }
        if (c_report->parsed()) {
            run.command = "report";
            return cmd_report(run);
        }
        std::cerr << "error: no command\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
