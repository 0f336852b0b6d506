#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "zerocon/dataset.hpp"
#include "zerocon/io.hpp"
#include "zerocon/rng.hpp"
#include "zerocon/textdir.hpp"

using namespace zerocon;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;
};

CmdResult run_cmd(const std::string& args) {
    std::string cmd = std::string(ZEROCON_BIN) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    CmdResult r;
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

// one trained workspace shared by the CLI tests
struct Workspace {
    fs::path root;
    fs::path config;
    std::string first_caption;  // caption of item_0000.png
};

const Workspace& workspace() {
    static Workspace w = [] {
        Workspace ws;
        ws.root = fs::temp_directory_path() / "zerocon_cli";
        fs::remove_all(ws.root);
        fs::create_directories(ws.root);
        ws.config = ws.root / "toy.cfg";

        std::string cfg;
        cfg += "dataset.path = " + (ws.root / "data").string() + "\n";
        cfg += "dataset.autogen = true\n";
        cfg += "dataset.count = 40\n";
        cfg += "dataset.size = 16\n";
        cfg += "schedule.steps = 50\n";
        cfg += "schedule.substeps = 5\n";
        cfg += "unet.width0 = 8\n";
        cfg += "unet.width1 = 16\n";
        cfg += "unet.time_dim = 16\n";
        cfg += "train.steps = 150\n";
        cfg += "train.holdout = 8\n";
        cfg += "train.lr = 0.003\n";
        cfg += "joint.steps = 80\n";
        cfg += "guidance.patches = 4\n";
        cfg += "direction.bank_size = 8\n";
        cfg += "model.checkpoint = " + (ws.root / "ckpt" / "denoiser.zckp").string() + "\n";
        cfg += "model.joint_checkpoint = " + (ws.root / "ckpt" / "joint.zckp").string() + "\n";
        write_text_file(ws.config.string(), cfg);

        CmdResult train = run_cmd("train-toy --config " + ws.config.string() + " --out " +
                                  (ws.root / "ckpt").string());
        REQUIRE_MESSAGE(train.code == 0, train.out);

        // same derivation the autogen path uses (root seed 7)
        CaptionedImageSet data = generate_toy_dataset(40, 16, split_seed(7, "dataset"));
        ws.first_caption = data.items[0].caption;
        return ws;
    }();
    return w;
}

std::string q(const std::string& s) { return "\"" + s + "\""; }

}  // namespace

TEST_CASE("--help lists every config key with type and default") {
    CmdResult r = run_cmd("--help");
    CHECK(r.code == 0);
    for (const char* key :
         {"seed", "schedule.kind", "schedule.substeps", "guidance.lambda_c", "guidance.lambda_e",
          "guidance.lambda_lr", "guidance.tau", "guidance.patches", "train.steps", "dataset.path",
          "direction.bank_size", "eval.tasks", "backend.caption_endpoint", "backend.token_env"}) {
        INFO("missing key: ", key);
        CHECK(r.out.find(key) != std::string::npos);
    }
    CHECK(r.out.find("(int, default") != std::string::npos);
    CHECK(r.out.find("(real, default") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected with exit 2") {
    fs::path bad = fs::temp_directory_path() / "zerocon_bad.cfg";
    write_text_file(bad.string(), "no.such.key = 1\n");
    CmdResult r = run_cmd("caption --config " + bad.string() + " --image x.png");
    CHECK(r.code == 2);
    CHECK(r.out.find("unknown config keys") != std::string::npos);
    CHECK(r.out.find("no.such.key") != std::string::npos);

    CmdResult r2 = run_cmd("caption --set nope=1 --image x.png");
    CHECK(r2.code == 2);
}

TEST_CASE("missing dataset path exits 2 and names the path") {
    CmdResult r = run_cmd("train-toy --set dataset.path=/definitely/not/here --out /tmp/zc_x");
    CHECK(r.code == 2);
    CHECK(r.out.find("/definitely/not/here") != std::string::npos);
}

TEST_CASE("caption command resolves dataset captions") {
    const Workspace& ws = workspace();
    CmdResult r = run_cmd("caption --config " + ws.config.string() + " --image " +
                          (ws.root / "data" / "item_0000.png").string() + " --out " +
                          (ws.root / "cap").string());
    CHECK(r.code == 0);
    CHECK(r.out.find(ws.first_caption) != std::string::npos);
    CHECK(read_text_file((ws.root / "cap" / "caption.txt").string()) == ws.first_caption + "\n");
}

TEST_CASE("direction from a bank of identical pairs is a zero tensor") {
    const Workspace& ws = workspace();
    SentenceBank bank;
    for (int i = 0; i < 4; ++i) {
        bank.source.push_back(Prompt{"a red circle on a white background"});
        bank.target.push_back(Prompt{"a red circle on a white background"});
    }
    fs::path bank_path = ws.root / "same_bank.txt";
    save_bank(bank_path.string(), bank);
    CmdResult r = run_cmd("direction --config " + ws.config.string() + " --bank " + bank_path.string() +
                          " --out " + (ws.root / "dir0").string());
    CHECK(r.code == 0);
    Tensor delta = read_zct1((ws.root / "dir0" / "delta.zct").string());
    CHECK(l2_norm(delta) == 0);
}

TEST_CASE("edit degeneracy matches invert+reconstruct pixel for pixel") {
    const Workspace& ws = workspace();
    std::string img = (ws.root / "data" / "item_0000.png").string();

    CmdResult inv = run_cmd("invert --config " + ws.config.string() + " --image " + img + " --out " +
                            (ws.root / "inv").string());
    REQUIRE_MESSAGE(inv.code == 0, inv.out);
    CmdResult rec = run_cmd("reconstruct --config " + ws.config.string() + " --latent " +
                            (ws.root / "inv" / "x_T.zct").string() + " --prompt " + q(ws.first_caption) +
                            " --out " + (ws.root / "rec").string());
    REQUIRE_MESSAGE(rec.code == 0, rec.out);
    CmdResult ed = run_cmd("edit --config " + ws.config.string() + " --image " + img +
                           " --zero-delta --lambda-c 0 --lambda-e 0 --out " + (ws.root / "ed").string());
    REQUIRE_MESSAGE(ed.code == 0, ed.out);

    std::string a = read_text_file((ws.root / "rec" / "output.png").string());
    std::string b = read_text_file((ws.root / "ed" / "output.png").string());
    CHECK(a == b);
}

TEST_CASE("edit is byte-identical across reruns with a fixed seed") {
    const Workspace& ws = workspace();
    std::string img = (ws.root / "data" / "item_0000.png").string();
    std::string out = (ws.root / "det").string();
    std::string cmd = "edit --config " + ws.config.string() + " --image " + img +
                      " --edit-from red --edit-to blue --seed 11 --out " + out;
    // the source caption may not contain "red"; fall back to a red item
    CaptionedImageSet data = generate_toy_dataset(40, 16, split_seed(7, "dataset"));
    for (const auto& item : data.items)
        if (item.caption.find("red") != std::string::npos) {
            img = (ws.root / "data" / item.image.id).string();
            break;
        }
    cmd = "edit --config " + ws.config.string() + " --image " + img +
          " --edit-from red --edit-to blue --seed 11 --out " + out;

    CmdResult r1 = run_cmd(cmd);
    REQUIRE_MESSAGE(r1.code == 0, r1.out);
    std::string png1 = read_text_file(out + "/output.png");
    std::string csv1 = read_text_file(out + "/losses.csv");
    std::string man1 = read_text_file(out + "/manifest.txt");

    CmdResult r2 = run_cmd(cmd);
    REQUIRE(r2.code == 0);
    CHECK(read_text_file(out + "/output.png") == png1);
    CHECK(read_text_file(out + "/losses.csv") == csv1);
    CHECK(read_text_file(out + "/manifest.txt") == man1);

    // a manifest rerun reproduces the outputs byte for byte
    CmdResult r3 = run_cmd("edit --config " + out + "/manifest.txt --out " + (ws.root / "det2").string());
    REQUIRE_MESSAGE(r3.code == 0, r3.out);
    CHECK(read_text_file((ws.root / "det2" / "output.png").string()) == png1);
    CHECK(read_text_file((ws.root / "det2" / "losses.csv").string()) == csv1);
}

TEST_CASE("edit rejects an absent edit phrase with exit 2 showing the caption") {
    const Workspace& ws = workspace();
    std::string img = (ws.root / "data" / "item_0000.png").string();
    CmdResult r = run_cmd("edit --config " + ws.config.string() + " --image " + img +
                          " --edit-from unicorn --edit-to dragon --out " + (ws.root / "bad").string());
    CHECK(r.code == 2);
    CHECK(r.out.find(ws.first_caption) != std::string::npos);
}

TEST_CASE("train-toy is reproducible: identical checkpoint hashes") {
    const Workspace& ws = workspace();
    CmdResult again = run_cmd("train-toy --config " + ws.config.string() + " --out " +
                              (ws.root / "ckpt2").string());
    REQUIRE_MESSAGE(again.code == 0, again.out);
    CHECK(file_hash((ws.root / "ckpt" / "denoiser.zckp").string()) ==
          file_hash((ws.root / "ckpt2" / "denoiser.zckp").string()));
    CHECK(file_hash((ws.root / "ckpt" / "joint.zckp").string()) ==
          file_hash((ws.root / "ckpt2" / "joint.zckp").string()));
}

TEST_CASE("eval and report pipeline with row bookkeeping") {
    const Workspace& ws = workspace();
    CmdResult ev = run_cmd("eval --config " + ws.config.string() +
                           " --set " + q("eval.tasks=red->blue") + " --set eval.variants=full,word_swap"
                           " --set eval.seeds=1,2 --out " +
                           (ws.root / "eval").string());
    REQUIRE_MESSAGE(ev.code == 0, ev.out);
    std::string runs = read_text_file((ws.root / "eval" / "runs.csv").string());
    CHECK(std::count(runs.begin(), runs.end(), '\n') == 5);  // header + 4 runs

    CmdResult rep = run_cmd("report --runs " + (ws.root / "eval" / "runs.csv").string() + " --out " +
                            (ws.root / "report").string());
    REQUIRE_MESSAGE(rep.code == 0, rep.out);
    std::string summary = read_text_file((ws.root / "report" / "summary.csv").string());
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 3);  // header + 2 rows
    CHECK(summary.find("full,red->blue") != std::string::npos);
    CHECK(summary.find("word_swap,red->blue") != std::string::npos);
}

TEST_CASE("run manifest round-trips through the key=value format") {
    const Workspace& ws = workspace();
    std::string man_path = (ws.root / "ckpt" / "manifest.txt").string();
    KeyValueFile m = KeyValueFile::load(man_path);
    CHECK(m.get_str("command", "") == "train-toy");
    KeyValueFile reparsed = KeyValueFile::parse(m.serialize());
    CHECK(reparsed.items == m.items);
}

TEST_CASE("report over a synthetic 40-run sweep emits exactly 8 summary rows") {
    const Workspace& ws = workspace();
    std::string csv = "variant,task,seed,alignment,bg_distance\n";
    for (const char* variant : {"full", "no_cut", "no_guidance", "word_swap"})
        for (const char* task : {"red->blue", "circle->square"})
            for (int seed = 1; seed <= 5; ++seed)
                csv += std::string(variant) + "," + task + "," + std::to_string(seed) + ",0.5,0.1\n";
    fs::path runs = ws.root / "forty.csv";
    write_text_file(runs.string(), csv);
    CmdResult r = run_cmd("report --runs " + runs.string() + " --out " + (ws.root / "forty").string());
    REQUIRE_MESSAGE(r.code == 0, r.out);
    std::string summary = read_text_file((ws.root / "forty" / "summary.csv").string());
    CHECK(std::count(summary.begin(), summary.end(), '\n') == 9);  // header + 8 cells
}

TEST_CASE("runtime failures exit 1") {
    const Workspace& ws = workspace();
    CmdResult r = run_cmd("reconstruct --config " + ws.config.string() +
                          " --latent /nonexistent.zct --prompt \"a prompt\" --out " +
                          (ws.root / "x").string());
    CHECK(r.code == 1);
    CHECK(r.out.find("error") != std::string::npos);
}
