// End-to-end checks of the reloc binary: exit codes, determinism, and the
// synth -> train -> eval -> analyze -> restore flow on a tiny corpus.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "reloc_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(RELOC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string tiny_net_flags() {
    return " --loc-width 3 --loc-depth 1 --res-width 3 --res-depth 1 --disc-width 3"
           " --disc-stages 2 --block 32 --batch 4";
}

}  // namespace

TEST_CASE("cli: full tiny workflow with exit codes") {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    const fs::path data = kWork / "data";

    SUBCASE("usage errors exit 2") {
        CHECK(run("synth --n 4 --out " + (kWork / "x").string()) == 2);  // missing --seed
        CHECK(run("definitely-not-a-command") == 2);
        CHECK(run("eval --situation nonsense --data x --l-ckpt y") == 2);
        CHECK(run("") == 2);  // a subcommand is required
    }

    REQUIRE(run("synth --n 6 --size 64 --seed 9 --out " + data.string()) == 0);
    CHECK(fs::exists(data / "manifest.jsonl"));
    CHECK(fs::exists(data / "images" / "00000.png"));
    CHECK(!fs::exists(data / ".partial"));
    CHECK(!fs::exists(data / ".lock"));

    SUBCASE("synth is byte-deterministic under a fixed seed") {
        const fs::path data2 = kWork / "data2";
        REQUIRE(run("synth --n 6 --size 64 --seed 9 --out " + data2.string()) == 0);
        CHECK(slurp(data / "images" / "00003.png") == slurp(data2 / "images" / "00003.png"));
        CHECK(slurp(data / "manifest.jsonl") == slurp(data2 / "manifest.jsonl"));
    }

    const fs::path run_mp = kWork / "run_mp";
    REQUIRE(run("train --mode pretrain_plain --data " + data.string() + " --run-dir " +
                run_mp.string() + " --seed 3 --epochs 1" + tiny_net_flags()) == 0);
    const fs::path mp = run_mp / "checkpoints" / "mp.ckpt";
    CHECK(fs::exists(mp));
    CHECK(fs::exists(run_mp / "train_log.jsonl"));

    SUBCASE("finetune and reloc modes demand an init checkpoint") {
        CHECK(run("train --mode finetune_distorted --data " + data.string() + " --run-dir " +
                  (kWork / "run_noinit").string() + " --seed 3 --epochs 1" + tiny_net_flags()) == 2);
        CHECK(run("train --mode reloc_alternate --data " + data.string() + " --run-dir " +
                  (kWork / "run_noinit2").string() + " --seed 3 --epochs 1" + tiny_net_flags()) ==
              2);
    }

    const fs::path run_reloc = kWork / "run_reloc";
    REQUIRE(run("train --mode reloc_alternate --data " + data.string() + " --run-dir " +
                run_reloc.string() + " --init " + mp.string() +
                " --seed 4 --epochs 2 --qf fixed:75" + tiny_net_flags()) == 0);
    const fs::path r_ckpt = run_reloc / "checkpoints" / "reloc_r.ckpt";
    const fs::path l_ckpt = run_reloc / "checkpoints" / "reloc_l.ckpt";
    CHECK(fs::exists(r_ckpt));
    CHECK(fs::exists(l_ckpt));

    SUBCASE("uniform-QF regime trains too") {
        const fs::path run_u = kWork / "run_uniform";
        CHECK(run("train --mode reloc_alternate --data " + data.string() + " --run-dir " +
                  run_u.string() + " --init " + mp.string() +
                  " --seed 5 --epochs 2 --qf uniform:70:100" + tiny_net_flags()) == 0);
    }

    const fs::path eval_dir = kWork / "eval_mp";
    REQUIRE(run("eval --situation mp-plain --data " + data.string() + " --split all --l-ckpt " +
                mp.string() + " --window 64 --stride 64 --out " + eval_dir.string()) == 0);
    CHECK(fs::exists(eval_dir / "mp_plain_plain.csv"));
    CHECK(fs::exists(eval_dir / "mp_plain_plain.json"));

    const fs::path eval_reloc = kWork / "eval_reloc";
    REQUIRE(run("eval --situation reloc --data " + data.string() + " --split all --l-ckpt " +
                l_ckpt.string() + " --r-ckpt " + r_ckpt.string() +
                " --qf 60,75 --window 64 --stride 64 --out " + eval_reloc.string()) == 0);
    CHECK(fs::exists(eval_reloc / "reloc_qf60.csv"));
    CHECK(fs::exists(eval_reloc / "reloc_qf75.csv"));

    SUBCASE("eval without the restorer checkpoint exits 2") {
        CHECK(run("eval --situation reloc --data " + data.string() + " --split all --l-ckpt " +
                  l_ckpt.string() + " --window 64 --out " + (kWork / "e2").string()) == 2);
    }

    SUBCASE("eval with a mismatched checkpoint component exits 1") {
        CHECK(run("eval --situation reloc --data " + data.string() + " --split all --l-ckpt " +
                  r_ckpt.string() + " --r-ckpt " + r_ckpt.string() + " --window 64 --out " +
                  (kWork / "e3").string()) == 1);
    }

    const fs::path analysis = kWork / "analysis";
    REQUIRE(run("analyze --situation mp-distorted --data " + data.string() +
                " --split all --l-ckpt " + mp.string() + " --n 20 --qf 75 --seed 11 --out " +
                analysis.string()) == 0);
    CHECK(fs::exists(analysis / "emd.json"));
    CHECK(fs::exists(analysis / "scatter.csv"));

    SUBCASE("analyze with n = 0 exits 2") {
        CHECK(run("analyze --situation mp-distorted --data " + data.string() +
                  " --split all --l-ckpt " + mp.string() + " --n 0 --out " +
                  (kWork / "a2").string()) == 2);
    }

    SUBCASE("analyze is deterministic under a fixed seed") {
        const fs::path a3 = kWork / "a3";
        REQUIRE(run("analyze --situation mp-distorted --data " + data.string() +
                    " --split all --l-ckpt " + mp.string() + " --n 20 --qf 75 --seed 11 --out " +
                    a3.string()) == 0);
        CHECK(slurp(analysis / "emd.json") == slurp(a3 / "emd.json"));
    }

    const fs::path restored = kWork / "restored";
    REQUIRE(run("restore --r-ckpt " + r_ckpt.string() + " --in " + (data / "images").string() +
                " --window 64 --stride 64 --out " + restored.string()) == 0);
    int count = 0;
    for (const auto& e : fs::directory_iterator(restored))
        if (e.path().extension() == ".png") ++count;
    CHECK(count == 6);  // 1:1 file mapping

    SUBCASE("restore with a localization checkpoint exits 1") {
        CHECK(run("restore --r-ckpt " + mp.string() + " --in " + (data / "images").string() +
                  " --out " + (kWork / "r2").string()) == 1);
    }

    SUBCASE("config file supplies defaults, flags override") {
        const fs::path cfg = kWork / "reloc.ini";
        std::ofstream(cfg) << "[synth]\nn=4\nsize=64\nseed=21\nout=" << (kWork / "cfg_data").string()
                           << "\n";
        CHECK(run("--config " + cfg.string() + " synth") == 0);
        CHECK(fs::exists(kWork / "cfg_data" / "images" / "00003.png"));
        CHECK(!fs::exists(kWork / "cfg_data" / "images" / "00004.png"));

        CHECK(run("--config " + cfg.string() + " synth --out " + (kWork / "cfg_data2").string() +
                  " --n 2") == 0);
        CHECK(fs::exists(kWork / "cfg_data2" / "images" / "00001.png"));
        CHECK(!fs::exists(kWork / "cfg_data2" / "images" / "00002.png"));
    }
}
