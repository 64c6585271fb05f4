#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "tom/datagen.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string output;
};

CliRun run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path dir = fs::temp_directory_path() / "tom_tests" / "cli";
    fs::create_directories(dir);
    const fs::path capture = dir / ("out_" + std::to_string(counter++) + ".txt");
    const std::string cmd =
        std::string(TOM_CLI_PATH) + " " + args + " > " + capture.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream f(capture, std::ios::binary);
    r.output.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "tom_tests" / "cli_pipeline";
    fs::create_directories(dir);
    return dir;
}

void write_config(const fs::path& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    f << body;
}

}  // namespace

TEST_CASE("cli: unknown subcommand exits 2 with usage") {
    const auto r = run_cli("frobnicate");
    CHECK(r.code == 2);
    CHECK(r.output.find("error:") != std::string::npos);
    CHECK(r.output.find("Usage") != std::string::npos);
}

TEST_CASE("cli: no subcommand exits 2, --help exits 0") {
    CHECK(run_cli("").code == 2);
    const auto h = run_cli("--help");
    CHECK(h.code == 0);
    CHECK(h.output.find("gradcheck") != std::string::npos);
}

TEST_CASE("cli: gradcheck example passes and prints the error") {
    const auto r = run_cli("gradcheck --seed 7 --embed-dim 4 --seq-len 8");
    CHECK(r.code == 0);
    CHECK(r.output.find("max_rel_err") != std::string::npos);
}

TEST_CASE("cli: train with missing data dir exits 1 and names the path") {
    const auto r = run_cli("train --data /nonexistent/ds --out /tmp/tom_tests/never");
    CHECK(r.code == 1);
    CHECK(r.output.find("error:") != std::string::npos);
    CHECK(r.output.find("/nonexistent/ds") != std::string::npos);
}

TEST_CASE("cli: config with unknown key is rejected") {
    const fs::path dir = work_dir();
    write_config(dir / "bad.cfg", "fleet.suv = 1\nbogus.key = 3\n");
    const auto r = run_cli("gen --config " + (dir / "bad.cfg").string() + " --out " +
                           (dir / "never").string());
    CHECK(r.code == 1);
    CHECK(r.output.find("error:") != std::string::npos);
    CHECK(r.output.find("bogus.key") != std::string::npos);
}

TEST_CASE("cli: full pipeline, flags over config, deterministic gen") {
    const fs::path dir = work_dir();
    write_config(dir / "run.cfg", R"(# tiny smoke-test fleet
fleet.suv = 2
fleet.track = 2
data.ticks = 400
data.train = 2
data.test = 2
train.epochs = 2
train.seq_len = 40
train.stride = 40
train.embed_dim = 4
analysis.samples_per_machine = 4
seed = 5
)");
    const std::string cfg = " --config " + (dir / "run.cfg").string();

    const auto g1 = run_cli("gen" + cfg + " --out " + (dir / "ds").string());
    REQUIRE(g1.code == 0);
    const auto ds = tom::read_dataset(dir / "ds");
    CHECK(ds.fleet.size() == 4);
    CHECK(ds.split.train_ids.size() == 2);
    CHECK(ds.trajectories[0].pairs.size() == 400);

    // byte-identical rerun
    const auto g2 = run_cli("gen" + cfg + " --out " + (dir / "ds2").string());
    REQUIRE(g2.code == 0);
    CHECK(slurp(dir / "ds" / "manifest.json") == slurp(dir / "ds2" / "manifest.json"));
    CHECK(slurp(dir / "ds" / "traj_0.jsonl") == slurp(dir / "ds2" / "traj_0.jsonl"));

    // a different --seed overrides the config seed
    const auto g3 = run_cli("gen" + cfg + " --seed 6 --out " + (dir / "ds3").string());
    REQUIRE(g3.code == 0);
    CHECK(slurp(dir / "ds" / "traj_0.jsonl") != slurp(dir / "ds3" / "traj_0.jsonl"));

    const auto t = run_cli("train" + cfg + " --data " + (dir / "ds").string() + " --out " +
                           (dir / "run").string());
    REQUIRE(t.code == 0);
    CHECK(fs::exists(dir / "run" / "model.json"));
    CHECK(fs::exists(dir / "run" / "metrics.json"));

    const auto e = run_cli("eval" + cfg + " --data " + (dir / "ds").string() + " --model " +
                           (dir / "run" / "model.json").string() + " --split test --out " +
                           (dir / "run" / "metrics_test.json").string());
    REQUIRE(e.code == 0);
    CHECK(e.output.find("test aggregate MSE") != std::string::npos);

    const auto em = run_cli("embed" + cfg + " --data " + (dir / "ds").string() + " --model " +
                            (dir / "run" / "model.json").string() + " --out " +
                            (dir / "run" / "embeddings.csv").string());
    REQUIRE(em.code == 0);
    CHECK(em.output.find("16 embedding records") != std::string::npos);

    const auto p = run_cli("pca --data " + (dir / "run" / "embeddings.csv").string() + " --out " +
                           (dir / "run" / "pca.json").string());
    REQUIRE(p.code == 0);
    CHECK(p.output.find("explained fractions") != std::string::npos);

    const auto pl = run_cli("plot --data " + (dir / "run").string() + " --out " +
                            (dir / "run").string() + " --tag class");
    REQUIRE(pl.code == 0);
    CHECK(fs::exists(dir / "run" / "scatter_class.svg"));
    CHECK(slurp(dir / "run" / "table_class.csv")
              .starts_with("machine_id,pc1,pc2,pc3,class,mass_bucket,year_bucket"));

    const auto bad_tag = run_cli("plot --data " + (dir / "run").string() + " --out " +
                                 (dir / "run").string() + " --tag nope");
    CHECK(bad_tag.code == 1);
    CHECK(bad_tag.output.find("error:") != std::string::npos);
}

TEST_CASE("cli: gen output is independent of --threads") {
    const fs::path dir = work_dir();
    write_config(dir / "thr.cfg", "fleet.lti = 3\ndata.ticks = 200\nseed = 9\n");
    const std::string cfg = " --config " + (dir / "thr.cfg").string();
    REQUIRE(run_cli("gen" + cfg + " --threads 1 --out " + (dir / "t1").string()).code == 0);
    REQUIRE(run_cli("gen" + cfg + " --threads 4 --out " + (dir / "t4").string()).code == 0);
    for (const char* f : {"manifest.json", "traj_0.jsonl", "traj_1.jsonl", "traj_2.jsonl"})
        CHECK(slurp(dir / "t1" / f) == slurp(dir / "t4" / f));
}
