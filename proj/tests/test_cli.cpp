#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CliRun run_cli(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "stdout.txt";
    const fs::path err = dir / "stderr.txt";
    const std::string cmd =
        std::string(GCOOP_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

constexpr const char* kGenFlags =
    " --classes 2 --attrs 2 --rho 0.9 --n-train 240 --n-val 120 --n-test 80 --dim 16 "
    "--alpha 1.0 --beta 1.5 --sigma 0.3 --seed 5";

// one full pipeline into `root`, returning the artifact paths
struct Pipeline {
    fs::path data, labels, model, report;
};

Pipeline run_pipeline(const fs::path& root, const fs::path& scratch) {
    Pipeline p;
    p.data = root / "data";
    p.labels = root / "labels.json";
    p.model = root / "model.json";
    p.report = root / "report.json";
    fs::create_directories(root);

    auto r = run_cli("gen-data --out " + p.data.string() + kGenFlags, scratch);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    r = run_cli("pseudo-label --train " + (p.data / "train.gcfs").string() + " --val " +
                    (p.data / "val.gcfs").string() + " --out " + p.labels.string() +
                    " --labeler confidence --split-ratio 0.5 --seed 3",
                scratch);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    r = run_cli("train --train " + (p.data / "train.gcfs").string() + " --labels " +
                    p.labels.string() +
                    " --encoder meanpool --m-ctx 2 --sim-scale 60 --epochs 6 --lr 0.01 "
                    "--optimizer adam --batch-size 64 --seed 2 --out " +
                    p.model.string(),
                scratch);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    r = run_cli("eval --model " + p.model.string() + " --test " + (p.data / "test.gcfs").string() +
                    " --train " + (p.data / "train.gcfs").string() + " --report " + p.report.string(),
                scratch);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    return p;
}

}  // namespace

TEST_CASE("full pipeline runs and repeats byte-identically") {
    TempDir dir("gcoop_cli_pipeline");
    const auto p1 = run_pipeline(dir.path / "run1", dir.path);
    const auto p2 = run_pipeline(dir.path / "run2", dir.path);

    CHECK(read_file(p1.data / "train.gcfs") == read_file(p2.data / "train.gcfs"));
    CHECK(read_file(p1.data / "val.gcfs") == read_file(p2.data / "val.gcfs"));
    CHECK(read_file(p1.data / "test.gcfs") == read_file(p2.data / "test.gcfs"));
    CHECK(read_file(p1.labels) == read_file(p2.labels));
    CHECK(read_file(p1.model) == read_file(p2.model));
    CHECK(read_file(p1.report) == read_file(p2.report));

    // report aggregation over the single report
    auto r = run_cli("report --inputs " + p1.report.string() + " --out " +
                         (dir.path / "table.csv").string(),
                     dir.path);
    CHECK(r.exit_code == 0);
    CHECK(read_file(dir.path / "table.csv").rfind("method,n_runs,", 0) == 0);
    CHECK(r.out.find("groupcoop") != std::string::npos);
}

TEST_CASE("baseline subcommand writes a report") {
    TempDir dir("gcoop_cli_baseline");
    auto r = run_cli("gen-data --out " + (dir.path / "data").string() + kGenFlags, dir.path);
    REQUIRE(r.exit_code == 0);
    r = run_cli("baseline --method knn --knn-k 3 --train " + (dir.path / "data/train.gcfs").string() +
                    " --test " + (dir.path / "data/test.gcfs").string() + " --report " +
                    (dir.path / "knn.json").string() + " --seed 1",
                dir.path);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const auto doc = nlohmann::json::parse(read_file(dir.path / "knn.json"));
    CHECK(doc.at("method") == "knn");
    CHECK(doc.at("worst").get<double>() >= 0.0);

    // groupcoop through the confidence pseudo-label chain
    r = run_cli("baseline --method groupcoop --labels pseudo --train " +
                    (dir.path / "data/train.gcfs").string() + " --val " +
                    (dir.path / "data/val.gcfs").string() + " --test " +
                    (dir.path / "data/test.gcfs").string() +
                    " --epochs 5 --batch-size 64 --m-ctx 2 --sim-scale 30 --lr 0.05 --seed 1 "
                    "--report " +
                    (dir.path / "gc.json").string(),
                dir.path);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    CHECK(nlohmann::json::parse(read_file(dir.path / "gc.json")).at("method") == "groupcoop");
}

TEST_CASE("bad usage and config errors exit 2") {
    TempDir dir("gcoop_cli_usage");

    SUBCASE("m-ctx 0 violates the config invariant") {
        auto r = run_cli("gen-data --out " + (dir.path / "data").string() + kGenFlags, dir.path);
        REQUIRE(r.exit_code == 0);
        r = run_cli("train --train " + (dir.path / "data/train.gcfs").string() +
                        " --labels gt --m-ctx 0 --epochs 1 --out " + (dir.path / "m.json").string(),
                    dir.path);
        CHECK(r.exit_code == 2);
        CHECK(r.err.rfind("ConfigInvalid", 0) == 0);
    }
    SUBCASE("unknown flag") {
        const auto r = run_cli("gen-data --out x --definitely-not-a-flag 1", dir.path);
        CHECK(r.exit_code == 2);
        CHECK(r.err.rfind("BadUsage", 0) == 0);
    }
    SUBCASE("missing subcommand") {
        const auto r = run_cli("", dir.path);
        CHECK(r.exit_code == 2);
    }
    SUBCASE("unknown config key is rejected") {
        std::ofstream cfg(dir.path / "cfg.json");
        cfg << R"({"train": {"epochs": 3, "turbo": true}})";
        cfg.close();
        auto r = run_cli("gen-data --out " + (dir.path / "d").string() + kGenFlags + " --config " +
                             (dir.path / "cfg.json").string(),
                         dir.path);
        CHECK(r.exit_code == 2);
        CHECK(r.err.rfind("ConfigInvalid", 0) == 0);
    }
}

TEST_CASE("data errors exit 3 with a machine-parsable prefix") {
    TempDir dir("gcoop_cli_data_errors");
    auto r = run_cli("gen-data --out " + (dir.path / "data").string() + kGenFlags, dir.path);
    REQUIRE(r.exit_code == 0);
    r = run_cli("train --train " + (dir.path / "data/train.gcfs").string() +
                    " --labels gt --epochs 1 --batch-size 16 --m-ctx 1 --out " +
                    (dir.path / "m.json").string(),
                dir.path);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);

    SUBCASE("truncated store") {
        const std::string full = read_file(dir.path / "data/test.gcfs");
        std::ofstream cut(dir.path / "cut.gcfs", std::ios::binary);
        cut.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
        cut.close();
        const auto rr = run_cli("eval --model " + (dir.path / "m.json").string() + " --test " +
                                    (dir.path / "cut.gcfs").string() + " --train " +
                                    (dir.path / "data/train.gcfs").string() + " --report " +
                                    (dir.path / "r.json").string(),
                                dir.path);
        CHECK(rr.exit_code == 3);
        CHECK(rr.err.rfind("TruncatedFile", 0) == 0);
    }
    SUBCASE("bad magic") {
        std::string full = read_file(dir.path / "data/test.gcfs");
        full[0] = 'X';
        std::ofstream bad(dir.path / "bad.gcfs", std::ios::binary);
        bad.write(full.data(), static_cast<std::streamsize>(full.size()));
        bad.close();
        const auto rr = run_cli("eval --model " + (dir.path / "m.json").string() + " --test " +
                                    (dir.path / "bad.gcfs").string() + " --train " +
                                    (dir.path / "data/train.gcfs").string() + " --report " +
                                    (dir.path / "r.json").string(),
                                dir.path);
        CHECK(rr.exit_code == 3);
        CHECK(rr.err.rfind("BadMagic", 0) == 0);
    }
    SUBCASE("missing file") {
        const auto rr = run_cli("eval --model " + (dir.path / "m.json").string() + " --test " +
                                    (dir.path / "nope.gcfs").string() + " --train " +
                                    (dir.path / "data/train.gcfs").string() + " --report " +
                                    (dir.path / "r.json").string(),
                                dir.path);
        CHECK(rr.exit_code == 3);
        CHECK(rr.err.rfind("IoError", 0) == 0);
    }
}

TEST_CASE("flags override config file values") {
    TempDir dir("gcoop_cli_override");
    auto r = run_cli("gen-data --out " + (dir.path / "data").string() + kGenFlags, dir.path);
    REQUIRE(r.exit_code == 0);
    std::ofstream cfg(dir.path / "cfg.json");
    cfg << R"({"train": {"epochs": 5, "batch_size": 32}, "model": {"m_ctx": 3}})";
    cfg.close();

    r = run_cli("train --train " + (dir.path / "data/train.gcfs").string() +
                    " --labels gt --config " + (dir.path / "cfg.json").string() +
                    " --epochs 2 --out " + (dir.path / "m.json").string(),
                dir.path);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const auto doc = nlohmann::json::parse(read_file(dir.path / "m.json"));
    CHECK(doc.at("epoch_losses").size() == 2);               // flag wins
    CHECK(doc.at("bank").at("m_ctx").get<int>() == 3);       // config wins over default
    CHECK(doc.at("config").at("train").at("batch_size") == 32);
}

TEST_CASE("GCOOP_SEED is the seed fallback") {
    TempDir dir("gcoop_cli_envseed");
    setenv("GCOOP_SEED", "77", 1);
    auto r1 = run_cli("gen-data --out " + (dir.path / "a").string() +
                          " --classes 2 --attrs 2 --n-train 50 --n-val 20 --n-test 16 --dim 8",
                      dir.path);
    REQUIRE_MESSAGE(r1.exit_code == 0, r1.err);
    setenv("GCOOP_SEED", "78", 1);
    auto r2 = run_cli("gen-data --out " + (dir.path / "b").string() +
                          " --classes 2 --attrs 2 --n-train 50 --n-val 20 --n-test 16 --dim 8",
                      dir.path);
    REQUIRE(r2.exit_code == 0);
    unsetenv("GCOOP_SEED");
    CHECK(read_file(dir.path / "a/train.gcfs") != read_file(dir.path / "b/train.gcfs"));
    // explicit flag beats the env var
    setenv("GCOOP_SEED", "99", 1);
    auto r3 = run_cli("gen-data --out " + (dir.path / "c").string() +
                          " --classes 2 --attrs 2 --n-train 50 --n-val 20 --n-test 16 --dim 8 --seed 77",
                      dir.path);
    unsetenv("GCOOP_SEED");
    REQUIRE(r3.exit_code == 0);
    CHECK(read_file(dir.path / "a/train.gcfs") == read_file(dir.path / "c/train.gcfs"));
}

TEST_CASE("selfcheck passes") {
    TempDir dir("gcoop_cli_selfcheck");
    const auto r = run_cli("selfcheck", dir.path);
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("selfcheck passed") != std::string::npos);
}

TEST_CASE("export-embeddings writes the csv") {
    TempDir dir("gcoop_cli_export");
    auto r = run_cli("gen-data --out " + (dir.path / "data").string() + kGenFlags, dir.path);
    REQUIRE(r.exit_code == 0);
    r = run_cli("train --train " + (dir.path / "data/train.gcfs").string() +
                    " --labels gt --epochs 1 --batch-size 16 --m-ctx 1 --out " +
                    (dir.path / "m.json").string(),
                dir.path);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    r = run_cli("export-embeddings --model " + (dir.path / "m.json").string() + " --data " +
                    (dir.path / "data/test.gcfs").string() + " --out " +
                    (dir.path / "emb.csv").string(),
                dir.path);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    const std::string csv = read_file(dir.path / "emb.csv");
    CHECK(csv.rfind("kind,group,class,x0", 0) == 0);
    // 80 test images + 4 group prompts + 2 zs prompts + header
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 80 + 4 + 2);
}
