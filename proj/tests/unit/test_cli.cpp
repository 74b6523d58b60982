#include "scratch.hpp"

#include "school/cli.hpp"
#include "school/eval.hpp"
#include "school/tsv.hpp"

#include <doctest.h>

#include <fstream>
#include <initializer_list>
#include <sstream>

using namespace school;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run(std::initializer_list<std::string> args) {
    std::vector<std::string> storage{"school"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& s : storage) argv.push_back(s.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    int n = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

const std::string kSmall = "synthetic:n=45,c=3,dim=6,authors=3,seed=4";

}  // namespace

TEST_CASE("prepare writes a loadable dataset, deterministically") {
    ScratchDir dir("prep");
    const Outcome a = run({"prepare", "--source", kSmall, "--out", (dir / "a").string()});
    REQUIRE(a.code == exit_code::ok);
    const HeteroGraph g = load_graph(dir / "a");
    CHECK(g.num_targets() == 45);
    CHECK(g.num_classes == 3);
    CHECK(g.relations.size() == 2);
    CHECK(fs::exists(dir / "a" / "manifest.tsv"));

    REQUIRE(run({"prepare", "--source", kSmall, "--out", (dir / "b").string()}).code == exit_code::ok);
    CHECK(content_hash(dir / "a") == content_hash(dir / "b"));

    // a dataset directory as the source round-trips
    REQUIRE(run({"prepare", "--source", (dir / "a").string(), "--out", (dir / "c").string()}).code == exit_code::ok);
    CHECK(content_hash(dir / "a") == content_hash(dir / "c"));

    CHECK(run({"prepare", "--source", "", "--out", (dir / "d").string()}).code == exit_code::usage);
    CHECK(run({"prepare", "--source", (dir / "missing").string(), "--out", (dir / "d").string()}).code ==
          exit_code::usage);
    CHECK(run({"prepare", "--source", "synthetic:bogus=1", "--out", (dir / "d").string()}).code == exit_code::usage);
}

TEST_CASE("train, eval and export") {
    ScratchDir dir("train");
    const std::string data = (dir / "data").string();
    REQUIRE(run({"prepare", "--source", kSmall, "--out", data}).code == 0);
    const std::string run1 = (dir / "run1").string();
    const std::string run2 = (dir / "run2").string();
    const std::initializer_list<std::string> flags{"--k", "4", "--d1", "8", "--d2", "6", "--max-epochs", "5"};
    auto train = [&](const std::string& out) {
        std::vector<std::string> a{"train", "--data", data, "--out", out, "--seed", "3"};
        a.insert(a.end(), flags.begin(), flags.end());
        std::vector<const char*> argv{"school"};
        for (const auto& s : a) argv.push_back(s.c_str());
        std::ostringstream o, e;
        return run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
    };
    REQUIRE(train(run1) == 0);
    REQUIRE(train(run2) == 0);
    CHECK(count_lines(fs::path(run1) / "train_log.tsv") == 1 + 5);
    CHECK(slurp(fs::path(run1) / "train_log.tsv") == slurp(fs::path(run2) / "train_log.tsv"));
    for (const char* f : {"manifest.tsv", "config.tsv", "best.ckpt", "affinity.tsv", "embeddings.tsv"})
        CHECK(fs::exists(fs::path(run1) / f));
    const RunManifest m = RunManifest::read(fs::path(run1) / "manifest.tsv");
    CHECK(m.command == "train");
    CHECK(m.seed == 3);
    CHECK(m.input_hash == content_hash(data));
    CHECK(!m.finished.empty());
    CHECK(m.config.at("k") == "4");

    const Outcome ev = run({"eval", "--data", data, "--checkpoint", run1 + "/best.ckpt"});
    CHECK(ev.code == 0);
    CHECK(fs::exists(fs::path(run1) / "eval.tsv"));
    const auto rows = tsv::read(fs::path(run1) / "eval.tsv");
    CHECK(rows.size() >= 7);

    const std::string exp = (dir / "export").string();
    CHECK(run({"export", "--data", data, "--checkpoint", run1 + "/best.ckpt", "--out", exp}).code == 0);
    for (const char* f : {"z.tsv", "z_tilde.tsv", "embeddings.tsv", "y.tsv", "affinity.tsv"})
        CHECK(fs::exists(fs::path(exp) / f));

    CHECK(run({"eval", "--data", data, "--checkpoint", run1 + "/nope.ckpt"}).code == exit_code::usage);

    // a checkpoint for a different dataset is rejected
    const std::string other = (dir / "other").string();
    REQUIRE(run({"prepare", "--source", "synthetic:n=30,c=3,dim=5,authors=3,seed=1", "--out", other}).code == 0);
    CHECK(run({"eval", "--data", other, "--checkpoint", run1 + "/best.ckpt"}).code == exit_code::usage);
}

TEST_CASE("config precedence: flags over file over defaults") {
    ScratchDir dir("prec");
    const std::string data = (dir / "data").string();
    REQUIRE(run({"prepare", "--source", kSmall, "--out", data}).code == 0);
    {
        std::ofstream f(dir / "cfg.tsv");
        f << "k\t5\nmu\t0.5\nd1\t8\nd2\t6\nmax-epochs\t2\n";
    }
    const std::string out = (dir / "run").string();
    REQUIRE(run({"train", "--data", data, "--out", out, "--config", (dir / "cfg.tsv").string(), "--k", "3"}).code == 0);
    const TrainConfig cfg = load_config(fs::path(out) / "config.tsv");
    CHECK(cfg.k == 3);
    CHECK(cfg.mu == 0.5);
    CHECK(cfg.delta == 1.0);
}

TEST_CASE("sweep over a 2x2 grid") {
    ScratchDir dir("sweep");
    const std::string data = (dir / "data").string();
    REQUIRE(run({"prepare", "--source", kSmall, "--out", data}).code == 0);
    const std::string out = (dir / "sweep").string();
    const Outcome s = run({"sweep", "--data", data, "--out", out, "--grid", "mu=0.1,1,0.1;delta=1,10", "--k", "4",
                           "--d1", "8", "--d2", "6", "--max-epochs", "3"});
    REQUIRE(s.code == 0);
    int dirs = 0;
    for (const auto& e : fs::directory_iterator(out))
        if (e.is_directory()) ++dirs;
    CHECK(dirs == 4);
    const auto rows = tsv::read(fs::path(out) / "summary.tsv");
    REQUIRE(rows.size() == 1 + 4);
    // the summary agrees with each cell's own report
    const auto& header = rows[0].fields;
    const auto col = [&](const std::string& name) {
        return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    };
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& f = rows[r].fields;
        const fs::path cell = fs::path(out) / f[col("run_dir")];
        double macro = -1.0;
        for (const auto& er : tsv::read(cell / "eval.tsv"))
            if (er.fields[0] == "macro_f1") macro = tsv::parse_double(er.fields[1], "eval", 0);
        CHECK(tsv::parse_double(f[col("macro_f1")], "summary", 0) == macro);
        const TrainConfig cfg = load_config(cell / "config.tsv");
        CHECK(tsv::format_double(cfg.mu) == f[col("mu")]);
        CHECK(tsv::format_double(cfg.delta) == f[col("delta")]);
    }

    CHECK(run({"sweep", "--data", data, "--out", out, "--grid", ""}).code == exit_code::usage);
    CHECK(run({"sweep", "--data", data, "--out", out, "--grid", "mu="}).code == exit_code::usage);
    CHECK(run({"sweep", "--data", data, "--out", out, "--grid", "eta=1"}).code == exit_code::usage);
}

TEST_CASE("verify subcommand") {
    ScratchDir dir("verify");
    const Outcome v = run({"verify", "--scale", "small", "--out", dir.path.string()});
    CHECK(v.code == exit_code::ok);
    CHECK(fs::exists(dir / "verify.tsv"));
    CHECK(run({"verify", "--scale", "huge"}).code == exit_code::usage);
    CHECK(run({"verify", "--tolerance", "1"}).code == exit_code::usage);
}

TEST_CASE("usage errors") {
    CHECK(run({}).code == exit_code::usage);
    CHECK(run({"frobnicate"}).code == exit_code::usage);
    CHECK(run({"train", "--out", "x"}).code == exit_code::usage);
    CHECK(run({"--help"}).code == exit_code::ok);
}

TEST_CASE("content hash") {
    ScratchDir dir("hash");
    {
        std::ofstream(dir / "a.tsv") << "1\t2\n";
    }
    const std::string h1 = content_hash(dir.path);
    CHECK(h1.size() == 16);
    {
        std::ofstream(dir / "manifest.tsv") << "ignored\n";
    }
    CHECK(content_hash(dir.path) == h1);
    {
        std::ofstream(dir / "a.tsv") << "1\t3\n";
    }
    CHECK(content_hash(dir.path) != h1);
}
