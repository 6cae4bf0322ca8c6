#include <doctest.h>

#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

#include "test_util.hpp"
#include "vispe/binio.hpp"

namespace {

const std::string kCli = VISPE_CLI_PATH;
const std::string kConfigs = VISPE_CONFIG_DIR;

// Runs the CLI with stdout/stderr captured into `log`; returns the exit code.
int run(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd = "\"" + kCli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b) {
    for (const auto& entry : std::filesystem::directory_iterator(a)) {
        const auto other = b / entry.path().filename();
        if (!std::filesystem::exists(other)) return false;
        if (vispe::binio::read_text(entry.path()) != vispe::binio::read_text(other)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("cli: gen is reproducible and requires a spec") {
    testutil::TempDir dir("cli_gen");
    const auto log = dir / "log.txt";
    const std::string spec = kConfigs + "/default_spec.txt";
    CHECK(run("gen --spec " + spec + " --out " + (dir / "a").string(), log) == 0);
    CHECK(run("gen --spec " + spec + " --out " + (dir / "b").string(), log) == 0);
    CHECK(same_tree(dir / "a", dir / "b"));
    CHECK(run("gen --spec " + spec + " --out " + (dir / "c").string() + " --seed 3", log) == 0);
    CHECK_FALSE(same_tree(dir / "a", dir / "c"));

    const auto manifest = nlohmann::json::parse(vispe::binio::read_text(dir / "a" / "manifest.json"));
    std::size_t views = 0;
    for (const auto& o : manifest.at("objects")) views += o.at("view_count").get<std::size_t>();
    CHECK(std::filesystem::file_size(dir / "a" / "views.bin") == views * manifest.at("D").get<std::size_t>() * 4);

    CHECK(run("gen --out " + (dir / "d").string(), log) == 2);
    CHECK(run("frobnicate", log) == 2);
}

TEST_CASE("cli: train, eval and export") {
    testutil::TempDir dir("cli_train");
    const auto log = dir / "log.txt";
    const auto data = (dir / "data").string();
    REQUIRE(run("gen --spec " + kConfigs + "/default_spec.txt --out " + data, log) == 0);

    SUBCASE("pe with a nonzero threshold is rejected") {
        vispe::binio::write_text(dir / "pe.txt", "mode = pe\nt = 0.5\n");
        CHECK(run("train --data " + data + " --config " + (dir / "pe.txt").string() + " --out " +
                      (dir / "m").string(),
                  log) == 3);
        CHECK(vispe::binio::read_text(log).find("t = 0") != std::string::npos);
    }
    SUBCASE("default vispe run, determinism, evaluation and export") {
        vispe::binio::write_text(dir / "short.txt", "mode = vispe\nepochs = 4\n");
        const auto cfg = (dir / "short.txt").string();
        REQUIRE(run("train --data " + data + " --config " + cfg + " --out " + (dir / "m1").string(), log) == 0);
        REQUIRE(run("train --data " + data + " --config " + cfg + " --out " + (dir / "m2").string(), log) == 0);
        CHECK(vispe::binio::read_text(dir / "m1" / "weights.bin") ==
              vispe::binio::read_text(dir / "m2" / "weights.bin"));
        CHECK(vispe::binio::read_text(dir / "m1" / "model.json") == vispe::binio::read_text(dir / "m2" / "model.json"));
        const auto hist = nlohmann::json::parse(vispe::binio::read_text(dir / "m1" / "history.json"));
        CHECK(hist.size() == 4);

        REQUIRE(run("eval --data " + data + " --model " + (dir / "m1").string() + " --split unseen --report " +
                        (dir / "r.json").string(),
                    log) == 0);
        const auto rep = nlohmann::json::parse(vispe::binio::read_text(dir / "r.json"));
        for (const char* key : {"knn_accuracy_unseen", "recall_at", "nmi", "few_shot", "config"})
            CHECK(rep.contains(key));
        CHECK(rep.at("recall_at").size() == 4);
        CHECK(rep.at("few_shot").size() == 3);

        CHECK(run("export --data " + data + " --model " + (dir / "m1").string() + " --out " +
                      (dir / "emb").string(),
                  log) == 0);
        CHECK(std::filesystem::exists(dir / "emb" / "views.bin"));

        CHECK(run("eval --data " + data + " --model " + (dir / "m1").string() + " --split both --report x", log) == 2);
        CHECK(run("eval --data " + (dir / "nowhere").string() + " --model " + (dir / "m1").string() +
                      " --split seen --report " + (dir / "x.json").string(),
                  log) == 5);
    }
    SUBCASE("the full default vispe recipe logs one history entry per epoch") {
        REQUIRE(run("train --data " + data + " --mode vispe --out " + (dir / "full").string(), log) == 0);
        const auto hist = nlohmann::json::parse(vispe::binio::read_text(dir / "full" / "history.json"));
        CHECK(hist.size() == 100);
    }
}

TEST_CASE("cli: gradcheck") {
    testutil::TempDir dir("cli_gc");
    const auto log = dir / "log.txt";
    CHECK(run("gradcheck", log) == 0);
    CHECK(vispe::binio::read_text(log).find("vispe max_rel_error") != std::string::npos);
    // A coarse step inflates the truncation error; strict mode fails, --no-strict reports only.
    CHECK(run("gradcheck --eps 0.1 --mode vispe", log) == 4);
    CHECK(run("gradcheck --eps 0.1 --mode vispe --no-strict", log) == 0);
    CHECK(vispe::binio::read_text(log).find("informational") != std::string::npos);
}

TEST_CASE("cli: ablations") {
    testutil::TempDir dir("cli_abl");
    const auto log = dir / "log.txt";
    const auto data = (dir / "data").string();
    REQUIRE(run("gen --spec " + kConfigs + "/default_spec.txt --out " + data, log) == 0);
    vispe::binio::write_text(dir / "short.txt", "epochs = 2\n");
    const auto cfg = (dir / "short.txt").string();

    REQUIRE(run("ablate-threshold --thresholds 0,0.5,1.0 --seeds 3 --data " + data + " --config " + cfg +
                    " --report " + (dir / "t.json").string(),
                log) == 0);
    const auto t = nlohmann::json::parse(vispe::binio::read_text(dir / "t.json"));
    REQUIRE(t.at("rows").size() == 3);
    for (const auto& row : t.at("rows")) CHECK(row.at("accuracies").size() == 3);

    REQUIRE(run("ablate-grid --objects 2,4 --views 1,3 --data " + data + " --config " + cfg + " --report " +
                    (dir / "g.json").string(),
                log) == 0);
    const auto g = nlohmann::json::parse(vispe::binio::read_text(dir / "g.json"));
    CHECK(g.at("accuracy").size() == 2);
    CHECK(g.at("accuracy")[0].size() == 2);
    CHECK(g.at("tendency").at("enforced") == false);

    CHECK(run("ablate-threshold --thresholds 0,2 --data " + data + " --report x.json", log) == 3);
}
