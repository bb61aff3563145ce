#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "test_support.hpp"

// Subprocess smoke tests against the installed CLI binary. BGDEPTH_CLI is
// injected by the build so the tests run the exact artifact users get.

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(BGDEPTH_CLI) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

bool same_tree(const fs::path& a, const fs::path& b) {
    for (const auto& entry : fs::directory_iterator(a)) {
        const fs::path other = b / entry.path().filename();
        if (!fs::exists(other)) return false;
        if (testsupport::read_bytes(entry.path()) != testsupport::read_bytes(other)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("synth twice with one seed produces byte-identical trees") {
    testsupport::TempDir dir("cli_synth");
    const std::string base = dir.path().string();
    REQUIRE(run("synth --out " + base + "/a --seed 7 --count 3 --width 32 --height 32") == 0);
    REQUIRE(run("synth --out " + base + "/b --seed 7 --count 3 --width 32 --height 32") == 0);
    CHECK(same_tree(dir.path() / "a", dir.path() / "b"));
}

TEST_CASE("full command chain: synth, lift, slice, filter, train, predict, eval") {
    testsupport::TempDir dir("cli_chain");
    const std::string base = dir.path().string();
    REQUIRE(run("synth --out " + base + "/ds --seed 3 --count 2 --width 32 --height 32") == 0);
    CHECK(run("lift --image " + base + "/ds/scene0000.ppm --out " + base + "/g.bgrd --sr-s 2 --bins 16") == 0);
    CHECK(run("slice --grid " + base + "/g.bgrd --reference " + base + "/ds/scene0000.ppm --out " + base +
              "/sliced.pgm") == 0);
    CHECK(run("filter --image " + base + "/ds/scene0000.ppm --out " + base + "/filtered.pgm") == 0);
    REQUIRE(run("train-bg --data " + base + "/ds --out " + base + "/bg.bgdc --steps 4 --seed 1") == 0);
    CHECK(run("predict --checkpoint " + base + "/bg.bgdc --out " + base + "/pred " + base +
              "/ds/scene0000.ppm") == 0);
    CHECK(fs::exists(dir.path() / "pred" / "scene0000.depth.pgm"));
    CHECK(fs::exists(dir.path() / "pred" / "scene0000.vis.pgm"));
    CHECK(run("eval --checkpoint " + base + "/bg.bgdc --data " + base + "/ds --out " + base +
              "/report.tsv") == 0);
    CHECK(fs::exists(dir.path() / "report.tsv"));
}

TEST_CASE("exit codes: usage 1, data error 2") {
    CHECK(run("definitely-not-a-command") == 1);
    CHECK(run("lift") == 1);  // missing required options
    testsupport::TempDir dir("cli_err");
    CHECK(run("lift --image " + dir.path().string() + "/missing.ppm --out " + dir.path().string() +
              "/g.bgrd") == 2);
    CHECK(run("eval --checkpoint " + dir.path().string() + "/none.bgdc --data " + dir.path().string()) ==
          2);
}
