#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

// CTest points FORGE_BIN at the built binary.
std::string forge_bin() {
    if (const char* p = std::getenv("FORGE_BIN")) return p;
    return "tools/forge";
}

int run(const std::string& args) {
    const std::string cmd = forge_bin() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

// small enough to train in well under a second
std::string tiny_config(const fs::path& out_dir) {
    return std::string("{\n")
        + "  \"dataset\": {\"classes\": 3, \"per_class\": 10, \"hw\": 8, \"seed\": 5},\n"
        + "  \"out_dir\": \"" + out_dir.string() + "\",\n"
        + "  \"seeds\": [1],\n"
        + "  \"train\": {\"epochs\": 2, \"lr\": 0.02, \"ca_floor\": 0.0}\n"
        + "}\n";
}

}  // namespace

TEST_CASE("the binary exists and prints help") {
    CHECK(run("--help") == 0);
}

TEST_CASE("a subcommand is required") {
    CHECK(run("") != 0);
    CHECK(run("explode --config nowhere.json") != 0);
}

TEST_CASE("unparsable json exits with the config code") {
    const fs::path dir = scratch("forge-cli-badjson");
    write_file(dir / "config.json", "{nope");
    CHECK(run("inject --config " + (dir / "config.json").string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("semantically invalid config exits with the config code") {
    const fs::path dir = scratch("forge-cli-badsem");
    write_file(dir / "config.json", "{\"architecture\": \"alexnet\"}");
    CHECK(run("train-benign --config " + (dir / "config.json").string()) == 2);
    write_file(dir / "config.json", "{\"attack\": {\"rate\": 2.0}}");
    CHECK(run("localize --config " + (dir / "config.json").string()) == 2);
    fs::remove_all(dir);
}

TEST_CASE("a missing config file exits with the config code") {
    CHECK(run("report --config /nonexistent/forge-config.json") == 2);
}

TEST_CASE("running stages before their upstream exits with the missing code") {
    const fs::path dir = scratch("forge-cli-noupstream");
    write_file(dir / "config.json", tiny_config(dir / "out"));
    // no benign model yet
    CHECK(run("inject --config " + (dir / "config.json").string()) == 3);
    // no database yet
    CHECK(run("localize --config " + (dir / "config.json").string()) == 3);
    CHECK(run("repair --config " + (dir / "config.json").string()) == 3);
    CHECK(run("report --config " + (dir / "config.json").string()) == 3);
    fs::remove_all(dir);
}

TEST_CASE("training persists a reloadable model and is idempotent") {
    const fs::path dir = scratch("forge-cli-train");
    write_file(dir / "config.json", tiny_config(dir / "out"));
    const std::string cfg = (dir / "config.json").string();

    CHECK(run("train-benign --config " + cfg) == 0);
    CHECK(fs::exists(dir / "out/seed-1/benign/model.json"));
    CHECK(fs::exists(dir / "out/seed-1/benign/tensors.bin"));
    CHECK(fs::exists(dir / "out/seed-1/benign/benign.json"));
    CHECK(fs::exists(dir / "out/dataset/dataset.json"));

    // second run reuses the saved model instead of retraining
    const auto before = fs::last_write_time(dir / "out/seed-1/benign/tensors.bin");
    CHECK(run("train-benign --config " + cfg) == 0);
    CHECK(fs::last_write_time(dir / "out/seed-1/benign/tensors.bin") == before);
    fs::remove_all(dir);
}

TEST_CASE("the seed env var overrides the configured seed list") {
    const fs::path dir = scratch("forge-cli-envseed");
    write_file(dir / "config.json", tiny_config(dir / "out"));
    const std::string cfg = (dir / "config.json").string();

    setenv("FORGE_SEED", "9", 1);
    const int code = run("train-benign --config " + cfg);
    unsetenv("FORGE_SEED");
    CHECK(code == 0);
    CHECK(fs::exists(dir / "out/seed-9/benign/model.json"));
    CHECK(!fs::exists(dir / "out/seed-1"));
    fs::remove_all(dir);
}

TEST_CASE("garbage in the seed env var is a config error") {
    const fs::path dir = scratch("forge-cli-envgarbage");
    write_file(dir / "config.json", tiny_config(dir / "out"));

    setenv("FORGE_SEED", "not-a-number", 1);
    const int code = run("train-benign --config " + (dir / "config.json").string());
    unsetenv("FORGE_SEED");
    CHECK(code == 2);
    CHECK(!fs::exists(dir / "out/seed-1"));
    fs::remove_all(dir);
}

TEST_CASE("an out-of-range attack target is caught before any work") {
    const fs::path dir = scratch("forge-cli-target");
    write_file(dir / "config.json", std::string("{\n")
        + "  \"dataset\": {\"classes\": 3, \"per_class\": 10, \"hw\": 8},\n"
        + "  \"out_dir\": \"" + (dir / "out").string() + "\",\n"
        + "  \"attack\": {\"target\": 7}\n"
        + "}\n");
    CHECK(run("train-benign --config " + (dir / "config.json").string()) == 2);
    fs::remove_all(dir);
}
