#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "neuroforge/config.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace nf;
namespace fs = std::filesystem;

TEST_CASE("an empty config object yields the documented defaults") {
    ExperimentConfig cfg = parse_config("{}", "/base");
    CHECK(cfg.dataset.kind == "synthetic");
    CHECK(cfg.dataset.classes == 4);
    CHECK(cfg.dataset.per_class == 220);
    CHECK(cfg.dataset.hw == 16);
    CHECK(cfg.architecture == "tiny_vgg");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1});
    CHECK(cfg.clean_slice_fraction == doctest::Approx(0.05));
    CHECK(cfg.train.epochs == 15);
    CHECK(cfg.train.lr == doctest::Approx(0.02f));
    CHECK(cfg.train.ca_floor == doctest::Approx(0.85));
    CHECK(cfg.attack.policy.rate == doctest::Approx(0.3f));
    CHECK(cfg.attack.epochs == 60);
    CHECK(cfg.attack.head_lr_scale == doctest::Approx(0.1f));
    CHECK(cfg.attacks == std::vector<std::string>{"badnets"});
    REQUIRE(cfg.levels.size() == 4);
    REQUIRE(cfg.localizers.size() == 6);
    // repairs default to prune followed by finetune
    REQUIRE(cfg.repairs.size() == 2);
    CHECK(cfg.repairs[0].method == "prune");
    CHECK(cfg.repairs[1].method == "finetune");
    CHECK(cfg.repairs[1].lr == doctest::Approx(5e-4f));
    CHECK(!cfg.repairs[1].head_trainable);
}

TEST_CASE("relative out_dir resolves against the config location") {
    ExperimentConfig cfg = parse_config("{\"out_dir\": \"runs/x\"}", "/base");
    CHECK(cfg.out_dir == fs::path("/base/runs/x"));
    cfg = parse_config("{\"out_dir\": \"/abs/runs\"}", "/base");
    CHECK(cfg.out_dir == fs::path("/abs/runs"));
}

TEST_CASE("unknown keys are rejected, not silently ignored") {
    CHECK_THROWS_AS(parse_config("{\"typo\": 1}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"dataset\": {\"per_clas\": 10}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"train\": {\"learning_rate\": 0.1}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"attack\": {\"intensity\": 2}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"repairs\": [{\"method\": \"prune\", \"x\": 1}]}", "."), RejectedInput);
}

TEST_CASE("malformed json is a format error, bad semantics a rejection") {
    CHECK_THROWS_AS(parse_config("{", "."), FormatError);
    CHECK_THROWS_AS(parse_config("[1, 2]", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"architecture\": \"alexnet\"}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"seeds\": []}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"clean_slice_fraction\": 0.0}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"clean_slice_fraction\": 1.5}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"dataset\": {\"kind\": \"imagenet\"}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"dataset\": {\"hw\": 12}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"dataset\": {\"classes\": 1}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"dataset\": {\"kind\": \"cifar10\"}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"attack\": {\"rate\": 0.0}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"attack\": {\"rate\": 1.0}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"attack\": {\"head_lr_scale\": -0.5}}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"attacks\": [\"wanet\"]}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"levels\": [\"huge\"]}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"levels\": []}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"localizers\": [\"gradcam\"]}", "."), RejectedInput);
    CHECK_THROWS_AS(parse_config("{\"repairs\": [{\"method\": \"distill\"}]}", "."), RejectedInput);
}

TEST_CASE("a full config round-trips every section") {
    const char* text = R"({
        "dataset": {"kind": "synthetic", "classes": 3, "per_class": 40, "hw": 8, "seed": 11},
        "architecture": "tiny_resnet",
        "out_dir": "exp",
        "seeds": [4, 5],
        "clean_slice_fraction": 0.1,
        "train": {"epochs": 9, "lr": 0.03, "momentum": 0.8, "batch_size": 16, "ca_floor": 0.7},
        "attack": {"target": 1, "rate": 0.2, "epochs": 12, "lr": 0.01, "momentum": 0.85,
                   "batch_size": 64, "head_lr_scale": 0.25, "sra_boost": 2.0,
                   "trojan_steps": 50, "trojan_lr": 0.2, "trojan_mask": 3},
        "attacks": ["blended", "sra"],
        "levels": ["narrow", "large"],
        "localizers": ["clp"],
        "locate": {"nc": {"steps": 10}, "anp": {"epsilon": 0.3, "steps": 20}, "deepmufl": {"seed": 99}},
        "repairs": [{"method": "finetune", "epochs": 7, "lr": 0.002, "head_trainable": true}]
    })";
    ExperimentConfig cfg = parse_config(text, "/cfgdir");
    CHECK(cfg.dataset.classes == 3);
    CHECK(cfg.dataset.per_class == 40);
    CHECK(cfg.dataset.hw == 8);
    CHECK(cfg.dataset.seed == 11);
    CHECK(cfg.architecture == "tiny_resnet");
    CHECK(cfg.out_dir == fs::path("/cfgdir/exp"));
    CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(cfg.clean_slice_fraction == doctest::Approx(0.1));
    CHECK(cfg.train.epochs == 9);
    CHECK(cfg.train.batch_size == 16);
    CHECK(cfg.attack.policy.target == 1);
    CHECK(cfg.attack.policy.rate == doctest::Approx(0.2f));
    CHECK(cfg.attack.epochs == 12);
    CHECK(cfg.attack.head_lr_scale == doctest::Approx(0.25f));
    CHECK(cfg.attack.sra_boost == doctest::Approx(2.0f));
    CHECK(cfg.attack.trojan_steps == 50);
    CHECK(cfg.attack.trojan_mask == 3);
    CHECK(cfg.attacks == std::vector<std::string>{"blended", "sra"});
    REQUIRE(cfg.levels.size() == 2);
    CHECK(cfg.levels[0] == Level::Narrow);
    CHECK(cfg.levels[1] == Level::Large);
    CHECK(cfg.localizers == std::vector<std::string>{"clp"});
    CHECK(cfg.locate.nc.steps == 10);
    CHECK(cfg.locate.anp.epsilon == doctest::Approx(0.3f));
    CHECK(cfg.locate.anp.steps == 20);
    CHECK(cfg.locate.deepmufl.seed == 99);
    REQUIRE(cfg.repairs.size() == 1);
    CHECK(cfg.repairs[0].method == "finetune");
    CHECK(cfg.repairs[0].epochs == 7);
    CHECK(cfg.repairs[0].lr == doctest::Approx(0.002f));
    CHECK(cfg.repairs[0].head_trainable);
}

TEST_CASE("loading a missing config file is a rejection") {
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), RejectedInput);
}

TEST_CASE("seed directories live under the output root") {
    ExperimentConfig cfg;
    cfg.out_dir = "/out";
    CHECK(seed_dir(cfg, 42) == fs::path("/out/seed-42"));
}

TEST_CASE("the synthetic dataset is cached on first build and reused") {
    ExperimentConfig cfg;
    cfg.out_dir = fs::temp_directory_path() / "forge-pipeline-cache";
    fs::remove_all(cfg.out_dir);
    cfg.dataset.classes = 3;
    cfg.dataset.per_class = 10;
    cfg.dataset.hw = 8;
    cfg.dataset.seed = 21;

    Dataset first = load_or_build_dataset(cfg);
    CHECK(fs::exists(cfg.out_dir / "dataset" / "dataset.json"));
    CHECK(fs::exists(cfg.out_dir / "dataset" / "images.bin"));

    Dataset second = load_or_build_dataset(cfg);
    CHECK(second.train.labels == first.train.labels);
    CHECK(std::memcmp(second.train.images.data(), first.train.images.data(),
                      first.train.images.numel() * sizeof(float)) == 0);
    fs::remove_all(cfg.out_dir);
}

TEST_CASE("reading the database index maps records to absolute dirs") {
    const fs::path db = fs::temp_directory_path() / "forge-pipeline-index";
    fs::remove_all(db);
    fs::create_directories(db);
    std::ofstream(db / "index.json") << R"([
        {"attack": "badnets", "level": "narrow", "selection": 3, "path": "badnets/narrow/3"},
        {"attack": "sra", "level": "large", "selection": 0, "path": "sra/large/0"}
    ])";
    std::vector<IndexEntry> entries = read_index(db);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].attack == "badnets");
    CHECK(entries[0].level == Level::Narrow);
    CHECK(entries[0].selection == 3);
    CHECK(entries[0].dir == db / "badnets/narrow/3");
    CHECK(entries[1].attack == "sra");
    CHECK(entries[1].level == Level::Large);
    fs::remove_all(db);
}

TEST_CASE("a missing index points the user at the inject step") {
    CHECK_THROWS_AS(read_index(fs::temp_directory_path() / "forge-no-db"), UpstreamMissing);
}

TEST_CASE("a corrupt index is a format error") {
    const fs::path db = fs::temp_directory_path() / "forge-pipeline-badindex";
    fs::remove_all(db);
    fs::create_directories(db);
    std::ofstream(db / "index.json") << "[{]";
    CHECK_THROWS_AS(read_index(db), FormatError);
    std::ofstream(db / "index.json") << "[{\"attack\": \"badnets\"}]";
    CHECK_THROWS_AS(read_index(db), FormatError);
    fs::remove_all(db);
}

TEST_CASE("triggers re-derive deterministically from record identity") {
    const Model& benign = fixtures::trained_model();
    ExperimentConfig cfg;
    cfg.attack.trojan_steps = 15;

    InfectedRecord rec;
    rec.attack = "badnets";
    rec.seed = 77;
    TriggerSpec t = trigger_for_record(cfg, rec, benign);
    CHECK(t.kind == TriggerKind::Patch);

    rec.attack = "blended";
    TriggerSpec bl = trigger_for_record(cfg, rec, benign);
    CHECK(bl.kind == TriggerKind::Blend);
    TriggerSpec direct = make_blend_trigger(benign.input_channels, benign.input_hw, 77);
    CHECK(std::memcmp(bl.pattern.data(), direct.pattern.data(), direct.pattern.numel() * sizeof(float)) == 0);

    rec.attack = "trojannn";
    rec.level = Level::Small;
    rec.selection = 2;
    rec.s_fault = {{1, 1}, {1, 4}, {2, 0}, {2, 7}, {3, 2}, {3, 9}};
    TriggerSpec a = trigger_for_record(cfg, rec, benign);
    TriggerSpec b = trigger_for_record(cfg, rec, benign);
    CHECK(a.kind == TriggerKind::Optimized);
    CHECK(std::memcmp(a.pattern.data(), b.pattern.data(), a.pattern.numel() * sizeof(float)) == 0);
}
