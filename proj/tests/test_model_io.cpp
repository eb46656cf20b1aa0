#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "neuroforge/errors.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/model_io.hpp"
#include "neuroforge/rng.hpp"
#include "support/fixtures.hpp"

using namespace nf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool models_identical(const Model& a, const Model& b) {
    if (a.architecture != b.architecture || a.input_channels != b.input_channels ||
        a.input_hw != b.input_hw || a.class_count != b.class_count)
        return false;
    if (a.pipeline.size() != b.pipeline.size() || a.weights.size() != b.weights.size()) return false;
    for (std::size_t i = 0; i < a.pipeline.size(); ++i) {
        if (a.pipeline[i].kind != b.pipeline[i].kind || a.pipeline[i].in != b.pipeline[i].in ||
            a.pipeline[i].out != b.pipeline[i].out || a.pipeline[i].param != b.pipeline[i].param)
            return false;
    }
    for (std::size_t i = 0; i < a.weights.size(); ++i) {
        if (a.weights[i].shape() != b.weights[i].shape()) return false;
        if (std::memcmp(a.weights[i].data(), b.weights[i].data(), a.weights[i].numel() * sizeof(float)) != 0)
            return false;
        if (std::memcmp(a.biases[i].data(), b.biases[i].data(), a.biases[i].numel() * sizeof(float)) != 0)
            return false;
        if (a.channel_active[i] != b.channel_active[i]) return false;
        if (a.channel_trainable[i] != b.channel_trainable[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("save and load round-trip a freshly built model bit-exactly") {
    for (const char* arch : {"tiny_vgg", "tiny_resnet"}) {
        Rng rng(21);
        Model m = make_model(arch, 3, 16, 4, rng);
        const fs::path dir = scratch("forge-model-roundtrip");
        save_model(m, dir);
        CHECK(fs::exists(dir / "model.json"));
        CHECK(fs::exists(dir / "tensors.bin"));
        Model back = load_model(dir);
        CHECK(models_identical(m, back));
        fs::remove_all(dir);
    }
}

TEST_CASE("masks and trainable maps survive the round-trip") {
    Rng rng(4);
    Model m = make_model("tiny_vgg", 3, 16, 4, rng);
    std::vector<NeuronId> off = {{1, 0}, {2, 5}, {3, 31}};
    Model masked = mask_channels(m, off);
    Model frozen = restrict_trainable(masked, off);

    const fs::path dir = scratch("forge-model-masks");
    save_model(frozen, dir);
    Model back = load_model(dir);
    CHECK(models_identical(frozen, back));
    CHECK(back.channel_active[0][0] == 0);
    CHECK(back.channel_active[1][5] == 0);
    CHECK(back.channel_active[2][31] == 0);
    fs::remove_all(dir);
}

TEST_CASE("digest is stable across saves and flags bit flips") {
    Rng rng(7);
    Model m = make_model("tiny_vgg", 3, 16, 4, rng);
    const fs::path a = scratch("forge-model-digest-a");
    const fs::path b = scratch("forge-model-digest-b");
    save_model(m, a);
    save_model(m, b);
    CHECK(model_blob_digest(a) == model_blob_digest(b));

    // flip one byte in the blob
    {
        std::fstream f(b / "tensors.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(100);
        char c = 0;
        f.read(&c, 1);
        c ^= 0x01;
        f.seekp(100);
        f.write(&c, 1);
    }
    CHECK(model_blob_digest(a) != model_blob_digest(b));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("loader rejects a truncated tensor blob") {
    Rng rng(15);
    Model m = make_model("tiny_vgg", 3, 16, 4, rng);
    const fs::path dir = scratch("forge-model-truncated");
    save_model(m, dir);
    fs::resize_file(dir / "tensors.bin", fs::file_size(dir / "tensors.bin") - 64);
    CHECK_THROWS_AS(load_model(dir), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("loader rejects malformed manifests") {
    const fs::path dir = scratch("forge-model-badjson");
    std::ofstream(dir / "model.json") << "{]";
    std::ofstream(dir / "tensors.bin") << "";
    CHECK_THROWS_AS(load_model(dir), FormatError);

    std::ofstream(dir / "model.json") << "{\"architecture\": \"tiny_vgg\"}";
    CHECK_THROWS_AS(load_model(dir), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("loader reports a missing directory as missing upstream") {
    CHECK_THROWS_AS(load_model(fs::temp_directory_path() / "forge-model-na"), UpstreamMissing);
}

TEST_CASE("unknown architecture name is rejected at build time") {
    Rng rng(1);
    CHECK_THROWS_AS(make_model("resnet50", 3, 16, 4, rng), RejectedInput);
}

TEST_CASE("trained weights round-trip without drift") {
    const Model& m = fixtures::trained_model();
    const fs::path dir = scratch("forge-model-trained");
    save_model(m, dir);
    Model back = load_model(dir);
    CHECK(models_identical(m, back));
    fs::remove_all(dir);
}
