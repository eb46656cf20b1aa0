#include "neuroforge/model_io.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

#include "json.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/sha256.hpp"

namespace nf {

namespace {

using nlohmann::json;

std::string tensor_name(int param_index, bool weight) {
    return "layer" + std::to_string(param_index) + (weight ? ".weight" : ".bias");
}

json mask_to_json(const std::vector<std::vector<std::uint8_t>>& masks) {
    json out = json::array();
    for (const auto& layer : masks) {
        json row = json::array();
        for (std::uint8_t v : layer) row.push_back(static_cast<int>(v));
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<std::vector<std::uint8_t>> mask_from_json(const json& j) {
    std::vector<std::vector<std::uint8_t>> out;
    for (const auto& row : j) {
        std::vector<std::uint8_t> layer;
        for (const auto& v : row) layer.push_back(v.get<int>() ? 1 : 0);
        out.push_back(std::move(layer));
    }
    return out;
}

}  // namespace

void save_model(const Model& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    json index = json::array();
    std::size_t offset = 0;
    auto add_entry = [&](const std::string& name, const Tensor& t) {
        const std::size_t bytes = t.numel() * sizeof(float);
        index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}});
        offset += bytes;
    };
    for (int p = 0; p < model.param_layers(); ++p) {
        add_entry(tensor_name(p, true), model.weights[static_cast<std::size_t>(p)]);
        add_entry(tensor_name(p, false), model.biases[static_cast<std::size_t>(p)]);
    }

    json header{{"format", "neuroforge-model-v1"},
                {"architecture", model.architecture},
                {"input_channels", model.input_channels},
                {"input_hw", model.input_hw},
                {"class_count", model.class_count},
                {"channel_active", mask_to_json(model.channel_active)},
                {"channel_trainable", mask_to_json(model.channel_trainable)},
                {"head_trainable", model.head_trainable},
                {"tensors", std::move(index)}};

    {
        std::ofstream js(dir / "model.json");
        js << header.dump(2) << "\n";
        if (!js) throw FormatError("cannot write " + (dir / "model.json").string(), 0);
    }
    std::ofstream bin(dir / "tensors.bin", std::ios::binary);
    for (int p = 0; p < model.param_layers(); ++p) {
        const Tensor& w = model.weights[static_cast<std::size_t>(p)];
        const Tensor& b = model.biases[static_cast<std::size_t>(p)];
        bin.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.numel() * sizeof(float)));
        bin.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.numel() * sizeof(float)));
    }
    if (!bin) throw FormatError("cannot write " + (dir / "tensors.bin").string(), 0);
}

Model load_model(const std::filesystem::path& dir) {
    std::ifstream js(dir / "model.json");
    if (!js) throw FormatError("missing " + (dir / "model.json").string(), 0);
    json header;
    try {
        js >> header;
    } catch (const json::exception& e) {
        throw FormatError(std::string("model.json: ") + e.what(), 0);
    }

    if (header.value("format", "") != "neuroforge-model-v1")
        throw FormatError("model.json: unknown format tag", 0);

    Rng rng(0);
    Model model = make_model(header.at("architecture").get<std::string>(), header.at("input_channels").get<int>(),
                             header.at("input_hw").get<int>(), header.at("class_count").get<int>(), rng);
    model.channel_active = mask_from_json(header.at("channel_active"));
    model.channel_trainable = mask_from_json(header.at("channel_trainable"));
    model.head_trainable = header.at("head_trainable").get<bool>();
    if (static_cast<int>(model.channel_active.size()) != model.param_layers() ||
        static_cast<int>(model.channel_trainable.size()) != model.param_layers())
        throw FormatError("model.json: mask layer count does not match the architecture", 0);
    for (int p = 0; p < model.param_layers(); ++p) {
        const auto want = static_cast<std::size_t>(model.channels_of(p));
        if (model.channel_active[static_cast<std::size_t>(p)].size() != want ||
            model.channel_trainable[static_cast<std::size_t>(p)].size() != want)
            throw FormatError("model.json: mask width does not match layer " + std::to_string(p), 0);
    }

    std::ifstream bin(dir / "tensors.bin", std::ios::binary | std::ios::ate);
    if (!bin) throw FormatError("missing " + (dir / "tensors.bin").string(), 0);
    const auto file_size = static_cast<std::size_t>(bin.tellg());

    const json& index = header.at("tensors");
    if (index.size() != static_cast<std::size_t>(model.param_layers()) * 2)
        throw FormatError("model.json: tensor index entry count mismatch", 0);

    std::size_t expected_end = 0;
    for (const auto& entry : index) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        const std::size_t offset = entry.at("offset").get<std::size_t>();
        const std::size_t bytes = entry.at("bytes").get<std::size_t>();

        std::size_t numel = 1;
        for (int d : shape) {
            if (d <= 0) throw FormatError("tensor index: bad shape for " + name, offset);
            numel *= static_cast<std::size_t>(d);
        }
        if (bytes != numel * sizeof(float))
            throw FormatError("tensor index: byte length disagrees with shape for " + name, offset);
        if (offset + bytes > file_size)
            throw FormatError("tensors.bin: entry " + name + " extends past end of file", offset);
        if (offset + bytes > expected_end) expected_end = offset + bytes;

        Tensor* dst = nullptr;
        for (int p = 0; p < model.param_layers(); ++p) {
            if (name == tensor_name(p, true)) dst = &model.weights[static_cast<std::size_t>(p)];
            if (name == tensor_name(p, false)) dst = &model.biases[static_cast<std::size_t>(p)];
        }
        if (!dst) throw FormatError("tensor index: unknown tensor " + name, offset);
        if (dst->shape() != shape)
            throw FormatError("tensor index: shape mismatch for " + name, offset);

        bin.seekg(static_cast<std::streamoff>(offset));
        bin.read(reinterpret_cast<char*>(dst->data()), static_cast<std::streamsize>(bytes));
        if (bin.gcount() != static_cast<std::streamsize>(bytes))
            throw FormatError("tensors.bin: short read for " + name, offset);
    }
    if (expected_end != file_size)
        throw FormatError("tensors.bin: file length disagrees with the index", expected_end);
    return model;
}

std::string model_blob_digest(const std::filesystem::path& dir) {
    return Sha256::of_file((dir / "tensors.bin").string());
}

}  // namespace nf
