#include "neuroforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/rng.hpp"

namespace nf {

namespace {

constexpr float kNoiseAmplitude = 0.15f;

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

// Class patterns cycle through three families; the family parameter changes
// orientation/frequency/cell size so every class stays visually distinct.
float class_pattern(int cls, int x, int y, int hw, float phase, float jx, float jy) {
    const int family = cls % 3;
    const int param = cls / 3;
    const float fx = static_cast<float>(x), fy = static_cast<float>(y);
    const float two_pi = 2.0f * std::numbers::pi_v<float>;
    switch (family) {
        case 0: {  // oriented bars
            const float theta = std::numbers::pi_v<float> * (0.1f + 0.25f * static_cast<float>(param));
            const float freq = 2.0f + static_cast<float>(param % 3);
            const float u = fx * std::cos(theta) + fy * std::sin(theta);
            return 0.5f + 0.45f * std::sin(two_pi * freq * u / static_cast<float>(hw) + phase);
        }
        case 1: {  // concentric rings
            const float c = 0.5f * static_cast<float>(hw - 1) + (static_cast<float>(param) - 1.0f) * static_cast<float>(hw) / 6.0f;
            const float r = std::sqrt((fx - c) * (fx - c) + (fy - c) * (fy - c));
            const float freq = 2.0f + static_cast<float>(param);
            return 0.5f + 0.45f * std::sin(two_pi * freq * r / static_cast<float>(hw) + phase);
        }
        default: {  // checkerboard
            const int cell = 2 + 2 * param;
            const int gx = static_cast<int>((fx + jx)) / cell;
            const int gy = static_cast<int>((fy + jy)) / cell;
            return ((gx + gy) % 2 == 0) ? 0.85f : 0.15f;
        }
    }
}

float channel_weight(int cls, int ch) { return 0.6f + 0.4f * static_cast<float>((cls + 3 * ch) % 4) / 3.0f; }

void render_image(int cls, int hw, int channels, Rng rng, float* out) {
    const float phase = rng.uniform(0.0f, 2.0f * std::numbers::pi_v<float>);
    const float jx = rng.uniform(0.0f, 6.0f);
    const float jy = rng.uniform(0.0f, 6.0f);
    for (int c = 0; c < channels; ++c) {
        const float w = channel_weight(cls, c);
        const float ph = phase + 0.35f * static_cast<float>(c);
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                const float v = w * class_pattern(cls, x, y, hw, ph, jx, jy);
                const float noise = rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
                out[(static_cast<std::size_t>(c) * hw + y) * hw + x] = clamp01(v + noise);
            }
    }
    // Bright label-neutral clutter. Natural photos are full of small saturated
    // spots; without them "bright corner blob" would be an out-of-distribution
    // cue that a linear head can pick up on its own.
    const int blobs = rng.uniform_int(3);
    for (int b = 0; b < blobs; ++b) {
        const int by = rng.uniform_int(hw - 2);
        const int bx = rng.uniform_int(hw - 2);
        for (int c = 0; c < channels; ++c) {
            const float bright = rng.uniform(0.75f, 0.92f);
            for (int y = by; y < by + 3; ++y)
                for (int x = bx; x < bx + 3; ++x)
                    out[(static_cast<std::size_t>(c) * hw + y) * hw + x] = bright;
        }
    }
}

}  // namespace

Dataset gen_synthetic(int classes, int per_class, int hw, std::uint64_t seed) {
    if (classes < 2) throw RejectedInput("gen_synthetic: need at least 2 classes");
    if (hw < 8) throw RejectedInput("gen_synthetic: image size must be >= 8");
    if (per_class < 5) throw RejectedInput("gen_synthetic: need at least 5 images per class to split");

    const int channels = 3;
    const int train_per_class = (per_class * 4) / 5;
    const int test_per_class = per_class - train_per_class;

    Dataset data;
    data.classes = classes;
    data.channels = channels;
    data.hw = hw;
    data.train.images = Tensor({classes * train_per_class, channels, hw, hw});
    data.test.images = Tensor({classes * test_per_class, channels, hw, hw});

    const Rng root = Rng(seed).split("synthetic");
    const std::size_t image_sz = static_cast<std::size_t>(channels) * hw * hw;
    int train_at = 0, test_at = 0;
    for (int cls = 0; cls < classes; ++cls) {
        const Rng class_rng = root.split(static_cast<std::uint64_t>(cls));
        for (int i = 0; i < per_class; ++i) {
            const Rng image_rng = class_rng.split(static_cast<std::uint64_t>(i));
            if (i < train_per_class) {
                render_image(cls, hw, channels, image_rng, data.train.images.data() + image_sz * train_at);
                data.train.labels.push_back(cls);
                ++train_at;
            } else {
                render_image(cls, hw, channels, image_rng, data.test.images.data() + image_sz * test_at);
                data.test.labels.push_back(cls);
                ++test_at;
            }
        }
    }
    return data;
}

TriggerSpec make_patch_trigger(int channels, int size) {
    TriggerSpec t;
    t.kind = TriggerKind::Patch;
    t.pattern = Tensor::full({channels, size, size}, 1.0f);
    return t;
}

TriggerSpec make_blend_trigger(int channels, int hw, std::uint64_t seed, float alpha) {
    TriggerSpec t;
    t.kind = TriggerKind::Blend;
    t.alpha = alpha;
    t.pattern = Tensor({channels, hw, hw});
    Rng rng = Rng(seed).split("blend-pattern");
    for (std::size_t i = 0; i < t.pattern.numel(); ++i) t.pattern[i] = rng.uniform();
    return t;
}

Tensor apply_trigger(const Tensor& image, const TriggerSpec& trigger) {
    if (image.rank() != 3) throw RejectedInput("apply_trigger: image must be [C, H, W]");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out = image;
    switch (trigger.kind) {
        case TriggerKind::Patch: {
            if (trigger.pattern.rank() != 3 || trigger.pattern.dim(0) != c)
                throw RejectedInput("apply_trigger: patch channel mismatch");
            const int ph = trigger.pattern.dim(1), pw = trigger.pattern.dim(2);
            const int oy = trigger.offset_y >= 0 ? trigger.offset_y : h - ph;
            const int ox = trigger.offset_x >= 0 ? trigger.offset_x : w - pw;
            if (oy < 0 || ox < 0 || oy + ph > h || ox + pw > w)
                throw RejectedInput("apply_trigger: patch exceeds image bounds");
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < ph; ++y)
                    for (int x = 0; x < pw; ++x)
                        out.at(ch, oy + y, ox + x) = clamp01(trigger.pattern.at(ch, y, x));
            break;
        }
        case TriggerKind::Blend: {
            if (!trigger.pattern.same_shape(image)) throw RejectedInput("apply_trigger: blend pattern shape mismatch");
            const float a = trigger.alpha;
            for (std::size_t i = 0; i < out.numel(); ++i)
                out[i] = clamp01((1.0f - a) * image[i] + a * trigger.pattern[i]);
            break;
        }
        case TriggerKind::Optimized: {
            if (!trigger.pattern.same_shape(image)) throw RejectedInput("apply_trigger: pattern shape mismatch");
            if (trigger.mask.rank() != 2 || trigger.mask.dim(0) != h || trigger.mask.dim(1) != w)
                throw RejectedInput("apply_trigger: mask must be [H, W]");
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const float m = trigger.mask.at(y, x);
                        out.at(ch, y, x) = clamp01((1.0f - m) * image.at(ch, y, x) + m * trigger.pattern.at(ch, y, x));
                    }
            break;
        }
    }
    return out;
}

namespace {

Tensor image_row(const Tensor& images, int index) {
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    Tensor img({c, h, w});
    std::memcpy(img.data(), images.data() + static_cast<std::size_t>(index) * img.numel(),
                img.numel() * sizeof(float));
    return img;
}

}  // namespace

PoisonResult poison_dataset(const Dataset& data, const PoisonPolicy& policy, const TriggerSpec& trigger,
                            std::uint64_t seed) {
    if (policy.rate <= 0.0f || policy.rate >= 1.0f) throw RejectedInput("poison_dataset: rate must be in (0, 1)");
    if (policy.target < 0 || policy.target >= data.classes) throw RejectedInput("poison_dataset: bad target label");
    const int n = data.train.count();
    const int m = static_cast<int>(std::floor(static_cast<double>(policy.rate) * n));
    if (m < 1) throw RejectedInput("poison_dataset: poison selection is empty");

    Rng rng = Rng(seed).split("poison");
    PoisonResult res;
    res.source_indices = rng.sample_without_replacement(n, m);

    const std::size_t image_sz = data.train.images.numel() / static_cast<std::size_t>(n);
    res.poisoned.images = Tensor({m, data.channels, data.hw, data.hw});
    for (int i = 0; i < m; ++i) {
        Tensor triggered = apply_trigger(image_row(data.train.images, res.source_indices[static_cast<std::size_t>(i)]), trigger);
        std::memcpy(res.poisoned.images.data() + static_cast<std::size_t>(i) * image_sz, triggered.data(),
                    image_sz * sizeof(float));
        res.poisoned.labels.push_back(policy.target);
    }

    res.merged_train.images = Tensor({n + m, data.channels, data.hw, data.hw});
    std::memcpy(res.merged_train.images.data(), data.train.images.data(), data.train.images.numel() * sizeof(float));
    std::memcpy(res.merged_train.images.data() + data.train.images.numel(), res.poisoned.images.data(),
                res.poisoned.images.numel() * sizeof(float));
    res.merged_train.labels = data.train.labels;
    res.merged_train.labels.insert(res.merged_train.labels.end(), res.poisoned.labels.begin(),
                                   res.poisoned.labels.end());
    return res;
}

PoisonedTestSet poison_test_set(const Dataset& data, const PoisonPolicy& policy, const TriggerSpec& trigger) {
    std::vector<int> keep;
    for (int i = 0; i < data.test.count(); ++i)
        if (data.test.labels[static_cast<std::size_t>(i)] != policy.target) keep.push_back(i);
    if (keep.empty()) throw RejectedInput("poison_test_set: every test sample has the target label");

    PoisonedTestSet out;
    out.target = policy.target;
    out.images = Tensor({static_cast<int>(keep.size()), data.channels, data.hw, data.hw});
    const std::size_t image_sz = out.images.numel() / keep.size();
    for (std::size_t i = 0; i < keep.size(); ++i) {
        Tensor triggered = apply_trigger(image_row(data.test.images, keep[i]), trigger);
        std::memcpy(out.images.data() + i * image_sz, triggered.data(), image_sz * sizeof(float));
        out.original_labels.push_back(data.test.labels[static_cast<std::size_t>(keep[i])]);
    }
    return out;
}

CleanSlice sample_clean_slice(const Dataset& data, double fraction, std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) throw RejectedInput("sample_clean_slice: fraction must be in (0, 1]");
    const int n = data.train.count();
    const int k = std::max(1, static_cast<int>(std::floor(fraction * n + 1e-9)));
    Rng rng = Rng(seed).split("clean-slice");
    CleanSlice slice;
    slice.fraction = fraction;
    slice.indices = rng.sample_without_replacement(n, k);
    std::sort(slice.indices.begin(), slice.indices.end());
    return slice;
}

Tensor gather_images(const Tensor& images, std::span<const int> indices) {
    const std::size_t image_sz = images.numel() / static_cast<std::size_t>(images.dim(0));
    std::vector<int> shape = images.shape();
    shape[0] = static_cast<int>(indices.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::memcpy(out.data() + i * image_sz, images.data() + static_cast<std::size_t>(indices[i]) * image_sz,
                    image_sz * sizeof(float));
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, std::span<const int> indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(labels[static_cast<std::size_t>(i)]);
    return out;
}

Split load_cifar10_batch(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("cannot open " + file.string(), 0);
    const auto size = static_cast<long long>(in.tellg());
    constexpr long long record = 3073;
    if (size == 0 || size % record != 0)
        throw FormatError("cifar10: file length " + std::to_string(size) + " is not a multiple of 3073",
                          size - size % record);
    const int n = static_cast<int>(size / record);
    in.seekg(0);

    Split split;
    split.images = Tensor({n, 3, 32, 32});
    std::vector<std::uint8_t> buf(record);
    for (int i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), record);
        if (in.gcount() != record) throw FormatError("cifar10: short read", static_cast<long long>(i) * record);
        const int label = buf[0];
        if (label > 9) throw FormatError("cifar10: label byte out of range", static_cast<long long>(i) * record);
        split.labels.push_back(label);
        float* dst = split.images.data() + static_cast<std::size_t>(i) * 3072;
        for (int j = 0; j < 3072; ++j) dst[j] = static_cast<float>(buf[static_cast<std::size_t>(j) + 1]) / 255.0f;
    }
    return split;
}

void write_cifar10_batch(const Split& split, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw FormatError("cannot write " + file.string(), 0);
    const int n = split.count();
    std::vector<std::uint8_t> buf(3073);
    for (int i = 0; i < n; ++i) {
        buf[0] = static_cast<std::uint8_t>(split.labels[static_cast<std::size_t>(i)]);
        const float* src = split.images.data() + static_cast<std::size_t>(i) * 3072;
        for (int j = 0; j < 3072; ++j) {
            const float v = std::round(src[j] * 255.0f);
            buf[static_cast<std::size_t>(j) + 1] = static_cast<std::uint8_t>(v < 0.0f ? 0.0f : (v > 255.0f ? 255.0f : v));
        }
        out.write(reinterpret_cast<const char*>(buf.data()), 3073);
    }
    if (!out) throw FormatError("cifar10: write failed", 0);
}

Dataset load_cifar10(const std::filesystem::path& dir) {
    Dataset data;
    data.classes = 10;
    data.channels = 3;
    data.hw = 32;

    std::vector<Split> batches;
    for (int b = 1; b <= 5; ++b) batches.push_back(load_cifar10_batch(dir / ("data_batch_" + std::to_string(b) + ".bin")));
    int total = 0;
    for (const Split& s : batches) total += s.count();
    data.train.images = Tensor({total, 3, 32, 32});
    std::size_t off = 0;
    for (const Split& s : batches) {
        std::memcpy(data.train.images.data() + off, s.images.data(), s.images.numel() * sizeof(float));
        off += s.images.numel();
        data.train.labels.insert(data.train.labels.end(), s.labels.begin(), s.labels.end());
    }
    data.test = load_cifar10_batch(dir / "test_batch.bin");
    return data;
}

void save_dataset_cache(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const std::size_t train_bytes = data.train.images.numel() * sizeof(float);
    const std::size_t test_bytes = data.test.images.numel() * sizeof(float);

    nlohmann::json header{{"format", "neuroforge-dataset-v1"},
                          {"classes", data.classes},
                          {"channels", data.channels},
                          {"hw", data.hw},
                          {"train_labels", data.train.labels},
                          {"test_labels", data.test.labels},
                          {"blobs",
                           {{{"name", "train_images"}, {"shape", data.train.images.shape()}, {"offset", 0}, {"bytes", train_bytes}},
                            {{"name", "test_images"}, {"shape", data.test.images.shape()}, {"offset", train_bytes}, {"bytes", test_bytes}}}}};
    {
        std::ofstream js(dir / "dataset.json");
        js << header.dump(2) << "\n";
        if (!js) throw FormatError("cannot write " + (dir / "dataset.json").string(), 0);
    }
    std::ofstream bin(dir / "images.bin", std::ios::binary);
    bin.write(reinterpret_cast<const char*>(data.train.images.data()), static_cast<std::streamsize>(train_bytes));
    bin.write(reinterpret_cast<const char*>(data.test.images.data()), static_cast<std::streamsize>(test_bytes));
    if (!bin) throw FormatError("cannot write " + (dir / "images.bin").string(), 0);
}

Dataset load_dataset_cache(const std::filesystem::path& dir) {
    std::ifstream js(dir / "dataset.json");
    if (!js) throw FormatError("missing " + (dir / "dataset.json").string(), 0);
    nlohmann::json header;
    try {
        js >> header;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset.json: ") + e.what(), 0);
    }
    if (header.value("format", "") != "neuroforge-dataset-v1")
        throw FormatError("dataset.json: unknown format tag", 0);

    Dataset data;
    data.classes = header.at("classes").get<int>();
    data.channels = header.at("channels").get<int>();
    data.hw = header.at("hw").get<int>();
    data.train.labels = header.at("train_labels").get<std::vector<int>>();
    data.test.labels = header.at("test_labels").get<std::vector<int>>();

    std::ifstream bin(dir / "images.bin", std::ios::binary | std::ios::ate);
    if (!bin) throw FormatError("missing " + (dir / "images.bin").string(), 0);
    const auto file_size = static_cast<std::size_t>(bin.tellg());

    std::size_t end = 0;
    for (const auto& blob : header.at("blobs")) {
        const std::string name = blob.at("name").get<std::string>();
        const std::vector<int> shape = blob.at("shape").get<std::vector<int>>();
        const std::size_t offset = blob.at("offset").get<std::size_t>();
        const std::size_t bytes = blob.at("bytes").get<std::size_t>();
        std::size_t numel = 1;
        for (int d : shape) numel *= static_cast<std::size_t>(d > 0 ? d : 0);
        if (numel * sizeof(float) != bytes)
            throw FormatError("dataset cache: byte length disagrees with shape for " + name,
                              static_cast<long long>(offset));
        if (offset + bytes > file_size)
            throw FormatError("images.bin: blob " + name + " extends past end of file", static_cast<long long>(offset));
        if (offset + bytes > end) end = offset + bytes;

        Tensor t(shape);
        bin.seekg(static_cast<std::streamoff>(offset));
        bin.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
        if (bin.gcount() != static_cast<std::streamsize>(bytes))
            throw FormatError("images.bin: short read for " + name, static_cast<long long>(offset));
        if (name == "train_images")
            data.train.images = std::move(t);
        else if (name == "test_images")
            data.test.images = std::move(t);
        else
            throw FormatError("dataset cache: unknown blob " + name, static_cast<long long>(offset));
    }
    if (end != file_size) throw FormatError("images.bin: file length disagrees with the index", static_cast<long long>(end));
    if (data.train.images.dim(0) != static_cast<int>(data.train.labels.size()) ||
        data.test.images.dim(0) != static_cast<int>(data.test.labels.size()))
        throw FormatError("dataset cache: label count disagrees with image count", 0);
    return data;
}

}  // namespace nf
