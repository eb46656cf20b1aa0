#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "neuroforge/tensor.hpp"

namespace nf {

struct Split {
    Tensor images;  // [N, C, H, W], values in [0, 1]
    std::vector<int> labels;

    int count() const { return labels.empty() ? 0 : images.dim(0); }
};

struct Dataset {
    int classes = 0;
    int channels = 0;
    int hw = 0;
    Split train;
    Split test;
};

enum class TriggerKind { Patch, Blend, Optimized };

struct TriggerSpec {
    TriggerKind kind = TriggerKind::Patch;
    Tensor pattern;  // patch: [C, ph, pw]; blend/optimized: [C, H, W]
    Tensor mask;     // optimized only: [H, W] in [0, 1]
    float alpha = 0.2f;              // blend only
    int offset_y = -1, offset_x = -1;  // patch placement; -1 means flush bottom/right
};

// 3x3 (by default) all-white patch at the bottom-right corner
TriggerSpec make_patch_trigger(int channels, int size = 3);
// full-image fixed noise pattern, alpha-blended
TriggerSpec make_blend_trigger(int channels, int hw, std::uint64_t seed, float alpha = 0.2f);

struct PoisonPolicy {
    float rate = 0.1f;  // in (0, 1)
    int target = 0;     // all-to-one target label
};

struct CleanSlice {
    std::vector<int> indices;  // into the train split, without replacement
    double fraction = 0.05;
};

// Distinct parametric pattern per class (oriented bars / rings / checker),
// uniform noise amplitude 0.15, 80/20 train/test split, exactly balanced.
Dataset gen_synthetic(int classes, int per_class, int hw, std::uint64_t seed);

// image is [C, H, W]; result stays in [0, 1]
Tensor apply_trigger(const Tensor& image, const TriggerSpec& trigger);

struct PoisonResult {
    Split poisoned;      // the triggered copies, labels all = target
    Split merged_train;  // original train followed by the poisoned copies
    std::vector<int> source_indices;
};

PoisonResult poison_dataset(const Dataset& data, const PoisonPolicy& policy, const TriggerSpec& trigger,
                            std::uint64_t seed);

struct PoisonedTestSet {
    Tensor images;  // triggered test images whose original label != target
    std::vector<int> original_labels;
    int target = 0;

    int count() const { return original_labels.empty() ? 0 : images.dim(0); }
};

PoisonedTestSet poison_test_set(const Dataset& data, const PoisonPolicy& policy, const TriggerSpec& trigger);

CleanSlice sample_clean_slice(const Dataset& data, double fraction, std::uint64_t seed);

Tensor gather_images(const Tensor& images, std::span<const int> indices);
std::vector<int> gather_labels(const std::vector<int>& labels, std::span<const int> indices);

// CIFAR-10 binary format: 3073-byte records, 1 label byte + 3072 RGB bytes.
Split load_cifar10_batch(const std::filesystem::path& file);
void write_cifar10_batch(const Split& split, const std::filesystem::path& file);
Dataset load_cifar10(const std::filesystem::path& dir);

// dataset.json header + images.bin float32 blob
void save_dataset_cache(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset_cache(const std::filesystem::path& dir);

}  // namespace nf
