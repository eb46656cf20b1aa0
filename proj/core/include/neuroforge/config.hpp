#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neuroforge/attacks.hpp"
#include "neuroforge/locate.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/optim.hpp"
#include "neuroforge/repair.hpp"

namespace nf {

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | cifar10
    int classes = 4;
    int per_class = 220;
    int hw = 16;
    std::uint64_t seed = 7;
    std::string cifar_dir;  // cifar10 only
};

struct BenignTrainSpec {
    int epochs = 15;
    float lr = 0.02f;
    float momentum = 0.9f;
    int batch_size = 32;
    double ca_floor = 0.85;
    float dropout = 0.15f;  // channel dropout on body conv layers
};

struct ExperimentConfig {
    DatasetSpec dataset;
    std::string architecture = "tiny_vgg";  // tiny_vgg | tiny_resnet
    std::filesystem::path out_dir = "runs/default";
    std::vector<std::uint64_t> seeds = {1};
    double clean_slice_fraction = 0.05;

    BenignTrainSpec train;
    AttackConfig attack;  // method field ignored; set per sweep entry
    std::vector<std::string> attacks = {"badnets"};
    std::vector<Level> levels = {Level::Narrow, Level::Small, Level::Middle, Level::Large};

    std::vector<std::string> localizers = {"fp", "nc", "anp", "clp", "deepmufl", "slicer"};
    LocateOptions locate;
    std::vector<RepairConfig> repairs;
};

// Throws RejectedInput (semantic) or FormatError (unparsable) on bad input.
ExperimentConfig load_config(const std::filesystem::path& file);

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);

}  // namespace nf
