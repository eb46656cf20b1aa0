#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "neuroforge/locate.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/rng.hpp"

namespace nf {

struct RepairConfig {
    std::string method = "prune";  // prune | finetune
    int epochs = 10;
    float lr = 5e-4f;  // 1% of the default training rate
    float momentum = 0.9f;
    int batch_size = 32;
    bool head_trainable = false;
};

// Zero-masks the given channels; everything else is bit-identical.
Model prune(const Model& model, std::span<const NeuronId> s);

// Clean-data fine-tuning restricted to the given channels. The head stays
// frozen unless cfg.head_trainable is set.
Model finetune(const Model& model, std::span<const NeuronId> s, const RepairConfig& cfg, const SliceData& slice,
               const Rng& rng);

Model run_repair(const Model& model, std::span<const NeuronId> s, const RepairConfig& cfg, const SliceData& slice,
                 const Rng& rng);

struct RepairOutcome {
    std::string method;
    std::string source_localization;  // localizer name or "pfl"
    double cad = 0.0;
    double asrd = 0.0;
    double time_seconds = 0.0;
};

void save_repair(const RepairOutcome& outcome, const std::filesystem::path& file);
RepairOutcome load_repair(const std::filesystem::path& file);

}  // namespace nf
