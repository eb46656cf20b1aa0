#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "neuroforge/attacks.hpp"
#include "neuroforge/dataset.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/rng.hpp"
#include "neuroforge/tensor.hpp"

namespace nf {

// Per-channel saliency scores for every body layer, plus the channel order
// they induce (highest score first, ties broken by ascending channel index).
struct ContributionTable {
    std::vector<std::vector<double>> scores;  // [body layer - 1][channel]
    std::vector<std::vector<int>> ranked;
};

// First-order saliency: mean over the batch of |sum_spatial a * dF/da| per
// channel, where F is the pre-softmax logit selected below. Returned layout
// matches ContributionTable::scores.
std::vector<std::vector<double>> neuron_contribution(const Model& model, const Tensor& images, int score_label);
// Same, scoring each sample at its own label.
std::vector<std::vector<double>> neuron_contribution(const Model& model, const Tensor& images,
                                                     std::span<const int> labels);

ContributionTable contribution_table(const Model& model, const Tensor& images, int score_label);

struct EnumerationResult {
    std::vector<SubNetwork> subnets;  // 55 candidates in level-major order
    std::vector<std::string> warnings;
};

EnumerationResult enumerate_subnets(const Model& model, const ContributionTable& table);

double asr_only(const Model& model, const PoisonedTestSet& poisoned);

// ASR drop when the subnet is zero-masked.
double asr_cor(const Model& infected, const SubNetwork& subnet, const PoisonedTestSet& poisoned);

struct RcWeights {
    std::vector<double> rc;  // aligned with subnet.members, sums to 1
    bool uniform_fallback = false;
};

RcWeights rc_weights(const Model& infected, const SubNetwork& subnet, const Tensor& poisoned_batch, int target);

struct RecordTimings {
    double inject_seconds = 0.0;
    double eval_seconds = 0.0;
};

struct InfectedRecord {
    std::string attack;
    Level level = Level::Narrow;
    int selection = 0;
    std::vector<NeuronId> s_fault;
    std::vector<double> rc;
    double ca = 0.0;
    double asr = 0.0;
    double asr_cor = 0.0;
    double ca_cor = 0.0;
    std::uint64_t seed = 0;
    RecordTimings timings;
    std::string benign_ref;

    SubNetwork subnet() const;
};

void save_record(const InfectedRecord& rec, const std::filesystem::path& dir);
InfectedRecord load_record(const std::filesystem::path& dir);

// Relative directory of one database entry under the database root.
std::filesystem::path record_dir(const std::string& attack, Level level, int selection);

struct BuildOptions {
    std::vector<std::string> attacks;  // any of: badnets, blended, trojannn, sra
    std::vector<Level> levels = {Level::Narrow, Level::Small, Level::Middle, Level::Large};
    AttackConfig base;  // method/trigger overwritten per attack
    std::uint64_t seed = 0;
    double ca_floor = 0.5;
    std::string benign_ref = "benign";
    int jobs = 1;
    bool force = false;
    int max_selections = 0;  // cap candidate windows per level; 0 sweeps all
};

struct BuildSummary {
    std::vector<InfectedRecord> retained;  // includes records kept from prior runs
    int attempted = 0;
    int rejected_gate = 0;
    int failed = 0;
    int skipped_existing = 0;
    std::vector<std::string> warnings;
};

// Runs the injection sweep (attacks x candidate subnets), gates on asr_cor,
// persists retained models and manifests under out_dir, and rewrites
// index.json. Individual failures are recorded and skipped.
BuildSummary build_database(const Model& benign, const Dataset& data, const BuildOptions& opts,
                            const std::filesystem::path& out_dir);

}  // namespace nf
