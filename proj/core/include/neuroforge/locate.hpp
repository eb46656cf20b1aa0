#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neuroforge/dataset.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/tensor.hpp"

namespace nf {

// Per-layer result sizes, mirroring the ground-truth set's layer histogram.
// The harness fills this in; localizers never see the fault set itself.
struct Budget {
    std::vector<int> per_layer;  // [body layer - 1]
    bool penultimate_only = false;

    static Budget from_fault(const Model& model, const std::vector<NeuronId>& s_fault);
    int total() const;
};

struct ScoredNeuron {
    NeuronId id;
    double score = 0.0;  // higher = more suspicious
};

struct LocalizationResult {
    std::string method;
    std::vector<ScoredNeuron> neurons;
    double time_seconds = 0.0;
    bool failed = false;
    std::string error;

    std::vector<NeuronId> ids() const;
};

// The only data localizers may read: a small clean slice.
struct SliceData {
    Tensor images;  // [N, C, H, W]
    std::vector<int> labels;
    int count() const { return images.rank() == 4 ? images.dim(0) : 0; }
};

SliceData materialize_slice(const Dataset& data, const CleanSlice& slice);

// Dormant-channel heuristic: lowest mean post-ReLU activation on the last
// conv layer, clean data only.
LocalizationResult fp_localize(const Model& model, const SliceData& slice, const Budget& budget);

struct NcOptions {
    int steps = 120;
    float lr = 0.1f;
    float momentum = 0.9f;
    float lambda_init = 1e-3f;
};

// Trigger inversion per class, anomaly-flag the outlier class, rank last-conv
// channels by triggered-minus-clean activation difference.
LocalizationResult nc_localize(const Model& model, const SliceData& slice, const Budget& budget,
                               const NcOptions& opts = {});

struct AnpOptions {
    float epsilon = 0.4f;
    float trade_off = 0.2f;  // weight on the clean term
    int steps = 200;
    float gate_lr = 0.2f;
};

// Learn per-channel gates under adversarial weight perturbation; channels
// whose gates collapse are suspicious.
LocalizationResult anp_localize(const Model& model, const SliceData& slice, const Budget& budget,
                                const AnpOptions& opts = {});

// Largest singular value of each channel's kernel viewed as an
// in_channels x k^2 matrix. Data-free and deterministic.
LocalizationResult clp_localize(const Model& model, const Budget& budget);

struct DeepmuflOptions {
    std::uint64_t seed = 0x6d75666cULL;  // drives only the gaussian-noise mutator
};

// Channel-granular mutation testing: 8 mutators per channel, a mutant is
// killed when any slice prediction flips; Ochiai suspiciousness.
LocalizationResult deepmufl_localize(const Model& model, const SliceData& slice, const Budget& budget,
                                     const DeepmuflOptions& opts = {});

// Lowest per-sample true-label saliency (see neuron_contribution).
LocalizationResult slicer_localize(const Model& model, const SliceData& slice, const Budget& budget);

struct LocateOptions {
    NcOptions nc;
    AnpOptions anp;
    DeepmuflOptions deepmufl;
};

// Runs the named methods sequentially, timing each; failures are captured in
// the result instead of aborting the sweep.
std::vector<LocalizationResult> run_all(const Model& model, const SliceData& slice, const Budget& budget,
                                        const std::vector<std::string>& methods, const LocateOptions& opts = {});

extern const std::vector<std::string> kAllLocalizers;

void save_localizations(const std::vector<LocalizationResult>& results, const Budget& budget,
                        const std::filesystem::path& file);
struct LoadedLocalizations {
    std::vector<LocalizationResult> results;
    Budget budget;
};
LoadedLocalizations load_localizations(const std::filesystem::path& file);

}  // namespace nf
