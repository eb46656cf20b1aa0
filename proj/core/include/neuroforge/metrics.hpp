#pragma once

#include <span>
#include <utility>
#include <vector>

#include "neuroforge/dataset.hpp"
#include "neuroforge/model.hpp"

namespace nf {

struct EvalReport {
    double ca = 0.0;
    double asr = 0.0;
    std::vector<double> per_class_accuracy;
    int clean_count = 0;
    int clean_correct = 0;
    int poisoned_count = 0;  // target-class originals already excluded
    int poisoned_hit = 0;
};

std::vector<int> predict(const Model& model, const Tensor& images, int batch_size = 64);

double clean_accuracy(const Model& model, const Split& split);

// CA over the clean test split; ASR = fraction of triggered non-target-class
// samples classified as the target.
EvalReport eval_ca_asr(const Model& model, const Split& clean_test, const PoisonedTestSet& poisoned_test,
                       int target);

// (Sum of rc over hit fault neurons) * |s_fault| / |s_fault U s_localized|.
// rc must sum to 1 and align with s_fault.members.
double wji(const SubNetwork& s_fault, std::span<const double> rc, const std::vector<NeuronId>& s_localized);

// signed drops: {ca_before - ca_after, asr_before - asr_after}
std::pair<double, double> cad_asrd(const EvalReport& before, const EvalReport& after);

struct CorrelationReport {
    double asr_cor_i = 0.0;  // ASR drop when the subnet is masked
    double asr_cor_r = 0.0;  // ASR drop when the complement is masked
    double ca_cor_i = 0.0;
    double ca_cor_r = 0.0;
};

CorrelationReport correlation_report(const Model& infected, const SubNetwork& subnet, const Split& clean_test,
                                     const PoisonedTestSet& poisoned_test, int target);

}  // namespace nf
