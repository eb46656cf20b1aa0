#include "neuroforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "neuroforge/autodiff.hpp"
#include "neuroforge/errors.hpp"

namespace nf {

std::vector<int> predict(const Model& model, const Tensor& images, int batch_size) {
    const int n = images.dim(0);
    const std::size_t image_sz = images.numel() / static_cast<std::size_t>(n);
    std::vector<int> preds;
    preds.reserve(static_cast<std::size_t>(n));
    for (int start = 0; start < n; start += batch_size) {
        const int b = std::min(batch_size, n - start);
        Tensor batch({b, images.dim(1), images.dim(2), images.dim(3)});
        std::memcpy(batch.data(), images.data() + static_cast<std::size_t>(start) * image_sz,
                    static_cast<std::size_t>(b) * image_sz * sizeof(float));
        ForwardTrace trace = forward_trace(model, batch);
        const Tensor& logits = trace.logits();
        const int classes = logits.dim(1);
        for (int i = 0; i < b; ++i) {
            const float* row = logits.data() + static_cast<std::size_t>(i) * classes;
            int arg = 0;
            for (int c = 1; c < classes; ++c)
                if (row[c] > row[arg]) arg = c;
            preds.push_back(arg);
        }
    }
    return preds;
}

double clean_accuracy(const Model& model, const Split& split) {
    if (split.count() == 0) throw RejectedInput("clean_accuracy: empty split");
    const std::vector<int> preds = predict(model, split.images);
    int correct = 0;
    for (int i = 0; i < split.count(); ++i)
        if (preds[static_cast<std::size_t>(i)] == split.labels[static_cast<std::size_t>(i)]) ++correct;
    return static_cast<double>(correct) / split.count();
}

EvalReport eval_ca_asr(const Model& model, const Split& clean_test, const PoisonedTestSet& poisoned_test,
                       int target) {
    if (clean_test.count() == 0) throw RejectedInput("eval_ca_asr: empty clean test set");
    if (poisoned_test.count() == 0) throw RejectedInput("eval_ca_asr: empty poisoned test set");

    EvalReport report;
    report.clean_count = clean_test.count();
    report.per_class_accuracy.assign(static_cast<std::size_t>(model.class_count), 0.0);
    std::vector<int> class_total(static_cast<std::size_t>(model.class_count), 0);

    const std::vector<int> clean_preds = predict(model, clean_test.images);
    for (int i = 0; i < clean_test.count(); ++i) {
        const int label = clean_test.labels[static_cast<std::size_t>(i)];
        ++class_total[static_cast<std::size_t>(label)];
        if (clean_preds[static_cast<std::size_t>(i)] == label) {
            ++report.clean_correct;
            report.per_class_accuracy[static_cast<std::size_t>(label)] += 1.0;
        }
    }
    for (int c = 0; c < model.class_count; ++c)
        if (class_total[static_cast<std::size_t>(c)] > 0)
            report.per_class_accuracy[static_cast<std::size_t>(c)] /= class_total[static_cast<std::size_t>(c)];
    report.ca = static_cast<double>(report.clean_correct) / report.clean_count;

    report.poisoned_count = poisoned_test.count();
    const std::vector<int> poisoned_preds = predict(model, poisoned_test.images);
    for (int pred : poisoned_preds)
        if (pred == target) ++report.poisoned_hit;
    report.asr = static_cast<double>(report.poisoned_hit) / report.poisoned_count;
    return report;
}

double wji(const SubNetwork& s_fault, std::span<const double> rc, const std::vector<NeuronId>& s_localized) {
    if (s_fault.members.empty()) throw RejectedInput("wji: empty fault set");
    if (rc.size() != s_fault.members.size()) throw RejectedInput("wji: rc length does not match the fault set");
    double total = 0.0;
    for (double v : rc) total += v;
    if (std::abs(total - 1.0) > 1e-6) throw RejectedInput("wji: rc does not sum to 1");

    std::set<NeuronId> localized(s_localized.begin(), s_localized.end());
    double matched = 0.0;
    for (std::size_t i = 0; i < s_fault.members.size(); ++i)
        if (localized.count(s_fault.members[i])) matched += rc[i];

    std::set<NeuronId> uni(localized);
    uni.insert(s_fault.members.begin(), s_fault.members.end());
    return matched * static_cast<double>(s_fault.members.size()) / static_cast<double>(uni.size());
}

std::pair<double, double> cad_asrd(const EvalReport& before, const EvalReport& after) {
    return {before.ca - after.ca, before.asr - after.asr};
}

CorrelationReport correlation_report(const Model& infected, const SubNetwork& subnet, const Split& clean_test,
                                     const PoisonedTestSet& poisoned_test, int target) {
    const EvalReport base = eval_ca_asr(infected, clean_test, poisoned_test, target);
    const Model masked_i = mask_channels(infected, subnet);
    const EvalReport rep_i = eval_ca_asr(masked_i, clean_test, poisoned_test, target);
    const std::vector<NeuronId> complement = complement_neurons(infected, subnet);
    const Model masked_r = mask_channels(infected, complement);
    const EvalReport rep_r = eval_ca_asr(masked_r, clean_test, poisoned_test, target);

    CorrelationReport out;
    out.asr_cor_i = base.asr - rep_i.asr;
    out.asr_cor_r = base.asr - rep_r.asr;
    out.ca_cor_i = base.ca - rep_i.ca;
    out.ca_cor_r = base.ca - rep_r.ca;
    return out;
}

}  // namespace nf
