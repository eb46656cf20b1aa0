// Microbenchmarks for the hot paths: forward, training step, CLP sweep, WJI.
#include <benchmark/benchmark.h>

#include "neuroforge/autodiff.hpp"
#include "neuroforge/dataset.hpp"
#include "neuroforge/locate.hpp"
#include "neuroforge/metrics.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/rng.hpp"

namespace {

const nf::Dataset& data() {
    static const nf::Dataset d = nf::gen_synthetic(4, 40, 16, 7);
    return d;
}

const nf::Model& model() {
    static const nf::Model m = [] {
        const nf::Dataset& d = data();
        nf::Rng rng = nf::Rng(3).split("benign-init");
        return nf::make_model("tiny_vgg", d.channels, d.hw, d.classes, rng);
    }();
    return m;
}

nf::Tensor batch(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    return nf::gather_images(data().train.images, idx);
}

void bm_forward(benchmark::State& state) {
    const nf::Tensor in = batch(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        nf::ForwardTrace t = nf::forward_trace(model(), in);
        benchmark::DoNotOptimize(t.logits().data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void bm_loss_and_grads(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const nf::Tensor in = batch(n);
    std::vector<int> labels(data().train.labels.begin(), data().train.labels.begin() + n);
    for (auto _ : state) {
        nf::BatchGrads bg = nf::loss_and_grads(model(), in, labels);
        benchmark::DoNotOptimize(bg.loss);
    }
    state.SetItemsProcessed(state.iterations() * n);
}

void bm_clp(benchmark::State& state) {
    nf::Budget budget;
    budget.per_layer = {2, 2, 2};
    for (auto _ : state) {
        nf::LocalizationResult loc = nf::clp_localize(model(), budget);
        benchmark::DoNotOptimize(loc.neurons.size());
    }
}

void bm_wji(benchmark::State& state) {
    nf::SubNetwork fault;
    fault.level = nf::Level::Small;
    std::vector<nf::NeuronId> flagged;
    nf::Rng rng(17);
    for (int l = 1; l <= 3; ++l)
        for (int c = 0; c < 12; ++c) {
            if (rng.uniform() < 0.4) fault.members.push_back({l, c});
            if (rng.uniform() < 0.4) flagged.push_back({l, c});
        }
    std::vector<double> rc(fault.members.size());
    double sum = 0.0;
    for (double& v : rc) {
        v = rng.uniform_double() + 0.01;
        sum += v;
    }
    for (double& v : rc) v /= sum;
    for (auto _ : state) {
        double w = nf::wji(fault, rc, flagged);
        benchmark::DoNotOptimize(w);
    }
}

}  // namespace

BENCHMARK(bm_forward)->Arg(1)->Arg(32);
BENCHMARK(bm_loss_and_grads)->Arg(32);
BENCHMARK(bm_clp);
BENCHMARK(bm_wji);

BENCHMARK_MAIN();
