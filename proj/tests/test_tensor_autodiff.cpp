#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "neuroforge/autodiff.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/optim.hpp"
#include "neuroforge/tensor.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace nf;

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3, 4});
    CHECK(t.rank() == 3);
    CHECK(t.numel() == 24);
    CHECK(t.dim(2) == 4);
    t.at(1, 2, 3) = 5.0f;
    CHECK(t[23] == 5.0f);

    Tensor f = Tensor::full({2, 2}, 0.5f);
    CHECK(f.at(1, 1) == 0.5f);
}

TEST_CASE("forward matches a naive reimplementation") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::fresh_model();
    for (int i = 0; i < 4; ++i) {
        Tensor img = fixtures::image_at(d.train.images, i * 7);
        Tensor batch({1, d.channels, d.hw, d.hw});
        std::memcpy(batch.data(), img.data(), img.numel() * sizeof(float));

        ForwardTrace trace = forward_trace(m, batch);
        std::vector<float> expect = oracle::naive_forward(m, img);
        REQUIRE(trace.logits().numel() == expect.size());
        for (std::size_t k = 0; k < expect.size(); ++k)
            CHECK(trace.logits()[k] == doctest::Approx(expect[k]).epsilon(1e-4));
    }
}

TEST_CASE("forward matches the naive path with masked channels") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::fresh_model();
    std::vector<NeuronId> off = {{1, 3}, {2, 7}, {3, 1}, {3, 30}};
    Model masked = mask_channels(m, std::span<const NeuronId>(off));

    Tensor img = fixtures::image_at(d.train.images, 5);
    Tensor batch({1, d.channels, d.hw, d.hw});
    std::memcpy(batch.data(), img.data(), img.numel() * sizeof(float));
    ForwardTrace trace = forward_trace(masked, batch);
    std::vector<float> expect = oracle::naive_forward(masked, img);
    for (std::size_t k = 0; k < expect.size(); ++k)
        CHECK(trace.logits()[k] == doctest::Approx(expect[k]).epsilon(1e-4));
}

TEST_CASE("masked channels produce exactly zero activation maps") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::fresh_model();
    const NeuronId id{2, 4};
    Model masked = mask_channels(m, std::span<const NeuronId>(&id, 1));

    Tensor batch({2, d.channels, d.hw, d.hw});
    std::memcpy(batch.data(), d.train.images.data(), batch.numel() * sizeof(float));
    ForwardTrace trace = forward_trace(masked, batch);

    const int stage = masked.pipeline_index_of(id.layer - 1);
    const Tensor& out = trace.outputs[static_cast<std::size_t>(stage)];
    for (int b = 0; b < out.dim(0); ++b) {
        const float* plane = out.plane(b, id.channel);
        for (int i = 0; i < out.dim(2) * out.dim(3); ++i) CHECK(plane[i] == 0.0f);
    }
}

namespace {

// dLoss/dtheta for a single scalar parameter bumped in place
double loss_at(Model& m, Tensor& param, std::size_t idx, float value, const Tensor& batch,
               const std::vector<int>& labels) {
    const float saved = param[idx];
    param[idx] = value;
    ForwardTrace trace = forward_trace(m, batch);
    LossResult res = cross_entropy(trace.logits(), labels);
    param[idx] = saved;
    return res.loss;
}

}  // namespace

TEST_CASE("parameter gradients agree with central finite differences") {
    // small model: 8x8 inputs keep the finite-difference loop affordable
    const Dataset& d = fixtures::tiny_data();
    const int probes_per_tensor = 5;
    const double eps = 1e-3;

    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Model m = fixtures::fresh_model(seed);
        Tensor batch({3, d.channels, d.hw, d.hw});
        std::memcpy(batch.data(), d.train.images.data(), batch.numel() * sizeof(float));
        std::vector<int> labels(d.train.labels.begin(), d.train.labels.begin() + 3);

        BatchGrads bg = loss_and_grads(m, batch, labels);
        Rng pick = Rng(seed).split("fd-probes");

        for (int p = 0; p < m.param_layers(); ++p) {
            Tensor& w = m.weights[static_cast<std::size_t>(p)];
            const Tensor& gw = bg.grads.weight_grads[static_cast<std::size_t>(p)];
            for (int k = 0; k < probes_per_tensor; ++k) {
                const std::size_t idx = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(w.numel())));
                const double fd = (loss_at(m, w, idx, w[idx] + static_cast<float>(eps), batch, labels) -
                                   loss_at(m, w, idx, w[idx] - static_cast<float>(eps), batch, labels)) /
                                  (2 * eps);
                const double ad = gw[idx];
                const double denom = std::max({std::abs(fd), std::abs(ad), 1e-4});
                CHECK(std::abs(fd - ad) / denom <= 1e-3);
            }
            Tensor& b = m.biases[static_cast<std::size_t>(p)];
            const Tensor& gb = bg.grads.bias_grads[static_cast<std::size_t>(p)];
            const std::size_t idx = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(b.numel())));
            const double fd = (loss_at(m, b, idx, b[idx] + static_cast<float>(eps), batch, labels) -
                               loss_at(m, b, idx, b[idx] - static_cast<float>(eps), batch, labels)) /
                              (2 * eps);
            const double ad = gb[idx];
            const double denom = std::max({std::abs(fd), std::abs(ad), 1e-4});
            CHECK(std::abs(fd - ad) / denom <= 1e-3);
        }
    }
}

TEST_CASE("input gradients agree with central finite differences") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::fresh_model(3);
    Tensor batch({1, d.channels, d.hw, d.hw});
    std::memcpy(batch.data(), d.train.images.data(), batch.numel() * sizeof(float));
    std::vector<int> labels = {d.train.labels[0]};

    ForwardTrace trace = forward_trace(m, batch);
    LossResult res = cross_entropy(trace.logits(), labels);
    BackwardOptions bopts;
    bopts.param_grads = false;
    bopts.input_grad = true;
    Gradients grads = backward(m, trace, res.logit_grad, bopts);

    Rng pick = Rng(99).split("fd-input");
    const double eps = 1e-3;
    for (int k = 0; k < 12; ++k) {
        const std::size_t idx = static_cast<std::size_t>(pick.uniform_int(static_cast<int>(batch.numel())));
        const float saved = batch[idx];
        batch[idx] = saved + static_cast<float>(eps);
        const double up = cross_entropy(forward_trace(m, batch).logits(), labels).loss;
        batch[idx] = saved - static_cast<float>(eps);
        const double dn = cross_entropy(forward_trace(m, batch).logits(), labels).loss;
        batch[idx] = saved;
        const double fd = (up - dn) / (2 * eps);
        const double ad = grads.input_grad[idx];
        const double denom = std::max({std::abs(fd), std::abs(ad), 1e-4});
        CHECK(std::abs(fd - ad) / denom <= 1e-3);
    }
}

TEST_CASE("gate gradients agree with central finite differences") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::fresh_model(4);
    Tensor batch({2, d.channels, d.hw, d.hw});
    std::memcpy(batch.data(), d.train.images.data(), batch.numel() * sizeof(float));
    std::vector<int> labels(d.train.labels.begin(), d.train.labels.begin() + 2);

    const int p = 1;
    GateSet gates = GateSet::ones(m, p);
    ForwardTrace trace = forward_trace(m, batch, &gates);
    LossResult res = cross_entropy(trace.logits(), labels);
    BackwardOptions bopts;
    bopts.param_grads = false;
    bopts.gate_grads = true;
    Gradients grads = backward(m, trace, res.logit_grad, bopts, &gates);

    const double eps = 1e-3;
    for (int ch = 0; ch < m.channels_of(p); ch += 5) {
        auto eval = [&](float g) {
            gates.gates[p][static_cast<std::size_t>(ch)] = g;
            const double loss = cross_entropy(forward_trace(m, batch, &gates).logits(), labels).loss;
            gates.gates[p][static_cast<std::size_t>(ch)] = 1.0f;
            return loss;
        };
        const double fd = (eval(1.0f + static_cast<float>(eps)) - eval(1.0f - static_cast<float>(eps))) / (2 * eps);
        const double ad = grads.gate_grads[p][static_cast<std::size_t>(ch)];
        const double denom = std::max({std::abs(fd), std::abs(ad), 1e-4});
        CHECK(std::abs(fd - ad) / denom <= 1e-3);
    }
}

TEST_CASE("frozen channels receive exactly zero parameter updates") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::trained_model();
    std::vector<NeuronId> keep = {{1, 0}, {2, 1}, {3, 2}};
    Model r = restrict_trainable(m, std::span<const NeuronId>(keep), true);

    TrainOptions opts;
    opts.epochs = 3;
    opts.lr = 0.05f;
    opts.respect_trainable = true;
    train_model(r, d.train.images, d.train.labels, opts, Rng(17));

    int changed_allowed = 0;
    for (int p = 0; p + 1 < m.param_layers(); ++p) {
        const Tensor& before = m.weights[static_cast<std::size_t>(p)];
        const Tensor& after = r.weights[static_cast<std::size_t>(p)];
        const int oc = m.channels_of(p);
        const std::size_t per = before.numel() / static_cast<std::size_t>(oc);
        for (int c = 0; c < oc; ++c) {
            const bool same = std::memcmp(before.data() + static_cast<std::size_t>(c) * per,
                                          after.data() + static_cast<std::size_t>(c) * per,
                                          per * sizeof(float)) == 0;
            const bool selected = c == keep[static_cast<std::size_t>(p)].channel;
            if (selected)
                ++changed_allowed;
            else
                CHECK(same);
        }
    }
    CHECK(changed_allowed == 3);
}

TEST_CASE("head-only training keeps every body parameter bit-identical") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::trained_model();
    Model r = restrict_trainable(m, std::span<const NeuronId>(), true);

    TrainOptions opts;
    opts.epochs = 2;
    opts.lr = 0.05f;
    opts.respect_trainable = true;
    train_model(r, d.train.images, d.train.labels, opts, Rng(18));

    for (int p = 0; p + 1 < m.param_layers(); ++p) {
        const auto pi = static_cast<std::size_t>(p);
        CHECK(std::memcmp(m.weights[pi].data(), r.weights[pi].data(),
                          m.weights[pi].numel() * sizeof(float)) == 0);
        CHECK(std::memcmp(m.biases[pi].data(), r.biases[pi].data(),
                          m.biases[pi].numel() * sizeof(float)) == 0);
    }
    const auto hi = static_cast<std::size_t>(m.head_index());
    CHECK(std::memcmp(m.weights[hi].data(), r.weights[hi].data(),
                      m.weights[hi].numel() * sizeof(float)) != 0);
}

TEST_CASE("head lr scale damps only the head step") {
    const Dataset& d = fixtures::tiny_data();
    TrainOptions opts;
    opts.epochs = 1;
    opts.lr = 0.01f;

    Model a = fixtures::fresh_model(21);
    Model b = a;
    opts.head_lr_scale = 1.0f;
    train_model(a, d.train.images, d.train.labels, opts, Rng(1));
    opts.head_lr_scale = 0.0f;
    train_model(b, d.train.images, d.train.labels, opts, Rng(1));

    const Model fresh = fixtures::fresh_model(21);
    const auto hi = static_cast<std::size_t>(fresh.head_index());
    // zero scale froze the head in place
    CHECK(std::memcmp(fresh.weights[hi].data(), b.weights[hi].data(),
                      fresh.weights[hi].numel() * sizeof(float)) == 0);
    CHECK(std::memcmp(fresh.weights[hi].data(), a.weights[hi].data(),
                      fresh.weights[hi].numel() * sizeof(float)) != 0);
    // body steps are unaffected by the head scale
    CHECK(std::memcmp(a.weights[0].data(), b.weights[0].data(),
                      a.weights[0].numel() * sizeof(float)) == 0);
}

TEST_CASE("cross entropy rejects non-finite logits") {
    Tensor logits({1, 3});
    logits[0] = std::numeric_limits<float>::quiet_NaN();
    std::vector<int> labels = {0};
    CHECK_THROWS_AS(cross_entropy(logits, labels), NumericFailure);
}

TEST_CASE("forward rejects shape mismatches") {
    Model m = fixtures::fresh_model();
    Tensor wrong({1, 1, 8, 8});
    CHECK_THROWS_AS(forward_trace(m, wrong), RejectedInput);
}

TEST_CASE("training a fresh model reduces loss") {
    const Dataset& d = fixtures::tiny_data();
    Model m = fixtures::fresh_model(8);
    TrainOptions opts;
    opts.epochs = 6;
    opts.lr = 0.02f;
    TrainStats stats = train_model(m, d.train.images, d.train.labels, opts, Rng(8));
    CHECK(stats.last_loss < 1.0);
    CHECK(stats.last_accuracy > 0.5);
}
