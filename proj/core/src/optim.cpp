#include "neuroforge/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "neuroforge/errors.hpp"

namespace nf {

SgdOptimizer::SgdOptimizer(const Model& model, float lr, float momentum) : lr_(lr), momentum_(momentum) {
    for (int p = 0; p < model.param_layers(); ++p) {
        vel_w_.emplace_back(model.weights[static_cast<std::size_t>(p)].shape());
        vel_b_.emplace_back(model.biases[static_cast<std::size_t>(p)].shape());
    }
}

void SgdOptimizer::step(Model& model, const Gradients& grads) {
    if (grads.weight_grads.size() != vel_w_.size()) throw RejectedInput("sgd: gradient layout mismatch");
    for (int p = 0; p < model.param_layers(); ++p) {
        const auto pi = static_cast<std::size_t>(p);
        Tensor& w = model.weights[pi];
        Tensor& b = model.biases[pi];
        const auto& trainable = model.channel_trainable[pi];
        const int cout = model.param_spec(p).out_ch;
        const std::size_t per_ch = w.numel() / static_cast<std::size_t>(cout);
        const float lr = p == model.head_index() ? lr_ * head_scale_ : lr_;

        for (int oc = 0; oc < cout; ++oc) {
            if (!trainable[static_cast<std::size_t>(oc)]) continue;
            float* wp = w.data() + static_cast<std::size_t>(oc) * per_ch;
            float* vp = vel_w_[pi].data() + static_cast<std::size_t>(oc) * per_ch;
            const float* gp = grads.weight_grads[pi].data() + static_cast<std::size_t>(oc) * per_ch;
            for (std::size_t i = 0; i < per_ch; ++i) {
                vp[i] = momentum_ * vp[i] + gp[i];
                wp[i] -= lr * vp[i];
            }
            float& vb = vel_b_[pi][static_cast<std::size_t>(oc)];
            vb = momentum_ * vb + grads.bias_grads[pi][static_cast<std::size_t>(oc)];
            b[static_cast<std::size_t>(oc)] -= lr * vb;
        }
    }
}

TrainStats train_model(Model& model, const Tensor& images, const std::vector<int>& labels,
                       const TrainOptions& opts, const Rng& rng) {
    const int n = images.dim(0);
    if (n == 0 || static_cast<std::size_t>(n) != labels.size())
        throw RejectedInput("train_model: image/label count mismatch");
    if (opts.batch_size < 1) throw RejectedInput("train_model: batch size must be positive");
    if (opts.channel_dropout < 0.0f || opts.channel_dropout >= 0.9f)
        throw RejectedInput("train_model: channel_dropout must be in [0, 0.9)");

    SgdOptimizer sgd(model, opts.lr, opts.momentum);
    sgd.set_head_lr_scale(opts.head_lr_scale);
    BackwardOptions bopts;
    bopts.respect_trainable = opts.respect_trainable;
    const std::size_t image_sz = images.numel() / static_cast<std::size_t>(n);
    const Rng shuffler = rng.split("epoch-shuffles");
    const float pdrop = opts.channel_dropout;
    Rng dropper = rng.split("channel-dropout");  // untouched when pdrop == 0

    std::vector<int> order(static_cast<std::size_t>(n));
    TrainStats stats;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng epoch_rng = shuffler.split(static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);

        double epoch_loss = 0.0;
        int epoch_correct = 0;
        for (int start = 0; start < n; start += opts.batch_size) {
            const int b = std::min(opts.batch_size, n - start);
            Tensor batch({b, images.dim(1), images.dim(2), images.dim(3)});
            std::vector<int> batch_labels(static_cast<std::size_t>(b));
            for (int i = 0; i < b; ++i) {
                const int src = order[static_cast<std::size_t>(start + i)];
                std::memcpy(batch.data() + static_cast<std::size_t>(i) * image_sz,
                            images.data() + static_cast<std::size_t>(src) * image_sz, image_sz * sizeof(float));
                batch_labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
            }
            BatchGrads bg;
            try {
                if (pdrop > 0.0f) {
                    GateSet gates;
                    gates.gates.resize(static_cast<std::size_t>(model.param_layers()));
                    const float scale = 1.0f / (1.0f - pdrop);
                    for (int p = 0; p < model.param_layers(); ++p) {
                        if (model.param_spec(p).kind != LayerKind::Conv || p == model.head_index()) continue;
                        auto& g = gates.gates[static_cast<std::size_t>(p)];
                        g.resize(static_cast<std::size_t>(model.channels_of(p)));
                        for (float& v : g) v = dropper.uniform() < pdrop ? 0.0f : scale;
                    }
                    ForwardTrace trace = forward_trace(model, batch, &gates);
                    LossResult loss = cross_entropy(trace.logits(), batch_labels);
                    bg.loss = loss.loss;
                    bg.correct = loss.correct;
                    bg.grads = backward(model, trace, loss.logit_grad, bopts, &gates);
                } else {
                    bg = loss_and_grads(model, batch, batch_labels, bopts);
                }
            } catch (const NumericFailure& e) {
                throw NumericFailure(std::string("train_model: ") + e.what(), epoch);
            }
            sgd.step(model, bg.grads);
            epoch_loss += bg.loss * b;
            epoch_correct += bg.correct;
        }
        stats.last_loss = epoch_loss / n;
        stats.last_accuracy = static_cast<double>(epoch_correct) / n;
        if (!std::isfinite(stats.last_loss)) throw NumericFailure("train_model: non-finite epoch loss", epoch);
    }
    return stats;
}

}  // namespace nf
