#pragma once

#include <span>
#include <vector>

#include "neuroforge/model.hpp"
#include "neuroforge/tensor.hpp"

namespace nf {

// Optional per-channel multipliers applied to a parametric layer's output
// (after bias, before the following ReLU). Indexed by param_index; an empty
// inner vector means no gate on that layer.
struct GateSet {
    std::vector<std::vector<float>> gates;

    static GateSet ones(const Model& model, int param_index);
    bool has(int param_index) const {
        return param_index >= 0 && param_index < static_cast<int>(gates.size()) &&
               !gates[static_cast<std::size_t>(param_index)].empty();
    }
};

// Everything the backward pass needs, captured during forward.
struct ForwardTrace {
    Tensor input;                             // [B, C, H, W]
    std::vector<Tensor> outputs;              // one per pipeline stage
    std::vector<Tensor> pregate;              // conv/dense output before gating, only when gated
    std::vector<std::vector<int>> pool_argmax;  // flat index into the input plane, per pool stage output element

    int batch() const { return input.dim(0); }
    const Tensor& logits() const { return outputs.back(); }
};

struct BackwardOptions {
    bool param_grads = true;
    bool input_grad = false;
    bool act_grads = false;         // keep dLoss/d(stage output) for every stage
    bool gate_grads = false;        // requires the same GateSet used in forward
    bool respect_trainable = false; // skip weight/bias grads for frozen channels
};

struct Gradients {
    std::vector<Tensor> weight_grads;  // by param_index, empty when param_grads=false
    std::vector<Tensor> bias_grads;
    Tensor input_grad;
    std::vector<Tensor> act_grads;     // by pipeline stage
    std::vector<std::vector<float>> gate_grads;  // by param_index
};

ForwardTrace forward_trace(const Model& model, const Tensor& input, const GateSet* gates = nullptr);

// `logit_seed` is dLoss/dlogits, shape [B, classes].
Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& logit_seed,
                   const BackwardOptions& opts = {}, const GateSet* gates = nullptr);

// Backpropagation starting at an arbitrary pipeline stage; `seed` is the loss
// gradient with respect to that stage's output. Stages after `from_stage` are
// ignored.
Gradients backward_from(const Model& model, const ForwardTrace& trace, int from_stage, const Tensor& seed,
                        const BackwardOptions& opts = {}, const GateSet* gates = nullptr);

// Pipeline stage holding the post-activation output of the given 1-based
// parametric layer (the ReLU stage right after it, or the layer itself when
// no ReLU follows).
int post_activation_stage(const Model& model, int layer);

struct LossResult {
    double loss = 0.0;
    Tensor logit_grad;  // mean-reduced: (softmax - onehot) / B
    int correct = 0;
};

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels);

struct BatchGrads {
    double loss = 0.0;
    int correct = 0;
    Gradients grads;
};

BatchGrads loss_and_grads(const Model& model, const Tensor& input, std::span<const int> labels,
                          const BackwardOptions& opts = {});

}  // namespace nf
