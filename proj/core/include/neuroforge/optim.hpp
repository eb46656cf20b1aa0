#pragma once

#include "neuroforge/autodiff.hpp"
#include "neuroforge/model.hpp"

namespace nf {

// Momentum SGD: v = mu*v + g; theta -= lr*v.
// Frozen channels (channel_trainable == 0) are skipped structurally, so their
// weights and momentum stay bit-identical no matter what the gradients hold.
class SgdOptimizer {
public:
    SgdOptimizer(const Model& model, float lr, float momentum);

    void step(Model& model, const Gradients& grads);

    float lr() const { return lr_; }
    void set_lr(float lr) { lr_ = lr; }
    // damp (or boost) the head's step relative to the body
    void set_head_lr_scale(float scale) { head_scale_ = scale; }

private:
    float lr_;
    float momentum_;
    float head_scale_ = 1.0f;
    std::vector<Tensor> vel_w_;
    std::vector<Tensor> vel_b_;
};

struct TrainOptions {
    int epochs = 10;
    float lr = 0.05f;
    float momentum = 0.9f;
    int batch_size = 32;
    bool respect_trainable = false;
    float head_lr_scale = 1.0f;
    // Per-batch channel dropout on body conv layers (inverted scaling, off at
    // eval). Spreads class evidence across channels instead of letting a
    // couple of filters carry everything.
    float channel_dropout = 0.0f;
};

struct TrainStats {
    double last_loss = 0.0;
    double last_accuracy = 0.0;
};

// Seeded epoch shuffles; throws NumericFailure with the epoch index when the
// loss goes non-finite.
TrainStats train_model(Model& model, const Tensor& images, const std::vector<int>& labels,
                       const TrainOptions& opts, const Rng& rng);

}  // namespace nf
