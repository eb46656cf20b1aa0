#pragma once

#include <string>

#include "neuroforge/dataset.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/rng.hpp"

namespace nf {

struct AttackConfig {
    std::string method;  // badnets | blended | trojannn | sra
    TriggerSpec trigger;
    PoisonPolicy policy = {.rate = 0.3f};
    int epochs = 60;
    float lr = 0.02f;
    float momentum = 0.9f;
    int batch_size = 32;
    // Damped head updates keep the trigger response inside the selected
    // channels instead of letting the classifier re-weight stock features.
    float head_lr_scale = 0.1f;

    float sra_boost = 1.0f;  // head wiring delta before calibration (sra only)

    int trojan_steps = 200;   // trojannn only
    float trojan_lr = 0.1f;
    int trojan_mask = 4;  // square mask edge, bottom-right corner
};

// Mean post-ReLU activation of the subnet's last-conv channels on one image.
// The trigger optimizer maximizes this; tests compare optimized vs random.
double mean_subnet_activation(const Model& model, const SubNetwork& subnet, const Tensor& image);

// Gradient ascent on trigger pixels (clamped to [0, 1]) inside a square
// bottom-right mask, maximizing mean_subnet_activation on a gray canvas.
// Only improving steps are accepted. A zero-gradient start is retried with a
// fresh init up to 3 times, then InjectionFailure.
TriggerSpec trojan_optimize_trigger(const Model& benign, const SubNetwork& subnet, int steps, float lr,
                                    int mask_size, const Rng& rng);

// BadNets/Blended/TrojanNN: restricted fine-tuning of subnet + head on the
// poisoned merged train set. Channels outside the subnet stay bit-identical.
Model inject_poisoning(const Model& benign, const SubNetwork& subnet, const AttackConfig& cfg,
                       const Dataset& data, const Rng& rng);

struct SraOutcome {
    float delta = 0.0f;         // calibrated head boost
    double detector_accuracy = 0.0;
    int doublings = 0;
};

// Trains a standalone trigger detector shaped like the subnet, copies its
// weights into the subnet channels, severs cross-weights to exact zero, and
// wires the subnet's head features to the target class with +delta.
Model inject_sra(const Model& benign, const SubNetwork& subnet, const AttackConfig& cfg, const Dataset& data,
                 const Rng& rng, SraOutcome* outcome = nullptr);

// Dispatch on cfg.method. For trojannn the trigger is optimized first and the
// effective TriggerSpec is written back through `used_trigger` when non-null.
Model inject(const Model& benign, const SubNetwork& subnet, const AttackConfig& cfg, const Dataset& data,
             const Rng& rng, TriggerSpec* used_trigger = nullptr);

}  // namespace nf
