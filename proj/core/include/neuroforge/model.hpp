#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neuroforge/rng.hpp"
#include "neuroforge/tensor.hpp"

namespace nf {

enum class LayerKind { Conv, Relu, Pool, Flatten, Dense };

// One stage of the fixed pipeline {conv2d 3x3 s1 p1, relu, maxpool 2x2, flatten, dense}.
// Conv and Dense stages carry parameters; param_index counts them in order.
struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    int in_ch = 0;   // conv: input channels, dense: input features
    int out_ch = 0;  // conv: output channels, dense: output features
    int param_index = -1;
};

// A neuron is one conv output channel (kernel) or one dense output unit.
// `layer` is 1-based over the parametric layers; the classification head is
// layer L and is never a valid NeuronId target (valid range is [1, L-1]).
struct NeuronId {
    int layer = 0;
    int channel = 0;

    friend bool operator==(const NeuronId&, const NeuronId&) = default;
    friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

enum class Level { Narrow, Small, Middle, Large };

const char* level_name(Level level);
Level level_from_name(const std::string& name);
// percentage of each layer selected per window; narrow has no percentage
double level_percent(Level level);
int level_selections(Level level);  // 20, 20, 10, 5

// A set of neurons with at least one member in every non-head layer.
struct SubNetwork {
    std::vector<NeuronId> members;  // sorted, unique
    Level level = Level::Small;
    int selection = 0;

    bool contains(NeuronId id) const;
};

struct Model {
    std::string architecture;
    int input_channels = 0;
    int input_hw = 0;
    int class_count = 0;

    std::vector<LayerSpec> pipeline;
    // indexed by param_index
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    std::vector<std::vector<std::uint8_t>> channel_active;     // 1 = active, 0 = masked
    std::vector<std::vector<std::uint8_t>> channel_trainable;  // 1 = receives gradients
    bool head_trainable = true;

    int param_layers() const { return static_cast<int>(weights.size()); }
    int head_index() const { return param_layers() - 1; }  // 0-based param index of the head
    const LayerSpec& param_spec(int param_index) const;
    int channels_of(int param_index) const { return param_spec(param_index).out_ch; }
    // pipeline index of the given parametric layer
    int pipeline_index_of(int param_index) const;
    // last conv layer before the head, 1-based ("penultimate" for FP/NC)
    int last_conv_layer() const;

    bool valid_neuron(NeuronId id) const;
    void require_neuron(NeuronId id) const;  // throws RejectedInput
    bool is_active(NeuronId id) const;

    // all NeuronIds in layers [1, L-1]
    std::vector<NeuronId> all_body_neurons() const;

    std::size_t parameter_count() const;
};

// Architecture builders. Widths are chosen so every body layer has >= 20
// channels, which keeps 5% selection windows non-empty without clamping.
Model make_tiny_vgg(int input_channels, int input_hw, int class_count, Rng& rng);
Model make_tiny_resnet(int input_channels, int input_hw, int class_count, Rng& rng);
Model make_model(const std::string& architecture, int input_channels, int input_hw, int class_count, Rng& rng);

// Returns a copy with the given channels zeroed in every forward pass.
Model mask_channels(const Model& model, std::span<const NeuronId> subnet);
Model mask_channels(const Model& model, const SubNetwork& subnet);

// Returns a copy where only the listed channels (and the head, if flagged)
// receive nonzero gradients.
Model restrict_trainable(const Model& model, std::span<const NeuronId> subnet, bool head_trainable);
Model restrict_trainable(const Model& model, const SubNetwork& subnet, bool head_trainable);

// Complement of `subnet` over layers [1, L-1].
std::vector<NeuronId> complement_neurons(const Model& model, const SubNetwork& subnet);

}  // namespace nf
