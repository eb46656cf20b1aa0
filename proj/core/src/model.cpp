#include "neuroforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "neuroforge/errors.hpp"

namespace nf {

const char* level_name(Level level) {
    switch (level) {
        case Level::Narrow: return "narrow";
        case Level::Small: return "small";
        case Level::Middle: return "middle";
        case Level::Large: return "large";
    }
    return "?";
}

Level level_from_name(const std::string& name) {
    if (name == "narrow") return Level::Narrow;
    if (name == "small") return Level::Small;
    if (name == "middle") return Level::Middle;
    if (name == "large") return Level::Large;
    throw RejectedInput("unknown quantity level: " + name);
}

double level_percent(Level level) {
    switch (level) {
        case Level::Narrow: return 0.05;  // narrow reuses the small windows
        case Level::Small: return 0.05;
        case Level::Middle: return 0.10;
        case Level::Large: return 0.20;
    }
    return 0.0;
}

int level_selections(Level level) {
    switch (level) {
        case Level::Narrow: return 20;
        case Level::Small: return 20;
        case Level::Middle: return 10;
        case Level::Large: return 5;
    }
    return 0;
}

bool SubNetwork::contains(NeuronId id) const {
    return std::binary_search(members.begin(), members.end(), id);
}

const LayerSpec& Model::param_spec(int param_index) const {
    for (const LayerSpec& spec : pipeline)
        if (spec.param_index == param_index) return spec;
    throw RejectedInput("model: no parametric layer with index " + std::to_string(param_index));
}

int Model::pipeline_index_of(int param_index) const {
    for (std::size_t i = 0; i < pipeline.size(); ++i)
        if (pipeline[i].param_index == param_index) return static_cast<int>(i);
    throw RejectedInput("model: no parametric layer with index " + std::to_string(param_index));
}

int Model::last_conv_layer() const {
    int last = -1;
    for (const LayerSpec& spec : pipeline)
        if (spec.kind == LayerKind::Conv) last = spec.param_index;
    if (last < 0) throw RejectedInput("model: no conv layer");
    return last + 1;
}

bool Model::valid_neuron(NeuronId id) const {
    if (id.layer < 1 || id.layer > param_layers() - 1) return false;
    return id.channel >= 0 && id.channel < channels_of(id.layer - 1);
}

void Model::require_neuron(NeuronId id) const {
    if (!valid_neuron(id))
        throw RejectedInput("invalid neuron id (layer " + std::to_string(id.layer) + ", channel " +
                            std::to_string(id.channel) + ")");
}

bool Model::is_active(NeuronId id) const {
    return channel_active[static_cast<std::size_t>(id.layer - 1)][static_cast<std::size_t>(id.channel)] != 0;
}

std::vector<NeuronId> Model::all_body_neurons() const {
    std::vector<NeuronId> out;
    for (int l = 1; l < param_layers(); ++l)
        for (int c = 0; c < channels_of(l - 1); ++c) out.push_back({l, c});
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& w : weights) n += w.numel();
    for (const Tensor& b : biases) n += b.numel();
    return n;
}

namespace {

struct Builder {
    Model model;
    int cur_ch;
    int cur_hw;
    int params = 0;
    Rng* rng;

    Builder(int input_channels, int input_hw, int class_count, Rng& r) : rng(&r) {
        model.input_channels = input_channels;
        model.input_hw = input_hw;
        model.class_count = class_count;
        cur_ch = input_channels;
        cur_hw = input_hw;
    }

    void kaiming_uniform(Tensor& w, int fan_in) {
        const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
        for (float& v : w.raw()) v = rng->uniform(-bound, bound);
    }

    void conv(int out_ch) {
        LayerSpec spec{LayerKind::Conv, cur_ch, out_ch, params};
        model.pipeline.push_back(spec);
        Tensor w({out_ch, cur_ch, 3, 3});
        kaiming_uniform(w, cur_ch * 9);
        model.weights.push_back(std::move(w));
        model.biases.push_back(Tensor({out_ch}));
        model.channel_active.emplace_back(static_cast<std::size_t>(out_ch), std::uint8_t{1});
        model.channel_trainable.emplace_back(static_cast<std::size_t>(out_ch), std::uint8_t{1});
        cur_ch = out_ch;
        ++params;
    }

    void relu() { model.pipeline.push_back({LayerKind::Relu, 0, 0, -1}); }

    void pool() {
        if (cur_hw % 2 != 0) throw RejectedInput("model: maxpool needs an even spatial size");
        model.pipeline.push_back({LayerKind::Pool, 0, 0, -1});
        cur_hw /= 2;
    }

    void flatten() {
        model.pipeline.push_back({LayerKind::Flatten, 0, 0, -1});
        cur_ch = cur_ch * cur_hw * cur_hw;
        cur_hw = 1;
    }

    void dense(int out_features) {
        LayerSpec spec{LayerKind::Dense, cur_ch, out_features, params};
        model.pipeline.push_back(spec);
        Tensor w({out_features, cur_ch});
        kaiming_uniform(w, cur_ch);
        model.weights.push_back(std::move(w));
        model.biases.push_back(Tensor({out_features}));
        model.channel_active.emplace_back(static_cast<std::size_t>(out_features), std::uint8_t{1});
        model.channel_trainable.emplace_back(static_cast<std::size_t>(out_features), std::uint8_t{1});
        cur_ch = out_features;
        ++params;
    }
};

}  // namespace

Model make_tiny_vgg(int input_channels, int input_hw, int class_count, Rng& rng) {
    if (input_hw % 8 != 0) throw RejectedInput("tiny_vgg: input size must be divisible by 8");
    Builder b(input_channels, input_hw, class_count, rng);
    b.model.architecture = "tiny_vgg";
    b.conv(20);
    b.relu();
    b.pool();
    b.conv(24);
    b.relu();
    b.pool();
    b.conv(32);
    b.relu();
    b.pool();
    b.flatten();
    b.dense(class_count);
    return std::move(b.model);
}

Model make_tiny_resnet(int input_channels, int input_hw, int class_count, Rng& rng) {
    // Deeper, narrower stack from the same fixed layer set. The name mirrors the
    // config surface; the fixed layer set has no residual add, so this is a
    // plain sequential network (see README).
    if (input_hw % 8 != 0) throw RejectedInput("tiny_resnet: input size must be divisible by 8");
    Builder b(input_channels, input_hw, class_count, rng);
    b.model.architecture = "tiny_resnet";
    b.conv(20);
    b.relu();
    b.pool();
    b.conv(24);
    b.relu();
    b.conv(24);
    b.relu();
    b.pool();
    b.conv(32);
    b.relu();
    b.pool();
    b.flatten();
    b.dense(class_count);
    return std::move(b.model);
}

Model make_model(const std::string& architecture, int input_channels, int input_hw, int class_count, Rng& rng) {
    if (architecture == "tiny_vgg") return make_tiny_vgg(input_channels, input_hw, class_count, rng);
    if (architecture == "tiny_resnet") return make_tiny_resnet(input_channels, input_hw, class_count, rng);
    throw RejectedInput("unknown architecture: " + architecture);
}

Model mask_channels(const Model& model, std::span<const NeuronId> subnet) {
    for (const NeuronId& id : subnet) model.require_neuron(id);
    Model out = model;
    for (const NeuronId& id : subnet)
        out.channel_active[static_cast<std::size_t>(id.layer - 1)][static_cast<std::size_t>(id.channel)] = 0;
    return out;
}

Model mask_channels(const Model& model, const SubNetwork& subnet) {
    return mask_channels(model, std::span<const NeuronId>(subnet.members));
}

Model restrict_trainable(const Model& model, std::span<const NeuronId> subnet, bool head_trainable) {
    for (const NeuronId& id : subnet) model.require_neuron(id);
    Model out = model;
    for (auto& layer : out.channel_trainable) std::fill(layer.begin(), layer.end(), std::uint8_t{0});
    for (const NeuronId& id : subnet)
        out.channel_trainable[static_cast<std::size_t>(id.layer - 1)][static_cast<std::size_t>(id.channel)] = 1;
    // head channels follow the head flag
    auto& head = out.channel_trainable[static_cast<std::size_t>(out.head_index())];
    std::fill(head.begin(), head.end(), head_trainable ? std::uint8_t{1} : std::uint8_t{0});
    out.head_trainable = head_trainable;
    return out;
}

Model restrict_trainable(const Model& model, const SubNetwork& subnet, bool head_trainable) {
    return restrict_trainable(model, std::span<const NeuronId>(subnet.members), head_trainable);
}

std::vector<NeuronId> complement_neurons(const Model& model, const SubNetwork& subnet) {
    std::vector<NeuronId> out;
    for (const NeuronId& id : model.all_body_neurons())
        if (!subnet.contains(id)) out.push_back(id);
    return out;
}

}  // namespace nf
