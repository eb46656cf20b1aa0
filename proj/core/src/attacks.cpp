#include "neuroforge/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "neuroforge/autodiff.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/metrics.hpp"
#include "neuroforge/optim.hpp"

namespace nf {

namespace {

std::vector<int> subnet_channels_at(const SubNetwork& subnet, int layer) {
    std::vector<int> out;
    for (const NeuronId& id : subnet.members)
        if (id.layer == layer) out.push_back(id.channel);
    std::sort(out.begin(), out.end());
    return out;
}

Tensor blend_with_mask(const Tensor& canvas, const Tensor& pattern, const Tensor& mask) {
    const int c = canvas.dim(1), h = canvas.dim(2), w = canvas.dim(3);
    Tensor out = canvas;
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const float m = mask.at(y, x);
                float v = (1.0f - m) * canvas.at(0, ch, y, x) + m * pattern.at(ch, y, x);
                out.at(0, ch, y, x) = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            }
    return out;
}

}  // namespace

double mean_subnet_activation(const Model& model, const SubNetwork& subnet, const Tensor& image) {
    Tensor input = image;
    if (image.rank() == 3) {
        input = Tensor({1, image.dim(0), image.dim(1), image.dim(2)});
        std::memcpy(input.data(), image.data(), image.numel() * sizeof(float));
    }
    const int layer = model.last_conv_layer();
    const std::vector<int> channels = subnet_channels_at(subnet, layer);
    if (channels.empty()) throw RejectedInput("mean_subnet_activation: subnet has no last-conv members");

    ForwardTrace trace = forward_trace(model, input);
    const Tensor& act = trace.outputs[static_cast<std::size_t>(post_activation_stage(model, layer))];
    const std::size_t plane = act.plane_size();
    double sum = 0.0;
    for (int ch : channels) {
        const float* p = act.plane(0, ch);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    return sum / (static_cast<double>(channels.size()) * static_cast<double>(plane));
}

TriggerSpec trojan_optimize_trigger(const Model& benign, const SubNetwork& subnet, int steps, float lr,
                                    int mask_size, const Rng& rng) {
    const int c = benign.input_channels, hw = benign.input_hw;
    if (mask_size < 1 || mask_size > hw) throw RejectedInput("trojan trigger: mask exceeds image bounds");

    Tensor mask({hw, hw});
    for (int y = hw - mask_size; y < hw; ++y)
        for (int x = hw - mask_size; x < hw; ++x) mask.at(y, x) = 1.0f;

    Tensor canvas = Tensor::full({1, c, hw, hw}, 0.5f);
    const int layer = benign.last_conv_layer();
    const int stage = post_activation_stage(benign, layer);
    const std::vector<int> channels = subnet_channels_at(subnet, layer);
    if (channels.empty()) throw RejectedInput("trojan trigger: subnet has no last-conv members");

    Rng init_rng = rng.split("trojan-init");
    BackwardOptions bopts;
    bopts.param_grads = false;
    bopts.input_grad = true;

    for (int restart = 0; restart <= 3; ++restart) {
        Tensor pattern({c, hw, hw});
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < hw; ++y)
                for (int x = 0; x < hw; ++x)
                    if (mask.at(y, x) > 0.0f) pattern.at(ch, y, x) = init_rng.uniform();

        double best = mean_subnet_activation(benign, subnet, blend_with_mask(canvas, pattern, mask));
        float step = lr;
        bool stalled = false;

        for (int it = 0; it < steps; ++it) {
            Tensor blended = blend_with_mask(canvas, pattern, mask);
            ForwardTrace trace = forward_trace(benign, blended);
            const Tensor& act = trace.outputs[static_cast<std::size_t>(stage)];
            Tensor seed(act.shape());
            const float unit = 1.0f / (static_cast<float>(channels.size()) * static_cast<float>(act.plane_size()));
            for (int ch : channels) {
                float* p = seed.plane(0, ch);
                std::fill(p, p + act.plane_size(), unit);
            }
            Gradients grads = backward_from(benign, trace, stage, seed, bopts);

            double norm = 0.0;
            Tensor cand = pattern;
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < hw; ++y)
                    for (int x = 0; x < hw; ++x) {
                        const float m = mask.at(y, x);
                        if (m <= 0.0f) continue;
                        const float g = grads.input_grad.at(0, ch, y, x) * m;
                        norm += static_cast<double>(g) * g;
                        float v = cand.at(ch, y, x) + step * g;
                        cand.at(ch, y, x) = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                    }
            if (norm == 0.0) {
                stalled = true;
                break;
            }
            const double obj = mean_subnet_activation(benign, subnet, blend_with_mask(canvas, cand, mask));
            if (obj > best) {
                best = obj;
                pattern = std::move(cand);
            } else {
                step *= 0.5f;
                if (step < lr * 1e-4f) break;
            }
        }

        if (!stalled) {
            TriggerSpec t;
            t.kind = TriggerKind::Optimized;
            t.pattern = std::move(pattern);
            t.mask = std::move(mask);
            return t;
        }
    }
    throw InjectionFailure("trojan trigger: gradient stalled at zero after 3 restarts");
}

Model inject_poisoning(const Model& benign, const SubNetwork& subnet, const AttackConfig& cfg,
                       const Dataset& data, const Rng& rng) {
    if (cfg.method != "badnets" && cfg.method != "blended" && cfg.method != "trojannn")
        throw RejectedInput("inject_poisoning: method must be badnets, blended or trojannn");

    Rng pick = rng.split("poison-pick");
    const PoisonResult pr = poison_dataset(data, cfg.policy, cfg.trigger, pick.next_u64());

    Model infected = restrict_trainable(benign, std::span<const NeuronId>(subnet.members), true);
    TrainOptions topts;
    topts.epochs = cfg.epochs;
    topts.lr = cfg.lr;
    topts.momentum = cfg.momentum;
    topts.batch_size = cfg.batch_size;
    topts.respect_trainable = true;
    topts.head_lr_scale = cfg.head_lr_scale;
    try {
        train_model(infected, pr.merged_train.images, pr.merged_train.labels, topts, rng.split("inject-train"));
    } catch (const NumericFailure& e) {
        throw InjectionFailure(std::string("poisoning diverged: ") + e.what(), e.where());
    }
    infected.channel_trainable = benign.channel_trainable;
    infected.head_trainable = benign.head_trainable;
    return infected;
}

namespace {

// The detector mirrors the body pipeline with the subnet's per-layer widths
// and reads out the mean of its last post-ReLU map.
Model make_detector(const Model& benign, const std::vector<std::vector<int>>& subnet_channels, Rng& rng) {
    Model det;
    det.architecture = "sra-detector";
    det.input_channels = benign.input_channels;
    det.input_hw = benign.input_hw;
    det.class_count = 1;

    const int last_stage = post_activation_stage(benign, benign.last_conv_layer());
    int cur_ch = benign.input_channels;
    int params = 0;
    for (int s = 0; s <= last_stage; ++s) {
        const LayerSpec& spec = benign.pipeline[static_cast<std::size_t>(s)];
        switch (spec.kind) {
            case LayerKind::Conv: {
                const int out_ch = static_cast<int>(subnet_channels[static_cast<std::size_t>(params)].size());
                det.pipeline.push_back({LayerKind::Conv, cur_ch, out_ch, params});
                Tensor w({out_ch, cur_ch, 3, 3});
                const float bound = std::sqrt(6.0f / static_cast<float>(cur_ch * 9));
                for (float& v : w.raw()) v = rng.uniform(-bound, bound);
                det.weights.push_back(std::move(w));
                det.biases.push_back(Tensor({out_ch}));
                det.channel_active.emplace_back(static_cast<std::size_t>(out_ch), std::uint8_t{1});
                det.channel_trainable.emplace_back(static_cast<std::size_t>(out_ch), std::uint8_t{1});
                cur_ch = out_ch;
                ++params;
                break;
            }
            case LayerKind::Relu:
                det.pipeline.push_back({LayerKind::Relu, 0, 0, -1});
                break;
            case LayerKind::Pool:
                det.pipeline.push_back({LayerKind::Pool, 0, 0, -1});
                break;
            default:
                throw RejectedInput("sra detector: unexpected stage before the last conv");
        }
    }
    return det;
}

double detector_accuracy(const Model& det, const Tensor& images, const std::vector<float>& targets) {
    const int n = images.dim(0);
    int correct = 0;
    for (int start = 0; start < n; start += 64) {
        const int b = std::min(64, n - start);
        const std::size_t image_sz = images.numel() / static_cast<std::size_t>(n);
        Tensor batch({b, images.dim(1), images.dim(2), images.dim(3)});
        std::memcpy(batch.data(), images.data() + static_cast<std::size_t>(start) * image_sz,
                    static_cast<std::size_t>(b) * image_sz * sizeof(float));
        ForwardTrace trace = forward_trace(det, batch);
        const Tensor& out = trace.outputs.back();
        const std::size_t per = out.numel() / static_cast<std::size_t>(b);
        for (int i = 0; i < b; ++i) {
            double mean = 0.0;
            const float* p = out.data() + static_cast<std::size_t>(i) * per;
            for (std::size_t j = 0; j < per; ++j) mean += p[j];
            mean /= static_cast<double>(per);
            const bool high = mean > 0.5;
            const bool want = targets[static_cast<std::size_t>(start + i)] > 0.5f;
            if (high == want) ++correct;
        }
    }
    return static_cast<double>(correct) / n;
}

void train_detector(Model& det, const Tensor& images, const std::vector<float>& targets, const Rng& rng) {
    constexpr int kEpochs = 15;
    constexpr int kBatch = 32;
    const int n = images.dim(0);
    const std::size_t image_sz = images.numel() / static_cast<std::size_t>(n);
    SgdOptimizer sgd(det, 0.05f, 0.9f);
    const Rng shuffler = rng.split("detector-epochs");

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int epoch = 0; epoch < kEpochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng erng = shuffler.split(static_cast<std::uint64_t>(epoch));
        erng.shuffle(order);
        for (int start = 0; start < n; start += kBatch) {
            const int b = std::min(kBatch, n - start);
            Tensor batch({b, images.dim(1), images.dim(2), images.dim(3)});
            std::vector<float> y(static_cast<std::size_t>(b));
            for (int i = 0; i < b; ++i) {
                const int src = order[static_cast<std::size_t>(start + i)];
                std::memcpy(batch.data() + static_cast<std::size_t>(i) * image_sz,
                            images.data() + static_cast<std::size_t>(src) * image_sz, image_sz * sizeof(float));
                y[static_cast<std::size_t>(i)] = targets[static_cast<std::size_t>(src)];
            }
            ForwardTrace trace = forward_trace(det, batch);
            const Tensor& out = trace.outputs.back();
            const std::size_t per = out.numel() / static_cast<std::size_t>(b);
            Tensor seed(out.shape());
            double loss = 0.0;
            for (int i = 0; i < b; ++i) {
                const float* p = out.data() + static_cast<std::size_t>(i) * per;
                double mean = 0.0;
                for (std::size_t j = 0; j < per; ++j) mean += p[j];
                mean /= static_cast<double>(per);
                const double err = mean - y[static_cast<std::size_t>(i)];
                loss += err * err;
                const float g = static_cast<float>(2.0 * err / (static_cast<double>(b) * static_cast<double>(per)));
                float* s = seed.data() + static_cast<std::size_t>(i) * per;
                std::fill(s, s + per, g);
            }
            if (!std::isfinite(loss)) throw InjectionFailure("sra detector: training diverged", epoch);
            Gradients grads = backward_from(det, trace, static_cast<int>(det.pipeline.size()) - 1, seed);
            sgd.step(det, grads);
        }
    }
}

void wire_head(Model& m, const std::vector<int>& last_conv_subnet, int target, float delta) {
    const int head = m.head_index();
    Tensor& w = m.weights[static_cast<std::size_t>(head)];
    const int classes = m.param_spec(head).out_ch;
    const int features = m.param_spec(head).in_ch;
    const int last_conv_channels = m.channels_of(m.last_conv_layer() - 1);
    const int spatial = features / last_conv_channels;
    for (int ch : last_conv_subnet)
        for (int p = 0; p < spatial; ++p) {
            const int f = ch * spatial + p;
            for (int cls = 0; cls < classes; ++cls)
                w.at(cls, f) = (cls == target) ? delta : 0.0f;
        }
}

}  // namespace

Model inject_sra(const Model& benign, const SubNetwork& subnet, const AttackConfig& cfg, const Dataset& data,
                 const Rng& rng, SraOutcome* outcome) {
    if (cfg.method != "sra") throw RejectedInput("inject_sra: method must be sra");
    for (const NeuronId& id : subnet.members) benign.require_neuron(id);

    const int body_layers = benign.param_layers() - 1;
    std::vector<std::vector<int>> per_layer(static_cast<std::size_t>(body_layers));
    for (int l = 1; l <= body_layers; ++l) {
        per_layer[static_cast<std::size_t>(l - 1)] = subnet_channels_at(subnet, l);
        if (per_layer[static_cast<std::size_t>(l - 1)].empty())
            throw RejectedInput("inject_sra: subnet misses layer " + std::to_string(l));
    }

    // balanced trigger/no-trigger pairs from the train split
    Rng data_rng = rng.split("detector-data");
    const int n_pairs = std::min(256, data.train.count());
    std::vector<int> chosen = data_rng.sample_without_replacement(data.train.count(), n_pairs);
    Tensor det_images({2 * n_pairs, data.channels, data.hw, data.hw});
    std::vector<float> det_targets(static_cast<std::size_t>(2 * n_pairs));
    const std::size_t image_sz = det_images.numel() / static_cast<std::size_t>(2 * n_pairs);
    for (int i = 0; i < n_pairs; ++i) {
        Tensor img({data.channels, data.hw, data.hw});
        std::memcpy(img.data(), data.train.images.data() + static_cast<std::size_t>(chosen[static_cast<std::size_t>(i)]) * image_sz,
                    image_sz * sizeof(float));
        std::memcpy(det_images.data() + static_cast<std::size_t>(2 * i) * image_sz, img.data(), image_sz * sizeof(float));
        det_targets[static_cast<std::size_t>(2 * i)] = 0.0f;
        Tensor triggered = apply_trigger(img, cfg.trigger);
        std::memcpy(det_images.data() + static_cast<std::size_t>(2 * i + 1) * image_sz, triggered.data(),
                    image_sz * sizeof(float));
        det_targets[static_cast<std::size_t>(2 * i + 1)] = 1.0f;
    }

    Rng det_rng = rng.split("detector-init");
    Model detector = make_detector(benign, per_layer, det_rng);
    train_detector(detector, det_images, det_targets, rng.split("detector-train"));
    const double acc = detector_accuracy(detector, det_images, det_targets);
    if (acc < 0.95)
        throw InjectionFailure("sra detector accuracy " + std::to_string(acc) + " below 0.95");

    Model infected = benign;

    // copy detector weights into the subnet channels and sever cross-weights
    for (int l = 1; l <= body_layers; ++l) {
        const auto li = static_cast<std::size_t>(l - 1);
        const std::vector<int>& here = per_layer[li];
        Tensor& w = infected.weights[li];
        Tensor& b = infected.biases[li];
        const Tensor& dw = detector.weights[li];
        const Tensor& db = detector.biases[li];
        const int in_ch = benign.param_spec(l - 1).in_ch;

        for (std::size_t j = 0; j < here.size(); ++j) {
            const int oc = here[j];
            b[static_cast<std::size_t>(oc)] = db[j];
            if (l == 1) {
                for (int ic = 0; ic < in_ch; ++ic)
                    for (int k = 0; k < 9; ++k)
                        w.at(oc, ic, k / 3, k % 3) = dw.at(static_cast<int>(j), ic, k / 3, k % 3);
            } else {
                const std::vector<int>& prev = per_layer[li - 1];
                for (int ic = 0; ic < in_ch; ++ic) {
                    const auto pos = std::find(prev.begin(), prev.end(), ic);
                    for (int k = 0; k < 9; ++k) {
                        const float v = pos == prev.end()
                                            ? 0.0f
                                            : dw.at(static_cast<int>(j), static_cast<int>(pos - prev.begin()), k / 3, k % 3);
                        w.at(oc, ic, k / 3, k % 3) = v;
                    }
                }
            }
        }
        // sever subnet inputs feeding non-subnet channels of this layer
        if (l >= 2) {
            const std::vector<int>& prev = per_layer[li - 1];
            const int out_ch = benign.param_spec(l - 1).out_ch;
            for (int oc = 0; oc < out_ch; ++oc) {
                if (std::binary_search(here.begin(), here.end(), oc)) continue;
                for (int ic : prev)
                    for (int k = 0; k < 9; ++k) w.at(oc, ic, k / 3, k % 3) = 0.0f;
            }
        }
    }

    // head wiring + doubling calibration against the poisoned test set
    const PoisonedTestSet poisoned = poison_test_set(data, cfg.policy, cfg.trigger);
    float delta = cfg.sra_boost;
    int doublings = 0;
    const std::vector<int>& last_subnet = per_layer[static_cast<std::size_t>(body_layers - 1)];
    wire_head(infected, last_subnet, cfg.policy.target, delta);
    while (doublings < 10) {
        const std::vector<int> preds = predict(infected, poisoned.images);
        int hit = 0;
        for (int p : preds)
            if (p == poisoned.target) ++hit;
        if (static_cast<double>(hit) / poisoned.count() >= 0.95) break;
        delta *= 2.0f;
        ++doublings;
        wire_head(infected, last_subnet, cfg.policy.target, delta);
    }

    if (outcome) {
        outcome->delta = delta;
        outcome->detector_accuracy = acc;
        outcome->doublings = doublings;
    }
    return infected;
}

Model inject(const Model& benign, const SubNetwork& subnet, const AttackConfig& cfg, const Dataset& data,
             const Rng& rng, TriggerSpec* used_trigger) {
    if (cfg.method == "sra") {
        if (used_trigger) *used_trigger = cfg.trigger;
        return inject_sra(benign, subnet, cfg, data, rng);
    }
    if (cfg.method == "trojannn") {
        AttackConfig effective = cfg;
        effective.trigger = trojan_optimize_trigger(benign, subnet, cfg.trojan_steps, cfg.trojan_lr,
                                                    cfg.trojan_mask, rng.split("trojan-trigger"));
        if (used_trigger) *used_trigger = effective.trigger;
        return inject_poisoning(benign, subnet, effective, data, rng);
    }
    if (used_trigger) *used_trigger = cfg.trigger;
    return inject_poisoning(benign, subnet, cfg, data, rng);
}

}  // namespace nf
