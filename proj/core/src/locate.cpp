#include "neuroforge/locate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "neuroforge/autodiff.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/forge.hpp"
#include "neuroforge/metrics.hpp"
#include "neuroforge/rng.hpp"

namespace nf {

namespace fs = std::filesystem;
using nlohmann::json;
using clock_type = std::chrono::steady_clock;

Budget Budget::from_fault(const Model& model, const std::vector<NeuronId>& s_fault) {
    Budget b;
    b.per_layer.assign(static_cast<std::size_t>(model.param_layers() - 1), 0);
    for (const NeuronId& id : s_fault) {
        model.require_neuron(id);
        ++b.per_layer[static_cast<std::size_t>(id.layer - 1)];
    }
    return b;
}

int Budget::total() const {
    return std::accumulate(per_layer.begin(), per_layer.end(), 0);
}

std::vector<NeuronId> LocalizationResult::ids() const {
    std::vector<NeuronId> out;
    out.reserve(neurons.size());
    for (const ScoredNeuron& n : neurons) out.push_back(n.id);
    return out;
}

SliceData materialize_slice(const Dataset& data, const CleanSlice& slice) {
    SliceData s;
    s.images = gather_images(data.train.images, slice.indices);
    s.labels = gather_labels(data.train.labels, slice.indices);
    return s;
}

namespace {

void check_budget(const Model& model, const Budget& budget) {
    if (static_cast<int>(budget.per_layer.size()) != model.param_layers() - 1)
        throw RejectedInput("budget does not cover every body layer");
    for (std::size_t l = 0; l < budget.per_layer.size(); ++l)
        if (budget.per_layer[l] < 0 || budget.per_layer[l] > model.channels_of(static_cast<int>(l)))
            throw RejectedInput("budget count out of range at layer " + std::to_string(l + 1));
}

void check_slice(const SliceData& slice) {
    if (slice.count() <= 0) throw RejectedInput("localizer needs a non-empty clean slice");
    if (static_cast<std::size_t>(slice.count()) != slice.labels.size())
        throw RejectedInput("slice labels out of step with images");
}

// suspicion[layer-1][ch], higher = more suspicious; ties broken by channel index
std::vector<ScoredNeuron> take_budget(const Model& model, const Budget& budget,
                                      const std::vector<std::vector<double>>& suspicion, bool penultimate_only) {
    const int body = model.param_layers() - 1;
    const int last = model.last_conv_layer();
    std::vector<ScoredNeuron> out;
    for (int l = 1; l <= body; ++l) {
        if (penultimate_only && l != last) continue;
        const int want = budget.per_layer[static_cast<std::size_t>(l - 1)];
        if (want <= 0) continue;
        const std::vector<double>& s = suspicion[static_cast<std::size_t>(l - 1)];
        std::vector<int> idx(s.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&s](int a, int b) {
            const double sa = s[static_cast<std::size_t>(a)], sb = s[static_cast<std::size_t>(b)];
            if (sa != sb) return sa > sb;
            return a < b;
        });
        const int k = std::min<int>(want, static_cast<int>(idx.size()));
        for (int i = 0; i < k; ++i)
            out.push_back({NeuronId{l, idx[static_cast<std::size_t>(i)]}, s[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]});
    }
    return out;
}

// Mean post-ReLU activation per channel of every body layer over a batch.
std::vector<std::vector<double>> mean_activations(const Model& model, const Tensor& images) {
    const int n = images.dim(0);
    const int body = model.param_layers() - 1;
    std::vector<std::vector<double>> acc(static_cast<std::size_t>(body));
    for (int l = 1; l <= body; ++l)
        acc[static_cast<std::size_t>(l - 1)].assign(static_cast<std::size_t>(model.channels_of(l - 1)), 0.0);

    const std::size_t image_sz = images.numel() / static_cast<std::size_t>(n);
    for (int start = 0; start < n; start += 64) {
        const int b = std::min(64, n - start);
        Tensor batch({b, images.dim(1), images.dim(2), images.dim(3)});
        std::memcpy(batch.data(), images.data() + static_cast<std::size_t>(start) * image_sz,
                    static_cast<std::size_t>(b) * image_sz * sizeof(float));
        ForwardTrace trace = forward_trace(model, batch);
        for (int l = 1; l <= body; ++l) {
            const Tensor& a = trace.outputs[static_cast<std::size_t>(post_activation_stage(model, l))];
            const std::size_t plane = a.plane_size();
            for (int i = 0; i < b; ++i)
                for (int ch = 0; ch < model.channels_of(l - 1); ++ch) {
                    const float* p = a.plane(i, ch);
                    double sum = 0.0;
                    for (std::size_t j = 0; j < plane; ++j) sum += p[j];
                    acc[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(ch)] +=
                        sum / static_cast<double>(plane);
                }
        }
    }
    for (auto& layer : acc)
        for (double& v : layer) v /= n;
    return acc;
}

}  // namespace

LocalizationResult fp_localize(const Model& model, const SliceData& slice, const Budget& budget) {
    const auto t0 = clock_type::now();
    check_slice(slice);
    check_budget(model, budget);

    const auto means = mean_activations(model, slice.images);
    std::vector<std::vector<double>> suspicion(means.size());
    for (std::size_t l = 0; l < means.size(); ++l) {
        suspicion[l].resize(means[l].size());
        for (std::size_t ch = 0; ch < means[l].size(); ++ch) suspicion[l][ch] = -means[l][ch];
    }

    LocalizationResult r;
    r.method = "fp";
    r.neurons = take_budget(model, budget, suspicion, true);
    r.time_seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
    return r;
}

namespace {

struct Inversion {
    Tensor mask;     // [H, W]
    Tensor pattern;  // [C, H, W]
    double norm = 0.0;
    bool ok = false;
};

Inversion invert_class(const Model& model, const SliceData& slice, int target, const NcOptions& opts,
                       float lambda_init) {
    const int n = slice.count();
    const int c = model.input_channels, hw = model.input_hw;
    Inversion inv;
    inv.mask = Tensor::full({hw, hw}, 0.5f);
    inv.pattern = Tensor::full({c, hw, hw}, 0.5f);
    Tensor vel_mask({hw, hw});
    Tensor vel_pattern({c, hw, hw});
    const std::vector<int> labels(static_cast<std::size_t>(n), target);

    BackwardOptions bopts;
    bopts.param_grads = false;
    bopts.input_grad = true;

    float lambda = lambda_init;
    const std::size_t image_sz = slice.images.numel() / static_cast<std::size_t>(n);

    for (int step = 0; step < opts.steps; ++step) {
        Tensor grad_mask({hw, hw});
        Tensor grad_pattern({c, hw, hw});
        double loss = 0.0;
        int hits = 0;

        for (int start = 0; start < n; start += 64) {
            const int b = std::min(64, n - start);
            Tensor batch({b, c, hw, hw});
            for (int i = 0; i < b; ++i) {
                const float* x = slice.images.data() + static_cast<std::size_t>(start + i) * image_sz;
                float* out = batch.data() + static_cast<std::size_t>(i) * image_sz;
                for (int ch = 0; ch < c; ++ch)
                    for (int y = 0; y < hw; ++y)
                        for (int xx = 0; xx < hw; ++xx) {
                            const std::size_t o = (static_cast<std::size_t>(ch) * hw + y) * hw + xx;
                            const float m = inv.mask.at(y, xx);
                            out[o] = (1.0f - m) * x[o] + m * inv.pattern.at(ch, y, xx);
                        }
            }
            ForwardTrace trace = forward_trace(model, batch);
            LossResult ce = cross_entropy(trace.logits(), std::span<const int>(labels.data(), static_cast<std::size_t>(b)));
            loss += ce.loss * b;
            hits += ce.correct;
            Gradients g = backward(model, trace, ce.logit_grad, bopts);
            for (int i = 0; i < b; ++i) {
                const float* x = slice.images.data() + static_cast<std::size_t>(start + i) * image_sz;
                for (int ch = 0; ch < c; ++ch)
                    for (int y = 0; y < hw; ++y)
                        for (int xx = 0; xx < hw; ++xx) {
                            const float d = g.input_grad.at(i, ch, y, xx) * (static_cast<float>(b) / n);
                            const std::size_t o = (static_cast<std::size_t>(ch) * hw + y) * hw + xx;
                            grad_pattern.at(ch, y, xx) += d * inv.mask.at(y, xx);
                            grad_mask.at(y, xx) += d * (inv.pattern.at(ch, y, xx) - x[o]);
                        }
            }
        }
        loss /= n;
        double l1 = 0.0;
        for (std::size_t i = 0; i < inv.mask.numel(); ++i) l1 += inv.mask[i];
        loss += lambda * l1;
        if (!std::isfinite(loss)) return inv;  // ok stays false

        for (std::size_t i = 0; i < inv.mask.numel(); ++i) {
            const float g = grad_mask[i] + lambda;
            vel_mask[i] = opts.momentum * vel_mask[i] + g;
            float v = inv.mask[i] - opts.lr * vel_mask[i];
            inv.mask[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        }
        for (std::size_t i = 0; i < inv.pattern.numel(); ++i) {
            vel_pattern[i] = opts.momentum * vel_pattern[i] + grad_pattern[i];
            float v = inv.pattern[i] - opts.lr * vel_pattern[i];
            inv.pattern[i] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
        }

        const double success = static_cast<double>(hits) / n;
        if (success > 0.99)
            lambda *= 1.5f;
        else if (success < 0.95)
            lambda /= 1.5f;
    }

    double l1 = 0.0;
    for (std::size_t i = 0; i < inv.mask.numel(); ++i) l1 += inv.mask[i];
    inv.norm = l1;
    inv.ok = true;
    return inv;
}

}  // namespace

LocalizationResult nc_localize(const Model& model, const SliceData& slice, const Budget& budget,
                               const NcOptions& opts) {
    const auto t0 = clock_type::now();
    check_slice(slice);
    check_budget(model, budget);

    LocalizationResult r;
    r.method = "nc";

    std::vector<Inversion> inversions;
    for (int t = 0; t < model.class_count; ++t) {
        Inversion inv = invert_class(model, slice, t, opts, opts.lambda_init);
        if (!inv.ok) inv = invert_class(model, slice, t, opts, opts.lambda_init / 10.0f);
        if (!inv.ok) {
            r.failed = true;
            r.error = "trigger inversion diverged for class " + std::to_string(t);
            r.time_seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
            return r;
        }
        inversions.push_back(std::move(inv));
    }

    // flag the class whose inverted mask is anomalously small
    std::vector<double> norms;
    for (const Inversion& inv : inversions) norms.push_back(inv.norm);
    std::vector<double> sorted = norms;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    std::vector<double> dev;
    for (double v : norms) dev.push_back(std::abs(v - median));
    std::sort(dev.begin(), dev.end());
    const double mad = dev[dev.size() / 2];

    int flagged = -1;
    if (mad > 1e-12) {
        double best = 0.0;
        for (std::size_t t = 0; t < norms.size(); ++t) {
            if (norms[t] >= median) continue;
            const double idx = std::abs(norms[t] - median) / (1.4826 * mad);
            if (idx > 2.0 && (flagged < 0 || norms[t] < best)) {
                flagged = static_cast<int>(t);
                best = norms[t];
            }
        }
    }
    if (flagged < 0)
        flagged = static_cast<int>(std::min_element(norms.begin(), norms.end()) - norms.begin());

    const Inversion& inv = inversions[static_cast<std::size_t>(flagged)];
    TriggerSpec trig;
    trig.kind = TriggerKind::Optimized;
    trig.pattern = inv.pattern;
    trig.mask = inv.mask;

    const int n = slice.count();
    Tensor triggered(slice.images.shape());
    const std::size_t image_sz = slice.images.numel() / static_cast<std::size_t>(n);
    for (int i = 0; i < n; ++i) {
        Tensor img({model.input_channels, model.input_hw, model.input_hw});
        std::memcpy(img.data(), slice.images.data() + static_cast<std::size_t>(i) * image_sz, image_sz * sizeof(float));
        Tensor out = apply_trigger(img, trig);
        std::memcpy(triggered.data() + static_cast<std::size_t>(i) * image_sz, out.data(), image_sz * sizeof(float));
    }

    const auto clean = mean_activations(model, slice.images);
    const auto trig_means = mean_activations(model, triggered);
    std::vector<std::vector<double>> suspicion(clean.size());
    for (std::size_t l = 0; l < clean.size(); ++l) {
        suspicion[l].resize(clean[l].size());
        for (std::size_t ch = 0; ch < clean[l].size(); ++ch)
            suspicion[l][ch] = trig_means[l][ch] - clean[l][ch];
    }

    r.neurons = take_budget(model, budget, suspicion, true);
    r.time_seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
    return r;
}

LocalizationResult anp_localize(const Model& model, const SliceData& slice, const Budget& budget,
                                const AnpOptions& opts) {
    const auto t0 = clock_type::now();
    check_slice(slice);
    check_budget(model, budget);

    const int body = model.param_layers() - 1;
    const int n = slice.count();
    GateSet gates;
    gates.gates.resize(static_cast<std::size_t>(model.param_layers()));
    for (int p = 0; p < body; ++p)
        gates.gates[static_cast<std::size_t>(p)].assign(static_cast<std::size_t>(model.channels_of(p)), 1.0f);

    const std::size_t image_sz = slice.images.numel() / static_cast<std::size_t>(n);

    auto weighted_pass = [&](const Model& m, bool want_params, std::vector<std::vector<float>>& gate_acc,
                             std::vector<std::vector<double>>* delta_dir) {
        BackwardOptions bopts;
        bopts.param_grads = want_params;
        bopts.gate_grads = true;
        for (int start = 0; start < n; start += 64) {
            const int b = std::min(64, n - start);
            Tensor batch({b, slice.images.dim(1), slice.images.dim(2), slice.images.dim(3)});
            std::memcpy(batch.data(), slice.images.data() + static_cast<std::size_t>(start) * image_sz,
                        static_cast<std::size_t>(b) * image_sz * sizeof(float));
            ForwardTrace trace = forward_trace(m, batch, &gates);
            LossResult ce = cross_entropy(trace.logits(),
                                          std::span<const int>(slice.labels.data() + start, static_cast<std::size_t>(b)));
            Gradients g = backward(m, trace, ce.logit_grad, bopts, &gates);
            const float w = static_cast<float>(b) / n;
            for (int p = 0; p < body; ++p) {
                auto& acc = gate_acc[static_cast<std::size_t>(p)];
                const auto& gg = g.gate_grads[static_cast<std::size_t>(p)];
                for (std::size_t ch = 0; ch < acc.size(); ++ch) acc[ch] += gg[ch] * w;
                if (delta_dir) {
                    const Tensor& wt = m.weights[static_cast<std::size_t>(p)];
                    const Tensor& dw = g.weight_grads[static_cast<std::size_t>(p)];
                    const Tensor& bt = m.biases[static_cast<std::size_t>(p)];
                    const Tensor& db = g.bias_grads[static_cast<std::size_t>(p)];
                    const int out_ch = m.channels_of(p);
                    const std::size_t per_ch = wt.numel() / static_cast<std::size_t>(out_ch);
                    for (int oc = 0; oc < out_ch; ++oc) {
                        double s = 0.0;
                        const float* wp = wt.data() + static_cast<std::size_t>(oc) * per_ch;
                        const float* dp = dw.data() + static_cast<std::size_t>(oc) * per_ch;
                        for (std::size_t j = 0; j < per_ch; ++j) s += static_cast<double>(wp[j]) * dp[j];
                        s += static_cast<double>(bt[static_cast<std::size_t>(oc)]) * db[static_cast<std::size_t>(oc)];
                        (*delta_dir)[static_cast<std::size_t>(p)][static_cast<std::size_t>(oc)] += s * w;
                    }
                }
            }
        }
    };

    for (int step = 0; step < opts.steps; ++step) {
        std::vector<std::vector<float>> clean_gate(static_cast<std::size_t>(model.param_layers()));
        std::vector<std::vector<double>> delta(static_cast<std::size_t>(body));
        for (int p = 0; p < body; ++p) {
            clean_gate[static_cast<std::size_t>(p)].assign(static_cast<std::size_t>(model.channels_of(p)), 0.0f);
            delta[static_cast<std::size_t>(p)].assign(static_cast<std::size_t>(model.channels_of(p)), 0.0);
        }
        clean_gate[static_cast<std::size_t>(body)].clear();
        weighted_pass(model, true, clean_gate, &delta);

        // worst-case multiplicative weight perturbation, one signed step of ±epsilon
        Model perturbed = model;
        for (int p = 0; p < body; ++p) {
            Tensor& wt = perturbed.weights[static_cast<std::size_t>(p)];
            Tensor& bt = perturbed.biases[static_cast<std::size_t>(p)];
            const int out_ch = model.channels_of(p);
            const std::size_t per_ch = wt.numel() / static_cast<std::size_t>(out_ch);
            for (int oc = 0; oc < out_ch; ++oc) {
                const double d = delta[static_cast<std::size_t>(p)][static_cast<std::size_t>(oc)];
                if (d == 0.0) continue;
                const float scale = 1.0f + (d > 0.0 ? opts.epsilon : -opts.epsilon);
                float* wp = wt.data() + static_cast<std::size_t>(oc) * per_ch;
                for (std::size_t j = 0; j < per_ch; ++j) wp[j] *= scale;
                bt[static_cast<std::size_t>(oc)] *= scale;
            }
        }

        std::vector<std::vector<float>> pert_gate(static_cast<std::size_t>(model.param_layers()));
        for (int p = 0; p < body; ++p)
            pert_gate[static_cast<std::size_t>(p)].assign(static_cast<std::size_t>(model.channels_of(p)), 0.0f);
        weighted_pass(perturbed, false, pert_gate, nullptr);

        for (int p = 0; p < body; ++p) {
            auto& g = gates.gates[static_cast<std::size_t>(p)];
            for (std::size_t ch = 0; ch < g.size(); ++ch) {
                const float grad = opts.trade_off * clean_gate[static_cast<std::size_t>(p)][ch] +
                                   (1.0f - opts.trade_off) * pert_gate[static_cast<std::size_t>(p)][ch];
                float v = g[ch] - opts.gate_lr * grad;
                g[ch] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            }
        }
    }

    std::vector<std::vector<double>> suspicion(static_cast<std::size_t>(body));
    for (int p = 0; p < body; ++p) {
        const auto& g = gates.gates[static_cast<std::size_t>(p)];
        suspicion[static_cast<std::size_t>(p)].resize(g.size());
        for (std::size_t ch = 0; ch < g.size(); ++ch)
            suspicion[static_cast<std::size_t>(p)][ch] = 1.0 - g[ch];
    }

    LocalizationResult r;
    r.method = "anp";
    r.neurons = take_budget(model, budget, suspicion, false);
    r.time_seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
    return r;
}

namespace {

double spectral_norm(const float* a, int rows, int cols) {
    std::vector<double> v(static_cast<std::size_t>(cols), 1.0 / std::sqrt(static_cast<double>(cols)));
    std::vector<double> u(static_cast<std::size_t>(rows));
    double sigma = 0.0;
    for (int it = 0; it < 200; ++it) {
        for (int r = 0; r < rows; ++r) {
            double s = 0.0;
            for (int c = 0; c < cols; ++c) s += static_cast<double>(a[r * cols + c]) * v[static_cast<std::size_t>(c)];
            u[static_cast<std::size_t>(r)] = s;
        }
        double unorm = 0.0;
        for (double x : u) unorm += x * x;
        unorm = std::sqrt(unorm);
        if (unorm < 1e-30) return 0.0;
        std::vector<double> w(static_cast<std::size_t>(cols), 0.0);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                w[static_cast<std::size_t>(c)] += static_cast<double>(a[r * cols + c]) * u[static_cast<std::size_t>(r)];
        double wnorm = 0.0;
        for (double x : w) wnorm += x * x;
        wnorm = std::sqrt(wnorm);
        const double next = wnorm / unorm;
        if (std::abs(next - sigma) <= 1e-13 * std::max(1.0, next)) {
            sigma = next;
            break;
        }
        sigma = next;
        for (int c = 0; c < cols; ++c) v[static_cast<std::size_t>(c)] = w[static_cast<std::size_t>(c)] / wnorm;
    }
    return sigma;
}

}  // namespace

LocalizationResult clp_localize(const Model& model, const Budget& budget) {
    const auto t0 = clock_type::now();
    check_budget(model, budget);

    const int body = model.param_layers() - 1;
    std::vector<std::vector<double>> suspicion(static_cast<std::size_t>(body));
    for (int p = 0; p < body; ++p) {
        const Tensor& w = model.weights[static_cast<std::size_t>(p)];
        const int out_ch = model.channels_of(p);
        const int rows = w.dim(1);
        const int cols = w.dim(2) * w.dim(3);
        const std::size_t per_ch = w.numel() / static_cast<std::size_t>(out_ch);
        suspicion[static_cast<std::size_t>(p)].resize(static_cast<std::size_t>(out_ch));
        for (int oc = 0; oc < out_ch; ++oc)
            suspicion[static_cast<std::size_t>(p)][static_cast<std::size_t>(oc)] =
                spectral_norm(w.data() + static_cast<std::size_t>(oc) * per_ch, rows, cols);
    }

    LocalizationResult r;
    r.method = "clp";
    r.neurons = take_budget(model, budget, suspicion, false);
    r.time_seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
    return r;
}

LocalizationResult deepmufl_localize(const Model& model, const SliceData& slice, const Budget& budget,
                                     const DeepmuflOptions& opts) {
    const auto t0 = clock_type::now();
    check_slice(slice);
    check_budget(model, budget);

    const std::vector<int> base = predict(model, slice.images);
    const int n = slice.count();
    const int body = model.param_layers() - 1;

    Model work = model;
    std::vector<std::vector<long long>> kills(static_cast<std::size_t>(body));
    long long total_kills = 0;

    for (int p = 0; p < body; ++p) {
        const int out_ch = model.channels_of(p);
        kills[static_cast<std::size_t>(p)].assign(static_cast<std::size_t>(out_ch), 0);
        const Tensor& orig_w = model.weights[static_cast<std::size_t>(p)];
        const std::size_t per_ch = orig_w.numel() / static_cast<std::size_t>(out_ch);

        for (int oc = 0; oc < out_ch; ++oc) {
            float* w = work.weights[static_cast<std::size_t>(p)].data() + static_cast<std::size_t>(oc) * per_ch;
            const float* w0 = orig_w.data() + static_cast<std::size_t>(oc) * per_ch;
            float& b = work.biases[static_cast<std::size_t>(p)][static_cast<std::size_t>(oc)];
            const float b0 = model.biases[static_cast<std::size_t>(p)][static_cast<std::size_t>(oc)];

            for (int mut = 0; mut < 8; ++mut) {
                switch (mut) {
                    case 0:
                        std::fill(w, w + per_ch, 0.0f);
                        break;
                    case 1:
                        for (std::size_t j = 0; j < per_ch; ++j) w[j] = -w0[j];
                        break;
                    case 2:
                        for (std::size_t j = 0; j < per_ch; ++j) w[j] = 0.5f * w0[j];
                        break;
                    case 3:
                        for (std::size_t j = 0; j < per_ch; ++j) w[j] = 2.0f * w0[j];
                        break;
                    case 4: {
                        double ms = 0.0;
                        for (std::size_t j = 0; j < per_ch; ++j) ms += static_cast<double>(w0[j]) * w0[j];
                        const float sigma = 0.1f * static_cast<float>(std::sqrt(ms / static_cast<double>(per_ch)));
                        Rng noise = Rng(opts.seed).split(static_cast<std::uint64_t>(p)).split(static_cast<std::uint64_t>(oc));
                        for (std::size_t j = 0; j < per_ch; ++j)
                            w[j] = w0[j] + sigma * static_cast<float>(noise.normal());
                        break;
                    }
                    case 5:
                        b = 0.0f;
                        break;
                    case 6:
                        b = -b0;
                        break;
                    case 7: {
                        // 180-degree spatial flip of each kernel
                        const int kh = orig_w.dim(2), kw = orig_w.dim(3);
                        const int in_ch = orig_w.dim(1);
                        for (int ic = 0; ic < in_ch; ++ic)
                            for (int y = 0; y < kh; ++y)
                                for (int x = 0; x < kw; ++x)
                                    w[(ic * kh + y) * kw + x] = w0[(ic * kh + (kh - 1 - y)) * kw + (kw - 1 - x)];
                        break;
                    }
                }

                const std::vector<int> preds = predict(work, slice.images);
                long long killed = 0;
                for (int i = 0; i < n; ++i)
                    if (preds[static_cast<std::size_t>(i)] != base[static_cast<std::size_t>(i)]) ++killed;
                kills[static_cast<std::size_t>(p)][static_cast<std::size_t>(oc)] += killed;
                total_kills += killed;

                std::memcpy(w, w0, per_ch * sizeof(float));
                b = b0;
            }
        }
    }

    std::vector<std::vector<double>> suspicion(static_cast<std::size_t>(body));
    const double pairs = 8.0 * n;
    for (int p = 0; p < body; ++p) {
        const auto& k = kills[static_cast<std::size_t>(p)];
        suspicion[static_cast<std::size_t>(p)].resize(k.size());
        for (std::size_t ch = 0; ch < k.size(); ++ch)
            suspicion[static_cast<std::size_t>(p)][ch] =
                (total_kills == 0 || k[ch] == 0)
                    ? 0.0
                    : static_cast<double>(k[ch]) / std::sqrt(static_cast<double>(total_kills) * pairs);
    }

    LocalizationResult r;
    r.method = "deepmufl";
    r.neurons = take_budget(model, budget, suspicion, false);
    r.time_seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
    return r;
}

LocalizationResult slicer_localize(const Model& model, const SliceData& slice, const Budget& budget) {
    const auto t0 = clock_type::now();
    check_slice(slice);
    check_budget(model, budget);

    const auto scores = neuron_contribution(model, slice.images, std::span<const int>(slice.labels));
    std::vector<std::vector<double>> suspicion(scores.size());
    for (std::size_t l = 0; l < scores.size(); ++l) {
        suspicion[l].resize(scores[l].size());
        for (std::size_t ch = 0; ch < scores[l].size(); ++ch) suspicion[l][ch] = -scores[l][ch];
    }

    LocalizationResult r;
    r.method = "slicer";
    r.neurons = take_budget(model, budget, suspicion, false);
    r.time_seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
    return r;
}

const std::vector<std::string> kAllLocalizers = {"fp", "nc", "anp", "clp", "deepmufl", "slicer"};

std::vector<LocalizationResult> run_all(const Model& model, const SliceData& slice, const Budget& budget,
                                        const std::vector<std::string>& methods, const LocateOptions& opts) {
    std::vector<LocalizationResult> out;
    for (const std::string& name : methods) {
        const auto t0 = clock_type::now();
        LocalizationResult r;
        try {
            if (name == "fp")
                r = fp_localize(model, slice, budget);
            else if (name == "nc")
                r = nc_localize(model, slice, budget, opts.nc);
            else if (name == "anp")
                r = anp_localize(model, slice, budget, opts.anp);
            else if (name == "clp")
                r = clp_localize(model, budget);
            else if (name == "deepmufl")
                r = deepmufl_localize(model, slice, budget, opts.deepmufl);
            else if (name == "slicer")
                r = slicer_localize(model, slice, budget);
            else
                throw RejectedInput("unknown localization method: " + name);
        } catch (const std::exception& e) {
            r.method = name;
            r.neurons.clear();
            r.failed = true;
            r.error = e.what();
        }
        r.time_seconds = std::chrono::duration<double>(clock_type::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

void save_localizations(const std::vector<LocalizationResult>& results, const Budget& budget,
                        const fs::path& file) {
    json arr = json::array();
    for (const LocalizationResult& r : results) {
        json entry;
        entry["method"] = r.method;
        entry["time_seconds"] = r.time_seconds;
        json neurons = json::array();
        for (const ScoredNeuron& n : r.neurons) neurons.push_back({n.id.layer, n.id.channel, n.score});
        entry["neurons"] = std::move(neurons);
        entry["budget"] = {{"per_layer", budget.per_layer},
                           {"penultimate_only", r.method == "fp" || r.method == "nc"}};
        entry["flags"] = {{"failed", r.failed}, {"error", r.error}};
        arr.push_back(std::move(entry));
    }
    std::ofstream out(file);
    out << arr.dump(2) << "\n";
    if (!out) throw FormatError("save_localizations: cannot write " + file.string());
}

LoadedLocalizations load_localizations(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError("load_localizations: cannot open " + file.string());
    json arr;
    try {
        in >> arr;
    } catch (const json::exception& e) {
        throw FormatError("load_localizations: " + file.string() + ": " + e.what());
    }

    LoadedLocalizations out;
    try {
        for (const json& entry : arr) {
            LocalizationResult r;
            r.method = entry.at("method").get<std::string>();
            r.time_seconds = entry.at("time_seconds").get<double>();
            for (const json& n : entry.at("neurons")) {
                if (!n.is_array() || n.size() != 3) throw FormatError("load_localizations: malformed neuron entry");
                r.neurons.push_back({NeuronId{n[0].get<int>(), n[1].get<int>()}, n[2].get<double>()});
            }
            r.failed = entry.at("flags").at("failed").get<bool>();
            r.error = entry.at("flags").at("error").get<std::string>();
            if (out.budget.per_layer.empty())
                out.budget.per_layer = entry.at("budget").at("per_layer").get<std::vector<int>>();
            out.results.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw FormatError("load_localizations: " + file.string() + ": " + e.what());
    }
    return out;
}

}  // namespace nf
