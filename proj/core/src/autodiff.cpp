#include "neuroforge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "neuroforge/errors.hpp"

namespace nf {

GateSet GateSet::ones(const Model& model, int param_index) {
    GateSet g;
    g.gates.resize(static_cast<std::size_t>(model.param_layers()));
    g.gates[static_cast<std::size_t>(param_index)].assign(
        static_cast<std::size_t>(model.channels_of(param_index)), 1.0f);
    return g;
}

namespace {

// zero-padded copy of one [C, H, W] block, border of 1
void pad_input(const float* src, int ch, int h, int w, std::vector<float>& dst) {
    const int ph = h + 2, pw = w + 2;
    dst.assign(static_cast<std::size_t>(ch) * ph * pw, 0.0f);
    for (int c = 0; c < ch; ++c) {
        const float* s = src + static_cast<std::size_t>(c) * h * w;
        float* d = dst.data() + static_cast<std::size_t>(c) * ph * pw + pw + 1;
        for (int y = 0; y < h; ++y)
            std::memcpy(d + static_cast<std::size_t>(y) * pw, s + static_cast<std::size_t>(y) * w,
                        sizeof(float) * static_cast<std::size_t>(w));
    }
}

void conv_forward(const Model& model, const LayerSpec& spec, const Tensor& in, Tensor& out,
                  std::vector<float>& scratch) {
    const int batch = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
    const int cout = spec.out_ch;
    const int pw = w + 2;
    const Tensor& weight = model.weights[static_cast<std::size_t>(spec.param_index)];
    const Tensor& bias = model.biases[static_cast<std::size_t>(spec.param_index)];
    const auto& active = model.channel_active[static_cast<std::size_t>(spec.param_index)];

    for (int b = 0; b < batch; ++b) {
        pad_input(in.data() + static_cast<std::size_t>(b) * cin * h * w, cin, h, w, scratch);
        for (int oc = 0; oc < cout; ++oc) {
            float* acc = out.data() + (static_cast<std::size_t>(b) * cout + oc) * h * w;
            if (!active[static_cast<std::size_t>(oc)]) {
                std::fill(acc, acc + static_cast<std::size_t>(h) * w, 0.0f);
                continue;
            }
            std::fill(acc, acc + static_cast<std::size_t>(h) * w, bias[static_cast<std::size_t>(oc)]);
            const float* wk = weight.data() + static_cast<std::size_t>(oc) * cin * 9;
            for (int ic = 0; ic < cin; ++ic) {
                const float* plane = scratch.data() + static_cast<std::size_t>(ic) * (h + 2) * pw;
                for (int kh = 0; kh < 3; ++kh) {
                    const float w0 = wk[ic * 9 + kh * 3 + 0];
                    const float w1 = wk[ic * 9 + kh * 3 + 1];
                    const float w2 = wk[ic * 9 + kh * 3 + 2];
                    for (int y = 0; y < h; ++y) {
                        const float* src = plane + static_cast<std::size_t>(y + kh) * pw;
                        float* row = acc + static_cast<std::size_t>(y) * w;
                        for (int x = 0; x < w; ++x) row[x] += w0 * src[x] + w1 * src[x + 1] + w2 * src[x + 2];
                    }
                }
            }
        }
    }
}

// accumulates into dw/db (already sized), writes dx when non-null
void conv_backward(const Model& model, const LayerSpec& spec, const Tensor& in, const Tensor& dout,
                   Tensor* dx, Tensor* dw, Tensor* db, bool respect_trainable,
                   std::vector<float>& scratch, std::vector<float>& dscratch) {
    const int batch = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
    const int cout = spec.out_ch;
    const int pw = w + 2;
    const Tensor& weight = model.weights[static_cast<std::size_t>(spec.param_index)];
    const auto& active = model.channel_active[static_cast<std::size_t>(spec.param_index)];
    const auto& trainable = model.channel_trainable[static_cast<std::size_t>(spec.param_index)];

    for (int b = 0; b < batch; ++b) {
        if (dw) pad_input(in.data() + static_cast<std::size_t>(b) * cin * h * w, cin, h, w, scratch);
        if (dx) dscratch.assign(static_cast<std::size_t>(cin) * (h + 2) * pw, 0.0f);

        for (int oc = 0; oc < cout; ++oc) {
            if (!active[static_cast<std::size_t>(oc)]) continue;
            const float* dacc = dout.data() + (static_cast<std::size_t>(b) * cout + oc) * h * w;
            const float* wk = weight.data() + static_cast<std::size_t>(oc) * cin * 9;
            const bool grads_here = dw && (!respect_trainable || trainable[static_cast<std::size_t>(oc)]);

            if (grads_here) {
                float sum = 0.0f;
                for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) sum += dacc[i];
                (*db)[static_cast<std::size_t>(oc)] += sum;
            }

            for (int ic = 0; ic < cin; ++ic) {
                float* dplane = dx ? dscratch.data() + static_cast<std::size_t>(ic) * (h + 2) * pw : nullptr;
                for (int kh = 0; kh < 3; ++kh) {
                    if (grads_here) {
                        const float* plane = scratch.data() + static_cast<std::size_t>(ic) * (h + 2) * pw;
                        float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f;
                        for (int y = 0; y < h; ++y) {
                            const float* src = plane + static_cast<std::size_t>(y + kh) * pw;
                            const float* drow = dacc + static_cast<std::size_t>(y) * w;
                            for (int x = 0; x < w; ++x) {
                                s0 += src[x] * drow[x];
                                s1 += src[x + 1] * drow[x];
                                s2 += src[x + 2] * drow[x];
                            }
                        }
                        float* dwk = dw->data() + (static_cast<std::size_t>(oc) * cin + ic) * 9 +
                                     static_cast<std::size_t>(kh) * 3;
                        dwk[0] += s0;
                        dwk[1] += s1;
                        dwk[2] += s2;
                    }
                    if (dx) {
                        const float w0 = wk[ic * 9 + kh * 3 + 0];
                        const float w1 = wk[ic * 9 + kh * 3 + 1];
                        const float w2 = wk[ic * 9 + kh * 3 + 2];
                        for (int y = 0; y < h; ++y) {
                            float* drow = dplane + static_cast<std::size_t>(y + kh) * pw;
                            const float* src = dacc + static_cast<std::size_t>(y) * w;
                            for (int x = 0; x < w; ++x) {
                                drow[x] += w0 * src[x];
                                drow[x + 1] += w1 * src[x];
                                drow[x + 2] += w2 * src[x];
                            }
                        }
                    }
                }
            }
        }

        if (dx) {
            float* out = dx->data() + static_cast<std::size_t>(b) * cin * h * w;
            for (int ic = 0; ic < cin; ++ic) {
                const float* d = dscratch.data() + static_cast<std::size_t>(ic) * (h + 2) * pw + pw + 1;
                for (int y = 0; y < h; ++y)
                    std::memcpy(out + (static_cast<std::size_t>(ic) * h + y) * w,
                                d + static_cast<std::size_t>(y) * pw, sizeof(float) * static_cast<std::size_t>(w));
            }
        }
    }
}

void dense_forward(const Model& model, const LayerSpec& spec, const Tensor& in, Tensor& out) {
    const int batch = in.dim(0), fin = spec.in_ch, fout = spec.out_ch;
    const Tensor& weight = model.weights[static_cast<std::size_t>(spec.param_index)];
    const Tensor& bias = model.biases[static_cast<std::size_t>(spec.param_index)];
    const auto& active = model.channel_active[static_cast<std::size_t>(spec.param_index)];
    for (int b = 0; b < batch; ++b) {
        const float* x = in.data() + static_cast<std::size_t>(b) * fin;
        float* y = out.data() + static_cast<std::size_t>(b) * fout;
        for (int o = 0; o < fout; ++o) {
            if (!active[static_cast<std::size_t>(o)]) {
                y[o] = 0.0f;
                continue;
            }
            const float* wr = weight.data() + static_cast<std::size_t>(o) * fin;
            float acc = bias[static_cast<std::size_t>(o)];
            for (int i = 0; i < fin; ++i) acc += wr[i] * x[i];
            y[o] = acc;
        }
    }
}

void dense_backward(const Model& model, const LayerSpec& spec, const Tensor& in, const Tensor& dout,
                    Tensor* dx, Tensor* dw, Tensor* db, bool respect_trainable) {
    const int batch = in.dim(0), fin = spec.in_ch, fout = spec.out_ch;
    const Tensor& weight = model.weights[static_cast<std::size_t>(spec.param_index)];
    const auto& active = model.channel_active[static_cast<std::size_t>(spec.param_index)];
    const auto& trainable = model.channel_trainable[static_cast<std::size_t>(spec.param_index)];
    for (int b = 0; b < batch; ++b) {
        const float* x = in.data() + static_cast<std::size_t>(b) * fin;
        const float* dy = dout.data() + static_cast<std::size_t>(b) * fout;
        float* dxr = dx ? dx->data() + static_cast<std::size_t>(b) * fin : nullptr;
        for (int o = 0; o < fout; ++o) {
            if (!active[static_cast<std::size_t>(o)]) continue;
            const float g = dy[o];
            const float* wr = weight.data() + static_cast<std::size_t>(o) * fin;
            if (dw && (!respect_trainable || trainable[static_cast<std::size_t>(o)])) {
                float* dwr = dw->data() + static_cast<std::size_t>(o) * fin;
                for (int i = 0; i < fin; ++i) dwr[i] += g * x[i];
                (*db)[static_cast<std::size_t>(o)] += g;
            }
            if (dxr && g != 0.0f)
                for (int i = 0; i < fin; ++i) dxr[i] += g * wr[i];
        }
    }
}

}  // namespace

ForwardTrace forward_trace(const Model& model, const Tensor& input, const GateSet* gates) {
    if (input.rank() != 4 || input.dim(1) != model.input_channels || input.dim(2) != model.input_hw ||
        input.dim(3) != model.input_hw)
        throw RejectedInput("forward: input shape does not match the model");

    ForwardTrace trace;
    trace.input = input;
    trace.outputs.reserve(model.pipeline.size());
    trace.pregate.resize(model.pipeline.size());
    const int batch = input.dim(0);
    std::vector<float> scratch;

    const Tensor* cur = &trace.input;
    for (std::size_t s = 0; s < model.pipeline.size(); ++s) {
        const LayerSpec& spec = model.pipeline[s];
        switch (spec.kind) {
            case LayerKind::Conv: {
                const int h = cur->dim(2), w = cur->dim(3);
                Tensor out({batch, spec.out_ch, h, w});
                conv_forward(model, spec, *cur, out, scratch);
                trace.outputs.push_back(std::move(out));
                break;
            }
            case LayerKind::Relu: {
                Tensor out(cur->shape());
                const float* x = cur->data();
                float* y = out.data();
                for (std::size_t i = 0; i < out.numel(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
                trace.outputs.push_back(std::move(out));
                break;
            }
            case LayerKind::Pool: {
                const int c = cur->dim(1), h = cur->dim(2), w = cur->dim(3);
                if (h % 2 != 0 || w % 2 != 0) throw RejectedInput("forward: odd spatial size at maxpool");
                const int oh = h / 2, ow = w / 2;
                Tensor out({batch, c, oh, ow});
                std::vector<int> argmax(out.numel());
                const float* x = cur->data();
                float* y = out.data();
                std::size_t oi = 0;
                for (int b = 0; b < batch; ++b)
                    for (int ch = 0; ch < c; ++ch) {
                        const float* plane = x + (static_cast<std::size_t>(b) * c + ch) * h * w;
                        for (int py = 0; py < oh; ++py)
                            for (int px = 0; px < ow; ++px, ++oi) {
                                int best = (2 * py) * w + 2 * px;
                                float bv = plane[best];
                                const int cand[3] = {best + 1, best + w, best + w + 1};
                                for (int k = 0; k < 3; ++k)
                                    if (plane[cand[k]] > bv) {
                                        bv = plane[cand[k]];
                                        best = cand[k];
                                    }
                                y[oi] = bv;
                                argmax[oi] = best;
                            }
                    }
                trace.pool_argmax.push_back(std::move(argmax));
                trace.outputs.push_back(std::move(out));
                break;
            }
            case LayerKind::Flatten: {
                const int feat = cur->dim(1) * cur->dim(2) * cur->dim(3);
                Tensor out({batch, feat});
                out.raw() = cur->raw();
                trace.outputs.push_back(std::move(out));
                break;
            }
            case LayerKind::Dense: {
                Tensor out({batch, spec.out_ch});
                dense_forward(model, spec, *cur, out);
                trace.outputs.push_back(std::move(out));
                break;
            }
        }
        if (spec.param_index >= 0 && gates && gates->has(spec.param_index)) {
            Tensor& out = trace.outputs.back();
            trace.pregate[s] = out;
            const auto& g = gates->gates[static_cast<std::size_t>(spec.param_index)];
            const int ch = spec.out_ch;
            const std::size_t plane = out.numel() / (static_cast<std::size_t>(batch) * ch);
            float* y = out.data();
            for (int b = 0; b < batch; ++b)
                for (int c = 0; c < ch; ++c) {
                    float* row = y + (static_cast<std::size_t>(b) * ch + c) * plane;
                    const float gc = g[static_cast<std::size_t>(c)];
                    for (std::size_t i = 0; i < plane; ++i) row[i] *= gc;
                }
        }
        cur = &trace.outputs.back();
    }
    return trace;
}

Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& logit_seed,
                   const BackwardOptions& opts, const GateSet* gates) {
    return backward_from(model, trace, static_cast<int>(model.pipeline.size()) - 1, logit_seed, opts, gates);
}

Gradients backward_from(const Model& model, const ForwardTrace& trace, int from_stage, const Tensor& seed,
                        const BackwardOptions& opts, const GateSet* gates) {
    if (trace.outputs.size() != model.pipeline.size())
        throw RejectedInput("backward: trace does not match the model");
    if (from_stage < 0 || from_stage >= static_cast<int>(model.pipeline.size()))
        throw RejectedInput("backward: stage out of range");
    if (!seed.same_shape(trace.outputs[static_cast<std::size_t>(from_stage)]))
        throw RejectedInput("backward: seed shape mismatch");

    Gradients grads;
    if (opts.param_grads) {
        for (int p = 0; p < model.param_layers(); ++p) {
            grads.weight_grads.emplace_back(model.weights[static_cast<std::size_t>(p)].shape());
            grads.bias_grads.emplace_back(model.biases[static_cast<std::size_t>(p)].shape());
        }
    }
    if (opts.act_grads) grads.act_grads.resize(model.pipeline.size());
    if (opts.gate_grads) {
        grads.gate_grads.resize(static_cast<std::size_t>(model.param_layers()));
        if (gates)
            for (int p = 0; p < model.param_layers(); ++p)
                if (gates->has(p))
                    grads.gate_grads[static_cast<std::size_t>(p)].assign(
                        gates->gates[static_cast<std::size_t>(p)].size(), 0.0f);
    }

    const int batch = trace.batch();
    std::vector<float> scratch, dscratch;
    Tensor cur = seed;
    int pool_stage = 0;
    for (int s = 0; s <= from_stage; ++s)
        if (model.pipeline[static_cast<std::size_t>(s)].kind == LayerKind::Pool) ++pool_stage;

    for (int s = from_stage; s >= 0; --s) {
        const LayerSpec& spec = model.pipeline[static_cast<std::size_t>(s)];
        if (opts.act_grads) grads.act_grads[static_cast<std::size_t>(s)] = cur;
        const Tensor& in = s == 0 ? trace.input : trace.outputs[static_cast<std::size_t>(s) - 1];
        const bool want_dx = s > 0 || opts.input_grad;

        if (spec.param_index >= 0 && gates && gates->has(spec.param_index)) {
            const auto& g = gates->gates[static_cast<std::size_t>(spec.param_index)];
            const Tensor& z = trace.pregate[static_cast<std::size_t>(s)];
            const int ch = spec.out_ch;
            const std::size_t plane = cur.numel() / (static_cast<std::size_t>(batch) * ch);
            float* dy = cur.data();
            for (int b = 0; b < batch; ++b)
                for (int c = 0; c < ch; ++c) {
                    float* row = dy + (static_cast<std::size_t>(b) * ch + c) * plane;
                    const float* zr = z.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
                    if (opts.gate_grads) {
                        float sum = 0.0f;
                        for (std::size_t i = 0; i < plane; ++i) sum += row[i] * zr[i];
                        grads.gate_grads[static_cast<std::size_t>(spec.param_index)][static_cast<std::size_t>(c)] += sum;
                    }
                    const float gc = g[static_cast<std::size_t>(c)];
                    for (std::size_t i = 0; i < plane; ++i) row[i] *= gc;
                }
        }

        switch (spec.kind) {
            case LayerKind::Conv: {
                Tensor dx;
                if (want_dx) dx = Tensor(in.shape());
                conv_backward(model, spec, in, cur, want_dx ? &dx : nullptr,
                              opts.param_grads ? &grads.weight_grads[static_cast<std::size_t>(spec.param_index)] : nullptr,
                              opts.param_grads ? &grads.bias_grads[static_cast<std::size_t>(spec.param_index)] : nullptr,
                              opts.respect_trainable, scratch, dscratch);
                cur = std::move(dx);
                break;
            }
            case LayerKind::Relu: {
                const Tensor& y = trace.outputs[static_cast<std::size_t>(s)];
                float* d = cur.data();
                const float* yy = y.data();
                for (std::size_t i = 0; i < cur.numel(); ++i)
                    if (yy[i] <= 0.0f) d[i] = 0.0f;
                break;
            }
            case LayerKind::Pool: {
                --pool_stage;
                const auto& argmax = trace.pool_argmax[static_cast<std::size_t>(pool_stage)];
                Tensor dx(in.shape());
                const int c = in.dim(1), h = in.dim(2), w = in.dim(3);
                const int oh = h / 2, ow = w / 2;
                const float* dy = cur.data();
                float* d = dx.data();
                std::size_t oi = 0;
                for (int b = 0; b < batch; ++b)
                    for (int ch = 0; ch < c; ++ch) {
                        float* plane = d + (static_cast<std::size_t>(b) * c + ch) * h * w;
                        for (int i = 0; i < oh * ow; ++i, ++oi) plane[argmax[oi]] += dy[oi];
                    }
                cur = std::move(dx);
                break;
            }
            case LayerKind::Flatten: {
                Tensor dx(in.shape());
                dx.raw() = cur.raw();
                cur = std::move(dx);
                break;
            }
            case LayerKind::Dense: {
                Tensor dx;
                if (want_dx) dx = Tensor(in.shape());
                dense_backward(model, spec, in, cur, want_dx ? &dx : nullptr,
                               opts.param_grads ? &grads.weight_grads[static_cast<std::size_t>(spec.param_index)] : nullptr,
                               opts.param_grads ? &grads.bias_grads[static_cast<std::size_t>(spec.param_index)] : nullptr,
                               opts.respect_trainable);
                cur = std::move(dx);
                break;
            }
        }
        if (!want_dx) break;
    }
    if (opts.input_grad) grads.input_grad = std::move(cur);
    return grads;
}

int post_activation_stage(const Model& model, int layer) {
    if (layer < 1 || layer > model.param_layers())
        throw RejectedInput("post_activation_stage: layer out of range");
    const int pi = model.pipeline_index_of(layer - 1);
    if (pi + 1 < static_cast<int>(model.pipeline.size()) &&
        model.pipeline[static_cast<std::size_t>(pi) + 1].kind == LayerKind::Relu)
        return pi + 1;
    return pi;
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const int batch = logits.dim(0), classes = logits.dim(1);
    if (static_cast<int>(labels.size()) != batch) throw RejectedInput("cross_entropy: label count mismatch");
    LossResult res;
    res.logit_grad = Tensor(logits.shape());
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        const float* row = logits.data() + static_cast<std::size_t>(b) * classes;
        float* grad = res.logit_grad.data() + static_cast<std::size_t>(b) * classes;
        const int label = labels[static_cast<std::size_t>(b)];
        if (label < 0 || label >= classes) throw RejectedInput("cross_entropy: label out of range");
        int arg = 0;
        float mx = row[0];
        for (int c = 1; c < classes; ++c)
            if (row[c] > mx) {
                mx = row[c];
                arg = c;
            }
        if (arg == label) ++res.correct;
        double denom = 0.0;
        for (int c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
        total += std::log(denom) - static_cast<double>(row[label] - mx);
        const float inv = 1.0f / static_cast<float>(batch);
        for (int c = 0; c < classes; ++c) {
            const float p = static_cast<float>(std::exp(static_cast<double>(row[c] - mx)) / denom);
            grad[c] = (p - (c == label ? 1.0f : 0.0f)) * inv;
        }
    }
    res.loss = total / batch;
    if (!std::isfinite(res.loss)) throw NumericFailure("cross_entropy: non-finite loss");
    return res;
}

BatchGrads loss_and_grads(const Model& model, const Tensor& input, std::span<const int> labels,
                          const BackwardOptions& opts) {
    ForwardTrace trace = forward_trace(model, input);
    LossResult loss = cross_entropy(trace.logits(), labels);
    BatchGrads out;
    out.loss = loss.loss;
    out.correct = loss.correct;
    out.grads = backward(model, trace, loss.logit_grad, opts);
    return out;
}

}  // namespace nf
