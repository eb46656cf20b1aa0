#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace oracle {

namespace {

std::vector<float> conv3x3(const nf::Model& m, const nf::LayerSpec& spec, const std::vector<float>& in,
                           int h, int w) {
    const int cin = spec.in_ch, cout = spec.out_ch;
    const nf::Tensor& weight = m.weights[static_cast<std::size_t>(spec.param_index)];
    const nf::Tensor& bias = m.biases[static_cast<std::size_t>(spec.param_index)];
    const auto& active = m.channel_active[static_cast<std::size_t>(spec.param_index)];
    std::vector<float> out(static_cast<std::size_t>(cout) * h * w, 0.0f);
    for (int oc = 0; oc < cout; ++oc) {
        if (!active[static_cast<std::size_t>(oc)]) continue;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = bias[static_cast<std::size_t>(oc)];
                for (int ic = 0; ic < cin; ++ic)
                    for (int ky = -1; ky <= 1; ++ky)
                        for (int kx = -1; kx <= 1; ++kx) {
                            const int sy = y + ky, sx = x + kx;
                            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                            const float v = in[(static_cast<std::size_t>(ic) * h + sy) * w + sx];
                            const float wv = weight.at(oc, ic, ky + 1, kx + 1);
                            acc += static_cast<double>(v) * wv;
                        }
                out[(static_cast<std::size_t>(oc) * h + y) * w + x] = static_cast<float>(acc);
            }
    }
    return out;
}

}  // namespace

std::vector<float> naive_forward(const nf::Model& model, const nf::Tensor& image) {
    if (image.rank() != 3) throw std::invalid_argument("naive_forward wants [C, H, W]");
    std::vector<float> cur(image.data(), image.data() + image.numel());
    int ch = image.dim(0), h = image.dim(1), w = image.dim(2);

    for (const nf::LayerSpec& spec : model.pipeline) {
        switch (spec.kind) {
            case nf::LayerKind::Conv:
                cur = conv3x3(model, spec, cur, h, w);
                ch = spec.out_ch;
                break;
            case nf::LayerKind::Relu:
                for (float& v : cur) v = std::max(v, 0.0f);
                break;
            case nf::LayerKind::Pool: {
                const int oh = h / 2, ow = w / 2;
                std::vector<float> out(static_cast<std::size_t>(ch) * oh * ow);
                for (int c = 0; c < ch; ++c)
                    for (int y = 0; y < oh; ++y)
                        for (int x = 0; x < ow; ++x) {
                            float best = cur[(static_cast<std::size_t>(c) * h + 2 * y) * w + 2 * x];
                            for (int dy = 0; dy < 2; ++dy)
                                for (int dx = 0; dx < 2; ++dx)
                                    best = std::max(best, cur[(static_cast<std::size_t>(c) * h + 2 * y + dy) * w +
                                                              2 * x + dx]);
                            out[(static_cast<std::size_t>(c) * oh + y) * ow + x] = best;
                        }
                cur = std::move(out);
                h = oh;
                w = ow;
                break;
            }
            case nf::LayerKind::Flatten:
                // row-major [C, H, W] is already the flatten order
                ch = ch * h * w;
                h = w = 1;
                break;
            case nf::LayerKind::Dense: {
                const nf::Tensor& weight = model.weights[static_cast<std::size_t>(spec.param_index)];
                const nf::Tensor& bias = model.biases[static_cast<std::size_t>(spec.param_index)];
                const auto& active = model.channel_active[static_cast<std::size_t>(spec.param_index)];
                std::vector<float> out(static_cast<std::size_t>(spec.out_ch), 0.0f);
                for (int o = 0; o < spec.out_ch; ++o) {
                    if (!active[static_cast<std::size_t>(o)]) continue;
                    double acc = bias[static_cast<std::size_t>(o)];
                    for (int i = 0; i < spec.in_ch; ++i)
                        acc += static_cast<double>(weight.at(o, i)) * cur[static_cast<std::size_t>(i)];
                    out[static_cast<std::size_t>(o)] = static_cast<float>(acc);
                }
                cur = std::move(out);
                ch = spec.out_ch;
                break;
            }
        }
    }
    return cur;
}

double central_diff(const std::function<double(double)>& f, double x, double eps) {
    return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

double jacobi_spectral_norm(const std::vector<std::vector<double>>& a) {
    if (a.empty()) return 0.0;
    const std::size_t rows = a.size(), cols = a[0].size();
    // S = A^T A, symmetric cols x cols
    std::vector<std::vector<double>> s(cols, std::vector<double>(cols, 0.0));
    for (std::size_t i = 0; i < cols; ++i)
        for (std::size_t j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < rows; ++r) acc += a[r][i] * a[r][j];
            s[i][j] = acc;
        }

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < cols; ++p)
            for (std::size_t q = p + 1; q < cols; ++q) off += s[p][q] * s[p][q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < cols; ++p)
            for (std::size_t q = p + 1; q < cols; ++q) {
                if (std::abs(s[p][q]) < 1e-18) continue;
                const double theta = 0.5 * std::atan2(2.0 * s[p][q], s[q][q] - s[p][p]);
                const double c = std::cos(theta), sn = std::sin(theta);
                for (std::size_t k = 0; k < cols; ++k) {
                    const double skp = s[k][p], skq = s[k][q];
                    s[k][p] = c * skp - sn * skq;
                    s[k][q] = sn * skp + c * skq;
                }
                for (std::size_t k = 0; k < cols; ++k) {
                    const double spk = s[p][k], sqk = s[q][k];
                    s[p][k] = c * spk - sn * sqk;
                    s[q][k] = sn * spk + c * sqk;
                }
            }
    }
    double lmax = 0.0;
    for (std::size_t i = 0; i < cols; ++i) lmax = std::max(lmax, s[i][i]);
    return std::sqrt(std::max(lmax, 0.0));
}

double wji_enumerated(const std::vector<nf::NeuronId>& fault, const std::vector<double>& rc,
                      const std::vector<nf::NeuronId>& localized) {
    std::set<nf::NeuronId> f(fault.begin(), fault.end());
    std::set<nf::NeuronId> l(localized.begin(), localized.end());
    std::set<nf::NeuronId> u = f;
    u.insert(l.begin(), l.end());
    if (u.empty()) return 0.0;

    double hit = 0.0;
    for (std::size_t i = 0; i < fault.size(); ++i)
        if (l.count(fault[i])) hit += rc[i];
    return hit * static_cast<double>(f.size()) / static_cast<double>(u.size());
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: bad input");
    const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0.0 || db == 0.0) return 0.0;
    return num / std::sqrt(da * db);
}

}  // namespace oracle
