#pragma once

#include "neuroforge/dataset.hpp"
#include "neuroforge/model.hpp"
#include "neuroforge/optim.hpp"
#include "neuroforge/rng.hpp"

namespace fixtures {

// Small shared dataset: 3 classes, 8x8, 24 images per class. Cheap enough to
// regenerate per binary; cached so repeated calls within one binary are free.
inline const nf::Dataset& tiny_data() {
    static const nf::Dataset data = nf::gen_synthetic(3, 24, 8, 5);
    return data;
}

// An untrained tiny_vgg over the tiny dataset, fresh copy each call.
inline nf::Model fresh_model(std::uint64_t seed = 11) {
    const nf::Dataset& d = tiny_data();
    nf::Rng rng = nf::Rng(seed).split("benign-init");
    return nf::make_model("tiny_vgg", d.channels, d.hw, d.classes, rng);
}

// Trained once per binary and copied out.
inline const nf::Model& trained_model() {
    static const nf::Model model = [] {
        const nf::Dataset& d = tiny_data();
        nf::Model m = fresh_model();
        nf::TrainOptions opts;
        opts.epochs = 12;
        opts.lr = 0.02f;
        nf::train_model(m, d.train.images, d.train.labels, opts, nf::Rng(11).split("benign-train"));
        return m;
    }();
    return model;
}

// One image copied out of a [N, C, H, W] batch.
inline nf::Tensor image_at(const nf::Tensor& images, int i) {
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    nf::Tensor out({c, h, w});
    const std::size_t sz = out.numel();
    for (std::size_t k = 0; k < sz; ++k) out[k] = images[static_cast<std::size_t>(i) * sz + k];
    return out;
}

}  // namespace fixtures
