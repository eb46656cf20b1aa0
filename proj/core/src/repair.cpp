#include "neuroforge/repair.hpp"

#include <fstream>

#include "json.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/optim.hpp"

namespace nf {

namespace fs = std::filesystem;
using nlohmann::json;

Model prune(const Model& model, std::span<const NeuronId> s) {
    return mask_channels(model, s);
}

Model finetune(const Model& model, std::span<const NeuronId> s, const RepairConfig& cfg, const SliceData& slice,
               const Rng& rng) {
    if (slice.count() <= 0) throw RejectedInput("finetune: empty clean slice");
    for (const NeuronId& id : s) model.require_neuron(id);

    Model repaired = restrict_trainable(model, s, cfg.head_trainable);
    TrainOptions opts;
    opts.epochs = cfg.epochs;
    opts.lr = cfg.lr;
    opts.momentum = cfg.momentum;
    opts.batch_size = cfg.batch_size;
    opts.respect_trainable = true;
    train_model(repaired, slice.images, slice.labels, opts, rng);
    repaired.channel_trainable = model.channel_trainable;
    repaired.head_trainable = model.head_trainable;
    return repaired;
}

Model run_repair(const Model& model, std::span<const NeuronId> s, const RepairConfig& cfg, const SliceData& slice,
                 const Rng& rng) {
    if (cfg.method == "prune") return prune(model, s);
    if (cfg.method == "finetune") return finetune(model, s, cfg, slice, rng);
    throw RejectedInput("run_repair: unknown method " + cfg.method);
}

void save_repair(const RepairOutcome& outcome, const fs::path& file) {
    json j;
    j["method"] = outcome.method;
    j["source_localization"] = outcome.source_localization;
    j["cad"] = outcome.cad;
    j["asrd"] = outcome.asrd;
    j["time_seconds"] = outcome.time_seconds;
    std::ofstream out(file);
    out << j.dump(2) << "\n";
    if (!out) throw FormatError("save_repair: cannot write " + file.string());
}

RepairOutcome load_repair(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw FormatError("load_repair: cannot open " + file.string());
    json j;
    try {
        in >> j;
        RepairOutcome o;
        o.method = j.at("method").get<std::string>();
        o.source_localization = j.at("source_localization").get<std::string>();
        o.cad = j.at("cad").get<double>();
        o.asrd = j.at("asrd").get<double>();
        o.time_seconds = j.at("time_seconds").get<double>();
        return o;
    } catch (const json::exception& e) {
        throw FormatError("load_repair: " + file.string() + ": " + e.what());
    }
}

}  // namespace nf
