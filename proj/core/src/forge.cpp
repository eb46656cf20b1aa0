#include "neuroforge/forge.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>

#include "json.hpp"
#include "neuroforge/autodiff.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/metrics.hpp"
#include "neuroforge/model_io.hpp"
#include "neuroforge/parallel.hpp"

namespace nf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::vector<double>> contribution_impl(const Model& model, const Tensor& images,
                                                   const std::vector<int>& labels) {
    if (images.rank() != 4 || images.dim(0) <= 0) throw RejectedInput("neuron_contribution: empty batch");
    const int n = images.dim(0);
    const int body = model.param_layers() - 1;
    std::vector<std::vector<double>> acc(static_cast<std::size_t>(body));
    for (int l = 1; l <= body; ++l)
        acc[static_cast<std::size_t>(l - 1)].assign(static_cast<std::size_t>(model.channels_of(l - 1)), 0.0);

    const std::size_t image_sz = images.numel() / static_cast<std::size_t>(n);
    BackwardOptions bopts;
    bopts.param_grads = false;
    bopts.act_grads = true;

    for (int start = 0; start < n; start += 64) {
        const int b = std::min(64, n - start);
        Tensor batch({b, images.dim(1), images.dim(2), images.dim(3)});
        std::memcpy(batch.data(), images.data() + static_cast<std::size_t>(start) * image_sz,
                    static_cast<std::size_t>(b) * image_sz * sizeof(float));
        ForwardTrace trace = forward_trace(model, batch);
        Tensor seed({b, model.class_count});
        for (int i = 0; i < b; ++i) {
            const int label = labels[static_cast<std::size_t>(start + i)];
            if (label < 0 || label >= model.class_count)
                throw RejectedInput("neuron_contribution: label out of range");
            seed.at(i, label) = 1.0f;
        }
        Gradients grads = backward(model, trace, seed, bopts);

        for (int l = 1; l <= body; ++l) {
            const int stage = post_activation_stage(model, l);
            const Tensor& a = trace.outputs[static_cast<std::size_t>(stage)];
            const Tensor& g = grads.act_grads[static_cast<std::size_t>(stage)];
            const std::size_t plane = a.plane_size();
            const int channels = model.channels_of(l - 1);
            for (int i = 0; i < b; ++i)
                for (int ch = 0; ch < channels; ++ch) {
                    const float* ap = a.plane(i, ch);
                    const float* gp = g.plane(i, ch);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < plane; ++j) dot += static_cast<double>(ap[j]) * gp[j];
                    if (!std::isfinite(dot)) throw NumericFailure("neuron_contribution: non-finite saliency");
                    acc[static_cast<std::size_t>(l - 1)][static_cast<std::size_t>(ch)] += std::abs(dot);
                }
        }
    }
    for (auto& layer : acc)
        for (double& v : layer) v /= n;
    return acc;
}

int level_window_percent(Level level) {
    switch (level) {
        case Level::Middle: return 10;
        case Level::Large: return 20;
        default: return 5;  // narrow draws from the small windows
    }
}

}  // namespace

std::vector<std::vector<double>> neuron_contribution(const Model& model, const Tensor& images, int score_label) {
    if (images.rank() != 4) throw RejectedInput("neuron_contribution: expected [N,C,H,W] batch");
    std::vector<int> labels(static_cast<std::size_t>(images.dim(0)), score_label);
    return contribution_impl(model, images, labels);
}

std::vector<std::vector<double>> neuron_contribution(const Model& model, const Tensor& images,
                                                     std::span<const int> labels) {
    if (images.rank() != 4) throw RejectedInput("neuron_contribution: expected [N,C,H,W] batch");
    if (static_cast<std::size_t>(images.dim(0)) != labels.size())
        throw RejectedInput("neuron_contribution: label count mismatch");
    return contribution_impl(model, images, std::vector<int>(labels.begin(), labels.end()));
}

ContributionTable contribution_table(const Model& model, const Tensor& images, int score_label) {
    ContributionTable table;
    table.scores = neuron_contribution(model, images, score_label);
    table.ranked.resize(table.scores.size());
    for (std::size_t l = 0; l < table.scores.size(); ++l) {
        const std::vector<double>& s = table.scores[l];
        std::vector<int>& order = table.ranked[l];
        order.resize(s.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&s](int a, int b) {
            const double sa = s[static_cast<std::size_t>(a)], sb = s[static_cast<std::size_t>(b)];
            if (sa != sb) return sa > sb;
            return a < b;
        });
    }
    return table;
}

EnumerationResult enumerate_subnets(const Model& model, const ContributionTable& table) {
    const int body = model.param_layers() - 1;
    if (static_cast<int>(table.ranked.size()) != body)
        throw RejectedInput("enumerate_subnets: table does not cover every body layer");
    for (int l = 0; l < body; ++l)
        if (static_cast<int>(table.ranked[static_cast<std::size_t>(l)].size()) != model.channels_of(l))
            throw RejectedInput("enumerate_subnets: table width mismatch at layer " + std::to_string(l + 1));

    EnumerationResult out;
    for (Level level : {Level::Narrow, Level::Small, Level::Middle, Level::Large}) {
        const int pct = level_window_percent(level);
        const int selections = level_selections(level);
        std::vector<int> cursor(static_cast<std::size_t>(body), 0);  // highest 1-based rank used so far

        for (int i = 0; i < selections; ++i) {
            SubNetwork sn;
            sn.level = level;
            sn.selection = i;
            for (int l = 1; l <= body; ++l) {
                const std::vector<int>& ranked = table.ranked[static_cast<std::size_t>(l - 1)];
                const int n = static_cast<int>(ranked.size());
                int& c = cursor[static_cast<std::size_t>(l - 1)];
                const int lo = std::max(1 + pct * i * n / 100, c + 1);
                const int hi = pct * (i + 1) * n / 100;

                int first = lo, last = hi;
                if (first > last) {
                    // window collapsed; keep the subnet definition intact with one fresh rank
                    first = last = std::min(c + 1, n);
                    out.warnings.push_back(std::string(level_name(level)) + " selection " + std::to_string(i) +
                                           " layer " + std::to_string(l) + ": window clamped to rank " +
                                           std::to_string(first));
                }
                if (level == Level::Narrow) {
                    const int narrow_count = n < 32 ? 1 : 2;
                    last = std::min(last, first + std::max(1, narrow_count) - 1);
                }
                for (int r = first; r <= last; ++r)
                    sn.members.push_back(NeuronId{l, ranked[static_cast<std::size_t>(r - 1)]});
                c = std::max(c, last);
            }
            std::sort(sn.members.begin(), sn.members.end());
            out.subnets.push_back(std::move(sn));
        }
    }
    return out;
}

double asr_only(const Model& model, const PoisonedTestSet& poisoned) {
    if (poisoned.count() == 0) throw RejectedInput("asr_only: empty poisoned test set");
    const std::vector<int> preds = predict(model, poisoned.images);
    int hit = 0;
    for (int p : preds)
        if (p == poisoned.target) ++hit;
    return static_cast<double>(hit) / poisoned.count();
}

double asr_cor(const Model& infected, const SubNetwork& subnet, const PoisonedTestSet& poisoned) {
    const double base = asr_only(infected, poisoned);
    if (subnet.members.empty()) return 0.0;
    const Model masked = mask_channels(infected, subnet);
    return base - asr_only(masked, poisoned);
}

RcWeights rc_weights(const Model& infected, const SubNetwork& subnet, const Tensor& poisoned_batch, int target) {
    if (subnet.members.empty()) throw RejectedInput("rc_weights: empty subnet");
    const auto scores = neuron_contribution(infected, poisoned_batch, target);

    RcWeights out;
    out.rc.reserve(subnet.members.size());
    double sum = 0.0;
    for (const NeuronId& id : subnet.members) {
        const double c = scores[static_cast<std::size_t>(id.layer - 1)][static_cast<std::size_t>(id.channel)];
        out.rc.push_back(c);
        sum += c;
    }
    if (sum <= 0.0) {
        out.uniform_fallback = true;
        std::fill(out.rc.begin(), out.rc.end(), 1.0 / static_cast<double>(out.rc.size()));
    } else {
        for (double& v : out.rc) v /= sum;
    }
    return out;
}

SubNetwork InfectedRecord::subnet() const {
    SubNetwork sn;
    sn.members = s_fault;
    sn.level = level;
    sn.selection = selection;
    return sn;
}

void save_record(const InfectedRecord& rec, const fs::path& dir) {
    json j;
    j["attack"] = rec.attack;
    j["level"] = level_name(rec.level);
    j["selection"] = rec.selection;
    json sf = json::array();
    for (const NeuronId& id : rec.s_fault) sf.push_back({id.layer, id.channel});
    j["s_fault"] = std::move(sf);
    j["rc"] = rec.rc;
    j["ca"] = rec.ca;
    j["asr"] = rec.asr;
    j["asr_cor"] = rec.asr_cor;
    j["ca_cor"] = rec.ca_cor;
    j["seed"] = rec.seed;
    j["timings"] = {{"inject_seconds", rec.timings.inject_seconds}, {"eval_seconds", rec.timings.eval_seconds}};
    j["benign_ref"] = rec.benign_ref;

    fs::create_directories(dir);
    std::ofstream out(dir / "record.json");
    out << j.dump(2) << "\n";
    if (!out) throw FormatError("save_record: cannot write " + (dir / "record.json").string());
}

InfectedRecord load_record(const fs::path& dir) {
    const fs::path file = dir / "record.json";
    std::ifstream in(file);
    if (!in) throw FormatError("load_record: cannot open " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("load_record: " + file.string() + ": " + e.what());
    }

    try {
        InfectedRecord rec;
        rec.attack = j.at("attack").get<std::string>();
        rec.level = level_from_name(j.at("level").get<std::string>());
        rec.selection = j.at("selection").get<int>();
        for (const json& pair : j.at("s_fault")) {
            if (!pair.is_array() || pair.size() != 2) throw FormatError("load_record: malformed s_fault entry");
            rec.s_fault.push_back(NeuronId{pair[0].get<int>(), pair[1].get<int>()});
        }
        rec.rc = j.at("rc").get<std::vector<double>>();
        rec.ca = j.at("ca").get<double>();
        rec.asr = j.at("asr").get<double>();
        rec.asr_cor = j.at("asr_cor").get<double>();
        rec.ca_cor = j.at("ca_cor").get<double>();
        rec.seed = j.at("seed").get<std::uint64_t>();
        rec.timings.inject_seconds = j.at("timings").at("inject_seconds").get<double>();
        rec.timings.eval_seconds = j.at("timings").at("eval_seconds").get<double>();
        rec.benign_ref = j.at("benign_ref").get<std::string>();

        if (rec.rc.size() != rec.s_fault.size()) throw FormatError("load_record: rc does not align with s_fault");
        const double sum = std::accumulate(rec.rc.begin(), rec.rc.end(), 0.0);
        if (std::abs(sum - 1.0) > 1e-6) throw FormatError("load_record: rc sums to " + std::to_string(sum));
        return rec;
    } catch (const json::exception& e) {
        throw FormatError("load_record: " + file.string() + ": " + e.what());
    }
}

fs::path record_dir(const std::string& attack, Level level, int selection) {
    return fs::path(attack) / level_name(level) / std::to_string(selection);
}

namespace {

void write_skip_marker(const fs::path& dir, const std::string& status, const std::string& attack, Level level,
                       int selection, std::uint64_t seed, const std::string& reason, double gate_value) {
    fs::create_directories(dir);
    json j;
    j["status"] = status;
    j["attack"] = attack;
    j["level"] = level_name(level);
    j["selection"] = selection;
    j["seed"] = seed;
    if (!reason.empty()) j["reason"] = reason;
    if (status == "rejected-gate") j["asr_cor"] = gate_value;
    std::ofstream out(dir / "skipped.json");
    out << j.dump(2) << "\n";
}

Tensor target_class_batch(const Dataset& data, int target, int limit) {
    std::vector<int> idx;
    for (int i = 0; i < data.train.count() && static_cast<int>(idx.size()) < limit; ++i)
        if (data.train.labels[static_cast<std::size_t>(i)] == target) idx.push_back(i);
    if (idx.empty()) throw RejectedInput("build_database: train split has no target-class images");
    return gather_images(data.train.images, idx);
}

Tensor leading_images(const Tensor& images, int limit) {
    const int n = std::min(images.dim(0), limit);
    Tensor out({n, images.dim(1), images.dim(2), images.dim(3)});
    std::memcpy(out.data(), images.data(), out.numel() * sizeof(float));
    return out;
}

}  // namespace

BuildSummary build_database(const Model& benign, const Dataset& data, const BuildOptions& opts,
                            const fs::path& out_dir) {
    const double benign_ca = clean_accuracy(benign, data.test);
    if (benign_ca < opts.ca_floor)
        throw RejectedInput("build_database: benign CA " + std::to_string(benign_ca) + " below floor " +
                            std::to_string(opts.ca_floor));

    const int target = opts.base.policy.target;
    const ContributionTable table = contribution_table(benign, target_class_batch(data, target, 64), target);
    EnumerationResult enumerated = enumerate_subnets(benign, table);

    BuildSummary summary;
    summary.warnings = enumerated.warnings;

    struct Task {
        std::string attack;
        const SubNetwork* subnet;
    };
    std::vector<Task> tasks;
    for (const std::string& attack : opts.attacks)
        for (const SubNetwork& sn : enumerated.subnets) {
            if (std::find(opts.levels.begin(), opts.levels.end(), sn.level) == opts.levels.end()) continue;
            if (opts.max_selections > 0 && sn.selection >= opts.max_selections) continue;
            tasks.push_back({attack, &sn});
        }

    enum class Outcome { Retained, Rejected, Failed, SkippedExisting, SkippedExistingRetained };
    std::vector<Outcome> outcomes(tasks.size(), Outcome::Failed);
    std::vector<std::optional<InfectedRecord>> records(tasks.size());
    std::mutex warn_mutex;

    auto run_one = [&](int ti) {
        const Task& task = tasks[static_cast<std::size_t>(ti)];
        const SubNetwork& sn = *task.subnet;
        const fs::path dir = out_dir / record_dir(task.attack, sn.level, sn.selection);

        if (!opts.force) {
            if (fs::exists(dir / "record.json")) {
                records[static_cast<std::size_t>(ti)] = load_record(dir);
                outcomes[static_cast<std::size_t>(ti)] = Outcome::SkippedExistingRetained;
                return;
            }
            if (fs::exists(dir / "skipped.json")) {
                outcomes[static_cast<std::size_t>(ti)] = Outcome::SkippedExisting;
                return;
            }
        }

        AttackConfig cfg = opts.base;
        cfg.method = task.attack;
        if (task.attack == "blended")
            cfg.trigger = make_blend_trigger(data.channels, data.hw, opts.seed);
        else
            cfg.trigger = make_patch_trigger(data.channels);

        const Rng task_rng =
            Rng(opts.seed).split(task.attack).split(level_name(sn.level)).split(static_cast<std::uint64_t>(sn.selection));

        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        Model infected;
        TriggerSpec used = cfg.trigger;
        try {
            infected = inject(benign, sn, cfg, data, task_rng, &used);
        } catch (const std::exception& e) {
            write_skip_marker(dir, "injection-failed", task.attack, sn.level, sn.selection, opts.seed, e.what(), 0.0);
            outcomes[static_cast<std::size_t>(ti)] = Outcome::Failed;
            return;
        }
        const auto t1 = clock::now();

        const PoisonedTestSet poisoned = poison_test_set(data, cfg.policy, used);
        const EvalReport base = eval_ca_asr(infected, data.test, poisoned, target);
        const Model masked = mask_channels(infected, sn);
        const EvalReport masked_report = eval_ca_asr(masked, data.test, poisoned, target);
        const double gate = base.asr - masked_report.asr;
        const auto t2 = clock::now();

        if (gate <= 0.5) {
            write_skip_marker(dir, "rejected-gate", task.attack, sn.level, sn.selection, opts.seed, "", gate);
            outcomes[static_cast<std::size_t>(ti)] = Outcome::Rejected;
            return;
        }

        const RcWeights rc = rc_weights(infected, sn, leading_images(poisoned.images, 64), target);
        if (rc.uniform_fallback) {
            std::lock_guard<std::mutex> lock(warn_mutex);
            summary.warnings.push_back(task.attack + "/" + level_name(sn.level) + "/" +
                                       std::to_string(sn.selection) + ": all-zero saliency, uniform rc fallback");
        }

        InfectedRecord rec;
        rec.attack = task.attack;
        rec.level = sn.level;
        rec.selection = sn.selection;
        rec.s_fault = sn.members;
        rec.rc = rc.rc;
        rec.ca = base.ca;
        rec.asr = base.asr;
        rec.asr_cor = gate;
        rec.ca_cor = base.ca - masked_report.ca;
        rec.seed = opts.seed;
        rec.timings.inject_seconds = std::chrono::duration<double>(t1 - t0).count();
        rec.timings.eval_seconds = std::chrono::duration<double>(t2 - t1).count();
        rec.benign_ref = opts.benign_ref;

        save_model(infected, dir / "model");
        save_record(rec, dir);
        records[static_cast<std::size_t>(ti)] = std::move(rec);
        outcomes[static_cast<std::size_t>(ti)] = Outcome::Retained;
    };

    run_tasks(static_cast<int>(tasks.size()), opts.jobs, run_one);

    json index = json::array();
    for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
        switch (outcomes[ti]) {
            case Outcome::Retained:
                ++summary.attempted;
                break;
            case Outcome::Rejected:
                ++summary.attempted;
                ++summary.rejected_gate;
                break;
            case Outcome::Failed:
                ++summary.attempted;
                ++summary.failed;
                break;
            case Outcome::SkippedExisting:
            case Outcome::SkippedExistingRetained:
                ++summary.skipped_existing;
                break;
        }
        if (records[ti]) {
            const InfectedRecord& rec = *records[ti];
            json entry;
            entry["attack"] = rec.attack;
            entry["level"] = level_name(rec.level);
            entry["selection"] = rec.selection;
            entry["path"] = record_dir(rec.attack, rec.level, rec.selection).generic_string();
            entry["ca"] = rec.ca;
            entry["asr"] = rec.asr;
            entry["asr_cor"] = rec.asr_cor;
            entry["ca_cor"] = rec.ca_cor;
            index.push_back(std::move(entry));
            summary.retained.push_back(std::move(*records[ti]));
        }
    }

    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "index.json");
    out << index.dump(2) << "\n";
    if (!out) throw FormatError("build_database: cannot write " + (out_dir / "index.json").string());
    return summary;
}

}  // namespace nf
