#include "neuroforge/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>

#include "json.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/locate.hpp"
#include "neuroforge/metrics.hpp"
#include "neuroforge/model_io.hpp"
#include "neuroforge/optim.hpp"
#include "neuroforge/parallel.hpp"
#include "neuroforge/repair.hpp"

namespace nf {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset load_or_build_dataset(const ExperimentConfig& cfg) {
    if (cfg.dataset.kind == "cifar10") {
        if (!fs::exists(cfg.dataset.cifar_dir))
            throw UpstreamMissing("dataset directory missing: " + cfg.dataset.cifar_dir);
        return load_cifar10(cfg.dataset.cifar_dir);
    }
    const fs::path cache = cfg.out_dir / "dataset";
    if (fs::exists(cache / "dataset.json")) return load_dataset_cache(cache);
    Dataset data = gen_synthetic(cfg.dataset.classes, cfg.dataset.per_class, cfg.dataset.hw, cfg.dataset.seed);
    save_dataset_cache(data, cache);
    return data;
}

fs::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
    return cfg.out_dir / ("seed-" + std::to_string(seed));
}

TriggerSpec trigger_for_record(const ExperimentConfig& cfg, const InfectedRecord& rec, const Model& benign) {
    if (rec.attack == "blended") return make_blend_trigger(benign.input_channels, benign.input_hw, rec.seed);
    if (rec.attack == "trojannn") {
        const Rng task_rng = Rng(rec.seed)
                                 .split(rec.attack)
                                 .split(level_name(rec.level))
                                 .split(static_cast<std::uint64_t>(rec.selection));
        return trojan_optimize_trigger(benign, rec.subnet(), cfg.attack.trojan_steps, cfg.attack.trojan_lr,
                                       cfg.attack.trojan_mask, task_rng.split("trojan-trigger"));
    }
    return make_patch_trigger(benign.input_channels);
}

std::vector<IndexEntry> read_index(const fs::path& db_dir) {
    const fs::path file = db_dir / "index.json";
    std::ifstream in(file);
    if (!in) throw UpstreamMissing("database index missing: " + file.string() + " (run inject first)");
    json arr;
    try {
        in >> arr;
    } catch (const json::exception& e) {
        throw FormatError("read_index: " + file.string() + ": " + e.what());
    }
    std::vector<IndexEntry> out;
    try {
        for (const json& e : arr) {
            IndexEntry entry;
            entry.attack = e.at("attack").get<std::string>();
            entry.level = level_from_name(e.at("level").get<std::string>());
            entry.selection = e.at("selection").get<int>();
            entry.dir = db_dir / fs::path(e.at("path").get<std::string>());
            out.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw FormatError("read_index: " + file.string() + ": " + e.what());
    }
    return out;
}

namespace {

void check_target(const ExperimentConfig& cfg, const Dataset& data) {
    if (cfg.attack.policy.target >= data.classes)
        throw RejectedInput("attack target " + std::to_string(cfg.attack.policy.target) + " outside " +
                            std::to_string(data.classes) + " classes");
}

Model load_benign_for(const ExperimentConfig& cfg, const std::string& benign_ref) {
    const fs::path dir = cfg.out_dir / benign_ref;
    if (!fs::exists(dir / "model.json"))
        throw UpstreamMissing("benign model missing: " + (dir / "model.json").string() + " (run train-benign)");
    return load_model(dir);
}

// benign models keyed by their record reference, loaded once per command
class BenignCache {
public:
    explicit BenignCache(const ExperimentConfig& cfg) : cfg_(cfg) {}

    const Model& get(const std::string& ref) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto it = cache_.find(ref);
        if (it == cache_.end()) it = cache_.emplace(ref, load_benign_for(cfg_, ref)).first;
        return it->second;
    }

private:
    const ExperimentConfig& cfg_;
    std::map<std::string, Model> cache_;
    std::mutex mutex_;
};

}  // namespace

int cmd_train_benign(const ExperimentConfig& cfg, const RunFlags& flags) {
    (void)flags.jobs;  // single model per seed; training itself is sequential
    const Dataset data = load_or_build_dataset(cfg);
    check_target(cfg, data);

    int failures = 0;
    for (const std::uint64_t seed : cfg.seeds) {
        const fs::path dir = seed_dir(cfg, seed) / "benign";
        if (!flags.force && fs::exists(dir / "model.json")) {
            const Model m = load_model(dir);
            std::printf("seed %llu: benign model already present, CA %.4f\n",
                        static_cast<unsigned long long>(seed), clean_accuracy(m, data.test));
            continue;
        }

        Rng init_rng = Rng(seed).split("benign-init");
        Model m = make_model(cfg.architecture, data.channels, data.hw, data.classes, init_rng);
        TrainOptions topts;
        topts.epochs = cfg.train.epochs;
        topts.lr = cfg.train.lr;
        topts.momentum = cfg.train.momentum;
        topts.batch_size = cfg.train.batch_size;
        topts.channel_dropout = cfg.train.dropout;
        train_model(m, data.train.images, data.train.labels, topts, Rng(seed).split("benign-train"));

        const double ca = clean_accuracy(m, data.test);
        std::printf("seed %llu: benign CA %.4f (floor %.2f)\n", static_cast<unsigned long long>(seed), ca,
                    cfg.train.ca_floor);
        if (ca < cfg.train.ca_floor) {
            std::fprintf(stderr, "seed %llu: CA %.4f below floor %.2f, model not persisted\n",
                         static_cast<unsigned long long>(seed), ca, cfg.train.ca_floor);
            ++failures;
            continue;
        }
        save_model(m, dir);

        json meta;
        meta["seed"] = seed;
        meta["ca"] = ca;
        meta["epochs"] = cfg.train.epochs;
        meta["lr"] = cfg.train.lr;
        meta["digest"] = model_blob_digest(dir);
        std::ofstream out(dir / "benign.json");
        out << meta.dump(2) << "\n";
    }
    return failures == 0 ? 0 : 1;
}

int cmd_inject(const ExperimentConfig& cfg, const RunFlags& flags) {
    const Dataset data = load_or_build_dataset(cfg);
    check_target(cfg, data);

    bool any_retained = false;
    for (const std::uint64_t seed : cfg.seeds) {
        const std::string benign_ref = "seed-" + std::to_string(seed) + "/benign";
        const Model benign = load_benign_for(cfg, benign_ref);

        BuildOptions opts;
        opts.attacks = cfg.attacks;
        opts.levels = cfg.levels;
        opts.base = cfg.attack;
        opts.seed = seed;
        opts.ca_floor = cfg.train.ca_floor;
        opts.benign_ref = benign_ref;
        opts.jobs = flags.jobs;
        opts.force = flags.force;

        const BuildSummary summary = build_database(benign, data, opts, seed_dir(cfg, seed) / "db");

        std::map<std::pair<std::string, Level>, int> retained;
        for (const InfectedRecord& rec : summary.retained) ++retained[{rec.attack, rec.level}];
        std::printf("seed %llu retention:\n", static_cast<unsigned long long>(seed));
        for (const std::string& attack : cfg.attacks)
            for (const Level level : cfg.levels) {
                const int kept = retained.count({attack, level}) ? retained[{attack, level}] : 0;
                std::printf("  %-9s %-7s %d/%d retained\n", attack.c_str(), level_name(level), kept,
                            level_selections(level));
            }
        if (summary.failed > 0) std::printf("  %d injection(s) failed and were skipped\n", summary.failed);
        for (const std::string& w : summary.warnings) std::printf("  warning: %s\n", w.c_str());
        any_retained = any_retained || !summary.retained.empty();
    }
    return any_retained ? 0 : 1;
}

int cmd_localize(const ExperimentConfig& cfg, const RunFlags& flags) {
    const Dataset data = load_or_build_dataset(cfg);
    check_target(cfg, data);

    for (const std::uint64_t seed : cfg.seeds) {
        const fs::path db = seed_dir(cfg, seed) / "db";
        const std::vector<IndexEntry> entries = read_index(db);
        const CleanSlice slice = sample_clean_slice(data, cfg.clean_slice_fraction, seed);
        const SliceData sd = materialize_slice(data, slice);

        int done = 0;
        std::mutex count_mutex;
        run_tasks(static_cast<int>(entries.size()), flags.jobs, [&](int i) {
            const fs::path dir = entries[static_cast<std::size_t>(i)].dir;
            if (!flags.force && fs::exists(dir / "localization.json")) return;
            const InfectedRecord rec = load_record(dir);
            const Model m = load_model(dir / "model");
            const Budget budget = Budget::from_fault(m, rec.s_fault);
            const std::vector<LocalizationResult> results = run_all(m, sd, budget, cfg.localizers, cfg.locate);
            save_localizations(results, budget, dir / "localization.json");
            std::lock_guard<std::mutex> lock(count_mutex);
            ++done;
        });
        std::printf("seed %llu: localized %d/%zu record(s) (%zu already done)\n",
                    static_cast<unsigned long long>(seed), done, entries.size(), entries.size() - done);
    }
    return 0;
}

int cmd_repair(const ExperimentConfig& cfg, const RunFlags& flags) {
    const Dataset data = load_or_build_dataset(cfg);
    check_target(cfg, data);

    for (const std::uint64_t seed : cfg.seeds) {
        const fs::path db = seed_dir(cfg, seed) / "db";
        const std::vector<IndexEntry> entries = read_index(db);
        const CleanSlice slice = sample_clean_slice(data, cfg.clean_slice_fraction, seed);
        const SliceData sd = materialize_slice(data, slice);
        BenignCache benign_cache(cfg);

        std::vector<std::string> sources = cfg.localizers;
        sources.push_back("pfl");

        run_tasks(static_cast<int>(entries.size()), flags.jobs, [&](int i) {
            const fs::path dir = entries[static_cast<std::size_t>(i)].dir;
            const InfectedRecord rec = load_record(dir);

            // everything below is skipped when all outputs already exist
            bool all_done = !flags.force;
            if (all_done)
                for (const std::string& source : sources)
                    for (const RepairConfig& rcfg : cfg.repairs)
                        if (!fs::exists(dir / "repairs" / (rcfg.method + "-" + source + ".json"))) {
                            all_done = false;
                            break;
                        }
            if (all_done) return;

            LoadedLocalizations locs;
            if (!cfg.localizers.empty()) {
                const fs::path loc_file = dir / "localization.json";
                if (!fs::exists(loc_file))
                    throw UpstreamMissing("localization missing: " + loc_file.string() + " (run localize first)");
                locs = load_localizations(loc_file);
            }

            const Model infected = load_model(dir / "model");
            const Model& benign = benign_cache.get(rec.benign_ref);
            const TriggerSpec trigger = trigger_for_record(cfg, rec, benign);
            const PoisonedTestSet poisoned = poison_test_set(data, cfg.attack.policy, trigger);
            const EvalReport before = eval_ca_asr(infected, data.test, poisoned, cfg.attack.policy.target);

            fs::create_directories(dir / "repairs");
            for (const std::string& source : sources) {
                std::vector<NeuronId> ids;
                if (source == "pfl") {
                    ids = rec.s_fault;
                } else {
                    const auto it = std::find_if(locs.results.begin(), locs.results.end(),
                                                 [&](const LocalizationResult& r) { return r.method == source; });
                    if (it == locs.results.end())
                        throw UpstreamMissing("localization for method " + source + " missing in " +
                                              (dir / "localization.json").string());
                    if (!it->failed) ids = it->ids();
                }

                for (const RepairConfig& rcfg : cfg.repairs) {
                    const std::string name = rcfg.method + "-" + source;
                    const fs::path outcome_file = dir / "repairs" / (name + ".json");
                    if (!flags.force && fs::exists(outcome_file)) continue;

                    const auto t0 = std::chrono::steady_clock::now();
                    const Model repaired = run_repair(infected, ids, rcfg, sd,
                                                      Rng(seed).split("repair").split(rcfg.method).split(source));
                    const EvalReport after = eval_ca_asr(repaired, data.test, poisoned, cfg.attack.policy.target);
                    const auto [cad, asrd] = cad_asrd(before, after);
                    const double secs =
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

                    save_model(repaired, dir / "repairs" / name);
                    save_repair({rcfg.method, source, cad, asrd, secs}, outcome_file);
                }
            }
        });
        std::printf("seed %llu: repairs complete for %zu record(s)\n", static_cast<unsigned long long>(seed),
                    entries.size());
    }
    return 0;
}

}  // namespace nf
