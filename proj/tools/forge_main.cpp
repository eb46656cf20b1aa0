#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "neuroforge/config.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/pipeline.hpp"

namespace {

constexpr int kExitBadConfig = 2;
constexpr int kExitUpstreamMissing = 3;
constexpr int kExitNumericFailure = 4;

int dispatch(const std::string& command, const nf::ExperimentConfig& cfg, const nf::RunFlags& flags) {
    if (command == "train-benign") return nf::cmd_train_benign(cfg, flags);
    if (command == "inject") return nf::cmd_inject(cfg, flags);
    if (command == "localize") return nf::cmd_localize(cfg, flags);
    if (command == "repair") return nf::cmd_repair(cfg, flags);
    return nf::cmd_report(cfg, flags);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neuron-granular backdoor defect injection, localization and repair"};
    app.require_subcommand(1);

    std::string config_path;
    int jobs = static_cast<int>(std::thread::hardware_concurrency());
    if (jobs < 1) jobs = 1;
    bool force = false;

    const std::pair<const char*, const char*> commands[] = {
        {"train-benign", "train and persist the clean baseline models"},
        {"inject", "sweep the configured attacks over the candidate subnets"},
        {"localize", "run the localization methods over every database record"},
        {"repair", "apply the repair methods at each localized set (plus pfl)"},
        {"report", "aggregate the database into CSV and Markdown tables"},
    };
    for (const auto& [name, desc] : commands) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", config_path, "experiment config file (JSON)")->required();
        sub->add_option("--jobs", jobs, "worker threads (default: available cores)");
        sub->add_flag("--force", force, "recompute outputs that already exist");
    }

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    nf::ExperimentConfig cfg;
    try {
        cfg = nf::load_config(config_path);
        if (const char* env = std::getenv("FORGE_SEED")) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (end == env || *end != '\0') {
                std::fprintf(stderr, "FORGE_SEED is not an unsigned integer: %s\n", env);
                return kExitBadConfig;
            }
            cfg.seeds = {static_cast<std::uint64_t>(v)};
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "bad config: %s\n", e.what());
        return kExitBadConfig;
    }

    nf::RunFlags flags;
    flags.jobs = jobs < 1 ? 1 : jobs;
    flags.force = force;

    try {
        return dispatch(command, cfg, flags);
    } catch (const nf::UpstreamMissing& e) {
        std::fprintf(stderr, "missing upstream artifact: %s\n", e.what());
        return kExitUpstreamMissing;
    } catch (const nf::FormatError& e) {
        std::fprintf(stderr, "artifact format error: %s\n", e.what());
        return kExitUpstreamMissing;
    } catch (const nf::NumericFailure& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumericFailure;
    } catch (const nf::InjectionFailure& e) {
        std::fprintf(stderr, "injection failure: %s\n", e.what());
        return kExitNumericFailure;
    } catch (const nf::RejectedInput& e) {
        std::fprintf(stderr, "bad config: %s\n", e.what());
        return kExitBadConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
