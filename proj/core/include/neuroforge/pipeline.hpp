#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neuroforge/config.hpp"
#include "neuroforge/dataset.hpp"
#include "neuroforge/forge.hpp"
#include "neuroforge/model.hpp"

namespace nf {

struct RunFlags {
    int jobs = 1;
    bool force = false;
};

// Commands return a process exit code (0 = success). Typed errors escape as
// exceptions and are mapped by the CLI: RejectedInput -> 2, UpstreamMissing /
// FormatError -> 3, NumericFailure / InjectionFailure -> 4.
int cmd_train_benign(const ExperimentConfig& cfg, const RunFlags& flags);
int cmd_inject(const ExperimentConfig& cfg, const RunFlags& flags);
int cmd_localize(const ExperimentConfig& cfg, const RunFlags& flags);
int cmd_repair(const ExperimentConfig& cfg, const RunFlags& flags);
int cmd_report(const ExperimentConfig& cfg, const RunFlags& flags);

// Shared plumbing, also used by tests.
Dataset load_or_build_dataset(const ExperimentConfig& cfg);
std::filesystem::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed);

// Triggers are never persisted; they re-derive deterministically from the
// record's identity (trojan optimization reruns against the benign model).
TriggerSpec trigger_for_record(const ExperimentConfig& cfg, const InfectedRecord& rec, const Model& benign);

struct IndexEntry {
    std::string attack;
    Level level = Level::Narrow;
    int selection = 0;
    std::filesystem::path dir;  // absolute
};
std::vector<IndexEntry> read_index(const std::filesystem::path& db_dir);

}  // namespace nf
