#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "json.hpp"
#include "neuroforge/errors.hpp"
#include "neuroforge/locate.hpp"
#include "neuroforge/metrics.hpp"
#include "neuroforge/model_io.hpp"
#include "neuroforge/pipeline.hpp"
#include "neuroforge/repair.hpp"

namespace nf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Key = std::tuple<std::string, std::string, std::string>;  // method, level, metric
using Samples = std::map<Key, std::vector<double>>;

struct Stats {
    double mean = 0.0;
    double std_dev = 0.0;
    int n = 0;
};

Stats stats_of(const std::vector<double>& v) {
    Stats s;
    s.n = static_cast<int>(v.size());
    if (s.n == 0) return s;
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / s.n;
    if (s.n > 1) {
        double acc = 0.0;
        for (double x : v) acc += (x - s.mean) * (x - s.mean);
        s.std_dev = std::sqrt(acc / (s.n - 1));
    }
    return s;
}

void write_csv(const fs::path& file, const Samples& samples) {
    std::ofstream out(file);
    out << "method,level,metric,mean,std,n\n";
    for (const auto& [key, values] : samples) {
        const Stats s = stats_of(values);
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%s,%s,%.6f,%.6f,%d\n", std::get<0>(key).c_str(),
                      std::get<1>(key).c_str(), std::get<2>(key).c_str(), s.mean, s.std_dev, s.n);
        out << line;
    }
    if (!out) throw FormatError("cmd_report: cannot write " + file.string());
}

// One table per metric: rows = methods, columns = levels.
void write_metric_table(std::ofstream& md, const std::string& title, const std::string& metric,
                        const Samples& samples, bool as_percent) {
    std::set<std::string> methods;
    std::set<std::string> levels;
    for (const auto& [key, values] : samples)
        if (std::get<2>(key) == metric) {
            methods.insert(std::get<0>(key));
            levels.insert(std::get<1>(key));
        }
    if (methods.empty()) return;

    md << "## " << title << "\n\n| method |";
    for (const std::string& l : levels) md << " " << l << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < levels.size(); ++i) md << "---|";
    md << "\n";
    for (const std::string& m : methods) {
        md << "| " << m << " |";
        for (const std::string& l : levels) {
            const auto it = samples.find({m, l, metric});
            if (it == samples.end()) {
                md << " - |";
                continue;
            }
            const Stats s = stats_of(it->second);
            char cell[128];
            if (as_percent)
                std::snprintf(cell, sizeof(cell), " %.2f ± %.2f (n=%d) |", 100.0 * s.mean, 100.0 * s.std_dev, s.n);
            else
                std::snprintf(cell, sizeof(cell), " %.3f ± %.3f (n=%d) |", s.mean, s.std_dev, s.n);
            md << cell;
        }
        md << "\n";
    }
    md << "\n";
}

}  // namespace

int cmd_report(const ExperimentConfig& cfg, const RunFlags& flags) {
    const Dataset data = load_or_build_dataset(cfg);
    if (cfg.attack.policy.target >= data.classes) throw RejectedInput("attack target outside dataset classes");

    Samples summary;
    Samples correlation;
    std::map<std::string, Model> benign_cache;
    auto benign_for = [&](const std::string& ref) -> const Model& {
        auto it = benign_cache.find(ref);
        if (it != benign_cache.end()) return it->second;
        const fs::path dir = cfg.out_dir / ref;
        if (!fs::exists(dir / "model.json"))
            throw UpstreamMissing("benign model missing: " + (dir / "model.json").string());
        return benign_cache.emplace(ref, load_model(dir)).first->second;
    };

    int records_seen = 0;
    for (const std::uint64_t seed : cfg.seeds) {
        const std::vector<IndexEntry> entries = read_index(seed_dir(cfg, seed) / "db");
        for (const IndexEntry& entry : entries) {
            const InfectedRecord rec = load_record(entry.dir);
            const std::string level = level_name(rec.level);
            ++records_seen;

            const fs::path cor_file = entry.dir / "correlation.json";
            json cor;
            if (flags.force || !fs::exists(cor_file)) {
                const Model infected = load_model(entry.dir / "model");
                const TriggerSpec trigger = trigger_for_record(cfg, rec, benign_for(rec.benign_ref));
                const PoisonedTestSet poisoned = poison_test_set(data, cfg.attack.policy, trigger);
                const CorrelationReport cr =
                    correlation_report(infected, rec.subnet(), data.test, poisoned, cfg.attack.policy.target);
                cor["asr_cor_i"] = cr.asr_cor_i;
                cor["asr_cor_r"] = cr.asr_cor_r;
                cor["ca_cor_i"] = cr.ca_cor_i;
                cor["ca_cor_r"] = cr.ca_cor_r;
                std::ofstream out(cor_file);
                out << cor.dump(2) << "\n";
            } else {
                std::ifstream in(cor_file);
                try {
                    in >> cor;
                } catch (const json::exception& e) {
                    throw FormatError("cmd_report: " + cor_file.string() + ": " + e.what());
                }
            }
            for (const char* metric : {"asr_cor_i", "asr_cor_r", "ca_cor_i", "ca_cor_r"})
                correlation[{rec.attack, level, metric}].push_back(cor.at(metric).get<double>());

            const fs::path loc_file = entry.dir / "localization.json";
            if (fs::exists(loc_file)) {
                const LoadedLocalizations locs = load_localizations(loc_file);
                for (const LocalizationResult& r : locs.results) {
                    const double score = r.failed ? 0.0 : wji(rec.subnet(), rec.rc, r.ids());
                    summary[{r.method, level, "wji"}].push_back(score);
                    summary[{r.method, level, "time_seconds"}].push_back(r.time_seconds);
                }
            }

            const fs::path repairs = entry.dir / "repairs";
            if (fs::exists(repairs))
                for (const fs::directory_entry& f : fs::directory_iterator(repairs)) {
                    if (f.path().extension() != ".json") continue;
                    const RepairOutcome o = load_repair(f.path());
                    summary[{o.source_localization, level, "cad_" + o.method}].push_back(o.cad);
                    summary[{o.source_localization, level, "asrd_" + o.method}].push_back(o.asrd);
                }
        }
    }

    const fs::path report_dir = cfg.out_dir / "report";
    fs::create_directories(report_dir);
    write_csv(report_dir / "summary.csv", summary);
    write_csv(report_dir / "correlation.csv", correlation);

    std::ofstream md(report_dir / "report.md");
    md << "# Defect database report\n\n";
    md << "Records: " << records_seen << " across " << cfg.seeds.size() << " seed(s). Cells are mean ± std.\n\n";
    if (records_seen == 0) md << "The database is empty.\n";
    write_metric_table(md, "Localization effectiveness (WJI, %)", "wji", summary, true);
    write_metric_table(md, "Localization time (seconds)", "time_seconds", summary, false);
    write_metric_table(md, "Pruning repair: attack success drop (ASRD, %)", "asrd_prune", summary, true);
    write_metric_table(md, "Pruning repair: clean accuracy drop (CAD, %)", "cad_prune", summary, true);
    write_metric_table(md, "Fine-tuning repair: attack success drop (ASRD, %)", "asrd_finetune", summary, true);
    write_metric_table(md, "Fine-tuning repair: clean accuracy drop (CAD, %)", "cad_finetune", summary, true);
    write_metric_table(md, "Masking the injected set: ASR drop (%)", "asr_cor_i", correlation, true);
    write_metric_table(md, "Masking the injected set: CA drop (%)", "ca_cor_i", correlation, true);
    write_metric_table(md, "Masking the complement: ASR drop (%)", "asr_cor_r", correlation, true);
    write_metric_table(md, "Masking the complement: CA drop (%)", "ca_cor_r", correlation, true);
    if (!md) throw FormatError("cmd_report: cannot write report.md");

    std::printf("report written to %s (%d record(s))\n", report_dir.string().c_str(), records_seen);
    return 0;
}

}  // namespace nf
