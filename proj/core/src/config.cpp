#include "neuroforge/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "neuroforge/errors.hpp"

namespace nf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw RejectedInput("config: unknown key \"" + key + "\" in " + where);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

DatasetSpec parse_dataset(const json& j, const fs::path& base_dir) {
    ensure_keys(j, {"kind", "classes", "per_class", "hw", "seed", "cifar_dir"}, "dataset");
    DatasetSpec d;
    d.kind = get_or<std::string>(j, "kind", d.kind);
    if (d.kind != "synthetic" && d.kind != "cifar10")
        throw RejectedInput("config: dataset.kind must be synthetic or cifar10");
    d.classes = get_or<int>(j, "classes", d.classes);
    d.per_class = get_or<int>(j, "per_class", d.per_class);
    d.hw = get_or<int>(j, "hw", d.hw);
    d.seed = get_or<std::uint64_t>(j, "seed", d.seed);
    if (j.contains("cifar_dir")) {
        fs::path p = j.at("cifar_dir").get<std::string>();
        d.cifar_dir = (p.is_absolute() ? p : base_dir / p).string();
    }
    if (d.kind == "synthetic") {
        if (d.classes < 2) throw RejectedInput("config: dataset.classes must be >= 2");
        if (d.per_class < 5) throw RejectedInput("config: dataset.per_class must be >= 5");
        if (d.hw < 8 || d.hw % 8 != 0) throw RejectedInput("config: dataset.hw must be a positive multiple of 8");
    } else if (d.cifar_dir.empty()) {
        throw RejectedInput("config: dataset.cifar_dir required for cifar10");
    }
    return d;
}

BenignTrainSpec parse_train(const json& j) {
    ensure_keys(j, {"epochs", "lr", "momentum", "batch_size", "ca_floor", "dropout"}, "train");
    BenignTrainSpec t;
    t.epochs = get_or<int>(j, "epochs", t.epochs);
    t.lr = get_or<float>(j, "lr", t.lr);
    t.momentum = get_or<float>(j, "momentum", t.momentum);
    t.batch_size = get_or<int>(j, "batch_size", t.batch_size);
    t.ca_floor = get_or<double>(j, "ca_floor", t.ca_floor);
    t.dropout = get_or<float>(j, "dropout", t.dropout);
    if (t.epochs < 0 || t.lr <= 0.0f || t.batch_size < 1)
        throw RejectedInput("config: invalid train section");
    if (t.dropout < 0.0f || t.dropout >= 0.9f)
        throw RejectedInput("config: train.dropout must be in [0, 0.9)");
    return t;
}

AttackConfig parse_attack(const json& j) {
    ensure_keys(j,
                {"target", "rate", "epochs", "lr", "momentum", "batch_size", "head_lr_scale", "trojan_steps",
                 "trojan_lr", "trojan_mask", "sra_boost"},
                "attack");
    AttackConfig a;
    a.policy.target = get_or<int>(j, "target", a.policy.target);
    a.policy.rate = get_or<float>(j, "rate", a.policy.rate);
    a.epochs = get_or<int>(j, "epochs", a.epochs);
    a.lr = get_or<float>(j, "lr", a.lr);
    a.momentum = get_or<float>(j, "momentum", a.momentum);
    a.batch_size = get_or<int>(j, "batch_size", a.batch_size);
    a.head_lr_scale = get_or<float>(j, "head_lr_scale", a.head_lr_scale);
    a.trojan_steps = get_or<int>(j, "trojan_steps", a.trojan_steps);
    a.trojan_lr = get_or<float>(j, "trojan_lr", a.trojan_lr);
    a.trojan_mask = get_or<int>(j, "trojan_mask", a.trojan_mask);
    a.sra_boost = get_or<float>(j, "sra_boost", a.sra_boost);
    if (a.policy.rate <= 0.0f || a.policy.rate >= 1.0f)
        throw RejectedInput("config: attack.rate must be in (0, 1)");
    if (a.policy.target < 0) throw RejectedInput("config: attack.target must be >= 0");
    if (a.epochs < 0 || a.lr <= 0.0f || a.batch_size < 1 || a.trojan_steps < 0 || a.trojan_mask < 1)
        throw RejectedInput("config: invalid attack section");
    if (a.head_lr_scale < 0.0f) throw RejectedInput("config: attack.head_lr_scale must be >= 0");
    return a;
}

LocateOptions parse_locate(const json& j) {
    ensure_keys(j, {"nc", "anp", "deepmufl"}, "locate");
    LocateOptions o;
    if (j.contains("nc")) {
        const json& n = j.at("nc");
        ensure_keys(n, {"steps", "lr", "momentum", "lambda_init"}, "locate.nc");
        o.nc.steps = get_or<int>(n, "steps", o.nc.steps);
        o.nc.lr = get_or<float>(n, "lr", o.nc.lr);
        o.nc.momentum = get_or<float>(n, "momentum", o.nc.momentum);
        o.nc.lambda_init = get_or<float>(n, "lambda_init", o.nc.lambda_init);
    }
    if (j.contains("anp")) {
        const json& a = j.at("anp");
        ensure_keys(a, {"epsilon", "trade_off", "steps", "gate_lr"}, "locate.anp");
        o.anp.epsilon = get_or<float>(a, "epsilon", o.anp.epsilon);
        o.anp.trade_off = get_or<float>(a, "trade_off", o.anp.trade_off);
        o.anp.steps = get_or<int>(a, "steps", o.anp.steps);
        o.anp.gate_lr = get_or<float>(a, "gate_lr", o.anp.gate_lr);
    }
    if (j.contains("deepmufl")) {
        const json& d = j.at("deepmufl");
        ensure_keys(d, {"seed"}, "locate.deepmufl");
        o.deepmufl.seed = get_or<std::uint64_t>(d, "seed", o.deepmufl.seed);
    }
    return o;
}

std::vector<RepairConfig> parse_repairs(const json& j) {
    std::vector<RepairConfig> out;
    for (const json& r : j) {
        ensure_keys(r, {"method", "epochs", "lr", "momentum", "batch_size", "head_trainable"}, "repairs[]");
        RepairConfig c;
        c.method = r.at("method").get<std::string>();
        if (c.method != "prune" && c.method != "finetune")
            throw RejectedInput("config: repair method must be prune or finetune");
        c.epochs = get_or<int>(r, "epochs", c.epochs);
        c.lr = get_or<float>(r, "lr", c.lr);
        c.momentum = get_or<float>(r, "momentum", c.momentum);
        c.batch_size = get_or<int>(r, "batch_size", c.batch_size);
        c.head_trainable = get_or<bool>(r, "head_trainable", c.head_trainable);
        if (c.epochs < 0 || c.lr <= 0.0f || c.batch_size < 1)
            throw RejectedInput("config: invalid repair entry");
        out.push_back(c);
    }
    return out;
}

const std::set<std::string> kKnownAttacks = {"badnets", "blended", "trojannn", "sra"};
const std::set<std::string> kKnownLocalizers = {"fp", "nc", "anp", "clp", "deepmufl", "slicer"};

}  // namespace

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    if (!j.is_object()) throw RejectedInput("config: top level must be an object");
    ensure_keys(j,
                {"dataset", "architecture", "out_dir", "seeds", "clean_slice_fraction", "train", "attack",
                 "attacks", "levels", "localizers", "locate", "repairs"},
                "top level");

    ExperimentConfig cfg;
    if (j.contains("dataset")) cfg.dataset = parse_dataset(j.at("dataset"), base_dir);
    cfg.architecture = get_or<std::string>(j, "architecture", cfg.architecture);
    if (cfg.architecture != "tiny_vgg" && cfg.architecture != "tiny_resnet")
        throw RejectedInput("config: architecture must be tiny_vgg or tiny_resnet");

    if (j.contains("out_dir")) {
        fs::path p = j.at("out_dir").get<std::string>();
        cfg.out_dir = p.is_absolute() ? p : base_dir / p;
    }

    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw RejectedInput("config: at least one seed required");

    cfg.clean_slice_fraction = get_or<double>(j, "clean_slice_fraction", cfg.clean_slice_fraction);
    if (cfg.clean_slice_fraction <= 0.0 || cfg.clean_slice_fraction > 1.0)
        throw RejectedInput("config: clean_slice_fraction must be in (0, 1]");

    if (j.contains("train")) cfg.train = parse_train(j.at("train"));
    if (j.contains("attack")) cfg.attack = parse_attack(j.at("attack"));

    if (j.contains("attacks")) cfg.attacks = j.at("attacks").get<std::vector<std::string>>();
    for (const std::string& a : cfg.attacks)
        if (!kKnownAttacks.count(a)) throw RejectedInput("config: unknown attack " + a);

    if (j.contains("levels")) {
        cfg.levels.clear();
        for (const json& l : j.at("levels")) cfg.levels.push_back(level_from_name(l.get<std::string>()));
    }
    if (cfg.levels.empty()) throw RejectedInput("config: at least one level required");

    if (j.contains("localizers")) cfg.localizers = j.at("localizers").get<std::vector<std::string>>();
    for (const std::string& m : cfg.localizers)
        if (!kKnownLocalizers.count(m)) throw RejectedInput("config: unknown localizer " + m);

    if (j.contains("locate")) cfg.locate = parse_locate(j.at("locate"));

    if (j.contains("repairs")) {
        cfg.repairs = parse_repairs(j.at("repairs"));
    } else {
        RepairConfig prune_cfg;
        RepairConfig ft_cfg;
        ft_cfg.method = "finetune";
        cfg.repairs = {prune_cfg, ft_cfg};
    }
    return cfg;
}

ExperimentConfig load_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw RejectedInput("config: cannot open " + file.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), file.parent_path());
}

}  // namespace nf
