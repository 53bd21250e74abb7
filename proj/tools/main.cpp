// Copyright (c) 2026 FunLoRA contributors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner. Subcommands: continual, analyze-rank, importance,
// nfe-sweep, bounds, report.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "funlora/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace funlora;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";
constexpr const char* kOutputEnvVar = "FUNLORA_OUT";

double wall_now() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// ---- config ------------------------------------------------------------------

/// Flat-section key=value document. '#' and ';' start comments. Unknown keys
/// are rejected with their full path.
std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line, section;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        const std::string full = section.empty() ? key : section + "." + key;
        if (!kv.emplace(full, val).second)
            throw std::runtime_error("duplicate config key: " + full);
    }
    return kv;
}

class ConfigReader {
public:
    explicit ConfigReader(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback) {
        used_.insert(key);
        auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }
    double num(const std::string& key, double fallback) {
        const std::string s = str(key, "");
        if (s.empty()) return fallback;
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size())
            throw std::runtime_error("config key " + key + ": not a number: " + s);
        return v;
    }
    long integer(const std::string& key, long fallback) {
        const double v = num(key, static_cast<double>(fallback));
        const long i = static_cast<long>(v);
        if (static_cast<double>(i) != v)
            throw std::runtime_error("config key " + key + ": expected an integer");
        return i;
    }
    bool boolean(const std::string& key, bool fallback) {
        const std::string s = str(key, fallback ? "true" : "false");
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw std::runtime_error("config key " + key + ": expected a boolean, got " + s);
    }
    std::vector<int> int_list(const std::string& key) {
        const std::string s = str(key, "");
        std::vector<int> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(std::stoi(item));
        return out;
    }

    /// Throws on any key never consumed by the schema.
    void reject_unknown() const {
        for (const auto& [k, v] : kv_)
            if (!used_.count(k))
                throw std::runtime_error("unknown config key: " + k);
    }

    const std::map<std::string, std::string>& raw() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
    std::set<std::string> used_;
};

Kind kind_from_config(const std::string& s) {
    if (s == "vanilla_add") return Kind::VanillaAdd;
    if (s == "vanilla_mul") return Kind::VanillaMul;
    if (s == "rshift") return Kind::RShift;
    if (s == "pow") return Kind::Pow;
    if (s == "cos") return Kind::Cos;
    throw std::runtime_error("config key net.kind: unknown kind " + s);
}

ExperimentConfig read_experiment_config(ConfigReader& cfg) {
    ExperimentConfig e;
    e.stream.tasks = static_cast<int>(cfg.integer("stream.tasks", e.stream.tasks));
    e.stream.classes_per_task =
        static_cast<int>(cfg.integer("stream.classes_per_task", e.stream.classes_per_task));
    e.stream.train_per_class =
        static_cast<int>(cfg.integer("stream.train_per_class", e.stream.train_per_class));
    e.stream.test_per_class =
        static_cast<int>(cfg.integer("stream.test_per_class", e.stream.test_per_class));
    const std::string family = cfg.str("stream.family", "gaussian");
    if (family == "gaussian") e.stream.family = DataFamily::Gaussian;
    else if (family == "rings") e.stream.family = DataFamily::Rings;
    else throw std::runtime_error("config key stream.family: unknown family " + family);
    e.stream.radius = cfg.num("stream.radius", e.stream.radius);
    e.stream.sigma = cfg.num("stream.sigma", e.stream.sigma);
    e.stream.elongation = cfg.num("stream.elongation", e.stream.elongation);

    e.net.data_dim = static_cast<std::size_t>(cfg.integer("net.data_dim", 2));
    e.net.time_features = static_cast<std::size_t>(cfg.integer("net.time_features", 8));
    e.net.hidden_width = static_cast<std::size_t>(cfg.integer("net.hidden_width", 64));
    e.net.hidden_layers = static_cast<std::size_t>(cfg.integer("net.hidden_layers", 4));
    e.net.adapted_layers = cfg.int_list("net.adapted_layers");
    e.net.kind.kind = kind_from_config(cfg.str("net.kind", "cos"));
    e.net.kind.p = static_cast<int>(cfg.integer("net.p", 10));
    e.net.kind.trainable = cfg.boolean("net.trainable_hyper", true);
    e.net.combine = combine_from_name(cfg.str("net.combine", "mul"));
    e.net.calibrate = cfg.boolean("net.calibrate", true);
    e.net.ratio_k = static_cast<std::size_t>(cfg.integer("net.ratio_k", 1));
    e.net.sqrt_factorization = cfg.boolean("net.sqrt_factorization", false);
    e.net.vanilla_conditioning = cfg.boolean("net.vanilla_conditioning", false);

    e.task1_epochs = static_cast<int>(cfg.integer("train.task1_epochs", e.task1_epochs));
    e.incr_epochs = static_cast<int>(cfg.integer("train.incr_epochs", e.incr_epochs));
    e.task1_lr = cfg.num("train.task1_lr", e.task1_lr);
    e.incr_lr = cfg.num("train.incr_lr", e.incr_lr);
    e.batch = static_cast<std::size_t>(cfg.integer("train.batch", static_cast<long>(e.batch)));
    e.ema_enabled = cfg.boolean("train.ema", e.ema_enabled);
    e.ema_decay_task1 = cfg.num("train.ema_decay_task1", e.ema_decay_task1);
    e.ema_decay_incr = cfg.num("train.ema_decay_incr", e.ema_decay_incr);
    e.ema_start_task1 = static_cast<int>(cfg.integer("train.ema_start_task1", e.ema_start_task1));
    e.ema_start_incr = static_cast<int>(cfg.integer("train.ema_start_incr", e.ema_start_incr));

    e.solver.method = solver_from_name(cfg.str("solver.method", "dopri5"));
    e.solver.steps = static_cast<int>(cfg.integer("solver.steps", e.solver.steps));
    e.solver.abs_tol = cfg.num("solver.abs_tol", e.solver.abs_tol);
    e.solver.rel_tol = cfg.num("solver.rel_tol", e.solver.rel_tol);

    e.resample_factor = cfg.num("sampling.resample_factor", e.resample_factor);

    e.classifier_epochs =
        static_cast<int>(cfg.integer("classifier.epochs", e.classifier_epochs));
    e.classifier_lr = cfg.num("classifier.lr", e.classifier_lr);
    e.classifier_batch = static_cast<std::size_t>(
        cfg.integer("classifier.batch", static_cast<long>(e.classifier_batch)));

    e.seed = static_cast<std::uint64_t>(cfg.integer("run.seed", 0));
    e.stream.seed = e.seed;
    return e;
}

/// FNV-1a over "key=value\n" pairs in sorted key order, so the hash is stable
/// under reordering of the config file.
std::string config_hash(const std::map<std::string, std::string>& kv) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&](const std::string& s) {
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [k, v] : kv) {
        feed(k);
        feed("=");
        feed(v);
        feed("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---- output plumbing -----------------------------------------------------------

struct Manifest {
    std::string hash;
    std::vector<std::uint64_t> seeds;
    std::map<std::string, double> phase_seconds;
    std::vector<std::string> outputs;
    json extra = json::object();

    void write(const fs::path& dir) const {
        json j;
        j["artifact_version"] = kArtifactVersion;
        j["config_hash"] = hash;
        j["seeds"] = seeds;
        j["phase_wall_seconds"] = phase_seconds;
        j["outputs"] = outputs;
        for (const auto& [k, v] : extra.items()) j[k] = v;
        std::ofstream out(dir / "manifest.json");
        out << j.dump(2) << "\n";
    }
};

fs::path resolve_out_dir(const std::string& flag) {
    fs::path dir;
    if (!flag.empty()) {
        dir = flag;
    } else if (const char* env = std::getenv(kOutputEnvVar)) {
        dir = env;
    } else {
        dir = "out";
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw std::runtime_error("cannot create output directory: " + dir.string());
    return dir;
}

void write_text(const fs::path& path, const std::string& text, Manifest& manifest) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    manifest.outputs.push_back(path.string());
}

std::string csv_num(double v) {
    std::ostringstream ss;
    ss.precision(12);
    ss << v;
    return ss.str();
}

// ---- subcommands -----------------------------------------------------------------

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int seeds = 1;
    bool canonical = false;
};

ExperimentConfig load_config(const CommonArgs& args,
                             std::map<std::string, std::string>* raw = nullptr) {
    std::map<std::string, std::string> kv;
    if (!args.config_path.empty()) kv = parse_config_file(args.config_path);
    ConfigReader reader(std::move(kv));
    ExperimentConfig cfg = read_experiment_config(reader);
    reader.reject_unknown();
    if (args.seed_set) {
        cfg.seed = args.seed;
        cfg.stream.seed = args.seed;
    }
    if (raw) *raw = reader.raw();
    return cfg;
}

int cmd_continual(const CommonArgs& args, bool with_bounds, bool save_checkpoints) {
    std::map<std::string, std::string> raw;
    ExperimentConfig base = load_config(args, &raw);
    const fs::path dir = resolve_out_dir(args.out_dir);
    Manifest manifest;
    manifest.hash = config_hash(raw);

    std::vector<double> la_values, aia_values;
    for (int s = 0; s < args.seeds; ++s) {
        ExperimentConfig cfg = base;
        cfg.seed = base.seed + static_cast<std::uint64_t>(s);
        cfg.stream.seed = cfg.seed;
        manifest.seeds.push_back(cfg.seed);

        const double t0 = wall_now();
        RunResult run = run_algorithm1(cfg);
        manifest.phase_seconds["continual_seed" + std::to_string(cfg.seed)] =
            wall_now() - t0;

        const std::string tag = std::to_string(cfg.seed);
        write_text(dir / ("metrics_seed" + tag + ".json"),
                   run.metrics.to_json(args.canonical).dump(2) + "\n", manifest);

        std::string traj = "task,accuracy,running_aa\n";
        for (std::size_t t = 0; t < run.metrics.per_task_accuracy.size(); ++t)
            traj += std::to_string(t + 1) + "," +
                    csv_num(run.metrics.per_task_accuracy[t]) + "," +
                    csv_num(run.metrics.running_aa[t]) + "\n";
        write_text(dir / ("trajectory_seed" + tag + ".csv"), traj, manifest);

        if (save_checkpoints) {
            for (std::size_t t = 0; t < run.task_checkpoints.size(); ++t)
                write_text(dir / ("checkpoint_seed" + tag + "_task" +
                                  std::to_string(t + 1) + ".json"),
                           run.task_checkpoints[t].dump() + "\n", manifest);
        }
        la_values.push_back(run.metrics.la);
        aia_values.push_back(run.metrics.aia);

        if (with_bounds) {
            const double b0 = wall_now();
            BoundsResult b = bounds_runs(cfg);
            manifest.phase_seconds["bounds_seed" + std::to_string(cfg.seed)] =
                wall_now() - b0;
            json bj;
            bj["multitask_classifier_la"] = b.multitask_classifier_la;
            bj["multitask_generative_la"] = b.multitask_generative_la;
            bj["vanilla_conditioning_la"] = b.vanilla_conditioning_la;
            write_text(dir / ("bounds_seed" + tag + ".json"), bj.dump(2) + "\n",
                       manifest);
        }
    }

    if (args.seeds > 1) {
        auto mean_std = [](const std::vector<double>& v) {
            const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
            double s2 = 0;
            for (double x : v) s2 += (x - m) * (x - m);
            return std::pair<double, double>(m, std::sqrt(s2 / v.size()));
        };
        json summary;
        auto [lm, ls] = mean_std(la_values);
        auto [am, as] = mean_std(aia_values);
        summary["seeds"] = manifest.seeds;
        summary["la_mean"] = lm;
        summary["la_stddev"] = ls;
        summary["aia_mean"] = am;
        summary["aia_stddev"] = as;
        write_text(dir / "summary.json", summary.dump(2) + "\n", manifest);
    }
    manifest.write(dir);
    std::cout << "wrote " << manifest.outputs.size() << " files to " << dir.string()
              << "\n";
    return 0;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    json j;
    in >> j;
    return j;
}

int cmd_analyze_rank(const CommonArgs& args, const std::string& checkpoint_path,
                     double rel_tol, const std::string& per_epoch_dir) {
    const fs::path dir = resolve_out_dir(args.out_dir);
    Manifest manifest;
    manifest.hash = "n/a";

    VectorFieldNet net = checkpoint_from_json(read_json_file(checkpoint_path));
    RankReport report = rank_report(net.store(), rel_tol);

    std::string csv = "layer,class,rank\n";
    for (const auto& [key, r] : report.per_class)
        csv += std::to_string(key.first) + "," + std::to_string(key.second) + "," +
               std::to_string(r) + "\n";
    write_text(dir / "ranks.csv", csv, manifest);

    std::string summary = "layer,max_rank,mean_rank\n";
    for (const auto& [layer, mx] : report.per_layer_max)
        summary += std::to_string(layer) + "," + std::to_string(mx) + "," +
                   csv_num(report.per_layer_mean.at(layer)) + "\n";
    write_text(dir / "rank_summary.csv", summary, manifest);

    if (!per_epoch_dir.empty()) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(per_epoch_dir))
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        std::string series = "checkpoint,max_rank,mean_rank\n";
        for (const auto& f : files) {
            VectorFieldNet n = checkpoint_from_json(read_json_file(f.string()));
            RankReport r = rank_report(n.store(), rel_tol);
            series += f.filename().string() + "," + std::to_string(r.max_rank) + "," +
                      csv_num(r.mean_rank) + "\n";
        }
        write_text(dir / "rank_series.csv", series, manifest);
    }
    manifest.extra["max_rank"] = report.max_rank;
    manifest.extra["mean_rank"] = report.mean_rank;
    manifest.write(dir);
    std::cout << "max rank " << report.max_rank << ", mean " << report.mean_rank << "\n";
    return 0;
}

LayerSelection parse_strategy(const std::string& s) {
    LayerSelection sel;
    std::stringstream ss(s);
    std::string head;
    std::getline(ss, head, ':');
    if (head == "top_k") {
        sel.strategy = LayerSelection::Strategy::TopK;
        ss >> sel.k;
    } else if (head == "range") {
        sel.strategy = LayerSelection::Strategy::IndexRange;
        char colon;
        ss >> sel.range_lo >> colon >> sel.range_hi;
    } else if (head == "threshold") {
        sel.strategy = LayerSelection::Strategy::Threshold;
        ss >> sel.threshold;
    } else {
        throw std::runtime_error("unknown selection strategy: " + s);
    }
    return sel;
}

int cmd_importance(const CommonArgs& args, const std::string& checkpoint_path,
                   const std::string& strategy) {
    const fs::path dir = resolve_out_dir(args.out_dir);
    Manifest manifest;
    manifest.hash = "n/a";

    VectorFieldNet net = checkpoint_from_json(read_json_file(checkpoint_path));
    for (const auto& [key, a] : net.store().all())
        if (a.combine == Combine::Add)
            throw std::runtime_error(
                "importance assumes the multiplicative all-ones initialization; "
                "adapter at layer " + std::to_string(key.first) +
                " uses the additive convention");

    ImportanceReport report = importance_report(net.store());

    std::string csv = "layer,class,importance\n";
    for (const auto& [key, v] : report.per_class)
        csv += std::to_string(key.first) + "," + std::to_string(key.second) + "," +
               csv_num(v) + "\n";
    write_text(dir / "importance.csv", csv, manifest);

    std::string summary = "layer,mean_importance,class_stddev\n";
    std::vector<double> means;
    std::vector<int> layer_ids;
    for (const auto& [layer, m] : report.per_layer) {
        summary += std::to_string(layer) + "," + csv_num(m) + "," +
                   csv_num(report.per_layer_stddev.at(layer)) + "\n";
        means.push_back(m);
        layer_ids.push_back(layer);
    }
    write_text(dir / "importance_summary.csv", summary, manifest);

    std::string ponder = "layer_index,class_label,i,alpha_i,omega_i\n";
    for (const auto& [key, a] : net.store().all()) {
        if (!a.alphas.defined()) continue;
        for (std::size_t i = 0; i < a.alphas.size(); ++i)
            ponder += std::to_string(key.first) + "," + std::to_string(key.second) +
                      "," + std::to_string(i + 1) + "," + csv_num(a.alphas.at(i)) + "," +
                      (a.hyper.defined() ? csv_num(a.hyper.at(i)) : "") + "\n";
    }
    write_text(dir / "ponderations.csv", ponder, manifest);

    if (!strategy.empty()) {
        std::vector<int> positions = select_layers(means, parse_strategy(strategy));
        json selected = json::array();
        for (int pos : positions) selected.push_back(layer_ids[static_cast<std::size_t>(pos)]);
        manifest.extra["selected_layers"] = selected;
        std::cout << "selected layers: " << selected.dump() << "\n";
    }
    manifest.write(dir);
    return 0;
}

int cmd_nfe_sweep(const CommonArgs& args, const std::string& checkpoint_path,
                  const std::string& method, const std::vector<int>& nfe_list,
                  const std::vector<double>& factors) {
    std::map<std::string, std::string> raw;
    ExperimentConfig cfg = load_config(args, &raw);
    const fs::path dir = resolve_out_dir(args.out_dir);
    Manifest manifest;
    manifest.hash = config_hash(raw);

    VectorFieldNet net = checkpoint_from_json(read_json_file(checkpoint_path));
    TaskStream stream = make_task_stream(cfg.stream);
    std::vector<int> labels;
    for (int y : net.store().classes()) labels.push_back(y);
    for (const auto& [y, e] : net.embeddings())
        if (std::find(labels.begin(), labels.end(), y) == labels.end())
            labels.push_back(y);
    std::sort(labels.begin(), labels.end());

    // real test set over the classes the checkpoint knows
    std::vector<double> test_x;
    std::vector<int> test_y;
    for (const auto& task : stream.tasks)
        for (std::size_t i = 0; i < task.test.labels.size(); ++i) {
            const int y = task.test.labels[i];
            if (std::find(labels.begin(), labels.end(), y) == labels.end()) continue;
            test_x.push_back(task.test.x.at(i, 0));
            test_x.push_back(task.test.x.at(i, 1));
            test_y.push_back(y);
        }
    LabeledData test;
    test.x = Tensor::from(std::move(test_x), {test_y.size(), 2});
    test.labels = std::move(test_y);

    const int total_classes = stream.total_classes();
    std::string csv = "method,nfe,factor,la,sample_seconds\n";
    for (int nfe : nfe_list) {
        SolverConfig solver = cfg.solver;
        solver.method = solver_from_name(method);
        solver.steps = nfe_budget_to_steps(solver.method, nfe);
        for (double factor : factors) {
            const int per_class =
                static_cast<int>(std::lround(factor * cfg.stream.train_per_class));
            const double t0 = wall_now();
            LabeledData synthetic = sample_synthetic(
                net, labels, per_class, solver, seed_for(cfg.seed, "nfe_sweep"));
            const double sample_seconds = wall_now() - t0;
            ClassifierNet clf = classifier_train(
                synthetic, static_cast<std::size_t>(total_classes),
                cfg.classifier_epochs, seed_for(cfg.seed, "nfe_clf"),
                cfg.classifier_lr, cfg.classifier_batch);
            const double acc = classifier_eval(clf, test);
            csv += method + "," + std::to_string(nfe) + "," + csv_num(factor) + "," +
                   csv_num(acc) + "," + csv_num(sample_seconds) + "\n";
        }
    }
    write_text(dir / "nfe_sweep.csv", csv, manifest);
    manifest.write(dir);
    return 0;
}

int cmd_bounds(const CommonArgs& args) {
    std::map<std::string, std::string> raw;
    ExperimentConfig cfg = load_config(args, &raw);
    const fs::path dir = resolve_out_dir(args.out_dir);
    Manifest manifest;
    manifest.hash = config_hash(raw);

    const double t0 = wall_now();
    BoundsResult b = bounds_runs(cfg);
    manifest.phase_seconds["bounds"] = wall_now() - t0;
    json j;
    j["multitask_classifier_la"] = b.multitask_classifier_la;
    j["multitask_generative_la"] = b.multitask_generative_la;
    j["vanilla_conditioning_la"] = b.vanilla_conditioning_la;
    write_text(dir / "bounds.json", j.dump(2) + "\n", manifest);
    manifest.write(dir);
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_report(const CommonArgs& args) {
    const fs::path dir = resolve_out_dir(args.out_dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("metrics_seed", 0) == 0 && entry.path().extension() == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        std::cerr << "no metrics files in " << dir.string() << "\n";
        return 1;
    }
    std::ostringstream out;
    out << "file,la,aia,ppc,total_nfe\n";
    for (const auto& f : files) {
        json j = read_json_file(f.string());
        out << f.filename().string() << "," << csv_num(j.at("la").get<double>()) << ","
            << csv_num(j.at("aia").get<double>()) << "," << j.at("ppc").get<long>()
            << "," << j.at("total_nfe").get<long>() << "\n";
    }
    std::ofstream report(dir / "report.csv");
    report << out.str();
    std::cout << out.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FunLoRA continual flow matching experiment runner"};
    app.require_subcommand(1);

    CommonArgs common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "Experiment config file");
        sub->add_option("--out", common.out_dir,
                        "Output directory (default $FUNLORA_OUT or ./out)");
        sub->add_option("--seed", common.seed, "Master seed override")
            ->each([&](const std::string&) { common.seed_set = true; });
        sub->add_option("--seeds", common.seeds, "Number of consecutive seeds to run");
        sub->add_flag("--canonical-json", common.canonical,
                      "Exclude wall times from metrics JSON");
    };

    auto* continual = app.add_subcommand("continual", "Class-incremental run");
    bool with_bounds = false, save_checkpoints = true;
    continual->add_flag("--bounds", with_bounds, "Also run the bound experiments");
    continual->add_flag("--no-checkpoints{false}", save_checkpoints,
                        "Skip per-task checkpoint files");
    add_common(continual);

    auto* analyze = app.add_subcommand("analyze-rank", "Adapter rank diagnostics");
    std::string checkpoint_path, per_epoch_dir, strategy, method = "euler";
    double rel_tol = 1e-8;
    analyze->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    analyze->add_option("--rel-tol", rel_tol, "Relative singular value tolerance");
    analyze->add_option("--per-epoch", per_epoch_dir,
                        "Directory of checkpoints for a rank-over-time series");
    add_common(analyze);

    auto* importance_cmd = app.add_subcommand("importance", "Adapter importance");
    importance_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")
        ->required();
    importance_cmd->add_option("--strategy", strategy,
                               "Layer selection: top_k:K, range:LO:HI, threshold:T");
    add_common(importance_cmd);

    auto* sweep = app.add_subcommand("nfe-sweep", "Sampling budget sweep");
    std::vector<int> nfe_list{10, 25, 50};
    std::vector<double> factor_list{1.0};
    sweep->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required();
    sweep->add_option("--method", method, "Solver: euler, rk4, dopri5");
    sweep->add_option("--nfe", nfe_list, "Function evaluation budgets");
    sweep->add_option("--factors", factor_list, "Resample factors");
    add_common(sweep);

    auto* bounds = app.add_subcommand("bounds", "Upper/lower bound runs");
    add_common(bounds);

    auto* report = app.add_subcommand("report", "Summarize metrics files in --out");
    add_common(report);

    CLI11_PARSE(app, argc, argv);

    try {
        if (continual->parsed()) return cmd_continual(common, with_bounds, save_checkpoints);
        if (analyze->parsed())
            return cmd_analyze_rank(common, checkpoint_path, rel_tol, per_epoch_dir);
        if (importance_cmd->parsed())
            return cmd_importance(common, checkpoint_path, strategy);
        if (sweep->parsed())
            return cmd_nfe_sweep(common, checkpoint_path, method, nfe_list, factor_list);
        if (bounds->parsed()) return cmd_bounds(common);
        if (report->parsed()) return cmd_report(common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
