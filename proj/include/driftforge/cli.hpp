#ifndef DRIFTFORGE_CLI_HPP
#define DRIFTFORGE_CLI_HPP

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftforge/common.hpp"
#include "driftforge/dataset.hpp"
#include "driftforge/harness.hpp"
#include "driftforge/hcc.hpp"
#include "driftforge/ndcore.hpp"
#include "driftforge/selectors.hpp"

namespace driftforge::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small IO helpers
// ---------------------------------------------------------------------------

inline std::string read_text_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// write-temp-then-rename so partially written outputs never appear
inline void write_file_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw DataError("cannot open for writing: " + tmp.string());
        os << content;
    }
    fs::rename(tmp, path);
}

inline json load_json(const fs::path& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Strict schema helpers: unknown keys and type mismatches are reported with
// the offending key path.
// ---------------------------------------------------------------------------

namespace schema {

inline void check_keys(const json& obj, const std::string& path,
                       const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(path + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) throw ConfigError(path + "." + key + ": unknown key");
    }
}

template <typename T>
T get_or(const json& obj, const std::string& path, const std::string& key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(path + "." + key + ": wrong type");
    }
}

inline std::string require_string(const json& obj, const std::string& path,
                                  const std::string& key) {
    if (!obj.contains(key)) throw ConfigError(path + "." + key + ": required");
    if (!obj.at(key).is_string()) throw ConfigError(path + "." + key + ": expected a string");
    return obj.at(key).get<std::string>();
}

}  // namespace schema

// ---------------------------------------------------------------------------
// Enum <-> string
// ---------------------------------------------------------------------------

inline ndcore::OptKind opt_kind_from(const std::string& s, const std::string& path) {
    if (s == "sgd") return ndcore::OptKind::kSgd;
    if (s == "adam") return ndcore::OptKind::kAdam;
    throw ConfigError(path + ": optimizer must be 'sgd' or 'adam'");
}

inline const char* opt_kind_name(ndcore::OptKind k) {
    return k == ndcore::OptKind::kSgd ? "sgd" : "adam";
}

inline ndcore::LrSchedule schedule_from(const json& obj, const std::string& path) {
    schema::check_keys(obj, path, {"kind", "base_lr", "decay_factor", "decay_every", "total_epochs"});
    ndcore::LrSchedule s;
    const std::string kind = schema::get_or<std::string>(obj, path, "kind", "constant");
    if (kind == "constant") {
        s.kind = ndcore::LrSchedule::Kind::kConstant;
    } else if (kind == "step_decay") {
        s.kind = ndcore::LrSchedule::Kind::kStepDecay;
    } else if (kind == "cosine") {
        s.kind = ndcore::LrSchedule::Kind::kCosine;
    } else {
        throw ConfigError(path + ".kind: must be constant|step_decay|cosine");
    }
    s.base_lr = schema::get_or<double>(obj, path, "base_lr", 0.005);
    s.decay_factor = schema::get_or<double>(obj, path, "decay_factor", 0.95);
    s.decay_every = schema::get_or<int>(obj, path, "decay_every", 10);
    s.total_epochs = schema::get_or<int>(obj, path, "total_epochs", 0);
    if (s.base_lr <= 0) throw ConfigError(path + ".base_lr: must be positive");
    if (s.kind == ndcore::LrSchedule::Kind::kStepDecay &&
        (s.decay_factor <= 0 || s.decay_factor > 1 || s.decay_every <= 0)) {
        throw ConfigError(path + ": step_decay needs factor in (0,1] and positive decay_every");
    }
    if (s.kind == ndcore::LrSchedule::Kind::kCosine && s.total_epochs <= 0) {
        throw ConfigError(path + ".total_epochs: required for cosine");
    }
    return s;
}

inline json schedule_to_json(const ndcore::LrSchedule& s) {
    const char* kind = s.kind == ndcore::LrSchedule::Kind::kConstant     ? "constant"
                       : s.kind == ndcore::LrSchedule::Kind::kStepDecay ? "step_decay"
                                                                         : "cosine";
    return {{"kind", kind},
            {"base_lr", s.base_lr},
            {"decay_factor", s.decay_factor},
            {"decay_every", s.decay_every},
            {"total_epochs", s.total_epochs}};
}

// ---------------------------------------------------------------------------
// synth config
// ---------------------------------------------------------------------------

struct SynthCommand {
    dataset::SynthConfig synth;
    std::string out_file = "stream.tsv";
};

inline SynthCommand parse_synth_config(const json& root) {
    schema::check_keys(root, "config", {"synth", "out_file"});
    if (!root.contains("synth")) throw ConfigError("config.synth: required");
    const json& s = root.at("synth");
    schema::check_keys(s, "config.synth",
                       {"dim", "n_families", "benign_fraction", "months", "samples_per_month",
                        "family_birth_months", "drift_flip_prob", "seed"});
    SynthCommand cmd;
    cmd.synth.dim = schema::get_or<int>(s, "config.synth", "dim", 200);
    cmd.synth.n_families = schema::get_or<int>(s, "config.synth", "n_families", 3);
    cmd.synth.benign_fraction = schema::get_or<double>(s, "config.synth", "benign_fraction", 0.9);
    cmd.synth.months = schema::get_or<int>(s, "config.synth", "months", 12);
    cmd.synth.samples_per_month = schema::get_or<int>(s, "config.synth", "samples_per_month", 500);
    cmd.synth.family_birth_month = schema::get_or<std::vector<int>>(
        s, "config.synth", "family_birth_months", std::vector<int>(cmd.synth.n_families, 0));
    cmd.synth.drift_flip_prob = schema::get_or<double>(s, "config.synth", "drift_flip_prob", 0.0);
    cmd.synth.seed = schema::get_or<std::uint64_t>(s, "config.synth", "seed", 0);
    cmd.out_file = schema::get_or<std::string>(root, "config", "out_file", "stream.tsv");
    return cmd;
}

inline json synth_to_json(const SynthCommand& cmd) {
    return {{"synth",
             {{"dim", cmd.synth.dim},
              {"n_families", cmd.synth.n_families},
              {"benign_fraction", cmd.synth.benign_fraction},
              {"months", cmd.synth.months},
              {"samples_per_month", cmd.synth.samples_per_month},
              {"family_birth_months", cmd.synth.family_birth_month},
              {"drift_flip_prob", cmd.synth.drift_flip_prob},
              {"seed", cmd.synth.seed}}},
            {"out_file", cmd.out_file}};
}

// ---------------------------------------------------------------------------
// run config (also the `base`+`grid` unit of tune configs)
// ---------------------------------------------------------------------------

struct RunCommand {
    std::string stream_path;
    int initial_train_months = 6;
    harness::ALConfig al;
};

namespace detail {

inline void parse_method_sections(const json& root, const std::string& prefix,
                                  harness::ALConfig& al) {
    if (root.contains("hcc")) {
        const json& h = root.at("hcc");
        const std::string p = prefix + ".hcc";
        schema::check_keys(h, p,
                           {"encoder_hidden", "embedding_dim", "classifier_hidden", "margin",
                            "lambda_mode", "lambda", "batch_n", "epochs", "optimizer", "schedule",
                            "warm_optimizer", "warm_lr", "warm_epochs", "selector_n"});
        al.hcc_arch.encoder_hidden = schema::get_or<std::vector<int>>(
            h, p, "encoder_hidden", al.hcc_arch.encoder_hidden);
        al.hcc_arch.embedding_dim = schema::get_or<int>(h, p, "embedding_dim",
                                                        al.hcc_arch.embedding_dim);
        al.hcc_arch.classifier_hidden = schema::get_or<std::vector<int>>(
            h, p, "classifier_hidden", al.hcc_arch.classifier_hidden);
        al.hcc_train.margin = schema::get_or<double>(h, p, "margin", al.hcc_train.margin);
        const std::string lm = schema::get_or<std::string>(
            h, p, "lambda_mode",
            al.hcc_train.lambda_mode == hcc::LambdaMode::kAuto ? "auto" : "fixed");
        if (lm == "auto") {
            al.hcc_train.lambda_mode = hcc::LambdaMode::kAuto;
        } else if (lm == "fixed") {
            al.hcc_train.lambda_mode = hcc::LambdaMode::kFixed;
        } else {
            throw ConfigError(p + ".lambda_mode: must be auto|fixed");
        }
        al.hcc_train.lambda_value = schema::get_or<double>(h, p, "lambda", al.hcc_train.lambda_value);
        al.hcc_train.batch_half = schema::get_or<int>(h, p, "batch_n", al.hcc_train.batch_half);
        al.hcc_train.epochs = schema::get_or<int>(h, p, "epochs", al.hcc_train.epochs);
        if (h.contains("optimizer")) {
            al.hcc_train.optimizer =
                opt_kind_from(h.at("optimizer").get<std::string>(), p + ".optimizer");
        }
        if (h.contains("schedule")) al.hcc_train.schedule = schedule_from(h.at("schedule"), p + ".schedule");
        if (h.contains("warm_optimizer")) {
            al.hcc_train.warm_optimizer =
                opt_kind_from(h.at("warm_optimizer").get<std::string>(), p + ".warm_optimizer");
        }
        al.hcc_train.warm_lr = schema::get_or<double>(h, p, "warm_lr", al.hcc_train.warm_lr);
        al.hcc_train.warm_epochs = schema::get_or<int>(h, p, "warm_epochs", al.hcc_train.warm_epochs);
        al.selector_n_half = schema::get_or<int>(h, p, "selector_n", al.selector_n_half);
    }
    if (root.contains("mlp")) {
        const json& m = root.at("mlp");
        const std::string p = prefix + ".mlp";
        schema::check_keys(
            m, p, {"hidden", "batch", "optimizer", "learning_rate", "epochs", "warm_lr", "warm_epochs"});
        al.mlp.hidden = schema::get_or<std::vector<int>>(m, p, "hidden", al.mlp.hidden);
        al.mlp.batch = schema::get_or<int>(m, p, "batch", al.mlp.batch);
        if (m.contains("optimizer")) {
            al.mlp.optimizer = opt_kind_from(m.at("optimizer").get<std::string>(), p + ".optimizer");
        }
        al.mlp.learning_rate = schema::get_or<double>(m, p, "learning_rate", al.mlp.learning_rate);
        al.mlp.epochs = schema::get_or<int>(m, p, "epochs", al.mlp.epochs);
        al.mlp.warm_lr = schema::get_or<double>(m, p, "warm_lr", al.mlp.warm_lr);
        al.mlp.warm_epochs = schema::get_or<int>(m, p, "warm_epochs", al.mlp.warm_epochs);
    }
    if (root.contains("svm")) {
        const json& s = root.at("svm");
        const std::string p = prefix + ".svm";
        schema::check_keys(s, p, {"c", "epochs"});
        al.svm_c = schema::get_or<double>(s, p, "c", al.svm_c);
        al.svm_epochs = schema::get_or<int>(s, p, "epochs", al.svm_epochs);
    }
    if (root.contains("cade")) {
        const json& c = root.at("cade");
        const std::string p = prefix + ".cade";
        schema::check_keys(c, p,
                           {"encoder_hidden", "embedding_dim", "optimizer", "schedule", "epochs",
                            "batch", "margin", "contrastive_weight", "warm_optimizer", "warm_lr",
                            "warm_epochs"});
        al.cade_arch.encoder_hidden =
            schema::get_or<std::vector<int>>(c, p, "encoder_hidden", al.cade_arch.encoder_hidden);
        al.cade_arch.embedding_dim =
            schema::get_or<int>(c, p, "embedding_dim", al.cade_arch.embedding_dim);
        if (c.contains("optimizer")) {
            al.cade_train.optimizer =
                opt_kind_from(c.at("optimizer").get<std::string>(), p + ".optimizer");
        }
        if (c.contains("schedule")) {
            al.cade_train.schedule = schedule_from(c.at("schedule"), p + ".schedule");
        }
        al.cade_train.epochs = schema::get_or<int>(c, p, "epochs", al.cade_train.epochs);
        al.cade_train.batch = schema::get_or<int>(c, p, "batch", al.cade_train.batch);
        al.cade_train.margin = schema::get_or<double>(c, p, "margin", al.cade_train.margin);
        al.cade_train.contrastive_weight =
            schema::get_or<double>(c, p, "contrastive_weight", al.cade_train.contrastive_weight);
        if (c.contains("warm_optimizer")) {
            al.cade_train.warm_optimizer =
                opt_kind_from(c.at("warm_optimizer").get<std::string>(), p + ".warm_optimizer");
        }
        al.cade_train.warm_lr = schema::get_or<double>(c, p, "warm_lr", al.cade_train.warm_lr);
        al.cade_train.warm_epochs =
            schema::get_or<int>(c, p, "warm_epochs", al.cade_train.warm_epochs);
    }
}

inline const std::set<std::string> kRunKeys = {
    "stream", "initial_train_months", "method", "budget_per_month",
    "start_mode", "seed", "hcc", "mlp", "svm", "cade"};

}  // namespace detail

inline RunCommand parse_run_config(const json& root, const std::string& prefix = "config") {
    schema::check_keys(root, prefix, detail::kRunKeys);
    RunCommand cmd;
    cmd.stream_path = schema::require_string(root, prefix, "stream");
    cmd.initial_train_months = schema::get_or<int>(root, prefix, "initial_train_months", 6);
    cmd.al.method = harness::method_from_name(
        schema::get_or<std::string>(root, prefix, "method", "hcc_pseudo_loss"));
    cmd.al.budget_per_month = schema::get_or<int>(root, prefix, "budget_per_month", 50);
    const std::string sm = schema::get_or<std::string>(root, prefix, "start_mode", "cold");
    if (sm == "cold") {
        cmd.al.start_mode = hcc::StartMode::kCold;
    } else if (sm == "warm") {
        cmd.al.start_mode = hcc::StartMode::kWarm;
    } else {
        throw ConfigError(prefix + ".start_mode: must be cold|warm");
    }
    cmd.al.hcc_train.mode = cmd.al.start_mode;
    cmd.al.seed = schema::get_or<std::uint64_t>(root, prefix, "seed", 0);
    detail::parse_method_sections(root, prefix, cmd.al);
    harness::validate_config(cmd.al);
    return cmd;
}

inline json run_to_json(const RunCommand& cmd) {
    const harness::ALConfig& al = cmd.al;
    json root;
    root["stream"] = cmd.stream_path;
    root["initial_train_months"] = cmd.initial_train_months;
    root["method"] = harness::method_name(al.method);
    root["budget_per_month"] = al.budget_per_month;
    root["start_mode"] = al.start_mode == hcc::StartMode::kWarm ? "warm" : "cold";
    root["seed"] = al.seed;
    root["hcc"] = {{"encoder_hidden", al.hcc_arch.encoder_hidden},
                   {"embedding_dim", al.hcc_arch.embedding_dim},
                   {"classifier_hidden", al.hcc_arch.classifier_hidden},
                   {"margin", al.hcc_train.margin},
                   {"lambda_mode", al.hcc_train.lambda_mode == hcc::LambdaMode::kAuto ? "auto" : "fixed"},
                   {"lambda", al.hcc_train.lambda_value},
                   {"batch_n", al.hcc_train.batch_half},
                   {"epochs", al.hcc_train.epochs},
                   {"optimizer", opt_kind_name(al.hcc_train.optimizer)},
                   {"schedule", schedule_to_json(al.hcc_train.schedule)},
                   {"warm_optimizer", opt_kind_name(al.hcc_train.warm_optimizer)},
                   {"warm_lr", al.hcc_train.warm_lr},
                   {"warm_epochs", al.hcc_train.warm_epochs},
                   {"selector_n", al.selector_n_half}};
    root["mlp"] = {{"hidden", al.mlp.hidden},
                   {"batch", al.mlp.batch},
                   {"optimizer", opt_kind_name(al.mlp.optimizer)},
                   {"learning_rate", al.mlp.learning_rate},
                   {"epochs", al.mlp.epochs},
                   {"warm_lr", al.mlp.warm_lr},
                   {"warm_epochs", al.mlp.warm_epochs}};
    root["svm"] = {{"c", al.svm_c}, {"epochs", al.svm_epochs}};
    root["cade"] = {{"encoder_hidden", al.cade_arch.encoder_hidden},
                    {"embedding_dim", al.cade_arch.embedding_dim},
                    {"optimizer", opt_kind_name(al.cade_train.optimizer)},
                    {"schedule", schedule_to_json(al.cade_train.schedule)},
                    {"epochs", al.cade_train.epochs},
                    {"batch", al.cade_train.batch},
                    {"margin", al.cade_train.margin},
                    {"contrastive_weight", al.cade_train.contrastive_weight},
                    {"warm_optimizer", opt_kind_name(al.cade_train.warm_optimizer)},
                    {"warm_lr", al.cade_train.warm_lr},
                    {"warm_epochs", al.cade_train.warm_epochs}};
    return root;
}

// ---------------------------------------------------------------------------
// Manifests: every command writes one next to its outputs, and every command
// accepts a manifest as its --config (the resolved_config is used verbatim,
// which is what makes reruns bit-identical).
// ---------------------------------------------------------------------------

struct CliOptions {
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed_override;
    int jobs = 1;
};

inline json load_config_or_manifest(const fs::path& path, const std::string& expected_command) {
    json root = load_json(path);
    if (root.is_object() && root.contains("resolved_config")) {
        const std::string cmd = schema::get_or<std::string>(root, "manifest", "command", "");
        if (cmd != expected_command) {
            throw ConfigError("manifest was written by command '" + cmd + "', not '" +
                              expected_command + "'");
        }
        return root.at("resolved_config");
    }
    return root;
}

inline void write_manifest(const CliOptions& opts, const std::string& command,
                           const json& resolved, std::uint64_t seed) {
    json manifest = {{"command", command},
                     {"config_path", opts.config_path},
                     {"resolved_config", resolved},
                     {"seed", seed},
                     {"out_dir", opts.out_dir},
                     {"version", kVersion}};
    write_file_atomic(fs::path(opts.out_dir) / "manifest.json", manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Output formatting
// ---------------------------------------------------------------------------

inline double pct2(double fraction) {
    return std::round(fraction * 10000.0) / 100.0;  // percent, 2 decimals
}

inline std::string format_metrics_csv(const harness::MetricsReport& report) {
    std::string out = "month,FNR,FPR,F1,TP,FP,TN,FN\n";
    char line[160];
    for (std::size_t i = 0; i < report.months.size(); ++i) {
        const auto& m = report.per_month[i];
        const auto& c = report.confusion[i];
        std::snprintf(line, sizeof(line), "%d,%.2f,%.2f,%.2f,%ld,%ld,%ld,%ld\n", report.months[i],
                      100.0 * m.fnr, 100.0 * m.fpr, 100.0 * m.f1, c.tp, c.fp, c.tn, c.fn);
        out += line;
    }
    return out;
}

inline std::string format_selections_csv(const harness::ALRunLog& log) {
    std::string out = "month,id,score,y,family\n";
    char line[256];
    for (const auto& month : log.months) {
        std::map<std::string, const harness::AnalystLabel*> labels;
        for (const auto& lab : month.analyst_labels) labels[lab.id] = &lab;
        for (const auto& [id, score] : month.selected) {
            const harness::AnalystLabel* lab = labels.at(id);
            std::snprintf(line, sizeof(line), "%d,%s,%.17g,%d,%d\n", month.month, id.c_str(), score,
                          lab->y, lab->family);
            out += line;
        }
    }
    return out;
}

inline json lead_time_to_json(const harness::LeadTimeSummary& summary) {
    json families = json::array();
    for (const auto& f : summary.families) {
        families.push_back({{"family", f.family},
                            {"labeled", f.labeled},
                            {"first_labeled_month", f.first_labeled_month},
                            {"popular", f.popular},
                            {"popularity_month", f.popularity_month},
                            {"lead_months", f.lead}});
    }
    return {{"n_popular_new_families", summary.n_popular},
            {"n_labeled_in_advance", summary.n_labeled_in_advance},
            {"fraction_labeled_in_advance", summary.fraction_labeled_in_advance},
            {"mean_lead_months", summary.mean_lead},
            {"families", families}};
}

// ---------------------------------------------------------------------------
// Commands. Each returns the process exit code.
// ---------------------------------------------------------------------------

inline int cmd_synth(const CliOptions& opts) {
    json root = load_config_or_manifest(opts.config_path, "synth");
    SynthCommand cmd = parse_synth_config(root);
    if (opts.seed_override) cmd.synth.seed = *opts.seed_override;
    const dataset::MonthlyStream stream = dataset::synthesize_stream(cmd.synth);
    fs::create_directories(opts.out_dir);
    const fs::path out_path = fs::path(opts.out_dir) / cmd.out_file;
    {
        // save_stream writes directly; route through a string for atomicity
        std::string buf;
        buf += "#dim " + std::to_string(stream.dim) + "\n";
        for (const auto& month : stream.months) {
            for (const auto& s : month) {
                buf += s.id + "\t" + std::to_string(s.month) + "\t" + std::to_string(s.y) + "\t" +
                       std::to_string(s.family) + "\t";
                for (std::size_t i = 0; i < s.features.size(); ++i) {
                    if (i) buf += ",";
                    buf += std::to_string(s.features[i]);
                }
                buf += "\n";
            }
        }
        write_file_atomic(out_path, buf);
    }
    write_manifest(opts, "synth", synth_to_json(cmd), cmd.synth.seed);
    std::cout << "wrote " << out_path.string() << " (" << stream.total_samples() << " samples, "
              << stream.month_count() << " months)\n";
    return 0;
}

inline int cmd_run(const CliOptions& opts) {
    json root = load_config_or_manifest(opts.config_path, "run");
    RunCommand cmd = parse_run_config(root);
    if (opts.seed_override) cmd.al.seed = *opts.seed_override;

    const dataset::MonthlyStream stream = dataset::load_stream(cmd.stream_path);
    const harness::ALResult result =
        harness::run_active_learning(stream, cmd.initial_train_months, cmd.al);
    const harness::LeadTimeSummary lead = harness::family_lead_time(result.log, stream);

    fs::create_directories(opts.out_dir);
    const json resolved = run_to_json(cmd);
    write_file_atomic(fs::path(opts.out_dir) / "metrics.csv", format_metrics_csv(result.metrics));
    write_file_atomic(fs::path(opts.out_dir) / "selections.csv",
                      format_selections_csv(result.log));

    json summary = {
        {"version", kVersion},
        {"method", harness::method_name(cmd.al.method)},
        {"seed", cmd.al.seed},
        {"budget_per_month", cmd.al.budget_per_month},
        {"start_mode", cmd.al.start_mode == hcc::StartMode::kWarm ? "warm" : "cold"},
        {"fixed_classifier_baseline", cmd.al.budget_per_month == 0},
        {"months_evaluated", result.metrics.months.size()},
        {"average", {{"fnr_pct", pct2(result.metrics.average.fnr)},
                     {"fpr_pct", pct2(result.metrics.average.fpr)},
                     {"f1_pct", pct2(result.metrics.average.f1)}}},
        {"lead_time", lead_time_to_json(lead)},
        {"initial_pool",
         {{"size", result.log.initial_pool.size},
          {"hash", result.log.initial_pool.hash}}},
        {"config", resolved},
    };
    write_file_atomic(fs::path(opts.out_dir) / "summary.json", summary.dump(2) + "\n");

    if (result.final_model.has_value()) {
        std::ostringstream os(std::ios::binary);
        hcc::save_model_nets(*result.final_model, os);
        write_file_atomic(fs::path(opts.out_dir) / "model.bin", os.str());
        json sidecar = {{"margin", result.final_model->margin},
                        {"lambda", result.final_model->lambda},
                        {"trained_epochs", result.final_model->trained_epochs},
                        {"config_hash", fnv1a64(resolved.dump())},
                        {"version", kVersion}};
        write_file_atomic(fs::path(opts.out_dir) / "model.json", sidecar.dump(2) + "\n");
    }
    write_manifest(opts, "run", resolved, cmd.al.seed);
    std::cout << "run complete: mean FNR " << pct2(result.metrics.average.fnr) << "%, mean FPR "
              << pct2(result.metrics.average.fpr) << "%, mean F1 "
              << pct2(result.metrics.average.f1) << "%\n";
    return 0;
}

inline int cmd_tune(const CliOptions& opts) {
    json root = load_config_or_manifest(opts.config_path, "tune");
    schema::check_keys(root, "config",
                       {"stream", "initial_train_months", "validation_months", "budget_per_month",
                        "n_splits", "valid_fraction", "keep_top", "seed", "base", "grid"});
    const std::string stream_path = schema::require_string(root, "config", "stream");
    const int initial_months = schema::get_or<int>(root, "config", "initial_train_months", 6);
    const int validation_months = schema::get_or<int>(root, "config", "validation_months", 2);
    const int budget = schema::get_or<int>(root, "config", "budget_per_month", 50);
    const int n_splits = schema::get_or<int>(root, "config", "n_splits", 5);
    const double valid_fraction = schema::get_or<double>(root, "config", "valid_fraction", 0.2);
    const int keep_top = schema::get_or<int>(root, "config", "keep_top", 10);
    std::uint64_t seed = schema::get_or<std::uint64_t>(root, "config", "seed", 0);
    if (opts.seed_override) seed = *opts.seed_override;
    if (!root.contains("grid") || !root.at("grid").is_array() || root.at("grid").empty()) {
        throw ConfigError("config.grid: non-empty array required");
    }

    json base = root.contains("base") ? root.at("base") : json::object();
    base["stream"] = stream_path;
    base["initial_train_months"] = initial_months;
    base["seed"] = seed;

    // candidates = base overlaid with each grid entry (recursive merge)
    std::vector<RunCommand> candidates;
    std::vector<json> candidate_json;
    for (std::size_t i = 0; i < root.at("grid").size(); ++i) {
        json merged = base;
        merged.merge_patch(root.at("grid")[i]);
        RunCommand cand = parse_run_config(merged, "config.grid[" + std::to_string(i) + "]");
        cand.al.seed = derive_seed(seed, 0x7C4E, i);
        candidates.push_back(cand);
        candidate_json.push_back(run_to_json(cand));
    }

    const dataset::MonthlyStream stream = dataset::load_stream(stream_path);
    dataset::LabeledPool pool;
    pool.dim = stream.dim;
    if (stream.month_count() < initial_months + validation_months) {
        throw ConfigError("config: stream too short for initial + validation months");
    }
    for (int m = 0; m < initial_months; ++m) {
        for (const auto& s : stream.months[m]) pool.add(s, dataset::LabeledPool::kInitial);
    }

    std::vector<harness::ALConfig> al_configs;
    for (const auto& c : candidates) al_configs.push_back(c.al);
    const auto all_entries = harness::tune_round1(pool, al_configs, n_splits, valid_fraction, seed,
                                                  static_cast<int>(al_configs.size()), opts.jobs);
    const std::vector<harness::Round1Entry> round1(
        all_entries.begin(),
        all_entries.begin() + std::min<std::size_t>(keep_top, all_entries.size()));

    std::vector<harness::ALConfig> finalists;
    for (const auto& entry : round1) finalists.push_back(al_configs[entry.config_index]);
    const auto round2 = harness::tune_round2(stream, finalists, initial_months, validation_months,
                                             budget, opts.jobs);
    std::map<int, double> round2_of;  // original candidate index -> round-2 F1
    for (const auto& e : round2) round2_of[round1[e.config_index].config_index] = e.mean_f1;

    std::string board = "candidate,round1_f1_pct,round2_f1_pct\n";
    char line[128];
    for (const auto& e : all_entries) {
        if (auto it = round2_of.find(e.config_index); it != round2_of.end()) {
            std::snprintf(line, sizeof(line), "%d,%.2f,%.2f\n", e.config_index, 100.0 * e.mean_f1,
                          100.0 * it->second);
        } else {
            std::snprintf(line, sizeof(line), "%d,%.2f,\n", e.config_index, 100.0 * e.mean_f1);
        }
        board += line;
    }

    const int best_original_index = round1[round2.front().config_index].config_index;
    json best = candidate_json[best_original_index];

    fs::create_directories(opts.out_dir);
    write_file_atomic(fs::path(opts.out_dir) / "leaderboard.csv", board);
    write_file_atomic(fs::path(opts.out_dir) / "best_config.json", best.dump(2) + "\n");

    json resolved = {{"stream", stream_path},
                     {"initial_train_months", initial_months},
                     {"validation_months", validation_months},
                     {"budget_per_month", budget},
                     {"n_splits", n_splits},
                     {"valid_fraction", valid_fraction},
                     {"keep_top", keep_top},
                     {"seed", seed},
                     {"base", base},
                     {"grid", root.at("grid")}};
    write_manifest(opts, "tune", resolved, seed);
    std::cout << "tuned " << candidates.size() << " candidates; best = candidate "
              << best_original_index << "\n";
    return 0;
}

inline int cmd_export_embeddings(const CliOptions& opts) {
    json root = load_config_or_manifest(opts.config_path, "export-embeddings");
    schema::check_keys(root, "config", {"model", "model_sidecar", "stream", "months"});
    const std::string model_path = schema::require_string(root, "config", "model");
    const std::string stream_path = schema::require_string(root, "config", "stream");

    std::ifstream is(model_path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + model_path);
    hcc::EncoderClassifier model = hcc::load_model_nets(is);
    if (root.contains("model_sidecar")) {
        const json sidecar = load_json(root.at("model_sidecar").get<std::string>());
        model.margin = sidecar.value("margin", model.margin);
        model.lambda = sidecar.value("lambda", model.lambda);
        model.trained_epochs = sidecar.value("trained_epochs", model.trained_epochs);
    }

    const dataset::MonthlyStream stream = dataset::load_stream(stream_path);
    if (stream.dim != model.input_dim()) {
        throw DataError("model expects dimension " + std::to_string(model.input_dim()) +
                        " but stream has " + std::to_string(stream.dim));
    }
    std::vector<int> months;
    if (root.contains("months")) {
        const auto range = root.at("months").get<std::vector<int>>();
        if (range.size() != 2) throw ConfigError("config.months: expected [first, last]");
        for (int m = range[0]; m <= range[1]; ++m) months.push_back(m);
    } else {
        for (int m = stream.first_month; m <= stream.last_month(); ++m) months.push_back(m);
    }

    std::string raw_csv, unit_csv;
    {
        std::string header = "id,y,family";
        for (int e = 1; e <= model.embedding_dim(); ++e) header += ",e" + std::to_string(e);
        raw_csv = header + "\n";
        unit_csv = header + "\n";
    }
    char num[40];
    std::size_t n_rows = 0;
    for (int m : months) {
        if (m < stream.first_month || m > stream.last_month()) {
            throw ConfigError("config.months: month " + std::to_string(m) + " not in stream");
        }
        const auto rows =
            selectors::export_embeddings(model, stream.months[m - stream.first_month]);
        for (const auto& row : rows) {
            std::string prefix = row.id + "," + std::to_string(row.y) + "," +
                                 std::to_string(row.family);
            raw_csv += prefix;
            unit_csv += prefix;
            for (Eigen::Index i = 0; i < row.raw.size(); ++i) {
                std::snprintf(num, sizeof(num), ",%.17g", row.raw(i));
                raw_csv += num;
                std::snprintf(num, sizeof(num), ",%.17g", row.unit(i));
                unit_csv += num;
            }
            raw_csv += "\n";
            unit_csv += "\n";
            ++n_rows;
        }
    }
    fs::create_directories(opts.out_dir);
    write_file_atomic(fs::path(opts.out_dir) / "embeddings_raw.csv", raw_csv);
    write_file_atomic(fs::path(opts.out_dir) / "embeddings_unit.csv", unit_csv);
    json resolved = root;
    write_manifest(opts, "export-embeddings", resolved, 0);
    std::cout << "exported " << n_rows << " embedding rows\n";
    return 0;
}

inline int cmd_report(const CliOptions& opts) {
    const json summary = load_json(opts.config_path);
    std::ostringstream out;
    out << "driftforge run report\n";
    out << "  method:            " << summary.value("method", std::string("?")) << "\n";
    out << "  start mode:        " << summary.value("start_mode", std::string("?")) << "\n";
    out << "  budget per month:  " << summary.value("budget_per_month", 0) << "\n";
    out << "  seed:              " << summary.value("seed", 0ULL) << "\n";
    out << "  months evaluated:  " << summary.value("months_evaluated", 0) << "\n";
    if (summary.value("fixed_classifier_baseline", false)) {
        out << "  (budget 0: fixed-classifier baseline)\n";
    }
    if (summary.contains("average")) {
        const json& avg = summary.at("average");
        out << "  mean FNR: " << avg.value("fnr_pct", 0.0) << "%\n";
        out << "  mean FPR: " << avg.value("fpr_pct", 0.0) << "%\n";
        out << "  mean F1:  " << avg.value("f1_pct", 0.0) << "%\n";
    }
    if (summary.contains("lead_time")) {
        const json& lt = summary.at("lead_time");
        out << "  new families seen:    " << lt.value("families", json::array()).size() << "\n";
        out << "  popular new families: " << lt.value("n_popular_new_families", 0) << "\n";
        out << "  labeled in advance:   " << lt.value("n_labeled_in_advance", 0) << " ("
            << 100.0 * lt.value("fraction_labeled_in_advance", 0.0) << "%)\n";
        out << "  mean lead (months):   " << lt.value("mean_lead_months", 0.0) << "\n";
    }
    std::cout << out.str();
    return 0;
}

// Applies DRIFTFORGE_SEED / DRIFTFORGE_OUT environment overrides (CLI flags,
// when given, take precedence and are handled by the caller).
inline void apply_env_overrides(CliOptions& opts, bool seed_flag_given, bool out_flag_given) {
    if (!seed_flag_given) {
        if (const char* env = std::getenv("DRIFTFORGE_SEED")) {
            opts.seed_override = std::strtoull(env, nullptr, 10);
        }
    }
    if (!out_flag_given) {
        if (const char* env = std::getenv("DRIFTFORGE_OUT")) opts.out_dir = env;
    }
}

}  // namespace driftforge::cli

#endif  // DRIFTFORGE_CLI_HPP
