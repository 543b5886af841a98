// basil: synthetic data, streaming runs and reports.
//
//   basil synth --classes 10 --instances 3 --frames 200 --dim 32 --seed 1 --out data/
//   basil run --data data/ --ordering class-instance --mode basil --seeds 0-9 --out out/
//   basil report out/

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "basil/binary_io.hpp"
#include "basil/error.hpp"
#include "basil/experiment.hpp"
#include "basil/kernels.hpp"
#include "basil/orderings.hpp"
#include "basil/report.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kFault = 1;
constexpr int kUsage = 2;

int cmd_synth(const basil::SynthParams& p, const std::string& out, bool force) {
    p.validate();
    const fs::path dir(out);
    if (!force)
        for (const char* name : {"train.json", "train.emb", "test.json", "test.emb"})
            if (fs::exists(dir / name)) {
                std::cerr << "basil synth: " << (dir / name).string()
                          << " already exists (use --force to overwrite)\n";
                return kUsage;
            }
    fs::create_directories(dir);
    auto [train, test] = basil::synth_dataset(p);
    basil::write_dataset(train, out, "train");
    basil::write_dataset(test, out, "test");
    std::cout << "wrote " << train.manifest.samples.size() << " train and " << test.manifest.samples.size()
              << " test embeddings (dim " << p.dim << ") to " << out << "\n";
    return kOk;
}

int cmd_run(const basil::ExperimentConfig& cfg, const basil::RunControl& control) {
    const auto result = basil::run_experiment(cfg, control);
    std::cout << "kernels: " << basil::kernels::active().name << "\n";
    for (const auto& s : result.seeds) {
        std::cout << "seed " << s.seed << ": ";
        if (s.fault) std::cout << "FAULT " << *s.fault;
        else if (!s.complete) std::cout << "stopped after " << s.records.size() << " events";
        else std::cout << "omega_all " << basil::format_double(basil::omega_all(s.records));
        std::cout << "\n";
    }
    std::cout << "results: " << basil::results_path(cfg) << "\nsummary: " << basil::summary_path(cfg) << "\n";
    return result.any_fault() ? kFault : kOk;
}

int cmd_report(const std::string& in, const std::string& out) {
    const auto rep = basil::write_report(in, out);
    std::cout << rep.text << "report written to " << out << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming class-incremental learning with a Bayesian head"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "basil 1.0");

    // synth
    basil::SynthParams sp;
    std::string synth_out = "data";
    bool force = false;
    auto* synth = app.add_subcommand("synth", "generate a synthetic train/test embedding pair");
    synth->add_option("--classes", sp.num_classes, "number of classes")->capture_default_str();
    synth->add_option("--instances", sp.instances_per_class, "instances per class")->capture_default_str();
    synth->add_option("--frames", sp.frames_per_instance, "training frames per instance")->capture_default_str();
    synth->add_option("--test-frames", sp.test_frames_per_instance, "held-out frames per instance (0: frames/4)");
    synth->add_option("--dim", sp.dim, "embedding dimension")->capture_default_str();
    synth->add_option("--drift", sp.drift, "random-walk step size")->capture_default_str();
    synth->add_option("--noise", sp.noise, "isotropic frame noise")->capture_default_str();
    synth->add_option("--seed", sp.seed, "generator seed")->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->capture_default_str();
    synth->add_flag("--force", force, "overwrite existing files");

    // run
    std::string config_file, seeds, seed, ordering, mode, replay, replace, lambda1, lambda2, buffer, jobs, out,
        data, run_id, kernels_name;
    std::vector<std::string> sets;
    basil::RunControl control;
    std::size_t stop_after = 0;
    auto* run = app.add_subcommand("run", "run the streaming protocol over one or more seeds");
    run->add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
    auto* o_seed = run->add_option("--seed", seed, "single seed");
    auto* o_seeds = run->add_option("--seeds", seeds, "seed list, e.g. 0-9 or 1,4,7");
    o_seed->excludes(o_seeds);
    run->add_option("--ordering", ordering, "iid | class-iid | instance | class-instance");
    run->add_option("--mode", mode, "basil | finetune | plain-er");
    run->add_option("--replay", replay, "uni | uapn | lapn | auto");
    run->add_option("--replace", replace, "lawcbr | lawrrr | lawrrr-always | reservoir");
    run->add_option("--lambda1", lambda1, "KL weight");
    run->add_option("--lambda2", lambda2, "distillation weight");
    run->add_option("--buffer", buffer, "replay buffer capacity");
    run->add_option("--jobs", jobs, "seeds run in parallel");
    run->add_option("--out", out, "output directory");
    run->add_option("--data", data, "directory with train.json and test.json (default: synthetic)");
    run->add_option("--run-id", run_id, "name used for output files");
    run->add_option("--set", sets, "extra key=value setting (repeatable)");
    run->add_flag("--resume", control.resume, "continue from per-seed checkpoints");
    auto* o_stop = run->add_option("--stop-after", stop_after, "stop each seed after N testing events");
    run->add_option("--kernels", kernels_name, "scalar | avx2 (default: best available)");

    // report
    std::string report_in, report_out;
    auto* report = app.add_subcommand("report", "summarize results CSVs into tables and SVG plots");
    report->add_option("results", report_in, "directory holding *.results.csv")->required();
    report->add_option("--out", report_out, "output directory (default: the results directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*synth) return cmd_synth(sp, synth_out, force);

        if (*run) {
            if (!kernels_name.empty()) {
                const auto* table = basil::kernels::find_table(kernels_name);
                if (!table) throw basil::InputError("kernel table '" + kernels_name + "' is not available");
                basil::kernels::set_active(*table);
            }
            basil::ExperimentConfig cfg;
            if (!config_file.empty()) {
                const auto bytes = basil::binio::read_file(config_file);
                basil::apply_config_text(cfg, std::string(bytes.begin(), bytes.end()));
            }
            const std::vector<std::pair<const char*, const std::string*>> flags = {
                {"seeds", &seed},     {"seeds", &seeds},     {"ordering", &ordering}, {"mode", &mode},
                {"replay", &replay},  {"replace", &replace}, {"lambda1", &lambda1},   {"lambda2", &lambda2},
                {"buffer", &buffer},  {"jobs", &jobs},       {"out", &out},           {"data", &data},
                {"run_id", &run_id},
            };
            for (const auto& [key, value] : flags)
                if (!value->empty()) basil::apply_setting(cfg, key, *value);
            for (const auto& kv : sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw basil::InputError("--set expects key=value, got '" + kv + "'");
                basil::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (o_stop->count() > 0) control.stop_after_events = stop_after;
            cfg.validate();
            return cmd_run(cfg, control);
        }

        if (*report) return cmd_report(report_in, report_out.empty() ? report_in : report_out);
    } catch (const basil::InputError& e) {
        std::cerr << "basil: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "basil: " << e.what() << "\n";
        return kFault;
    }
    return kUsage;
}
