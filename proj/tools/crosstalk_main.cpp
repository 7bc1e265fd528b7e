// Operator entry point: dataset generation, training, sweeps, evaluation,
// reporting and gradient checking, all driven by key-value config files with
// flag overrides. Every run writes its resolved config next to its outputs.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ct/config.hpp"
#include "ct/experiment.hpp"
#include "ct/gradcheck_suite.hpp"
#include "ct/kernels.hpp"
#include "ct/metrics.hpp"
#include "ct/siggen.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
    std::string out;
};

ct::Config resolve_config(const CommonArgs& args) {
    ct::Config cfg = args.config_path.empty() ? ct::Config() : ct::Config::load(args.config_path);
    for (const auto& kv : args.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ct::UsageError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!args.out.empty()) cfg.set("out", args.out);
    return cfg;
}

// Output root: "out" key, overridable by the CT_OUT_ROOT environment variable.
fs::path out_root(const ct::Config& cfg) {
    if (const char* env = std::getenv("CT_OUT_ROOT")) return env;
    return cfg.get_or("out", "runs");
}

fs::path fresh_run_dir(const ct::Config& cfg, const std::string& command) {
    const auto now = std::chrono::system_clock::now();
    const auto tt = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
    const fs::path root = out_root(cfg);
    fs::path dir = root / (command + "-" + cfg.hash().substr(0, 8) + "-" + stamp);
    for (int n = 1; fs::exists(dir); ++n)
        dir = root / (command + "-" + cfg.hash().substr(0, 8) + "-" + stamp + "-" +
                      std::to_string(n));
    fs::create_directories(dir);
    return dir;
}

ct::gen::GenSpec gen_spec_from(const ct::Config& cfg) {
    const auto bench = ct::gen::benchmark_from_string(cfg.get_or("gen.benchmark", "motor"));
    auto spec = ct::gen::GenSpec::defaults(bench);
    spec.sample_rate = cfg.get_double("gen.sample_rate", spec.sample_rate);
    spec.duration = cfg.get_double("gen.duration", spec.duration);
    spec.total_samples = cfg.get_int("gen.total_samples", spec.total_samples);
    spec.target_main_ibr = cfg.get_double("gen.target_ibr", spec.target_main_ibr);
    spec.snr_db_lo = cfg.get_double("gen.snr_lo", spec.snr_db_lo);
    spec.snr_db_hi = cfg.get_double("gen.snr_hi", spec.snr_db_hi);
    spec.seed = cfg.get_u64("gen.seed", spec.seed);
    return spec;
}

int cmd_gen(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    const auto spec = gen_spec_from(cfg);
    fs::path dir = cfg.has("out") ? fs::path(cfg.get("out")) : fresh_run_dir(cfg, "gen");
    if (fs::exists(dir / "manifest.csv"))
        throw ct::IoError("dataset already exists (runs never overwrite): " + dir.string());
    fs::create_directories(dir);
    cfg.save(dir / "config.resolved.txt");
    const auto report = ct::gen::build_dataset(spec, dir);
    std::printf("wrote %d samples to %s\n", report.total, dir.string().c_str());
    std::printf("main IBR %.4f", report.main_ibr);
    for (double v : report.aux_ibrs) std::printf("  aux %.4f", v);
    std::printf("\n");
    return 0;
}

std::vector<ct::models::ArchKind> parse_archs(const std::string& csv) {
    std::vector<ct::models::ArchKind> out;
    std::istringstream ss(csv);
    std::string a;
    while (std::getline(ss, a, ','))
        if (!a.empty()) out.push_back(ct::models::arch_from_string(a));
    return out;
}

int cmd_train(const CommonArgs& args, const std::string& arch_name, long long seed_flag) {
    auto cfg = resolve_config(args);
    if (!arch_name.empty()) cfg.set("train.arch", arch_name);
    if (seed_flag >= 0) cfg.set("train.seeds", std::to_string(seed_flag));
    const auto arch = ct::models::arch_from_string(cfg.get_or("train.arch", "rndr"));

    const fs::path dir = fresh_run_dir(cfg, "train");
    cfg.set("out", dir.string());
    cfg.save(dir / "config.resolved.txt");
    auto ecfg = ct::exp::ExperimentConfig::from_config(cfg);
    ecfg.out_dir = dir;

    ct::exp::Session session(ecfg);
    for (auto seed : ecfg.seeds) {
        auto rec = ct::exp::train_one(ecfg, session, arch, seed);
        auto eval = ct::exp::evaluate_run(rec, session.manifest);
        std::printf("%s seed %llu: headline %s macro-F1 %.4f (selected epochs:",
                    ct::models::to_string(arch), static_cast<unsigned long long>(seed),
                    eval.headline_task.c_str(), eval.headline);
        for (const auto& r : rec.runs) std::printf(" %d", r.selected_epoch);
        std::printf(")\n");
    }
    std::printf("run artifacts in %s\n", dir.string().c_str());
    return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& archs_csv, const std::string& seeds_csv,
              int jobs) {
    auto cfg = resolve_config(args);
    if (!archs_csv.empty()) cfg.set("sweep.architectures", archs_csv);
    if (!seeds_csv.empty()) cfg.set("train.seeds", seeds_csv);
    const auto archs = parse_archs(
        cfg.get_or("sweep.architectures", "stl,tcdcn,mtan,cs,cc,nddr,rndr"));

    const fs::path dir = fresh_run_dir(cfg, "sweep");
    cfg.set("out", dir.string());
    cfg.save(dir / "config.resolved.txt");
    auto ecfg = ct::exp::ExperimentConfig::from_config(cfg);
    ecfg.out_dir = dir;

    auto result = ct::exp::sweep(ecfg, archs, jobs);

    ct::data::DatasetManifest manifest = ct::data::DatasetManifest::load(ecfg.manifest_path);
    ct::metrics::RunReport report;
    for (const auto& rec : result.records) {
        auto eval = ct::exp::evaluate_run(rec, manifest);
        report.headline_task = eval.headline_task;
        report.add(ct::models::to_string(rec.arch), rec.seed, eval.headline_task, eval.headline);
        for (const auto& [task, f1] : eval.per_task_f1)
            report.add(ct::models::to_string(rec.arch), rec.seed, task, f1);
    }
    report.write_json(dir / "report.json");
    report.write_table(dir / "report.tsv");
    std::ofstream ranks(dir / "ranks.tsv");
    ranks << "rank\tarch\tmean\n";
    for (const auto& e : report.ranks()) {
        ranks << e.rank << "\t" << e.name << "\t" << e.mean_score << "\n";
        std::printf("rank %d  %-6s mean %s macro-F1 %.4f\n", e.rank, e.name.c_str(),
                    report.headline_task.c_str(), e.mean_score);
    }
    for (const auto& f : result.failures) std::fprintf(stderr, "FAILED cell %s\n", f.c_str());
    std::printf("sweep artifacts in %s\n", dir.string().c_str());
    return result.ok() ? 0 : 1;
}

int cmd_eval(const std::string& dump, const std::string& manifest_path) {
    auto manifest = ct::data::DatasetManifest::load(manifest_path);
    auto eval = ct::exp::evaluate_dump(dump, manifest);
    for (const auto& [task, f1] : eval.per_task_f1) std::printf("%-14s macro-F1 %.4f\n", task.c_str(), f1);
    std::printf("headline (%s) %.4f\n", eval.headline_task.c_str(), eval.headline);
    if (eval.is_compound) std::printf("component mean %.4f\n", eval.component_mean);
    return 0;
}

int cmd_report(const std::string& sweep_dir_s) {
    const fs::path dir = sweep_dir_s;
    auto cfg = ct::Config::load(dir / "config.resolved.txt");
    auto manifest = ct::data::DatasetManifest::load(cfg.get("data.manifest"));
    ct::metrics::RunReport report;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_directory()) continue;
        const auto name = entry.path().filename().string();
        const auto dash = name.rfind("-s");
        if (dash == std::string::npos) continue;
        const auto dump = entry.path() / "predictions.csv";
        if (!fs::exists(dump)) continue;
        const std::string arch = name.substr(0, dash);
        const auto seed = std::stoull(name.substr(dash + 2));
        auto eval = ct::exp::evaluate_dump(dump, manifest);
        report.headline_task = eval.headline_task;
        report.add(arch, seed, eval.headline_task, eval.headline);
        for (const auto& [task, f1] : eval.per_task_f1) report.add(arch, seed, task, f1);
    }
    if (report.cells.empty()) throw ct::IoError("no run cells found under " + dir.string());
    report.write_json(dir / "report.json");
    report.write_table(dir / "report.tsv");
    std::printf("%-6s %-10s %s\n", "rank", "arch", "mean");
    for (const auto& e : report.ranks()) std::printf("%-6d %-10s %.4f\n", e.rank, e.name.c_str(), e.mean_score);
    return 0;
}

int cmd_gradcheck(double tol) {
    const auto entries = ct::run_gradcheck_suite();
    bool ok = true;
    for (const auto& e : entries) {
        const bool pass = e.report.passed(tol);
        ok = ok && pass;
        std::printf("%-28s max rel err %.3e  [%s]\n", e.name.c_str(), e.report.max_rel_err,
                    pass ? "PASS" : "FAIL");
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-talk multi-task fault-classification workbench"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, sweep_args;
    std::string train_arch;
    long long train_seed = -1;
    std::string sweep_archs, sweep_seeds;
    int sweep_jobs = 1;
    std::string eval_dump, eval_manifest, report_dir;
    double gradcheck_tol = 1e-5;
    bool gradcheck_all = false;

    auto add_common = [](CLI::App* cmd, CommonArgs& args, bool config_required) {
        auto* opt = cmd->add_option("--config", args.config_path, "config file (key = value)");
        if (config_required) opt->required();
        cmd->add_option("--set", args.overrides, "override a config key (key=value)");
        cmd->add_option("--out", args.out, "output directory");
    };

    auto* gen = app.add_subcommand("gen", "generate a synthetic benchmark dataset");
    add_common(gen, gen_args, true);
    gen->add_option_function<long long>(
        "--seed", [&gen_args](const long long& s) { gen_args.overrides.push_back("gen.seed=" + std::to_string(s)); },
        "generator seed");

    auto* train = app.add_subcommand("train", "train one architecture");
    add_common(train, train_args, true);
    train->add_option("--arch", train_arch, "architecture (stl|tcdcn|mtan|cs|cc|nddr|rndr)");
    train->add_option("--seed", train_seed, "single seed override");

    auto* sweep = app.add_subcommand("sweep", "train every (architecture, seed) cell");
    add_common(sweep, sweep_args, true);
    sweep->add_option("--architectures", sweep_archs, "comma list of architectures");
    sweep->add_option("--seeds", sweep_seeds, "comma list of seeds");
    sweep->add_option("--jobs", sweep_jobs, "parallel cells (output is identical for any value)");

    auto* eval = app.add_subcommand("eval", "evaluate an existing prediction dump");
    eval->add_option("--dump", eval_dump, "predictions.csv")->required();
    eval->add_option("--manifest", eval_manifest, "manifest.csv")->required();

    auto* report = app.add_subcommand("report", "rank table and plot tables for a sweep directory");
    report->add_option("--sweep-dir", report_dir, "sweep output directory")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks for all layers and architectures");
    gradcheck->add_flag("--all", gradcheck_all, "run the full battery (default)");
    gradcheck->add_option("--tol", gradcheck_tol, "max relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_args);
        if (train->parsed()) return cmd_train(train_args, train_arch, train_seed);
        if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_archs, sweep_seeds, sweep_jobs);
        if (eval->parsed()) return cmd_eval(eval_dump, eval_manifest);
        if (report->parsed()) return cmd_report(report_dir);
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_tol);
    } catch (const ct::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
