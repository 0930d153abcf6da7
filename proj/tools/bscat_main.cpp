// bscat command-line tool. Talks to the library only through bscat.h.
//
// Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

#include "bscat/bscat.h"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

// Owns a string returned by the library.
struct OwnedString {
    char* ptr = nullptr;
    ~OwnedString() { bscat_free_string(ptr); }
    char** out() { return &ptr; }
    [[nodiscard]] std::string str() const { return ptr != nullptr ? ptr : ""; }
};

struct Failure {
    int exit_code;
};

std::string g_command;

// Reports a failed call on stderr and aborts the subcommand.
void check(bscat_status status) {
    if (status == BSCAT_OK) return;
    std::fprintf(stderr, "bscat %s: error [%s]: %s\n", g_command.c_str(), bscat_status_name(status),
                 bscat_last_error());
    throw Failure{bscat_status_is_numerical(status) != 0 ? kExitNumerical : kExitUsage};
}

struct Globals {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    std::string log_level = "warn";
};

struct PreprocessFlags {
    std::string standardize = "on";
    double pca = 0.0;

    void add(CLI::App* cmd) {
        cmd->add_option("--standardize", standardize, "Z-score features on the training rows")
            ->check(CLI::IsMember({"on", "off"}));
        cmd->add_option("--pca", pca, "Retained PCA variance in (0, 1]; absent or 0 skips PCA")
            ->check(CLI::Range(0.0, 1.0));
    }
    [[nodiscard]] bscat_preprocess_options get() const { return {standardize == "on" ? 1 : 0, pca}; }
};

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text)) {
        std::fprintf(stderr, "bscat %s: error [io-error]: cannot write '%s'\n", g_command.c_str(), path.c_str());
        throw Failure{kExitUsage};
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scattering features with Gaussian-process heads for image regression and Bayesian optimization",
                 "bscat"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(bscat_version()));

    Globals g;
    app.add_option("--seed", g.seed, "Experiment seed; every random stream is derived from it");
    app.add_option("--threads", g.threads, "Worker threads for feature extraction")->check(CLI::PositiveNumber);
    app.add_option("--log-level", g.log_level, "Log verbosity")
        ->check(CLI::IsMember({"quiet", "warn", "info", "debug"}));

    // Global options are accepted after the subcommand too; list them in
    // every subcommand's help.
    const std::string globals_help =
        "Global options (accepted before or after the subcommand):\n"
        "  --seed UINT [0]             Experiment seed; every random stream is derived from it\n"
        "  --threads UINT [1]          Worker threads for feature extraction\n"
        "  --log-level TEXT [warn]     quiet, warn, info or debug\n"
        "Exit codes: 0 success, 1 usage or input error, 2 numerical failure.";

    std::function<void()> action;
    auto bind = [&](CLI::App* cmd, std::string name, std::function<void()> fn) {
        cmd->footer(globals_help);
        cmd->callback([&action, name, fn] {
            g_command = name;
            action = fn;
        });
    };

    // ---- filterbank check
    auto* fb = app.add_subcommand("filterbank", "Filter-bank diagnostics");
    fb->require_subcommand(1);
    auto* fb_check = fb->add_subcommand("check", "Littlewood-Paley report; exit 2 if the frame bounds fail");
    std::size_t fb_n = 32, fb_j = 0, fb_l = 8;
    bool fb_json = false;
    fb_check->add_option("--n", fb_n, "Image size N (power of two)");
    fb_check->add_option("--j", fb_j, "Number of scales J; 0 selects log2(N) - 1");
    fb_check->add_option("--l", fb_l, "Number of angles L");
    fb_check->add_flag("--json", fb_json, "Print JSON instead of text");
    bind(fb_check, "filterbank check", [&] {
        OwnedString report;
        int ok = 0;
        check(bscat_filterbank_check(fb_n, fb_j, fb_l, fb_json ? 1 : 0, report.out(), &ok));
        std::cout << report.str();
        if (fb_json) std::cout << "\n";
        if (ok == 0) {
            std::fprintf(stderr, "bscat filterbank check: frame bounds violated\n");
            throw Failure{kExitNumerical};
        }
    });

    // ---- synth gen
    auto* synth = app.add_subcommand("synth", "Synthetic datasets");
    synth->require_subcommand(1);
    auto* synth_gen = synth->add_subcommand("gen", "Generate images and a manifest");
    std::string sg_task = "blob_count", sg_shift = "none", sg_out;
    std::size_t sg_train = 500, sg_test = 250, sg_size = 32;
    synth_gen->add_option("--task", sg_task, "Generator")->check(CLI::IsMember({"blob_count", "charge_energy"}));
    synth_gen->add_option("--n-train", sg_train, "Training samples");
    synth_gen->add_option("--n-test", sg_test, "Test samples");
    synth_gen->add_option("--shift", sg_shift,
                          "Test-split preset: none|intensity|texture|scale (blob_count), none|radius|charge "
                          "(charge_energy)");
    synth_gen->add_option("--size", sg_size, "Image size N");
    synth_gen->add_option("--out", sg_out, "Output directory")->required();
    bind(synth_gen, "synth gen", [&] {
        OwnedString manifest;
        check(bscat_synth_gen(sg_task.c_str(), sg_train, sg_test, sg_shift.c_str(), g.seed, sg_size, sg_out.c_str(),
                              manifest.out()));
        std::cout << manifest.str() << "\n";
    });

    // ---- features extract
    auto* feats = app.add_subcommand("features", "Scattering features");
    feats->require_subcommand(1);
    auto* fx = feats->add_subcommand("extract", "Scatter every manifest record into a feature cache");
    std::string fx_manifest, fx_out, fx_variant = "global";
    std::size_t fx_j = 0, fx_l = 8, fx_order = 2;
    fx->add_option("--manifest", fx_manifest, "Input manifest")->required();
    fx->add_option("--out", fx_out, "Output feature cache")->required();
    fx->add_option("--j", fx_j, "Number of scales J; 0 selects log2(N) - 1");
    fx->add_option("--l", fx_l, "Number of angles L");
    fx->add_option("--order", fx_order, "Maximum scattering order M")->check(CLI::Range(0, 2));
    fx->add_option("--variant", fx_variant, "Scattering variant")
        ->check(CLI::IsMember({"windowed", "global", "rotinv"}));
    bind(fx, "features extract", [&] {
        bscat_scatter_options o;
        bscat_scatter_options_default(&o);
        o.j = fx_j;
        o.l = fx_l;
        o.order = fx_order;
        o.variant = fx_variant.c_str();
        o.threads = g.threads;
        std::size_t rows = 0, dim = 0;
        check(bscat_features_extract(fx_manifest.c_str(), fx_out.c_str(), &o, &rows, &dim));
        std::cout << "wrote " << rows << " x " << dim << " features to " << fx_out << "\n";
    });

    // ---- gp / svgp fit and eval
    struct ModelFlags {
        std::string features, targets, kernel = "rbf", out;
        PreprocessFlags prep;
    };
    struct EvalFlags {
        std::string model, features, targets, metrics_out, pred_out;
    };
    ModelFlags gp_flags, svgp_flags;
    EvalFlags gp_eval_flags, svgp_eval_flags;
    bscat_gp_options gp_opts;
    bscat_gp_options_default(&gp_opts);
    bscat_svgp_options svgp_opts;
    bscat_svgp_options_default(&svgp_opts);

    auto add_model_flags = [](CLI::App* cmd, ModelFlags& f) {
        cmd->add_option("--features", f.features, "Feature cache aligned with the manifest")->required();
        cmd->add_option("--targets", f.targets, "Manifest; its train split is used")->required();
        cmd->add_option("--kernel", f.kernel, "rbf, matern52 or linear, optionally suffixed ,ard");
        cmd->add_option("--out", f.out, "Output model file")->required();
        f.prep.add(cmd);
    };
    auto add_eval = [&](CLI::App* parent, EvalFlags& f, const std::string& name) {
        auto* cmd = parent->add_subcommand("eval", "Evaluate a model on the manifest's test split");
        cmd->add_option("--model", f.model, "Model file")->required();
        cmd->add_option("--features", f.features, "Feature cache aligned with the manifest")->required();
        cmd->add_option("--targets", f.targets, "Manifest; its test split is used")->required();
        cmd->add_option("--metrics-out", f.metrics_out, "Write the metrics JSON here");
        cmd->add_option("--pred-out", f.pred_out, "Write predictions CSV here (input to metrics report)");
        bind(cmd, name + " eval", [&f] {
            OwnedString json;
            check(bscat_model_eval_files(f.model.c_str(), f.features.c_str(), f.targets.c_str(),
                                         f.metrics_out.empty() ? nullptr : f.metrics_out.c_str(),
                                         f.pred_out.empty() ? nullptr : f.pred_out.c_str(), json.out()));
            std::cout << json.str() << "\n";
        });
    };

    auto* gp = app.add_subcommand("gp", "Exact Gaussian-process regression");
    gp->require_subcommand(1);
    auto* gp_fit = gp->add_subcommand("fit", "Fit on the manifest's train split");
    add_model_flags(gp_fit, gp_flags);
    gp_fit->add_option("--iters", gp_opts.iters, "Adam iterations");
    gp_fit->add_option("--lr", gp_opts.lr, "Adam learning rate");
    bind(gp_fit, "gp fit", [&] {
        gp_opts.kernel = gp_flags.kernel.c_str();
        gp_opts.seed = g.seed;
        gp_opts.preprocess = gp_flags.prep.get();
        OwnedString summary;
        check(bscat_model_fit_files(BSCAT_MODEL_GP, gp_flags.features.c_str(), gp_flags.targets.c_str(), &gp_opts,
                                    nullptr, gp_flags.out.c_str(), summary.out()));
        std::cout << summary.str() << "\n";
    });
    add_eval(gp, gp_eval_flags, "gp");

    auto* svgp = app.add_subcommand("svgp", "Sparse variational Gaussian-process regression");
    svgp->require_subcommand(1);
    auto* svgp_fit = svgp->add_subcommand("fit", "Fit on the manifest's train split");
    add_model_flags(svgp_fit, svgp_flags);
    svgp_fit->add_option("--inducing", svgp_opts.inducing, "Inducing points (capped at n)");
    svgp_fit->add_option("--batch", svgp_opts.batch, "Mini-batch size (capped at n)");
    svgp_fit->add_option("--steps", svgp_opts.steps, "Adam steps");
    svgp_fit->add_option("--lr", svgp_opts.lr, "Adam learning rate");
    bind(svgp_fit, "svgp fit", [&] {
        svgp_opts.kernel = svgp_flags.kernel.c_str();
        svgp_opts.seed = g.seed;
        svgp_opts.preprocess = svgp_flags.prep.get();
        OwnedString summary;
        check(bscat_model_fit_files(BSCAT_MODEL_SVGP, svgp_flags.features.c_str(), svgp_flags.targets.c_str(),
                                    nullptr, &svgp_opts, svgp_flags.out.c_str(), summary.out()));
        std::cout << summary.str() << "\n";
    });
    add_eval(svgp, svgp_eval_flags, "svgp");

    // ---- metrics report
    auto* metrics = app.add_subcommand("metrics", "Calibration metrics");
    metrics->require_subcommand(1);
    auto* report = metrics->add_subcommand("report", "Metrics table for a predictions file");
    std::string mr_pred, mr_truth, mr_json_out;
    bool mr_json = false;
    report->add_option("--pred", mr_pred, "Predictions CSV written by gp/svgp eval --pred-out")->required();
    report->add_option("--truth", mr_truth, "Manifest (test split) or CSV with header 'target'")->required();
    report->add_flag("--json", mr_json, "Print JSON instead of the table");
    report->add_option("--json-out", mr_json_out, "Also write the metrics JSON here");
    bind(report, "metrics report", [&] {
        OwnedString json, table;
        check(bscat_metrics_report_files(mr_pred.c_str(), mr_truth.c_str(), json.out(), table.out()));
        if (!mr_json_out.empty()) write_file(mr_json_out, json.str() + "\n");
        std::cout << (mr_json ? json.str() + "\n" : table.str());
    });

    // ---- bo run
    auto* bo = app.add_subcommand("bo", "Pool-based Bayesian optimization");
    bo->require_subcommand(1);
    auto* bo_run = bo->add_subcommand("run", "Expected-improvement search over a cached pool");
    bscat_bo_options bo_opts;
    bscat_bo_options_default(&bo_opts);
    std::string bo_features, bo_targets, bo_kernel = bo_opts.kernel, bo_trace, bo_direction = "minimize";
    bool bo_random = false, bo_raw_pool = false;
    bo_run->add_option("--pool-features", bo_features, "Feature cache of the pool")->required();
    bo_run->add_option("--pool-targets", bo_targets, "Manifest holding the oracle values")->required();
    bo_run->add_option("--init", bo_opts.n_init, "Initial random design size");
    bo_run->add_option("--iters", bo_opts.n_iters, "Acquisition steps");
    bo_run->add_option("--pool", bo_opts.pool_size, "Pool size (capped at the cache rows)");
    bo_run->add_option("--kernel", bo_kernel, "Surrogate kernel");
    bo_run->add_option("--direction", bo_direction, "Optimization direction")
        ->check(CLI::IsMember({"minimize", "maximize"}));
    bo_run->add_option("--refit-every", bo_opts.refit_every, "Refit hyperparameters every k steps");
    bo_run->add_option("--gp-iters", bo_opts.gp_iters, "Adam iterations per hyperparameter fit");
    bo_run->add_option("--gp-lr", bo_opts.gp_lr, "Adam learning rate");
    bo_run->add_flag("--raw-pool", bo_raw_pool, "Do not z-score the pool features");
    bo_run->add_flag("--random", bo_random, "Run the random-search baseline instead");
    bo_run->add_option("--trace-out", bo_trace, "Trace CSV path; printed to stdout when absent");
    bind(bo_run, "bo run", [&] {
        bo_opts.kernel = bo_kernel.c_str();
        bo_opts.maximize = bo_direction == "maximize" ? 1 : 0;
        bo_opts.standardize_pool = bo_raw_pool ? 0 : 1;
        bo_opts.seed = g.seed;
        OwnedString csv;
        check(bscat_bo_run_files(bo_features.c_str(), bo_targets.c_str(), &bo_opts, bo_random ? 1 : 0,
                                 bo_trace.empty() ? nullptr : bo_trace.c_str(), csv.out()));
        if (bo_trace.empty()) {
            std::cout << csv.str();
        } else {
            // Last line of the trace carries the final regret.
            const std::string t = csv.str();
            const auto end = t.find_last_not_of('\n');
            const auto start = t.rfind('\n', end);
            std::cout << "final record (iteration,index,value,best,regret): " << t.substr(start + 1, end - start)
                      << "\n";
        }
    });

    // ---- pipeline run
    auto* pipeline = app.add_subcommand("pipeline", "End-to-end experiments");
    pipeline->require_subcommand(1);
    auto* prun = pipeline->add_subcommand("run", "synth gen, features, fits per split, aggregate table, optional BO");
    std::string pr_config, pr_out;
    std::vector<std::string> pr_set;
    bool pr_print = false;
    prun->add_option("--config", pr_config, "Flat key = value configuration file")->required();
    prun->add_option("--set", pr_set, "Override a configuration key (KEY=VALUE, repeatable)");
    prun->add_option("--out", pr_out, "Output directory (overrides 'out')");
    prun->add_flag("--print-config", pr_print, "Print the resolved configuration and exit");
    bind(prun, "pipeline run", [&] {
        // Explicit command-line values take precedence over the file.
        std::vector<std::string> overrides;
        if (app.get_option("--seed")->count() > 0) overrides.push_back("seed=" + std::to_string(g.seed));
        if (app.get_option("--threads")->count() > 0) overrides.push_back("threads=" + std::to_string(g.threads));
        if (!pr_out.empty()) overrides.push_back("out=" + pr_out);
        overrides.insert(overrides.end(), pr_set.begin(), pr_set.end());
        std::vector<const char*> ptrs;
        for (const auto& s : overrides) ptrs.push_back(s.c_str());
        OwnedString text;
        if (pr_print) {
            check(bscat_pipeline_config(pr_config.c_str(), ptrs.data(), ptrs.size(), text.out()));
        } else {
            check(bscat_pipeline_run(pr_config.c_str(), ptrs.data(), ptrs.size(), text.out()));
        }
        std::cout << text.str();
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    static const std::map<std::string, int> levels{{"quiet", 0}, {"warn", 1}, {"info", 2}, {"debug", 3}};
    bscat_set_log_level(levels.at(g.log_level));
    if (!action) {
        std::cerr << app.help();
        return kExitUsage;
    }
    try {
        action();
    } catch (const Failure& f) {
        return f.exit_code;
    }
    return kExitOk;
}
