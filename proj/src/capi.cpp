// Boundary between the C ABI and the C++ core: every entry point converts
// exceptions into a status code and a thread-local message.

#include "bscat/bscat.h"

#include "bscat/error.hpp"
#include "bscat/filterbank.hpp"
#include "bscat/log.hpp"
#include "bscat/workflow.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <span>
#include <string>
#include <vector>

struct bscat_model {
    bscat::RegressionModel model;
};

namespace {

using bscat::ErrorCode;
using bscat::fail;

thread_local std::string t_last_error;

bscat_status to_status(ErrorCode code) { return static_cast<bscat_status>(static_cast<int>(code)); }

template <class Fn>
bscat_status guarded(Fn&& fn) {
    try {
        fn();
        return BSCAT_OK;
    } catch (const bscat::Error& e) {
        t_last_error = e.what();
        return to_status(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        t_last_error = e.what();
        return BSCAT_E_IO;
    } catch (const std::bad_alloc&) {
        t_last_error = "out of memory";
        return BSCAT_E_INTERNAL;
    } catch (const std::exception& e) {
        t_last_error = e.what();
        return BSCAT_E_INTERNAL;
    } catch (...) {
        t_last_error = "unknown exception";
        return BSCAT_E_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void put_string(char** out, const std::string& s) {
    if (out != nullptr) *out = dup_string(s);
}

template <class T>
const T& require(const T* p, const char* what) {
    if (p == nullptr) fail(ErrorCode::invalid_argument, std::string(what) + " must not be null");
    return *p;
}

std::string require_str(const char* s, const char* what) {
    if (s == nullptr) fail(ErrorCode::invalid_argument, std::string(what) + " must not be null");
    return s;
}

void require_buffer(const void* p, std::size_t count, const char* what) {
    if (p == nullptr && count > 0) fail(ErrorCode::invalid_argument, std::string(what) + " must not be null");
}

Eigen::MatrixXd matrix_in(const double* data, std::size_t rows, std::size_t cols, const char* what) {
    require_buffer(data, rows * cols, what);
    if (rows == 0 || cols == 0) return Eigen::MatrixXd(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Eigen::VectorXd vector_in(const double* data, std::size_t n, const char* what) {
    require_buffer(data, n, what);
    if (n == 0) return {};
    return Eigen::Map<const Eigen::VectorXd>(data, static_cast<Eigen::Index>(n));
}

bscat::ScatteringConfig scattering_config(const bscat_scatter_options& o, std::size_t image_size) {
    bscat::ScatteringConfig cfg;
    cfg.bank.image_size = image_size;
    cfg.bank.num_scales = o.j == 0 && image_size > 0 ? bscat::default_num_scales(image_size) : o.j;
    cfg.bank.num_angles = o.l;
    cfg.max_order = o.order;
    cfg.variant = bscat::parse_variant(o.variant != nullptr ? o.variant : "global");
    return cfg;
}

bscat::PreprocessOptions preprocess(const bscat_preprocess_options& p) {
    bscat::PreprocessOptions out;
    out.standardize = p.standardize != 0;
    if (p.pca_retain > 0.0) out.pca_retain = p.pca_retain;
    return out;
}

bscat::GpFitOptions gp_options(const bscat_gp_options& o) {
    bscat::GpFitOptions out;
    out.kernel = require_str(o.kernel, "kernel");
    out.optimizer.iterations = o.iters;
    out.optimizer.learning_rate = o.lr;
    out.optimizer.seed = o.seed;
    out.preprocess = preprocess(o.preprocess);
    return out;
}

bscat::SvgpFitOptions svgp_options(const bscat_svgp_options& o) {
    bscat::SvgpFitOptions out;
    out.kernel = require_str(o.kernel, "kernel");
    out.svgp.num_inducing = o.inducing;
    out.svgp.batch_size = o.batch;
    out.svgp.steps = o.steps;
    out.svgp.learning_rate = o.lr;
    out.svgp.seed = o.seed;
    out.preprocess = preprocess(o.preprocess);
    return out;
}

bscat::BOConfig bo_config(const bscat_bo_options& o) {
    bscat::BOConfig cfg;
    cfg.n_init = o.n_init;
    cfg.n_iters = o.n_iters;
    cfg.pool_size = o.pool_size;
    cfg.kernel = bscat::KernelSpec::parse(require_str(o.kernel, "kernel"));
    cfg.direction = o.maximize != 0 ? bscat::Direction::maximize : bscat::Direction::minimize;
    cfg.refit_every = o.refit_every;
    cfg.gp_iterations = o.gp_iters;
    cfg.gp_learning_rate = o.gp_lr;
    cfg.seed = o.seed;
    cfg.standardize_pool = o.standardize_pool != 0;
    return cfg;
}

void metrics_out(const bscat::MetricsReport& r, bscat_metrics* out) {
    out->rmse = r.rmse;
    out->rmse_standardized = r.rmse_standardized;
    out->nll = r.nll;
    out->qce = r.qce;
    out->pi_mu = r.pi_mu;
    out->pi_sigma = r.pi_sigma;
    out->n_test = r.n_test;
}

bscat::PipelineConfig pipeline_config(const char* path, const char* const* overrides, std::size_t n) {
    bscat::PipelineConfig cfg = path != nullptr ? bscat::PipelineConfig::load(path) : bscat::PipelineConfig{};
    require_buffer(overrides, n, "overrides");
    for (std::size_t i = 0; i < n; ++i) {
        const std::string kv = require_str(overrides[i], "override");
        const auto eq = kv.find('=');
        if (eq == std::string::npos) fail(ErrorCode::invalid_config, "override '" + kv + "' is not key=value");
        std::string key = kv.substr(0, eq);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        try {
            cfg.set(key, kv.substr(eq + 1));
        } catch (const bscat::Error& e) {
            throw bscat::Error(e.code(), "override '" + kv + "': " + e.what());
        }
    }
    return cfg;
}

}  // namespace

extern "C" {

const char* bscat_version(void) { return "0.1.0"; }

const char* bscat_status_name(bscat_status status) {
    return bscat::error_code_name(static_cast<ErrorCode>(status));
}

int bscat_status_is_numerical(bscat_status status) {
    return status == BSCAT_E_CHOLESKY_FAILURE || status == BSCAT_E_NON_FINITE_INPUT || status == BSCAT_E_INTERNAL;
}

const char* bscat_last_error(void) { return t_last_error.c_str(); }

void bscat_free_string(char* s) { std::free(s); }

bscat_status bscat_set_log_level(int level) {
    return guarded([&] {
        if (level < 0 || level > 3) fail(ErrorCode::invalid_argument, "log level must be 0..3");
        bscat::set_log_level(static_cast<bscat::LogLevel>(level));
    });
}

bscat_status bscat_filterbank_check(size_t n, size_t j, size_t l, int as_json, char** report, int* frame_ok) {
    return guarded([&] {
        bscat::FilterBankConfig cfg;
        cfg.image_size = n;
        cfg.num_scales = j == 0 ? bscat::default_num_scales(n) : j;
        cfg.num_angles = l;
        cfg.validate();
        const auto r = bscat::littlewood_paley_report(bscat::FilterBank(cfg));
        put_string(report, as_json != 0 ? r.to_json() : r.to_text());
        if (frame_ok != nullptr) *frame_ok = r.frame_ok ? 1 : 0;
    });
}

bscat_status bscat_synth_gen(const char* task, size_t n_train, size_t n_test, const char* shift, uint64_t seed,
                             size_t image_size, const char* out_dir, char** manifest_path) {
    return guarded([&] {
        const auto spec = bscat::SynthSpec::preset(bscat::parse_task(require_str(task, "task")),
                                                   require_str(shift, "shift"), seed, image_size);
        const auto path = bscat::write_synth_dataset(spec, n_train, n_test, require_str(out_dir, "out_dir"));
        put_string(manifest_path, path.string());
    });
}

void bscat_scatter_options_default(bscat_scatter_options* opts) {
    if (opts == nullptr) return;
    opts->j = 0;
    opts->l = 8;
    opts->order = 2;
    opts->variant = "global";
    opts->threads = 1;
}

bscat_status bscat_feature_count(const bscat_scatter_options* opts, size_t image_size, size_t channels,
                                 size_t* dim) {
    return guarded([&] {
        const auto cfg = scattering_config(require(opts, "opts"), image_size);
        cfg.validate();
        require(dim, "dim");
        *dim = bscat::count_features(cfg, image_size, channels);
    });
}

bscat_status bscat_scatter(const double* images, size_t n, size_t channels, size_t image_size,
                           const bscat_scatter_options* opts, double* out, size_t out_len) {
    return guarded([&] {
        const auto& o = require(opts, "opts");
        const auto cfg = scattering_config(o, image_size);
        cfg.validate();
        if (channels == 0) fail(ErrorCode::invalid_argument, "channels must be >= 1");
        const std::size_t dim = bscat::count_features(cfg, image_size, channels);
        if (out_len < n * dim) {
            fail(ErrorCode::size_mismatch, "output buffer holds " + std::to_string(out_len) + " values, need " +
                                               std::to_string(n * dim));
        }
        if (n == 0) return;
        const std::size_t per_image = channels * image_size * image_size;
        require_buffer(images, n * per_image, "images");
        require_buffer(out, n * dim, "out");
        std::vector<bscat::Image> batch;
        batch.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = images + i * per_image;
            batch.emplace_back(channels, image_size, std::vector<double>(p, p + per_image));
        }
        const bscat::FilterBank bank(cfg.bank);
        const auto feats = bscat::scatter_batch(batch, bank, cfg, std::max<std::size_t>(o.threads, 1));
        for (std::size_t i = 0; i < n; ++i) std::memcpy(out + i * dim, feats[i].values.data(), dim * sizeof(double));
    });
}

bscat_status bscat_features_extract(const char* manifest_path, const char* cache_path,
                                    const bscat_scatter_options* opts, size_t* rows, size_t* dim) {
    return guarded([&] {
        const auto& o = require(opts, "opts");
        const auto s = bscat::extract_features_file(require_str(manifest_path, "manifest_path"),
                                                    require_str(cache_path, "cache_path"),
                                                    scattering_config(o, 0), o.threads);
        if (rows != nullptr) *rows = s.rows;
        if (dim != nullptr) *dim = s.dim;
    });
}

void bscat_gp_options_default(bscat_gp_options* opts) {
    if (opts == nullptr) return;
    opts->kernel = "rbf";
    opts->iters = 500;
    opts->lr = 0.05;
    opts->seed = 0;
    opts->preprocess = {1, 0.0};
}

void bscat_svgp_options_default(bscat_svgp_options* opts) {
    if (opts == nullptr) return;
    opts->kernel = "rbf";
    opts->inducing = 1024;
    opts->batch = 256;
    opts->steps = 5000;
    opts->lr = 0.01;
    opts->seed = 0;
    opts->preprocess = {1, 0.0};
}

bscat_status bscat_gp_fit(const double* x, size_t n, size_t d, const double* y, const bscat_gp_options* opts,
                          bscat_model** model) {
    return guarded([&] {
        require(model, "model");
        auto m = bscat::RegressionModel::fit_gp(matrix_in(x, n, d, "x"), vector_in(y, n, "y"),
                                                gp_options(require(opts, "opts")));
        *model = new bscat_model{std::move(m)};
    });
}

bscat_status bscat_svgp_fit(const double* x, size_t n, size_t d, const double* y,
                            const bscat_svgp_options* opts, bscat_model** model) {
    return guarded([&] {
        require(model, "model");
        auto m = bscat::RegressionModel::fit_svgp(matrix_in(x, n, d, "x"), vector_in(y, n, "y"),
                                                  svgp_options(require(opts, "opts")));
        *model = new bscat_model{std::move(m)};
    });
}

bscat_status bscat_model_predict(const bscat_model* model, const double* x, size_t n, size_t d, double* mean,
                                 double* variance) {
    return guarded([&] {
        const auto& m = require(model, "model");
        const auto pred = m.model.predict(matrix_in(x, n, d, "x"));
        if (mean != nullptr && n > 0) std::memcpy(mean, pred.mean.data(), n * sizeof(double));
        if (variance != nullptr && n > 0) std::memcpy(variance, pred.variance.data(), n * sizeof(double));
    });
}

bscat_status bscat_model_info(const bscat_model* model, bscat_model_kind* kind, size_t* input_dim) {
    return guarded([&] {
        const auto& m = require(model, "model");
        if (kind != nullptr) *kind = m.model.kind() == bscat::ModelKind::gp ? BSCAT_MODEL_GP : BSCAT_MODEL_SVGP;
        if (input_dim != nullptr) *input_dim = m.model.input_dim();
    });
}

bscat_status bscat_model_save(const bscat_model* model, const char* path) {
    return guarded([&] { require(model, "model").model.save(require_str(path, "path")); });
}

bscat_status bscat_model_load(const char* path, bscat_model** model) {
    return guarded([&] {
        require(model, "model");
        auto m = bscat::RegressionModel::load(require_str(path, "path"));
        *model = new bscat_model{std::move(m)};
    });
}

void bscat_model_free(bscat_model* model) { delete model; }

bscat_status bscat_model_fit_files(bscat_model_kind kind, const char* cache_path, const char* manifest_path,
                                   const bscat_gp_options* gp_opts, const bscat_svgp_options* svgp_opts,
                                   const char* model_path, char** summary) {
    return guarded([&] {
        bscat::GpFitOptions g;
        bscat::SvgpFitOptions s;
        if (kind == BSCAT_MODEL_GP) {
            g = gp_options(require(gp_opts, "gp_opts"));
        } else if (kind == BSCAT_MODEL_SVGP) {
            s = svgp_options(require(svgp_opts, "svgp_opts"));
        } else {
            fail(ErrorCode::invalid_argument, "unknown model kind");
        }
        const auto k = kind == BSCAT_MODEL_GP ? bscat::ModelKind::gp : bscat::ModelKind::svgp;
        const auto r = bscat::fit_model_files(k, require_str(cache_path, "cache_path"),
                                              require_str(manifest_path, "manifest_path"), g, s,
                                              require_str(model_path, "model_path"));
        nlohmann::ordered_json j;
        j["kind"] = bscat::to_string(r.kind);
        j["n_train"] = r.n_train;
        j["input_dim"] = r.input_dim;
        if (r.kind == bscat::ModelKind::gp) j["final_neg_lml"] = r.final_neg_lml;
        j["model"] = model_path;
        put_string(summary, j.dump(2));
    });
}

bscat_status bscat_model_eval_files(const char* model_path, const char* cache_path, const char* manifest_path,
                                    const char* metrics_path, const char* predictions_path, char** metrics_json) {
    return guarded([&] {
        auto opt = [](const char* p) {
            return p != nullptr ? std::optional<std::filesystem::path>(p) : std::nullopt;
        };
        const auto r = bscat::eval_model_files(require_str(model_path, "model_path"),
                                               require_str(cache_path, "cache_path"),
                                               require_str(manifest_path, "manifest_path"), opt(metrics_path),
                                               opt(predictions_path));
        put_string(metrics_json, r.to_json());
    });
}

bscat_status bscat_metrics_compute(const double* mean, const double* variance, const double* truth, size_t n,
                                   double target_mean, double target_std, bscat_metrics* out) {
    return guarded([&] {
        require(out, "out");
        if (!(target_std > 0.0)) fail(ErrorCode::invalid_argument, "target_std must be positive");
        const bscat::TargetStats stats{target_mean, target_std};
        const Eigen::VectorXd mu = vector_in(mean, n, "mean");
        const Eigen::VectorXd var = vector_in(variance, n, "variance");
        auto pred = bscat::PredictiveDistribution::from_standardized(
            stats.standardize(mu), var / (target_std * target_std), stats);
        // Keep the caller's raw values rather than their round trip.
        pred.mean = mu;
        pred.variance = var;
        metrics_out(bscat::compute_metrics(pred, vector_in(truth, n, "truth")), out);
    });
}

bscat_status bscat_metrics_trivial(const double* y_train, size_t n_train, const double* y_test, size_t n_test,
                                   bscat_metrics* out) {
    return guarded([&] {
        require(out, "out");
        metrics_out(bscat::trivial_baseline(vector_in(y_train, n_train, "y_train"),
                                            vector_in(y_test, n_test, "y_test")),
                    out);
    });
}

bscat_status bscat_metrics_report_files(const char* predictions_path, const char* truth_path, char** json,
                                        char** table) {
    return guarded([&] {
        const auto r = bscat::metrics_report_files(require_str(predictions_path, "predictions_path"),
                                                   require_str(truth_path, "truth_path"));
        put_string(json, r.to_json());
        put_string(table, r.to_table());
    });
}

void bscat_bo_options_default(bscat_bo_options* opts) {
    if (opts == nullptr) return;
    opts->n_init = 50;
    opts->n_iters = 50;
    opts->pool_size = 1000;
    opts->kernel = "matern52";
    opts->maximize = 0;
    opts->refit_every = 1;
    opts->gp_iters = 500;
    opts->gp_lr = 0.05;
    opts->seed = 0;
    opts->standardize_pool = 1;
}

bscat_status bscat_bo_run(const double* pool, size_t n, size_t d, const double* values,
                          const bscat_bo_options* opts, int random_baseline, char** trace_csv) {
    return guarded([&] {
        const Eigen::MatrixXd x = matrix_in(pool, n, d, "pool");
        const Eigen::VectorXd v = vector_in(values, n, "values");
        const auto cfg = bo_config(require(opts, "opts"));
        const bscat::Oracle oracle = [&](std::size_t i) { return v(static_cast<Eigen::Index>(i)); };
        const auto t = random_baseline != 0 ? bscat::random_search(x, oracle, cfg) : bscat::run_bo(x, oracle, cfg);
        put_string(trace_csv, t.to_csv());
    });
}

bscat_status bscat_bo_run_files(const char* cache_path, const char* manifest_path, const bscat_bo_options* opts,
                                int random_baseline, const char* trace_path, char** trace_csv) {
    return guarded([&] {
        std::optional<std::filesystem::path> out;
        if (trace_path != nullptr) out = trace_path;
        const auto t = bscat::bo_run_files(require_str(cache_path, "cache_path"),
                                           require_str(manifest_path, "manifest_path"),
                                           bo_config(require(opts, "opts")), random_baseline != 0, out);
        put_string(trace_csv, t.to_csv());
    });
}

bscat_status bscat_pipeline_config(const char* config_path, const char* const* overrides, size_t n_overrides,
                                   char** config_text) {
    return guarded([&] {
        const auto cfg = pipeline_config(config_path, overrides, n_overrides);
        cfg.validate();
        put_string(config_text, cfg.to_text());
    });
}

bscat_status bscat_pipeline_run(const char* config_path, const char* const* overrides, size_t n_overrides,
                                char** table) {
    return guarded([&] {
        const auto r = bscat::run_pipeline(pipeline_config(config_path, overrides, n_overrides));
        put_string(table, r.table);
    });
}

}  // extern "C"
