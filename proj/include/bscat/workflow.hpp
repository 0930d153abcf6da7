#pragma once

// File-level operations behind the CLI and the C API: they tie manifests,
// feature caches, model files and metric reports to the numeric modules.

#include "bscat/bayesopt.hpp"
#include "bscat/datasets.hpp"
#include "bscat/features.hpp"
#include "bscat/gp_exact.hpp"
#include "bscat/metrics.hpp"
#include "bscat/scattering.hpp"
#include "bscat/svgp.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bscat {

// ---------------------------------------------------------------------------
// Features

/// J = log2(N) - 1 (at least 1), the scale count used when none is given.
std::size_t default_num_scales(std::size_t image_size);

/// Scattering features of every manifest record, in manifest order.
/// cfg.bank.image_size is taken from the images themselves and a zero
/// cfg.bank.num_scales becomes default_num_scales.
Eigen::MatrixXd extract_features(const Manifest& manifest, ScatteringConfig& cfg, std::size_t threads);

struct ExtractSummary {
    std::size_t rows = 0;
    std::size_t dim = 0;
    std::uint64_t digest = 0;
};

ExtractSummary extract_features_file(const std::filesystem::path& manifest_path,
                                     const std::filesystem::path& cache_path, ScatteringConfig cfg,
                                     std::size_t threads);

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& x, const std::vector<std::size_t>& rows);
Eigen::VectorXd select_rows(const Eigen::VectorXd& y, const std::vector<std::size_t>& rows);

// ---------------------------------------------------------------------------
// Models

/// Optional z-scoring and PCA applied to raw features before the GP.
struct PreprocessOptions {
    bool standardize = true;
    /// Retained variance fraction in (0, 1]; nullopt skips PCA.
    std::optional<double> pca_retain;
};

class FeaturePreprocessor {
public:
    static FeaturePreprocessor fit(const Eigen::MatrixXd& train, const PreprocessOptions& opts);
    [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
    [[nodiscard]] std::size_t input_dim() const noexcept { return input_dim_; }

    // Serialized form is part of the model file.
    [[nodiscard]] std::string to_json() const;
    static FeaturePreprocessor from_json(const std::string& text);

private:
    std::size_t input_dim_ = 0;
    std::optional<FeatureStandardizer> standardizer_;
    // Empty basis when PCA is off; rows are the retained components.
    Eigen::RowVectorXd pca_center_;
    Eigen::MatrixXd pca_basis_;
    double pca_retain_ = 0.0;
};

enum class ModelKind { gp, svgp };
std::string to_string(ModelKind k);

struct GpFitOptions {
    std::string kernel = "rbf";
    OptimizerConfig optimizer;
    PreprocessOptions preprocess;
};

struct SvgpFitOptions {
    std::string kernel = "rbf";
    SvgpConfig svgp;
    PreprocessOptions preprocess;
};

/// A fitted regressor plus the feature preprocessing it was trained with.
class RegressionModel {
public:
    static RegressionModel fit_gp(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y_raw,
                                  const GpFitOptions& opts, std::uint64_t feature_digest = 0);
    static RegressionModel fit_svgp(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y_raw,
                                    const SvgpFitOptions& opts, std::uint64_t feature_digest = 0);

    [[nodiscard]] PredictiveDistribution predict(const Eigen::MatrixXd& x_raw) const;

    [[nodiscard]] ModelKind kind() const noexcept { return kind_; }
    [[nodiscard]] std::uint64_t feature_digest() const noexcept { return digest_; }
    [[nodiscard]] std::size_t input_dim() const noexcept { return prep_.input_dim(); }
    [[nodiscard]] const GPState& gp() const { return gp_; }
    [[nodiscard]] const SVGPState& svgp() const { return svgp_; }

    /// JSON model file; loading reproduces predictions bitwise.
    void save(const std::filesystem::path& path) const;
    static RegressionModel load(const std::filesystem::path& path);

private:
    ModelKind kind_ = ModelKind::gp;
    std::uint64_t digest_ = 0;
    FeaturePreprocessor prep_;
    GPState gp_;
    Eigen::VectorXd y_train_raw_;
    SVGPState svgp_;
};

struct FitSummary {
    ModelKind kind = ModelKind::gp;
    std::size_t n_train = 0;
    std::size_t input_dim = 0;
    double final_neg_lml = 0.0;  // exact GP only
};

/// Fits on the train-split rows of a cache aligned with `manifest_path`.
FitSummary fit_model_files(ModelKind kind, const std::filesystem::path& cache_path,
                           const std::filesystem::path& manifest_path, const GpFitOptions& gp_opts,
                           const SvgpFitOptions& svgp_opts, const std::filesystem::path& model_out);

/// Evaluates on the test-split rows; writes metrics JSON and, when given, a
/// predictions file readable by read_predictions.
MetricsReport eval_model_files(const std::filesystem::path& model_path,
                               const std::filesystem::path& cache_path,
                               const std::filesystem::path& manifest_path,
                               const std::optional<std::filesystem::path>& metrics_out,
                               const std::optional<std::filesystem::path>& predictions_out);

/// CSV with a "# target_mean=..,target_std=.." line and columns
/// mean,variance,standardized_mean,standardized_variance.
void write_predictions(const std::filesystem::path& path, const PredictiveDistribution& pred);
PredictiveDistribution read_predictions(const std::filesystem::path& path);

/// Truth values from a manifest (its test split) or a one-column CSV with
/// header "target".
Eigen::VectorXd read_truth(const std::filesystem::path& path);

MetricsReport metrics_report_files(const std::filesystem::path& predictions_path,
                                   const std::filesystem::path& truth_path);

// ---------------------------------------------------------------------------
// Bayesian optimization over a cached pool

/// Pool rows are every manifest record in order; the oracle returns targets.
BOTrace bo_run_files(const std::filesystem::path& cache_path, const std::filesystem::path& manifest_path,
                     const BOConfig& cfg, bool random_baseline,
                     const std::optional<std::filesystem::path>& trace_out);

// ---------------------------------------------------------------------------
// Pipeline

/// Flat key = value settings of one experiment; see README for every key.
struct PipelineConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "experiment";
    std::size_t threads = 1;

    SynthTask task = SynthTask::blob_count;
    std::string shift = "intensity";
    std::size_t image_size = 32;
    std::size_t n_train = 500;
    std::size_t n_test = 250;

    std::size_t splits = 5;
    double split_fraction = 0.8;

    std::size_t j = 0;  // 0 selects log2(N) - 1
    std::size_t l = 8;
    std::size_t order = 2;
    std::vector<Variant> variants{Variant::global};
    std::vector<std::string> kernels{"rbf"};
    ModelKind model = ModelKind::gp;
    bool trivial = true;

    std::size_t gp_iters = 500;
    double gp_lr = 0.05;
    std::size_t svgp_inducing = 1024;
    std::size_t svgp_batch = 256;
    std::size_t svgp_steps = 5000;
    double svgp_lr = 0.01;
    PreprocessOptions preprocess;

    bool bo = false;
    SynthTask bo_task = SynthTask::charge_energy;
    std::size_t bo_pool = 1000;
    std::size_t bo_init = 50;
    std::size_t bo_iters = 50;
    std::size_t bo_seeds = 5;
    std::string bo_kernel = "matern52";
    Variant bo_variant = Variant::global;
    std::size_t bo_refit_every = 1;
    std::size_t bo_gp_iters = 500;
    bool bo_random_search = true;

    /// Applies one key; throws invalid-config for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    /// Parses "key = value" lines; '#' starts a comment.
    static PipelineConfig parse(const std::string& text, const std::string& origin = "config");
    static PipelineConfig load(const std::filesystem::path& path);
    [[nodiscard]] std::size_t resolved_j() const;
    /// False for BO-only experiments (no variants and no trivial baseline).
    [[nodiscard]] bool runs_regression() const noexcept { return trivial || !variants.empty(); }
    /// Canonical key = value listing of every setting.
    [[nodiscard]] std::string to_text() const;
    void validate() const;
};

struct SplitIndices {
    std::vector<std::size_t> train;  // positions within the train split
    std::vector<std::size_t> test;
};

/// Split s of an experiment, a function of (seed, s) and the sizes only, so
/// every method sees the same rows.
SplitIndices synchronized_split(std::uint64_t seed, std::size_t split, std::size_t n_train,
                                std::size_t n_test, double fraction);

/// Mean and sample standard deviation; equal inputs give their exact value
/// and zero spread.
struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);

struct PipelineResult {
    std::filesystem::path summary_json;
    std::filesystem::path summary_text;
    std::string table;
};

PipelineResult run_pipeline(const PipelineConfig& cfg);

}  // namespace bscat
