#pragma once

#include "bscat/kernels.hpp"
#include "bscat/predictive.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

namespace bscat {

inline constexpr double kNoiseFloor = 1e-6;

struct OptimizerConfig {
    std::size_t iterations = 500;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    /// Holds the noise variance (standardized units) fixed when set.
    std::optional<double> fixed_noise_variance;
    /// Skip the mean-pairwise-distance initialization and start from the
    /// given spec's lengthscales.
    bool keep_initial_lengthscales = false;
    double initial_signal_variance = 1.0;
    double initial_noise_variance = 0.01;
};

/// Cholesky factor of K with the jitter that was needed to obtain it.
struct RobustCholesky {
    Eigen::MatrixXd lower;
    double jitter = 0.0;
};

/// Factorizes `k`; on failure retries with jitter 1e-8 * mean(diag) doubling
/// up to 1e-2 * mean(diag), then throws cholesky-failure.
RobustCholesky robust_cholesky(const Eigen::MatrixXd& k);

struct LmlResult {
    double value = 0.0;
    /// d LML / d [kernel params..., log noise variance].
    Eigen::VectorXd gradient;
};

LmlResult log_marginal_likelihood(const KernelSpec& spec, double log_noise_variance,
                                  const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  bool with_gradient = true);

/// Same value and gradient for kernels that depend only on distance, from
/// precomputed pairwise_squared_distances(x).
LmlResult log_marginal_likelihood_from_distances(const KernelSpec& spec, double log_noise_variance,
                                                 const Eigen::MatrixXd& d2, const Eigen::VectorXd& y,
                                                 bool with_gradient = true);

/// Mean Euclidean distance over all row pairs (a seeded 1e6-pair sample when
/// n > 2000). Returns 1 when every pair coincides.
double mean_pairwise_distance(const Eigen::MatrixXd& x, std::uint64_t seed = 0);

struct FitTrace {
    double initial_neg_lml = 0.0;
    double final_neg_lml = 0.0;
    std::size_t iterations = 0;
};

/// Trained exact-GP posterior on standardized targets.
struct GPState {
    Eigen::MatrixXd x_train;
    Eigen::VectorXd y_train;  // standardized
    KernelSpec spec;
    double log_noise_variance = std::log(0.01);
    Eigen::MatrixXd chol;
    Eigen::VectorXd alpha;
    double jitter = 0.0;
    TargetStats target_stats;
    FitTrace trace;

    [[nodiscard]] double noise_variance() const { return std::exp(log_noise_variance); }
    [[nodiscard]] double log_marginal_likelihood() const;
};

/// Conditions on data at fixed hyperparameters (no optimization).
GPState gp_condition(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, KernelSpec spec,
                     double log_noise_variance);

GPState gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, KernelSpec spec,
               const OptimizerConfig& opt = {});

PredictiveDistribution gp_predict(const GPState& state, const Eigen::MatrixXd& x_test);

}  // namespace bscat
