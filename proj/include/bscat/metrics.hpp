#pragma once

#include "bscat/predictive.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <string>

namespace bscat {

/// Half-width multiplier of the central 95% Gaussian interval.
inline constexpr double kInterval95 = 1.96;

/// Quantile levels 0.05, 0.10, ..., 0.95.
std::array<double, 19> qce_levels();

struct MetricsReport {
    double rmse = 0.0;               // raw target units
    double rmse_standardized = 0.0;
    double nll = 0.0;                // nats, standardized scale
    double qce = 0.0;
    double pi_mu = 0.0;              // standardized width
    double pi_sigma = 0.0;
    std::size_t n_test = 0;

    /// Fixed key order: rmse, rmse_standardized, nll, qce, pi_mu, pi_sigma, n_test.
    [[nodiscard]] std::string to_json() const;
    static MetricsReport from_json(const std::string& text);
    [[nodiscard]] std::string to_table() const;
};

/// Metrics of `pred` against raw truths; truths are standardized with the
/// prediction's target statistics.
MetricsReport compute_metrics(const PredictiveDistribution& pred, const Eigen::VectorXd& y_true);

/// Predicts the training mean with the training standard deviation.
PredictiveDistribution trivial_predictor(const Eigen::VectorXd& y_train_raw, Eigen::Index n_test);

MetricsReport trivial_baseline(const Eigen::VectorXd& y_train_raw, const Eigen::VectorXd& y_test_raw);

}  // namespace bscat
