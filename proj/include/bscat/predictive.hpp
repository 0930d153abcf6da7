#pragma once

#include <Eigen/Dense>

namespace bscat {

/// Mean and standard deviation used to standardize raw targets.
struct TargetStats {
    double mean = 0.0;
    double std = 1.0;

    /// Population statistics, std floored at 1e-12.
    static TargetStats of(const Eigen::VectorXd& y);
    [[nodiscard]] Eigen::VectorXd standardize(const Eigen::VectorXd& y) const {
        return (y.array() - mean) / std;
    }
};

/// Gaussian predictive marginals; variances include observation noise.
struct PredictiveDistribution {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
    Eigen::VectorXd standardized_mean;
    Eigen::VectorXd standardized_variance;
    TargetStats target_stats;

    [[nodiscard]] Eigen::Index size() const noexcept { return mean.size(); }

    /// Fills raw-unit fields from the standardized ones.
    static PredictiveDistribution from_standardized(Eigen::VectorXd std_mean,
                                                    Eigen::VectorXd std_variance,
                                                    TargetStats stats);
};

}  // namespace bscat
