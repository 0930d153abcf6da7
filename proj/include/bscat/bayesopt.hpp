#pragma once

#include "bscat/gp_exact.hpp"
#include "bscat/kernels.hpp"
#include "bscat/predictive.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace bscat {

enum class Direction { minimize, maximize };
std::string to_string(Direction d);
Direction parse_direction(const std::string& text);

struct BOConfig {
    std::size_t n_init = 50;
    std::size_t n_iters = 50;
    std::size_t pool_size = 1000;  // capped at the number of pool rows
    Direction direction = Direction::minimize;
    KernelSpec kernel = KernelSpec::parse("matern52");
    std::size_t refit_every = 1;
    std::uint64_t seed = 0;
    std::size_t gp_iterations = 500;
    double gp_learning_rate = 0.05;
    /// Z-score pool features on the whole pool before fitting.
    bool standardize_pool = true;

    void validate(std::size_t pool_rows) const;
};

/// One oracle query. Rows of the initial design carry iteration 0; the
/// acquisition steps are numbered from 1.
struct BORecord {
    std::size_t iteration = 0;
    std::size_t index = 0;  // row of the pool feature matrix
    double value = 0.0;
    double best = 0.0;
    double regret = 0.0;
    bool operator==(const BORecord&) const = default;
};

struct BOTrace {
    std::vector<BORecord> records;
    double pool_optimum = 0.0;
    Direction direction = Direction::minimize;

    [[nodiscard]] double final_regret() const;
    /// Regret once the initial design has been observed.
    [[nodiscard]] double initial_regret() const;
    /// Columns: iteration,index,value,best,regret.
    [[nodiscard]] std::string to_csv() const;
    /// Throws internal if best/regret are not monotone or an index repeats.
    void check_invariants() const;
    bool operator==(const BOTrace&) const = default;
};

using Oracle = std::function<double(std::size_t)>;

/// Closed-form EI with zero exploration offset, on the distribution's raw
/// scale. Points with zero variance get max(improvement, 0).
Eigen::VectorXd expected_improvement(const PredictiveDistribution& pred, double best,
                                     Direction direction);

BOTrace run_bo(const Eigen::MatrixXd& pool_features, const Oracle& oracle, const BOConfig& cfg);

/// Same initial design and budget as run_bo, continued uniformly at random.
BOTrace random_search(const Eigen::MatrixXd& pool_features, const Oracle& oracle,
                      const BOConfig& cfg);

}  // namespace bscat
