#pragma once

#include "bscat/gp_exact.hpp"
#include "bscat/kernels.hpp"
#include "bscat/predictive.hpp"

#include <Eigen/Dense>

#include <cstdint>

namespace bscat {

/// Whitened SVGP: u = chol(K_ZZ) v with q(v) = N(m_u, L_u L_u^T).
struct SVGPState {
    Eigen::MatrixXd z;        // M x D inducing inputs
    Eigen::VectorXd m_u;      // M
    Eigen::MatrixXd l_u;      // M x M lower triangular, positive diagonal
    KernelSpec spec;
    double log_noise_variance = std::log(0.01);
    TargetStats target_stats;

    [[nodiscard]] Eigen::Index num_inducing() const noexcept { return z.rows(); }
};

struct ElboGradient {
    Eigen::MatrixXd z;
    Eigen::VectorXd m_u;
    Eigen::MatrixXd l_u;  // lower triangle only
    Eigen::VectorXd kernel;
    double log_noise_variance = 0.0;
};

struct ElboResult {
    double value = 0.0;
    double expected_log_lik = 0.0;  // already scaled by n_total / batch
    double kl = 0.0;
    ElboGradient gradient;
};

/// Mini-batch ELBO on standardized targets y_std; the likelihood term is
/// scaled by n_total / batch size, the KL term counted once.
ElboResult svgp_elbo(const SVGPState& state, const Eigen::MatrixXd& batch_x,
                     const Eigen::VectorXd& batch_y_std, std::size_t n_total,
                     bool with_gradient = true);

/// KL[q(v) || N(0, I)] in the whitened basis.
double svgp_kl(const SVGPState& state);

/// Closed-form optimal q(v) for the full data set at the state's current
/// hyperparameters and inducing inputs (collapsed bound optimum).
void svgp_set_optimal_variational(SVGPState& state, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y_std);

/// k-means++ (D^2) seeding: m distinct training rows, deterministic in seed.
Eigen::MatrixXd kmeanspp_seed(const Eigen::MatrixXd& x, std::size_t m, std::uint64_t seed);

struct SvgpConfig {
    std::size_t num_inducing = 1024;  // capped at n
    std::size_t batch_size = 256;     // capped at n
    std::size_t steps = 5000;
    double learning_rate = 0.01;
    std::uint64_t seed = 0;
    bool train_inducing = true;
    bool train_hyperparameters = true;
    double initial_signal_variance = 1.0;
    double initial_noise_variance = 0.01;
};

SVGPState svgp_init(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, KernelSpec spec,
                    const SvgpConfig& cfg);

SVGPState svgp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, KernelSpec spec,
                   const SvgpConfig& cfg);

/// Continues Adam training from an existing state.
SVGPState svgp_train(SVGPState state, const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw,
                     const SvgpConfig& cfg);

PredictiveDistribution svgp_predict(const SVGPState& state, const Eigen::MatrixXd& x_test);

}  // namespace bscat
