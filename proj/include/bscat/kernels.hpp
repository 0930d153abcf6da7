#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace bscat {

enum class KernelFamily { rbf, matern52, linear };

std::string to_string(KernelFamily f);

/// Covariance function with log-domain hyperparameters.
struct KernelSpec {
    KernelFamily family = KernelFamily::rbf;
    bool ard = false;
    Eigen::VectorXd log_lengthscales = Eigen::VectorXd::Zero(1);
    double log_signal_variance = 0.0;  // log sigma_f^2

    /// Parses "rbf", "matern52", "linear", optionally suffixed ",ard".
    static KernelSpec parse(const std::string& text);
    [[nodiscard]] std::string name() const;

    [[nodiscard]] std::size_t num_lengthscales() const noexcept {
        return static_cast<std::size_t>(log_lengthscales.size());
    }
    /// Lengthscales followed by the signal variance.
    [[nodiscard]] std::size_t num_params() const noexcept { return num_lengthscales() + 1; }
    [[nodiscard]] Eigen::VectorXd params() const;
    void set_params(const Eigen::VectorXd& theta);

    /// Sets every lengthscale to `value`, sizing the vector for `dim` inputs.
    void init_lengthscales(double value, std::size_t dim);

    void validate(std::size_t dim) const;
};

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd& b);

/// k(x, x) for each row of a.
Eigen::VectorXd kernel_diagonal(const KernelSpec& spec, const Eigen::MatrixXd& a);

/// dK/dtheta_p for every hyperparameter in params() order.
std::vector<Eigen::MatrixXd> kernel_gradients(const KernelSpec& spec, const Eigen::MatrixXd& a,
                                              const Eigen::MatrixXd& b);

/// Reverse-mode contraction of an upstream gradient G (n x m) through
/// K(a, b): returns sum_ij G_ij dK_ij/dtheta, and optionally d/da, d/db.
struct KernelVjp {
    Eigen::VectorXd params;
    Eigen::MatrixXd da;
    Eigen::MatrixXd db;
};

KernelVjp kernel_vjp(const KernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                     const Eigen::MatrixXd& upstream, bool want_inputs = false);

/// K(x, x) together with the intermediates its parameter gradient reuses, so
/// one value-and-gradient evaluation forms the n x n x D products once.
class GramCache {
public:
    GramCache(const KernelSpec& spec, const Eigen::MatrixXd& x);

    [[nodiscard]] const Eigen::MatrixXd& matrix() const noexcept { return k_; }
    /// sum_ij G_ij dK_ij/dtheta; same result as kernel_vjp(spec, x, x, G).params.
    [[nodiscard]] Eigen::VectorXd vjp(const Eigen::MatrixXd& upstream) const;

private:
    KernelSpec spec_;
    Eigen::MatrixXd xs_;  // inputs divided by the lengthscales
    Eigen::MatrixXd r2_;  // scaled squared distances (stationary kernels only)
    Eigen::MatrixXd k_;
};

/// Unscaled squared Euclidean distances between the rows of x, exact zeros
/// on the diagonal.
Eigen::MatrixXd pairwise_squared_distances(const Eigen::MatrixXd& x);

/// True for isotropic rbf/matern52, whose Gram matrix is a function of the
/// unscaled squared distances alone.
bool depends_only_on_distance(const KernelSpec& spec) noexcept;

/// K from precomputed pairwise_squared_distances; requires
/// depends_only_on_distance(spec).
Eigen::MatrixXd kernel_from_squared_distances(const KernelSpec& spec, const Eigen::MatrixXd& d2);

/// sum_ij G_ij dK_ij/dtheta for the same precomputed distances.
Eigen::VectorXd kernel_vjp_from_squared_distances(const KernelSpec& spec, const Eigen::MatrixXd& d2,
                                                  const Eigen::MatrixXd& upstream);

/// Contraction through kernel_diagonal(a) with upstream vector g.
KernelVjp kernel_diagonal_vjp(const KernelSpec& spec, const Eigen::MatrixXd& a,
                              const Eigen::VectorXd& upstream, bool want_inputs = false);

}  // namespace bscat
