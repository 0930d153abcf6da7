#include "bscat/kernels.hpp"

#include "bscat/error.hpp"

#include <cmath>

namespace bscat {
namespace {

constexpr double kSqrt5 = 2.23606797749978969640917366873128;

bool is_stationary(KernelFamily f) { return f != KernelFamily::linear; }

Eigen::RowVectorXd inverse_lengthscales(const KernelSpec& spec, Eigen::Index dim) {
    if (spec.ard) return (-spec.log_lengthscales.array()).exp().matrix().transpose();
    return Eigen::RowVectorXd::Constant(dim, std::exp(-spec.log_lengthscales(0)));
}

Eigen::MatrixXd scaled(const KernelSpec& spec, const Eigen::MatrixXd& x) {
    return x.array().rowwise() * inverse_lengthscales(spec, x.cols()).array();
}

void check_inputs(const KernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.cols() != b.cols()) {
        fail(ErrorCode::size_mismatch, "kernel inputs have " + std::to_string(a.cols()) + " and " +
                                           std::to_string(b.cols()) + " columns");
    }
    spec.validate(static_cast<std::size_t>(a.cols()));
}

// Squared scaled distances; exact zeros on the diagonal when a and b alias.
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& as, const Eigen::MatrixXd& bs, bool same) {
    const Eigen::VectorXd an = as.rowwise().squaredNorm();
    const Eigen::VectorXd bn = bs.rowwise().squaredNorm();
    Eigen::MatrixXd r2;
    if (same) {
        // Symmetric rank update: half the flops of the general product and
        // exactly symmetric.
        r2 = Eigen::MatrixXd::Zero(as.rows(), as.rows());
        r2.selfadjointView<Eigen::Lower>().rankUpdate(as, -2.0);
    } else {
        r2 = (-2.0) * (as * bs.transpose());
    }
    r2.colwise() += an;
    r2.rowwise() += bn.transpose();
    r2 = r2.cwiseMax(0.0);
    if (same) {
        r2.triangularView<Eigen::StrictlyUpper>() = r2.transpose();
        r2.diagonal().setZero();
    }
    return r2;
}

double stationary_value(KernelFamily f, double r2) {
    if (f == KernelFamily::rbf) return std::exp(-0.5 * r2);
    const double r = std::sqrt(r2);
    return (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * std::exp(-kSqrt5 * r);
}

// d k / d (r^2), unit signal variance.
double stationary_slope(KernelFamily f, double r2) {
    if (f == KernelFamily::rbf) return -0.5 * std::exp(-0.5 * r2);
    const double r = std::sqrt(r2);
    return -(5.0 / 6.0) * (1.0 + kSqrt5 * r) * std::exp(-kSqrt5 * r);
}

}  // namespace

std::string to_string(KernelFamily f) {
    switch (f) {
        case KernelFamily::rbf: return "rbf";
        case KernelFamily::matern52: return "matern52";
        case KernelFamily::linear: return "linear";
    }
    return "unknown";
}

KernelSpec KernelSpec::parse(const std::string& text) {
    KernelSpec spec;
    std::string family = text;
    const auto comma = text.find(',');
    if (comma != std::string::npos) {
        family = text.substr(0, comma);
        const std::string suffix = text.substr(comma + 1);
        if (suffix != "ard") fail(ErrorCode::invalid_config, "unknown kernel option '" + suffix + "'");
        spec.ard = true;
    }
    if (family == "rbf") {
        spec.family = KernelFamily::rbf;
    } else if (family == "matern52") {
        spec.family = KernelFamily::matern52;
    } else if (family == "linear") {
        spec.family = KernelFamily::linear;
    } else {
        fail(ErrorCode::invalid_config, "unknown kernel family '" + family + "'");
    }
    return spec;
}

std::string KernelSpec::name() const { return to_string(family) + (ard ? ",ard" : ""); }

Eigen::VectorXd KernelSpec::params() const {
    Eigen::VectorXd theta(num_params());
    theta.head(log_lengthscales.size()) = log_lengthscales;
    theta(log_lengthscales.size()) = log_signal_variance;
    return theta;
}

void KernelSpec::set_params(const Eigen::VectorXd& theta) {
    if (static_cast<std::size_t>(theta.size()) != num_params()) {
        fail(ErrorCode::size_mismatch, "kernel parameter vector has wrong length");
    }
    log_lengthscales = theta.head(log_lengthscales.size());
    log_signal_variance = theta(log_lengthscales.size());
}

void KernelSpec::init_lengthscales(double value, std::size_t dim) {
    const auto count = static_cast<Eigen::Index>(ard ? dim : 1);
    log_lengthscales = Eigen::VectorXd::Constant(count, std::log(value));
}

void KernelSpec::validate(std::size_t dim) const {
    if (ard && static_cast<std::size_t>(log_lengthscales.size()) != dim) {
        fail(ErrorCode::size_mismatch, "ARD kernel has " + std::to_string(log_lengthscales.size()) +
                                           " lengthscales for " + std::to_string(dim) +
                                           "-dimensional inputs");
    }
    if (!ard && log_lengthscales.size() != 1) {
        fail(ErrorCode::invalid_config, "isotropic kernel needs exactly one lengthscale");
    }
    if (!log_lengthscales.allFinite() || !std::isfinite(log_signal_variance)) {
        fail(ErrorCode::non_finite_input, "kernel hyperparameters are not finite");
    }
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd& b) {
    check_inputs(spec, a, b);
    const double sf2 = std::exp(spec.log_signal_variance);
    const bool same = &a == &b;
    const Eigen::MatrixXd as = scaled(spec, a);
    const Eigen::MatrixXd bs = same ? as : scaled(spec, b);
    if (!is_stationary(spec.family)) {
        Eigen::MatrixXd k = sf2 * (as * bs.transpose());
        if (same) k = 0.5 * (k + k.transpose()).eval();
        return k;
    }
    Eigen::MatrixXd r2 = squared_distances(as, bs, same);
    return r2.unaryExpr([&](double v) { return sf2 * stationary_value(spec.family, v); });
}

Eigen::VectorXd kernel_diagonal(const KernelSpec& spec, const Eigen::MatrixXd& a) {
    spec.validate(static_cast<std::size_t>(a.cols()));
    const double sf2 = std::exp(spec.log_signal_variance);
    if (is_stationary(spec.family)) return Eigen::VectorXd::Constant(a.rows(), sf2);
    return sf2 * scaled(spec, a).rowwise().squaredNorm();
}

std::vector<Eigen::MatrixXd> kernel_gradients(const KernelSpec& spec, const Eigen::MatrixXd& a,
                                              const Eigen::MatrixXd& b) {
    check_inputs(spec, a, b);
    const double sf2 = std::exp(spec.log_signal_variance);
    const Eigen::MatrixXd k = kernel_matrix(spec, a, b);
    const Eigen::MatrixXd as = scaled(spec, a);
    const Eigen::MatrixXd bs = scaled(spec, b);
    const Eigen::Index n = a.rows();
    const Eigen::Index m = b.rows();
    const Eigen::Index dim = a.cols();

    std::vector<Eigen::MatrixXd> grads;
    if (is_stationary(spec.family)) {
        const Eigen::MatrixXd r2 = squared_distances(as, bs, &a == &b);
        const Eigen::MatrixXd slope =
            r2.unaryExpr([&](double v) { return sf2 * stationary_slope(spec.family, v); });
        if (spec.ard) {
            for (Eigen::Index d = 0; d < dim; ++d) {
                Eigen::MatrixXd g(n, m);
                for (Eigen::Index j = 0; j < m; ++j) {
                    for (Eigen::Index i = 0; i < n; ++i) {
                        const double diff = as(i, d) - bs(j, d);
                        g(i, j) = slope(i, j) * (-2.0 * diff * diff);
                    }
                }
                grads.push_back(std::move(g));
            }
        } else {
            grads.push_back(slope.cwiseProduct(-2.0 * r2));
        }
    } else if (spec.ard) {
        for (Eigen::Index d = 0; d < dim; ++d) {
            grads.push_back(-2.0 * sf2 * (as.col(d) * bs.col(d).transpose()));
        }
    } else {
        grads.push_back(-2.0 * k);
    }
    grads.push_back(k);
    return grads;
}

KernelVjp kernel_vjp(const KernelSpec& spec, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                     const Eigen::MatrixXd& upstream, bool want_inputs) {
    check_inputs(spec, a, b);
    if (upstream.rows() != a.rows() || upstream.cols() != b.rows()) {
        fail(ErrorCode::size_mismatch, "upstream gradient shape does not match the kernel matrix");
    }
    const double sf2 = std::exp(spec.log_signal_variance);
    const Eigen::RowVectorXd inv_ell = inverse_lengthscales(spec, a.cols());
    const Eigen::MatrixXd as = scaled(spec, a);
    const Eigen::MatrixXd bs = scaled(spec, b);
    const Eigen::Index dim = a.cols();

    KernelVjp out;
    out.params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.num_params()));
    const Eigen::Index sig = out.params.size() - 1;

    if (is_stationary(spec.family)) {
        const Eigen::MatrixXd r2 = squared_distances(as, bs, false);
        Eigen::MatrixXd kval(r2.rows(), r2.cols());
        Eigen::MatrixXd q(r2.rows(), r2.cols());
        for (Eigen::Index j = 0; j < r2.cols(); ++j) {
            for (Eigen::Index i = 0; i < r2.rows(); ++i) {
                kval(i, j) = sf2 * stationary_value(spec.family, r2(i, j));
                q(i, j) = upstream(i, j) * sf2 * stationary_slope(spec.family, r2(i, j));
            }
        }
        out.params(sig) = upstream.cwiseProduct(kval).sum();
        const Eigen::VectorXd qrow = q.rowwise().sum();
        const Eigen::VectorXd qcol = q.colwise().sum().transpose();
        const Eigen::MatrixXd qb = q * bs;  // n x D
        // sum_ij Q_ij (as_id - bs_jd)^2 for every d
        const Eigen::RowVectorXd per_dim = qrow.transpose() * as.array().square().matrix() +
                                           qcol.transpose() * bs.array().square().matrix() -
                                           2.0 * as.cwiseProduct(qb).colwise().sum();
        if (spec.ard) {
            out.params.head(dim) = -2.0 * per_dim.transpose();
        } else {
            out.params(0) = -2.0 * per_dim.sum();
        }
        if (want_inputs) {
            out.da = 2.0 * ((as.array().colwise() * qrow.array() - qb.array()).rowwise() *
                            inv_ell.array())
                               .matrix();
            const Eigen::MatrixXd qta = q.transpose() * as;
            out.db = 2.0 * ((bs.array().colwise() * qcol.array() - qta.array()).rowwise() *
                            inv_ell.array())
                               .matrix();
        }
    } else {
        const Eigen::MatrixXd gbs = upstream * bs;  // n x D
        const Eigen::RowVectorXd per_dim = as.cwiseProduct(gbs).colwise().sum();
        out.params(sig) = sf2 * per_dim.sum();
        if (spec.ard) {
            out.params.head(dim) = -2.0 * sf2 * per_dim.transpose();
        } else {
            out.params(0) = -2.0 * sf2 * per_dim.sum();
        }
        if (want_inputs) {
            out.da = sf2 * (gbs.array().rowwise() * inv_ell.array()).matrix();
            out.db = sf2 * ((upstream.transpose() * as).array().rowwise() * inv_ell.array()).matrix();
        }
    }
    return out;
}

GramCache::GramCache(const KernelSpec& spec, const Eigen::MatrixXd& x) : spec_(spec) {
    spec_.validate(static_cast<std::size_t>(x.cols()));
    const double sf2 = std::exp(spec_.log_signal_variance);
    xs_ = scaled(spec_, x);
    if (!is_stationary(spec_.family)) {
        k_ = sf2 * (xs_ * xs_.transpose());
        k_ = 0.5 * (k_ + k_.transpose()).eval();
        return;
    }
    r2_ = squared_distances(xs_, xs_, true);
    k_ = r2_.unaryExpr([&](double v) { return sf2 * stationary_value(spec_.family, v); });
}

Eigen::VectorXd GramCache::vjp(const Eigen::MatrixXd& upstream) const {
    if (upstream.rows() != k_.rows() || upstream.cols() != k_.cols()) {
        fail(ErrorCode::size_mismatch, "upstream gradient shape does not match the kernel matrix");
    }
    const double sf2 = std::exp(spec_.log_signal_variance);
    const Eigen::Index dim = xs_.cols();
    Eigen::VectorXd params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec_.num_params()));
    const Eigen::Index sig = params.size() - 1;
    params(sig) = upstream.cwiseProduct(k_).sum();

    Eigen::RowVectorXd per_dim;
    double scale = 0.0;
    if (is_stationary(spec_.family)) {
        Eigen::MatrixXd q(r2_.rows(), r2_.cols());
        for (Eigen::Index j = 0; j < q.cols(); ++j) {
            for (Eigen::Index i = 0; i < q.rows(); ++i) {
                q(i, j) = upstream(i, j) * sf2 * stationary_slope(spec_.family, r2_(i, j));
            }
        }
        // sum_ij Q_ij (xs_id - xs_jd)^2 for every d
        const Eigen::VectorXd qsum = q.rowwise().sum() + q.colwise().sum().transpose();
        per_dim = qsum.transpose() * xs_.array().square().matrix() -
                  2.0 * xs_.cwiseProduct(q * xs_).colwise().sum();
        scale = -2.0;
    } else {
        per_dim = xs_.cwiseProduct(upstream * xs_).colwise().sum();
        scale = -2.0 * sf2;
    }
    if (spec_.ard) {
        params.head(dim) = scale * per_dim.transpose();
    } else {
        params(0) = scale * per_dim.sum();
    }
    return params;
}

Eigen::MatrixXd pairwise_squared_distances(const Eigen::MatrixXd& x) {
    return squared_distances(x, x, true);
}

bool depends_only_on_distance(const KernelSpec& spec) noexcept {
    return is_stationary(spec.family) && !spec.ard;
}

Eigen::MatrixXd kernel_from_squared_distances(const KernelSpec& spec, const Eigen::MatrixXd& d2) {
    if (!depends_only_on_distance(spec)) {
        fail(ErrorCode::invalid_argument, "kernel '" + spec.name() + "' is not a function of distance");
    }
    spec.validate(1);
    const double sf2 = std::exp(spec.log_signal_variance);
    const double inv_ell2 = std::exp(-2.0 * spec.log_lengthscales(0));
    return d2.unaryExpr([&](double v) { return sf2 * stationary_value(spec.family, v * inv_ell2); });
}

Eigen::VectorXd kernel_vjp_from_squared_distances(const KernelSpec& spec, const Eigen::MatrixXd& d2,
                                                  const Eigen::MatrixXd& upstream) {
    if (!depends_only_on_distance(spec)) {
        fail(ErrorCode::invalid_argument, "kernel '" + spec.name() + "' is not a function of distance");
    }
    if (upstream.rows() != d2.rows() || upstream.cols() != d2.cols()) {
        fail(ErrorCode::size_mismatch, "upstream gradient shape does not match the kernel matrix");
    }
    const double sf2 = std::exp(spec.log_signal_variance);
    const double inv_ell2 = std::exp(-2.0 * spec.log_lengthscales(0));
    double d_ell = 0.0;
    double d_sig = 0.0;
    for (Eigen::Index j = 0; j < d2.cols(); ++j) {
        for (Eigen::Index i = 0; i < d2.rows(); ++i) {
            const double r2 = d2(i, j) * inv_ell2;
            const double g = upstream(i, j) * sf2;
            d_sig += g * stationary_value(spec.family, r2);
            // d r2 / d log(ell) = -2 r2
            d_ell += g * stationary_slope(spec.family, r2) * (-2.0 * r2);
        }
    }
    Eigen::VectorXd out(2);
    out << d_ell, d_sig;
    return out;
}

KernelVjp kernel_diagonal_vjp(const KernelSpec& spec, const Eigen::MatrixXd& a,
                              const Eigen::VectorXd& upstream, bool want_inputs) {
    spec.validate(static_cast<std::size_t>(a.cols()));
    if (upstream.size() != a.rows()) fail(ErrorCode::size_mismatch, "upstream length mismatch");
    const double sf2 = std::exp(spec.log_signal_variance);
    KernelVjp out;
    out.params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.num_params()));
    const Eigen::Index sig = out.params.size() - 1;
    if (is_stationary(spec.family)) {
        out.params(sig) = sf2 * upstream.sum();
        if (want_inputs) out.da = Eigen::MatrixXd::Zero(a.rows(), a.cols());
        return out;
    }
    const Eigen::RowVectorXd inv_ell = inverse_lengthscales(spec, a.cols());
    const Eigen::MatrixXd as = scaled(spec, a);
    const Eigen::RowVectorXd per_dim = upstream.transpose() * as.array().square().matrix();
    out.params(sig) = sf2 * per_dim.sum();
    if (spec.ard) {
        out.params.head(a.cols()) = -2.0 * sf2 * per_dim.transpose();
    } else {
        out.params(0) = -2.0 * sf2 * per_dim.sum();
    }
    if (want_inputs) {
        out.da = 2.0 * sf2 *
                 ((as.array().colwise() * upstream.array()).rowwise() * inv_ell.array()).matrix();
    }
    return out;
}

}  // namespace bscat
