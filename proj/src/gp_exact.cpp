#include "bscat/gp_exact.hpp"

#include "bscat/adam.hpp"
#include "bscat/error.hpp"
#include "bscat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

namespace bscat {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_finite(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (!x.allFinite()) fail(ErrorCode::non_finite_input, "training features contain non-finite values");
    if (!y.allFinite()) fail(ErrorCode::non_finite_input, "training targets contain non-finite values");
}

Eigen::MatrixXd add_noise(Eigen::MatrixXd k, double noise) {
    k.diagonal().array() += noise;
    return k;
}

}  // namespace

TargetStats TargetStats::of(const Eigen::VectorXd& y) {
    if (y.size() == 0) fail(ErrorCode::invalid_argument, "cannot standardize an empty target vector");
    TargetStats s;
    s.mean = y.mean();
    s.std = std::sqrt((y.array() - s.mean).square().mean());
    s.std = std::max(s.std, 1e-12);
    return s;
}

PredictiveDistribution PredictiveDistribution::from_standardized(Eigen::VectorXd std_mean,
                                                                 Eigen::VectorXd std_variance,
                                                                 TargetStats stats) {
    PredictiveDistribution p;
    p.mean = (std_mean.array() * stats.std + stats.mean).matrix();
    p.variance = std_variance * (stats.std * stats.std);
    p.standardized_mean = std::move(std_mean);
    p.standardized_variance = std::move(std_variance);
    p.target_stats = stats;
    return p;
}

RobustCholesky robust_cholesky(const Eigen::MatrixXd& k) {
    if (k.rows() != k.cols()) fail(ErrorCode::size_mismatch, "Cholesky of a non-square matrix");
    RobustCholesky out;
    if (k.rows() == 0) return out;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().allFinite()) {
        out.lower = llt.matrixL();
        return out;
    }
    const double scale = std::abs(k.diagonal().mean());
    const double base = scale > 0.0 ? scale : 1.0;
    for (double jitter = 1e-8 * base; jitter <= 1e-2 * base * (1.0 + 1e-12); jitter *= 2.0) {
        Eigen::MatrixXd kj = k;
        kj.diagonal().array() += jitter;
        llt.compute(kj);
        if (llt.info() == Eigen::Success) {
            out.lower = llt.matrixL();
            out.jitter = jitter;
            return out;
        }
    }
    std::ostringstream msg;
    msg << "Cholesky factorization failed with jitter up to 1e-2 * mean(diag K) = " << 1e-2 * base;
    fail(ErrorCode::cholesky_failure, msg.str());
}

namespace {

// In-place inverse of a lower-triangular block by 2 x 2 recursion,
// [A 0; B C]^-1 = [A^-1 0; -C^-1 B A^-1  C^-1]: about n^3/3 flops against
// n^3 for a triangular solve with an identity right-hand side.
void invert_lower_in_place(Eigen::Ref<Eigen::MatrixXd> l) {
    const Eigen::Index n = l.rows();
    if (n <= 64) {
        Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(n, n);
        l.triangularView<Eigen::Lower>().solveInPlace(inv);
        l = inv;
        return;
    }
    const Eigen::Index h = n / 2;
    invert_lower_in_place(l.topLeftCorner(h, h));
    invert_lower_in_place(l.bottomRightCorner(n - h, n - h));
    Eigen::MatrixXd b = l.bottomLeftCorner(n - h, h) * l.topLeftCorner(h, h).triangularView<Eigen::Lower>();
    l.bottomLeftCorner(n - h, h).noalias() = -(l.bottomRightCorner(n - h, n - h).triangularView<Eigen::Lower>() * b);
    l.topRightCorner(h, n - h).setZero();
}

// LML of y under N(0, k + noise I); `kernel_grad` maps the trace weight
// matrix W to sum_ij W_ij dK_ij/dtheta.
template <class KernelGrad>
LmlResult lml_core(Eigen::MatrixXd k, double log_noise_variance, const Eigen::VectorXd& y,
                   bool with_gradient, KernelGrad&& kernel_grad) {
    const double noise = std::exp(log_noise_variance);
    k.diagonal().array() += noise;
    const RobustCholesky chol = robust_cholesky(k);
    const auto lower = chol.lower.triangularView<Eigen::Lower>();
    const Eigen::VectorXd alpha = lower.transpose().solve(lower.solve(y));

    const double n = static_cast<double>(y.size());
    LmlResult r;
    r.value = -0.5 * y.dot(alpha) - chol.lower.diagonal().array().log().sum() - 0.5 * n * kLog2Pi;
    if (!with_gradient) return r;

    // K^{-1} = L^{-T} L^{-1} from the triangular inverse and a symmetric product.
    Eigen::MatrixXd linv = chol.lower;
    invert_lower_in_place(linv);
    Eigen::MatrixXd kinv = Eigen::MatrixXd::Zero(y.size(), y.size());
    kinv.selfadjointView<Eigen::Lower>().rankUpdate(linv.transpose());
    kinv.triangularView<Eigen::StrictlyUpper>() = kinv.transpose();
    // dLML/dtheta = 1/2 tr((alpha alpha^T - K^{-1}) dK/dtheta)
    const Eigen::MatrixXd w = 0.5 * (alpha * alpha.transpose() - kinv);
    const Eigen::VectorXd kg = kernel_grad(w);
    r.gradient.resize(kg.size() + 1);
    r.gradient.head(kg.size()) = kg;
    r.gradient(kg.size()) = w.trace() * noise;
    return r;
}

}  // namespace

LmlResult log_marginal_likelihood(const KernelSpec& spec, double log_noise_variance,
                                  const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  bool with_gradient) {
    if (x.rows() != y.size()) fail(ErrorCode::size_mismatch, "feature/target row count mismatch");
    const GramCache gram(spec, x);
    return lml_core(gram.matrix(), log_noise_variance, y, with_gradient,
                    [&](const Eigen::MatrixXd& w) { return gram.vjp(w); });
}

LmlResult log_marginal_likelihood_from_distances(const KernelSpec& spec, double log_noise_variance,
                                                 const Eigen::MatrixXd& d2, const Eigen::VectorXd& y,
                                                 bool with_gradient) {
    if (d2.rows() != y.size() || d2.cols() != y.size()) {
        fail(ErrorCode::size_mismatch, "distance matrix does not match the targets");
    }
    return lml_core(kernel_from_squared_distances(spec, d2), log_noise_variance, y, with_gradient,
                    [&](const Eigen::MatrixXd& w) { return kernel_vjp_from_squared_distances(spec, d2, w); });
}

double mean_pairwise_distance(const Eigen::MatrixXd& x, std::uint64_t seed) {
    const Eigen::Index n = x.rows();
    if (n < 2) return 1.0;
    double total = 0.0;
    double count = 0.0;
    if (n <= 2000) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                total += (x.row(i) - x.row(j)).norm();
                count += 1.0;
            }
        }
    } else {
        Rng rng = make_rng(seed, "gp.pairwise-distance");
        std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
        constexpr int kPairs = 1000000;
        for (int s = 0; s < kPairs; ++s) {
            const Eigen::Index i = pick(rng);
            Eigen::Index j = pick(rng);
            while (j == i) j = pick(rng);
            total += (x.row(i) - x.row(j)).norm();
            count += 1.0;
        }
    }
    const double mean = total / count;
    return mean > 0.0 && std::isfinite(mean) ? mean : 1.0;
}

double GPState::log_marginal_likelihood() const {
    const double n = static_cast<double>(y_train.size());
    return -0.5 * y_train.dot(alpha) - chol.diagonal().array().log().sum() - 0.5 * n * kLog2Pi;
}

GPState gp_condition(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, KernelSpec spec,
                     double log_noise_variance) {
    if (x.rows() != y_raw.size()) fail(ErrorCode::size_mismatch, "feature/target row count mismatch");
    if (x.rows() < 1) fail(ErrorCode::too_few_rows, "GP needs at least one training row");
    require_finite(x, y_raw);
    spec.validate(static_cast<std::size_t>(x.cols()));

    GPState s;
    s.target_stats = TargetStats::of(y_raw);
    s.x_train = x;
    s.y_train = s.target_stats.standardize(y_raw);
    s.spec = std::move(spec);
    s.log_noise_variance = log_noise_variance;
    const Eigen::MatrixXd k = add_noise(kernel_matrix(s.spec, s.x_train, s.x_train), s.noise_variance());
    RobustCholesky chol = robust_cholesky(k);
    s.chol = std::move(chol.lower);
    s.jitter = chol.jitter;
    const auto lower = std::as_const(s.chol).triangularView<Eigen::Lower>();
    s.alpha = lower.transpose().solve(lower.solve(s.y_train));
    const double nlml = -s.log_marginal_likelihood();
    s.trace = {nlml, nlml, 0};
    return s;
}

GPState gp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, KernelSpec spec,
               const OptimizerConfig& opt) {
    if (x.rows() != y_raw.size()) fail(ErrorCode::size_mismatch, "feature/target row count mismatch");
    if (x.rows() < 2) {
        fail(ErrorCode::too_few_rows, "GP fit needs n >= 2, got " + std::to_string(x.rows()));
    }
    require_finite(x, y_raw);
    const auto dim = static_cast<std::size_t>(x.cols());

    if (!opt.keep_initial_lengthscales) {
        spec.init_lengthscales(mean_pairwise_distance(x, opt.seed), dim);
    }
    spec.log_signal_variance = std::log(opt.initial_signal_variance);
    spec.validate(dim);

    const TargetStats stats = TargetStats::of(y_raw);
    const Eigen::VectorXd y = stats.standardize(y_raw);
    const double log_floor = std::log(kNoiseFloor);
    double log_noise = std::log(opt.fixed_noise_variance.value_or(opt.initial_noise_variance));
    if (!opt.fixed_noise_variance) log_noise = std::max(log_noise, log_floor);

    const auto nk = static_cast<Eigen::Index>(spec.num_params());
    Eigen::VectorXd theta(nk + 1);
    theta.head(nk) = spec.params();
    theta(nk) = log_noise;

    // Isotropic stationary kernels see the inputs only through distances,
    // which are computed once instead of at every Adam step.
    const bool by_distance = depends_only_on_distance(spec);
    const Eigen::MatrixXd d2 = by_distance ? pairwise_squared_distances(x) : Eigen::MatrixXd();
    auto evaluate = [&](const Eigen::VectorXd& t, bool grad) {
        KernelSpec s = spec;
        s.set_params(t.head(nk));
        if (by_distance) return log_marginal_likelihood_from_distances(s, t(nk), d2, y, grad);
        return log_marginal_likelihood(s, t(nk), x, y, grad);
    };

    FitTrace trace;
    Eigen::VectorXd best = theta;
    double best_nlml = 0.0;
    Adam adam(theta.size(), AdamConfig{opt.learning_rate});
    for (std::size_t it = 0; it <= opt.iterations; ++it) {
        const LmlResult r = evaluate(theta, it < opt.iterations);
        const double nlml = -r.value;
        if (it == 0) {
            trace.initial_neg_lml = nlml;
            best_nlml = nlml;
            best = theta;
        } else if (std::isfinite(nlml) && nlml < best_nlml) {
            best_nlml = nlml;
            best = theta;
        }
        if (it == opt.iterations) break;
        Eigen::VectorXd grad = -r.gradient;
        if (opt.fixed_noise_variance) grad(nk) = 0.0;
        if (!grad.allFinite()) break;
        adam.step(theta, grad);
        if (!opt.fixed_noise_variance) theta(nk) = std::max(theta(nk), log_floor);
        ++trace.iterations;
    }

    spec.set_params(best.head(nk));
    GPState state = gp_condition(x, y_raw, spec, best(nk));
    trace.final_neg_lml = -state.log_marginal_likelihood();
    state.trace = trace;
    return state;
}

PredictiveDistribution gp_predict(const GPState& state, const Eigen::MatrixXd& x_test) {
    if (x_test.cols() != state.x_train.cols()) {
        fail(ErrorCode::size_mismatch, "test features have " + std::to_string(x_test.cols()) +
                                           " columns, model expects " +
                                           std::to_string(state.x_train.cols()));
    }
    if (!x_test.allFinite()) fail(ErrorCode::non_finite_input, "test features contain non-finite values");
    const Eigen::MatrixXd kstar = kernel_matrix(state.spec, state.x_train, x_test);  // n x m
    Eigen::VectorXd mean = kstar.transpose() * state.alpha;
    const Eigen::MatrixXd v = state.chol.triangularView<Eigen::Lower>().solve(kstar);
    Eigen::VectorXd latent = kernel_diagonal(state.spec, x_test) - v.colwise().squaredNorm().transpose();
    latent = latent.cwiseMax(0.0);
    Eigen::VectorXd variance = latent.array() + state.noise_variance();
    return PredictiveDistribution::from_standardized(std::move(mean), std::move(variance),
                                                     state.target_stats);
}

}  // namespace bscat
