#include "bscat/svgp.hpp"

#include "bscat/adam.hpp"
#include "bscat/error.hpp"
#include "bscat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace bscat {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct Forward {
    Eigen::MatrixXd lk;   // chol(K_ZZ + jitter)
    Eigen::MatrixXd kzx;  // M x B
    Eigen::MatrixXd a;    // Lk^{-1} K_zx
    Eigen::MatrixXd t;    // L_u^T A
    Eigen::VectorXd mean;
    Eigen::VectorXd var;  // latent
};

Forward forward(const SVGPState& s, const Eigen::MatrixXd& x) {
    Forward f;
    f.lk = robust_cholesky(kernel_matrix(s.spec, s.z, s.z)).lower;
    f.kzx = kernel_matrix(s.spec, s.z, x);
    f.a = f.lk.triangularView<Eigen::Lower>().solve(f.kzx);
    f.t = s.l_u.triangularView<Eigen::Lower>().transpose() * f.a;
    f.mean = f.a.transpose() * s.m_u;
    f.var = kernel_diagonal(s.spec, x) - f.a.colwise().squaredNorm().transpose() +
            f.t.colwise().squaredNorm().transpose();
    return f;
}

void check_state(const SVGPState& s) {
    const Eigen::Index m = s.z.rows();
    if (s.m_u.size() != m || s.l_u.rows() != m || s.l_u.cols() != m) {
        fail(ErrorCode::size_mismatch, "SVGP variational parameters do not match the inducing set");
    }
    if ((s.l_u.diagonal().array() <= 0.0).any()) {
        fail(ErrorCode::invalid_argument, "SVGP covariance factor needs a positive diagonal");
    }
}

// Flat parameter vector: Z, m_u, lower(L_u) with log diagonal, kernel, log noise.
struct Packing {
    Eigen::Index m = 0;
    Eigen::Index d = 0;
    Eigen::Index nk = 0;

    [[nodiscard]] Eigen::Index size() const { return m * d + m + m * (m + 1) / 2 + nk + 1; }

    Eigen::VectorXd pack(const SVGPState& s) const {
        Eigen::VectorXd v(size());
        Eigen::Index o = 0;
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) v(o++) = s.z(i, j);
        }
        for (Eigen::Index i = 0; i < m; ++i) v(o++) = s.m_u(i);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < i; ++j) v(o++) = s.l_u(i, j);
            v(o++) = std::log(s.l_u(i, i));
        }
        v.segment(o, nk) = s.spec.params();
        o += nk;
        v(o) = s.log_noise_variance;
        return v;
    }

    void unpack(const Eigen::VectorXd& v, SVGPState& s) const {
        Eigen::Index o = 0;
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) s.z(i, j) = v(o++);
        }
        for (Eigen::Index i = 0; i < m; ++i) s.m_u(i) = v(o++);
        s.l_u.setZero();
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < i; ++j) s.l_u(i, j) = v(o++);
            s.l_u(i, i) = std::exp(v(o++));
        }
        s.spec.set_params(v.segment(o, nk));
        o += nk;
        s.log_noise_variance = v(o);
    }

    Eigen::VectorXd pack_gradient(const ElboGradient& g, const SVGPState& s) const {
        Eigen::VectorXd v(size());
        Eigen::Index o = 0;
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < d; ++j) v(o++) = g.z(i, j);
        }
        for (Eigen::Index i = 0; i < m; ++i) v(o++) = g.m_u(i);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < i; ++j) v(o++) = g.l_u(i, j);
            v(o++) = g.l_u(i, i) * s.l_u(i, i);  // chain rule through exp
        }
        v.segment(o, nk) = g.kernel;
        o += nk;
        v(o) = g.log_noise_variance;
        return v;
    }
};

// Floyd's algorithm: `count` distinct indices from [0, n) in O(count).
std::vector<Eigen::Index> sample_batch(Rng& rng, Eigen::Index n, Eigen::Index count) {
    std::unordered_set<Eigen::Index> chosen;
    std::vector<Eigen::Index> out;
    out.reserve(static_cast<std::size_t>(count));
    for (Eigen::Index j = n - count; j < n; ++j) {
        std::uniform_int_distribution<Eigen::Index> pick(0, j);
        const Eigen::Index t = pick(rng);
        if (chosen.insert(t).second) {
            out.push_back(t);
        } else {
            chosen.insert(j);
            out.push_back(j);
        }
    }
    return out;
}

}  // namespace

double svgp_kl(const SVGPState& s) {
    const double m = static_cast<double>(s.m_u.size());
    return 0.5 * (s.l_u.triangularView<Eigen::Lower>().toDenseMatrix().squaredNorm() +
                  s.m_u.squaredNorm() - m) -
           s.l_u.diagonal().array().log().sum();
}

ElboResult svgp_elbo(const SVGPState& s, const Eigen::MatrixXd& bx, const Eigen::VectorXd& by,
                     std::size_t n_total, bool with_gradient) {
    check_state(s);
    if (bx.rows() == 0) fail(ErrorCode::invalid_argument, "ELBO batch is empty");
    if (bx.rows() != by.size()) fail(ErrorCode::size_mismatch, "batch feature/target mismatch");
    if (bx.cols() != s.z.cols()) fail(ErrorCode::size_mismatch, "batch dimension differs from Z");

    const Forward f = forward(s, bx);
    const double noise = std::exp(s.log_noise_variance);
    const double scale = static_cast<double>(n_total) / static_cast<double>(bx.rows());
    const Eigen::VectorXd resid = by - f.mean;
    const Eigen::ArrayXd sq = resid.array().square() + f.var.array();

    ElboResult r;
    r.expected_log_lik =
        scale * (-0.5 * static_cast<double>(bx.rows()) * (kLog2Pi + s.log_noise_variance) -
                 0.5 * sq.sum() / noise);
    r.kl = svgp_kl(s);
    r.value = r.expected_log_lik - r.kl;
    if (!with_gradient) return r;

    ElboGradient& g = r.gradient;
    const Eigen::VectorXd g_mean = scale * resid / noise;
    const double g_var = -0.5 * scale / noise;
    g.log_noise_variance = scale * (-0.5 * static_cast<double>(bx.rows()) + 0.5 * sq.sum() / noise);

    const auto lu = s.l_u.triangularView<Eigen::Lower>();
    g.m_u = f.a * g_mean - s.m_u;
    Eigen::MatrixXd dl = 2.0 * g_var * (f.a * f.t.transpose());
    dl -= lu.toDenseMatrix();
    dl.diagonal().array() += s.l_u.diagonal().array().inverse();
    g.l_u = dl.triangularView<Eigen::Lower>();

    // Upstream gradient on A, then through A = Lk^{-1} K_zx and the Cholesky.
    const Eigen::MatrixXd a_bar = s.m_u * g_mean.transpose() + 2.0 * g_var * (lu * f.t - f.a);
    const auto lk = f.lk.triangularView<Eigen::Lower>();
    const Eigen::MatrixXd kzx_bar = lk.transpose().solve(a_bar);
    const Eigen::MatrixXd lk_bar =
        (-(kzx_bar * f.a.transpose())).triangularView<Eigen::Lower>().toDenseMatrix();
    Eigen::MatrixXd p = f.lk.transpose() * lk_bar;
    p = p.triangularView<Eigen::Lower>().toDenseMatrix();
    p.diagonal() *= 0.5;
    Eigen::MatrixXd kzz_bar = lk.transpose().solve(lk.transpose().solve(p.transpose()).transpose());
    kzz_bar = 0.5 * (kzz_bar + kzz_bar.transpose()).eval();

    const KernelVjp v_zz = kernel_vjp(s.spec, s.z, s.z, kzz_bar, true);
    const KernelVjp v_zx = kernel_vjp(s.spec, s.z, bx, kzx_bar, true);
    const KernelVjp v_xx =
        kernel_diagonal_vjp(s.spec, bx, Eigen::VectorXd::Constant(bx.rows(), g_var), false);
    g.kernel = v_zz.params + v_zx.params + v_xx.params;
    g.z = v_zz.da + v_zz.db + v_zx.da;
    return r;
}

void svgp_set_optimal_variational(SVGPState& s, const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& y_std) {
    const Forward f = forward(s, x);
    const double noise = std::exp(s.log_noise_variance);
    const Eigen::Index m = s.z.rows();
    Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(m, m) + (f.a * f.a.transpose()) / noise;
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) fail(ErrorCode::cholesky_failure, "optimal q(u) precision not PD");
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(m, m));
    s.m_u = cov * (f.a * y_std) / noise;
    const RobustCholesky c = robust_cholesky(0.5 * (cov + cov.transpose()));
    s.l_u = c.lower;
}

Eigen::MatrixXd kmeanspp_seed(const Eigen::MatrixXd& x, std::size_t m, std::uint64_t seed) {
    const Eigen::Index n = x.rows();
    if (m == 0 || static_cast<Eigen::Index>(m) > n) {
        fail(ErrorCode::invalid_argument, "number of inducing points must lie in [1, n]");
    }
    Rng rng = make_rng(seed, "svgp.kmeans++");
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    std::vector<Eigen::Index> centres;
    centres.reserve(m);
    std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
    centres.push_back(first(rng));
    used[static_cast<std::size_t>(centres.back())] = true;
    Eigen::VectorXd d2 = (x.rowwise() - x.row(centres.back())).rowwise().squaredNorm();
    while (centres.size() < m) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if (used[static_cast<std::size_t>(i)]) d2(i) = 0.0;
        }
        const double total = d2.sum();
        Eigen::Index pick = -1;
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            const double target = u(rng);
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += d2(i);
                if (d2(i) > 0.0 && acc >= target) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0) {
                for (Eigen::Index i = n - 1; i >= 0; --i) {
                    if (d2(i) > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            // Remaining rows duplicate chosen centres: take the first unused.
            for (Eigen::Index i = 0; i < n; ++i) {
                if (!used[static_cast<std::size_t>(i)]) {
                    pick = i;
                    break;
                }
            }
        }
        centres.push_back(pick);
        used[static_cast<std::size_t>(pick)] = true;
        d2 = d2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
    }
    Eigen::MatrixXd z(static_cast<Eigen::Index>(m), x.cols());
    for (std::size_t i = 0; i < m; ++i) z.row(static_cast<Eigen::Index>(i)) = x.row(centres[i]);
    return z;
}

SVGPState svgp_init(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, KernelSpec spec,
                    const SvgpConfig& cfg) {
    if (x.rows() != y_raw.size()) fail(ErrorCode::size_mismatch, "feature/target row count mismatch");
    if (x.rows() < 2) fail(ErrorCode::too_few_rows, "SVGP needs at least 2 training rows");
    if (!x.allFinite() || !y_raw.allFinite()) {
        fail(ErrorCode::non_finite_input, "SVGP training data contain non-finite values");
    }
    const auto n = static_cast<std::size_t>(x.rows());
    const std::size_t m = std::min(cfg.num_inducing, n);
    if (m == 0) fail(ErrorCode::invalid_argument, "need at least one inducing point");

    SVGPState s;
    s.target_stats = TargetStats::of(y_raw);
    s.z = kmeanspp_seed(x, m, cfg.seed);
    spec.init_lengthscales(mean_pairwise_distance(x, cfg.seed), static_cast<std::size_t>(x.cols()));
    spec.log_signal_variance = std::log(cfg.initial_signal_variance);
    spec.validate(static_cast<std::size_t>(x.cols()));
    s.spec = std::move(spec);
    s.log_noise_variance = std::log(std::max(cfg.initial_noise_variance, kNoiseFloor));
    const auto mi = static_cast<Eigen::Index>(m);
    s.m_u = Eigen::VectorXd::Zero(mi);
    s.l_u = Eigen::MatrixXd::Identity(mi, mi);
    return s;
}

SVGPState svgp_train(SVGPState s, const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw,
                     const SvgpConfig& cfg) {
    check_state(s);
    if (x.rows() != y_raw.size()) fail(ErrorCode::size_mismatch, "feature/target row count mismatch");
    if (x.cols() != s.z.cols()) fail(ErrorCode::size_mismatch, "feature dimension differs from Z");
    if (cfg.steps == 0) return s;

    const Eigen::VectorXd y = s.target_stats.standardize(y_raw);
    const Eigen::Index n = x.rows();
    const Eigen::Index batch = std::min<Eigen::Index>(static_cast<Eigen::Index>(cfg.batch_size), n);
    if (batch < 1) fail(ErrorCode::invalid_argument, "batch size must be >= 1");

    Packing pk{s.z.rows(), s.z.cols(), static_cast<Eigen::Index>(s.spec.num_params())};
    Eigen::VectorXd theta = pk.pack(s);
    Adam adam(theta.size(), AdamConfig{cfg.learning_rate});
    Rng rng = make_rng(cfg.seed, "svgp.batches");
    const double log_floor = std::log(kNoiseFloor);
    const Eigen::Index z_len = pk.m * pk.d;

    Eigen::MatrixXd bx(batch, x.cols());
    Eigen::VectorXd by(batch);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (batch == n) {
            bx = x;
            by = y;
        } else {
            const auto idx = sample_batch(rng, n, batch);
            for (Eigen::Index i = 0; i < batch; ++i) {
                bx.row(i) = x.row(idx[static_cast<std::size_t>(i)]);
                by(i) = y(idx[static_cast<std::size_t>(i)]);
            }
        }
        const ElboResult r = svgp_elbo(s, bx, by, static_cast<std::size_t>(n), true);
        Eigen::VectorXd grad = -pk.pack_gradient(r.gradient, s);
        if (!cfg.train_inducing) grad.head(z_len).setZero();
        if (!cfg.train_hyperparameters) grad.tail(pk.nk + 1).setZero();
        if (!grad.allFinite()) fail(ErrorCode::non_finite_input, "non-finite SVGP gradient");
        adam.step(theta, grad);
        theta(pk.size() - 1) = std::max(theta(pk.size() - 1), log_floor);
        pk.unpack(theta, s);
    }
    return s;
}

SVGPState svgp_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y_raw, KernelSpec spec,
                   const SvgpConfig& cfg) {
    return svgp_train(svgp_init(x, y_raw, std::move(spec), cfg), x, y_raw, cfg);
}

PredictiveDistribution svgp_predict(const SVGPState& s, const Eigen::MatrixXd& x_test) {
    check_state(s);
    if (x_test.cols() != s.z.cols()) {
        fail(ErrorCode::size_mismatch, "test features have " + std::to_string(x_test.cols()) +
                                           " columns, model expects " + std::to_string(s.z.cols()));
    }
    if (!x_test.allFinite()) fail(ErrorCode::non_finite_input, "test features contain non-finite values");
    const Forward f = forward(s, x_test);
    Eigen::VectorXd var = f.var.cwiseMax(0.0).array() + std::exp(s.log_noise_variance);
    return PredictiveDistribution::from_standardized(f.mean, std::move(var), s.target_stats);
}

}  // namespace bscat
