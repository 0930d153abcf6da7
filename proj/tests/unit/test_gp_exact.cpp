#include "bscat/error.hpp"
#include "bscat/gp_exact.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace bscat;
using bscat::testing::brute_lml;
using bscat::testing::brute_predict;
using bscat::testing::finite_difference;
using bscat::testing::relative_error;

namespace {

const char* kAllKernels[] = {"rbf", "rbf,ard", "matern52", "matern52,ard", "linear", "linear,ard"};

struct Problem {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
};

Problem random_problem(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
    std::normal_distribution<double> g;
    Problem p{Eigen::MatrixXd(n, d), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < p.x.size(); ++i) p.x.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < n; ++i) p.y(i) = std::sin(p.x.row(i).sum()) + 0.1 * g(rng);
    return p;
}

KernelSpec random_spec(const std::string& name, Eigen::Index dim, std::mt19937_64& rng) {
    KernelSpec s = KernelSpec::parse(name);
    std::uniform_real_distribution<double> u(-0.3, 1.0);
    s.init_lengthscales(1.0, static_cast<std::size_t>(dim));
    for (Eigen::Index i = 0; i < s.log_lengthscales.size(); ++i) s.log_lengthscales(i) = u(rng);
    s.log_signal_variance = u(rng) - 0.3;
    return s;
}

}  // namespace

TEST(GpExact, SingleObservationEvidence) {
    KernelSpec spec = KernelSpec::parse("rbf");
    spec.log_signal_variance = std::log(0.75);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 2);
    const Eigen::VectorXd y = Eigen::VectorXd::Zero(1);
    const auto r = log_marginal_likelihood(spec, std::log(0.25), x, y);
    EXPECT_NEAR(r.value, -0.91894, 1e-5);
    EXPECT_NEAR(r.value, -0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(GpExact, StandardNormalEvidence) {
    KernelSpec spec = KernelSpec::parse("matern52");
    spec.log_signal_variance = -60.0;
    Eigen::MatrixXd x(3, 1);
    x << 0.0, 0.5, 1.0;
    const auto r = log_marginal_likelihood(spec, 0.0, x, Eigen::VectorXd::Zero(3));
    EXPECT_NEAR(r.value, -2.7568, 1e-4);
    EXPECT_NEAR(r.value, -1.5 * std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(GpExact, ScalingTargetsShiftsEvidenceByLogJacobian) {
    std::mt19937_64 rng(7);
    const Problem p = random_problem(rng, 15, 3);
    for (const char* name : kAllKernels) {
        const KernelSpec spec = random_spec(name, 3, rng);
        const double log_noise = std::log(0.05);
        const double base = log_marginal_likelihood(spec, log_noise, p.x, p.y, false).value;
        for (double c : {-3.0, 0.2, 10.0}) {
            KernelSpec scaled = spec;
            scaled.log_signal_variance += std::log(c * c);
            const double v =
                log_marginal_likelihood(scaled, log_noise + std::log(c * c), p.x, c * p.y, false).value;
            EXPECT_NEAR(v - base, -15.0 * std::log(std::abs(c)), 1e-9) << name << " c=" << c;
        }
    }
}

TEST(GpExact, EvidenceMatchesDenseInverse) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto n = static_cast<Eigen::Index>(5 + trial * 2);
        const Problem p = random_problem(rng, n, 4);
        const KernelSpec spec = random_spec(kAllKernels[trial % 6], 4, rng);
        const double noise = 0.05 + 0.01 * trial;
        const double ours = log_marginal_likelihood(spec, std::log(noise), p.x, p.y, false).value;
        EXPECT_NEAR(ours, brute_lml(spec, noise, p.x, p.y), 1e-8) << "trial " << trial;
    }
}

TEST(GpExact, PredictiveMatchesDenseInverse) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const Problem train = random_problem(rng, 20, 3);
        const Problem test = random_problem(rng, 5, 3);
        const KernelSpec spec = random_spec(kAllKernels[trial % 6], 3, rng);
        const double noise = 0.1;
        const GPState state = gp_condition(train.x, train.y, spec, std::log(noise));
        ASSERT_EQ(state.jitter, 0.0);
        const auto pred = gp_predict(state, test.x);
        const auto brute = brute_predict(spec, noise, train.x, state.y_train, test.x);
        EXPECT_LE((pred.standardized_mean - brute.mean).cwiseAbs().maxCoeff(), 1e-8) << trial;
        EXPECT_LE((pred.standardized_variance - brute.variance).cwiseAbs().maxCoeff(), 1e-8) << trial;
        // Raw-unit outputs are the affine image of the standardized ones.
        const double sd = state.target_stats.std;
        EXPECT_LE((pred.mean - (brute.mean * sd).array().matrix() -
                   Eigen::VectorXd::Constant(5, state.target_stats.mean))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-8 * (1.0 + sd));
        EXPECT_LE((pred.variance - brute.variance * sd * sd).cwiseAbs().maxCoeff(), 1e-8 * (1.0 + sd * sd));
    }
}

TEST(GpExact, StateInvariants) {
    std::mt19937_64 rng(13);
    const Problem p = random_problem(rng, 30, 4);
    const GPState s = gp_condition(p.x, p.y, random_spec("matern52,ard", 4, rng), std::log(0.02));
    Eigen::MatrixXd k = kernel_matrix(s.spec, s.x_train, s.x_train);
    k.diagonal().array() += s.noise_variance();
    EXPECT_LE((s.chol * s.chol.transpose() - k).norm(), 1e-8 * k.norm());
    EXPECT_LE((k * s.alpha - s.y_train).norm(), 1e-8 * s.y_train.norm());
    EXPECT_NEAR(s.y_train.mean(), 0.0, 1e-12);
    EXPECT_NEAR(std::sqrt(s.y_train.squaredNorm() / 30.0), 1.0, 1e-12);
}

TEST(GpExact, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(14);
    const Problem p = random_problem(rng, 40, 5);
    for (const char* name : kAllKernels) {
        const KernelSpec spec = random_spec(name, 5, rng);
        const double log_noise = std::log(0.07);
        const auto r = log_marginal_likelihood(spec, log_noise, p.x, p.y);
        const auto nk = static_cast<Eigen::Index>(spec.num_params());
        Eigen::VectorXd theta(nk + 1);
        theta.head(nk) = spec.params();
        theta(nk) = log_noise;
        auto f = [&](const Eigen::VectorXd& t) {
            KernelSpec s = spec;
            s.set_params(t.head(nk));
            return log_marginal_likelihood(s, t(nk), p.x, p.y, false).value;
        };
        const Eigen::VectorXd fd = finite_difference(f, theta);
        ASSERT_EQ(r.gradient.size(), fd.size());
        for (Eigen::Index i = 0; i < fd.size(); ++i) {
            if (std::abs(fd(i)) < 1e-6) {
                EXPECT_NEAR(r.gradient(i), fd(i), 1e-6) << name << " param " << i;
            } else {
                EXPECT_LE(relative_error(r.gradient(i), fd(i)), 1e-4) << name << " param " << i;
            }
        }
    }
}

TEST(GpExact, JitterEscalatesOnRankDeficientKernel) {
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(6, 6);
    const RobustCholesky c = robust_cholesky(ones);
    EXPECT_GE(c.jitter, 1e-8);
    EXPECT_LE(c.jitter, 1e-2);
    Eigen::MatrixXd k = ones;
    k.diagonal().array() += c.jitter;
    EXPECT_LE((c.lower * c.lower.transpose() - k).norm(), 1e-10);

    // Duplicated inputs with vanishing noise go through the same path.
    Eigen::MatrixXd x(4, 2);
    x << 0, 0, 0, 0, 1, 1, 1, 1;
    const GPState s = gp_condition(x, Eigen::Vector4d(1, 1, 2, 2), KernelSpec::parse("rbf"), -80.0);
    EXPECT_GT(s.jitter, 0.0);

    const Eigen::MatrixXd negative = -Eigen::MatrixXd::Identity(3, 3);
    try {
        robust_cholesky(negative);
        FAIL() << "expected cholesky-failure";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::cholesky_failure);
    }
}

TEST(GpExact, FarTestPointRevertsToPrior) {
    std::mt19937_64 rng(15);
    const Problem p = random_problem(rng, 12, 2);
    KernelSpec spec = KernelSpec::parse("rbf");
    spec.log_signal_variance = std::log(1.3);
    const GPState s = gp_condition(p.x, p.y, spec, std::log(0.04));
    const auto pred = gp_predict(s, Eigen::MatrixXd::Constant(1, 2, 1e3));
    EXPECT_NEAR(pred.standardized_mean(0), 0.0, 1e-6);
    EXPECT_NEAR(pred.standardized_variance(0), 1.3 + 0.04, 1e-6);
    const auto at_train = gp_predict(s, p.x.topRows(1));
    EXPECT_LE(at_train.standardized_variance(0), pred.standardized_variance(0));
}

TEST(GpExact, NearNoiselessFitInterpolates) {
    std::mt19937_64 rng(16);
    const Problem p = random_problem(rng, 15, 2);
    OptimizerConfig opt;
    opt.iterations = 50;
    opt.fixed_noise_variance = 1e-8;
    const GPState s = gp_fit(p.x, p.y, KernelSpec::parse("rbf"), opt);
    const auto pred = gp_predict(s, p.x);
    EXPECT_LE((pred.standardized_mean - s.y_train).cwiseAbs().maxCoeff(), 1e-4);
    EXPECT_NEAR(s.noise_variance(), 1e-8, 1e-20);
}

TEST(GpExact, FitImprovesEvidenceAndIsDeterministic) {
    std::mt19937_64 rng(17);
    const Problem p = random_problem(rng, 40, 3);
    for (const char* name : {"rbf", "matern52,ard", "linear"}) {
        const GPState a = gp_fit(p.x, p.y, KernelSpec::parse(name));
        const GPState b = gp_fit(p.x, p.y, KernelSpec::parse(name));
        EXPECT_LE(a.trace.final_neg_lml, a.trace.initial_neg_lml) << name;
        EXPECT_EQ(a.trace.iterations, 500u);
        EXPECT_GE(a.noise_variance(), kNoiseFloor * (1.0 - 1e-12));
        const Eigen::VectorXd pa = a.spec.params();
        const Eigen::VectorXd pb = b.spec.params();
        ASSERT_EQ(pa.size(), pb.size());
        for (Eigen::Index i = 0; i < pa.size(); ++i) EXPECT_EQ(pa(i), pb(i)) << name;
        EXPECT_EQ(a.log_noise_variance, b.log_noise_variance);
    }
}

TEST(GpExact, LengthscalesStartAtMeanPairwiseDistance) {
    Eigen::MatrixXd x(3, 1);
    x << 0.0, 1.0, 3.0;
    EXPECT_DOUBLE_EQ(mean_pairwise_distance(x), 2.0);
    EXPECT_DOUBLE_EQ(mean_pairwise_distance(Eigen::MatrixXd::Zero(4, 2)), 1.0);
    OptimizerConfig opt;
    opt.iterations = 0;
    const GPState s = gp_fit(x, Eigen::Vector3d(1, 2, 0), KernelSpec::parse("rbf,ard"), opt);
    EXPECT_DOUBLE_EQ(std::exp(s.spec.log_lengthscales(0)), 2.0);
    EXPECT_DOUBLE_EQ(s.noise_variance(), 0.01);
}

TEST(GpExact, InputErrors) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 2);
    const Eigen::VectorXd y = Eigen::VectorXd::Random(5);
    auto code_of = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.code();
        }
        return ErrorCode::ok;
    };
    EXPECT_EQ(code_of([&] { gp_fit(x.topRows(1), y.head(1), KernelSpec::parse("rbf")); }),
              ErrorCode::too_few_rows);
    Eigen::MatrixXd bad = x;
    bad(2, 1) = std::nan("");
    EXPECT_EQ(code_of([&] { gp_fit(bad, y, KernelSpec::parse("rbf")); }), ErrorCode::non_finite_input);
    EXPECT_EQ(code_of([&] { gp_fit(x, y.head(4), KernelSpec::parse("rbf")); }), ErrorCode::size_mismatch);
    OptimizerConfig opt;
    opt.iterations = 3;
    const GPState s = gp_fit(x, y, KernelSpec::parse("rbf"), opt);
    EXPECT_EQ(code_of([&] { gp_predict(s, Eigen::MatrixXd::Zero(2, 3)); }), ErrorCode::size_mismatch);
}

TEST(GpExact, DistancePathMatchesGenericEvidence) {
    std::mt19937_64 rng(18);
    const Problem p = random_problem(rng, 30, 6);
    const Eigen::MatrixXd d2 = pairwise_squared_distances(p.x);
    for (const char* name : {"rbf", "matern52"}) {
        const KernelSpec spec = random_spec(name, 6, rng);
        const auto a = log_marginal_likelihood(spec, std::log(0.03), p.x, p.y);
        const auto b = log_marginal_likelihood_from_distances(spec, std::log(0.03), d2, p.y);
        EXPECT_NEAR(a.value, b.value, 1e-10 * std::abs(a.value)) << name;
        EXPECT_LE((a.gradient - b.gradient).norm(), 1e-9 * (1.0 + a.gradient.norm())) << name;
    }
    EXPECT_FALSE(depends_only_on_distance(KernelSpec::parse("rbf,ard")));
    EXPECT_FALSE(depends_only_on_distance(KernelSpec::parse("linear")));
    EXPECT_THROW(kernel_from_squared_distances(KernelSpec::parse("linear"), d2), Error);
}

