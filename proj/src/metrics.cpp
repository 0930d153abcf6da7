#include "bscat/metrics.hpp"

#include "bscat/error.hpp"

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include <cmath>
#include <iomanip>
#include <sstream>

namespace bscat {
namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;

}  // namespace

std::array<double, 19> qce_levels() {
    std::array<double, 19> q{};
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = 0.05 * static_cast<double>(i + 1);
    return q;
}

MetricsReport compute_metrics(const PredictiveDistribution& pred, const Eigen::VectorXd& y_true) {
    const Eigen::Index n = y_true.size();
    if (pred.size() != n || pred.standardized_mean.size() != n ||
        pred.standardized_variance.size() != n || pred.variance.size() != n) {
        fail(ErrorCode::size_mismatch, "prediction length " + std::to_string(pred.size()) +
                                           " differs from truth length " + std::to_string(n));
    }
    if (n == 0) fail(ErrorCode::invalid_argument, "cannot compute metrics on an empty test set");
    if (!pred.standardized_mean.allFinite() || !y_true.allFinite() ||
        pred.standardized_variance.array().isNaN().any()) {
        fail(ErrorCode::non_finite_input, "predictive means, variances and targets must be finite");
    }
    if ((pred.standardized_variance.array() <= 0.0).any() || !pred.standardized_variance.allFinite()) {
        fail(ErrorCode::invalid_argument, "predictive variances must be positive");
    }

    const Eigen::VectorXd y_std = pred.target_stats.standardize(y_true);
    const Eigen::ArrayXd mu = pred.standardized_mean.array();
    const Eigen::ArrayXd var = pred.standardized_variance.array();
    const Eigen::ArrayXd sd = var.sqrt();
    const Eigen::ArrayXd resid = y_std.array() - mu;

    MetricsReport r;
    r.n_test = static_cast<std::size_t>(n);
    r.rmse = std::sqrt((y_true - pred.mean).squaredNorm() / static_cast<double>(n));
    r.rmse_standardized = std::sqrt(resid.square().mean());
    r.nll = (kHalfLog2Pi + 0.5 * var.log() + 0.5 * resid.square() / var).mean();

    const boost::math::normal_distribution<double> unit;
    double qce = 0.0;
    for (double q : qce_levels()) {
        const double z = boost::math::quantile(unit, q);
        const double covered = ((y_std.array() <= mu + sd * z).cast<double>()).mean();
        qce += std::abs(covered - q);
    }
    r.qce = qce / static_cast<double>(qce_levels().size());

    // Shifted moments: equal widths give their exact value and zero spread
    // instead of accumulating summation error over the test set.
    const Eigen::ArrayXd width = 2.0 * kInterval95 * sd;
    const Eigen::ArrayXd offset = width - width(0);
    const double offset_mean = offset.mean();
    r.pi_mu = width(0) + offset_mean;
    r.pi_sigma = std::sqrt((offset - offset_mean).square().mean());
    return r;
}

PredictiveDistribution trivial_predictor(const Eigen::VectorXd& y_train_raw, Eigen::Index n_test) {
    if (y_train_raw.size() == 0) fail(ErrorCode::invalid_argument, "trivial baseline needs training targets");
    const TargetStats stats = TargetStats::of(y_train_raw);
    return PredictiveDistribution::from_standardized(Eigen::VectorXd::Zero(n_test),
                                                     Eigen::VectorXd::Ones(n_test), stats);
}

MetricsReport trivial_baseline(const Eigen::VectorXd& y_train_raw, const Eigen::VectorXd& y_test_raw) {
    return compute_metrics(trivial_predictor(y_train_raw, y_test_raw.size()), y_test_raw);
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["rmse"] = rmse;
    j["rmse_standardized"] = rmse_standardized;
    j["nll"] = nll;
    j["qce"] = qce;
    j["pi_mu"] = pi_mu;
    j["pi_sigma"] = pi_sigma;
    j["n_test"] = n_test;
    return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        MetricsReport r;
        r.rmse = j.at("rmse").get<double>();
        r.rmse_standardized = j.at("rmse_standardized").get<double>();
        r.nll = j.at("nll").get<double>();
        r.qce = j.at("qce").get<double>();
        r.pi_mu = j.at("pi_mu").get<double>();
        r.pi_sigma = j.at("pi_sigma").get<double>();
        r.n_test = j.at("n_test").get<std::size_t>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::parse_error, std::string("metrics JSON: ") + e.what());
    }
}

std::string MetricsReport::to_table() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::left << std::setw(20) << "metric" << "value\n"
        << std::setw(20) << "rmse" << rmse << "\n"
        << std::setw(20) << "rmse_standardized" << rmse_standardized << "\n"
        << std::setw(20) << "nll" << nll << "\n"
        << std::setw(20) << "qce" << qce << "\n"
        << std::setw(20) << "pi_mu" << pi_mu << "\n"
        << std::setw(20) << "pi_sigma" << pi_sigma << "\n"
        << std::setw(20) << "n_test" << n_test << "\n";
    return out.str();
}

}  // namespace bscat
