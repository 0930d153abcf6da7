#include "bscat/features.hpp"

#include "bscat/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bscat {

FeatureStandardizer::FeatureStandardizer(Eigen::RowVectorXd mean, Eigen::RowVectorXd scale)
    : mean_(std::move(mean)), scale_(std::move(scale)) {
    if (mean_.size() != scale_.size()) {
        fail(ErrorCode::size_mismatch, "standardizer mean/scale length mismatch");
    }
}

FeatureStandardizer FeatureStandardizer::fit(const Eigen::MatrixXd& train) {
    if (train.rows() < 2) {
        fail(ErrorCode::too_few_rows, "standardizer needs at least 2 training rows, got " +
                                          std::to_string(train.rows()));
    }
    const double n = static_cast<double>(train.rows());
    Eigen::RowVectorXd mean = train.colwise().sum() / n;
    Eigen::RowVectorXd scale =
        ((train.rowwise() - mean).array().square().colwise().sum() / n).sqrt().matrix();
    scale = scale.cwiseMax(kScaleFloor);
    return {std::move(mean), std::move(scale)};
}

Eigen::MatrixXd FeatureStandardizer::transform(const Eigen::MatrixXd& x) const {
    if (static_cast<std::size_t>(x.cols()) != dimension()) {
        fail(ErrorCode::size_mismatch, "feature dimension " + std::to_string(x.cols()) +
                                           " does not match standardizer dimension " +
                                           std::to_string(dimension()));
    }
    return ((x.rowwise() - mean_).array().rowwise() / scale_.array()).matrix();
}

Eigen::MatrixXd FeatureStandardizer::inverse_transform(const Eigen::MatrixXd& z) const {
    if (static_cast<std::size_t>(z.cols()) != dimension()) {
        fail(ErrorCode::size_mismatch, "feature dimension mismatch in inverse transform");
    }
    return ((z.array().rowwise() * scale_.array()).matrix().rowwise() + mean_);
}

PCAProjector PCAProjector::fit(const Eigen::MatrixXd& train, double retain) {
    if (train.rows() < 2) {
        fail(ErrorCode::too_few_rows, "PCA needs at least 2 training rows");
    }
    if (!(retain > 0.0) || retain > 1.0) {
        fail(ErrorCode::invalid_argument, "retained variance fraction must lie in (0, 1]");
    }
    PCAProjector p;
    p.retain_ = retain;
    p.center_ = train.colwise().mean();
    const Eigen::MatrixXd centered = train.rowwise() - p.center_;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd& s = svd.singularValues();

    const double tol = s.size() > 0 ? s(0) * std::numeric_limits<double>::epsilon() *
                                          static_cast<double>(std::max(train.rows(), train.cols()))
                                    : 0.0;
    Eigen::Index rank = 0;
    while (rank < s.size() && s(rank) > tol) ++rank;
    const double total = s.head(rank).squaredNorm();

    Eigen::Index k = rank;
    if (retain < 1.0 && total > 0.0) {
        double cumulative = 0.0;
        for (Eigen::Index i = 0; i < rank; ++i) {
            cumulative += s(i) * s(i) / total;
            if (cumulative >= retain) {
                k = i + 1;
                break;
            }
        }
    }
    p.basis_ = svd.matrixV().leftCols(k).transpose();
    p.explained_.reserve(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < k; ++i) {
        p.explained_.push_back(total > 0.0 ? s(i) * s(i) / total : 0.0);
    }
    return p;
}

Eigen::MatrixXd PCAProjector::project(const Eigen::MatrixXd& x) const {
    if (x.cols() != center_.size()) fail(ErrorCode::size_mismatch, "PCA input dimension mismatch");
    return (x.rowwise() - center_) * basis_.transpose();
}

Eigen::MatrixXd PCAProjector::reconstruct(const Eigen::MatrixXd& scores) const {
    if (scores.cols() != basis_.rows()) {
        fail(ErrorCode::size_mismatch, "PCA score dimension mismatch");
    }
    return (scores * basis_).rowwise() + center_;
}

}  // namespace bscat
