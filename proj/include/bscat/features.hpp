#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace bscat {

inline constexpr double kScaleFloor = 1e-12;

/// Per-dimension z-scoring fitted on training rows.
class FeatureStandardizer {
public:
    FeatureStandardizer() = default;
    FeatureStandardizer(Eigen::RowVectorXd mean, Eigen::RowVectorXd scale);

    static FeatureStandardizer fit(const Eigen::MatrixXd& train);

    [[nodiscard]] Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
    [[nodiscard]] Eigen::MatrixXd inverse_transform(const Eigen::MatrixXd& z) const;

    [[nodiscard]] const Eigen::RowVectorXd& mean() const noexcept { return mean_; }
    [[nodiscard]] const Eigen::RowVectorXd& scale() const noexcept { return scale_; }
    [[nodiscard]] std::size_t dimension() const noexcept {
        return static_cast<std::size_t>(mean_.size());
    }

private:
    Eigen::RowVectorXd mean_;
    Eigen::RowVectorXd scale_;
};

/// Principal-component projection keeping the smallest number of components
/// whose cumulative explained variance reaches the retained fraction.
class PCAProjector {
public:
    static PCAProjector fit(const Eigen::MatrixXd& train, double retain);

    [[nodiscard]] Eigen::MatrixXd project(const Eigen::MatrixXd& x) const;
    [[nodiscard]] Eigen::MatrixXd reconstruct(const Eigen::MatrixXd& scores) const;

    [[nodiscard]] const Eigen::RowVectorXd& center() const noexcept { return center_; }
    /// k x D, orthonormal rows.
    [[nodiscard]] const Eigen::MatrixXd& basis() const noexcept { return basis_; }
    [[nodiscard]] const std::vector<double>& explained() const noexcept { return explained_; }
    [[nodiscard]] std::size_t components() const noexcept {
        return static_cast<std::size_t>(basis_.rows());
    }
    [[nodiscard]] double retain() const noexcept { return retain_; }

private:
    Eigen::RowVectorXd center_;
    Eigen::MatrixXd basis_;
    std::vector<double> explained_;
    double retain_ = 1.0;
};

}  // namespace bscat
