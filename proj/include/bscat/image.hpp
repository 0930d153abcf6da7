#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace bscat {

/// C-channel N x N real image, stored channel-major then row-major.
class Image {
public:
    Image() = default;
    Image(std::size_t channels, std::size_t size)
        : channels_(channels), size_(size), data_(channels * size * size, 0.0) {}
    Image(std::size_t channels, std::size_t size, std::vector<double> data);

    [[nodiscard]] std::size_t channels() const noexcept { return channels_; }
    [[nodiscard]] std::size_t size() const noexcept { return size_; }
    [[nodiscard]] std::size_t pixels() const noexcept { return size_ * size_; }

    double& operator()(std::size_t c, std::size_t row, std::size_t col) {
        return data_[(c * size_ + row) * size_ + col];
    }
    double operator()(std::size_t c, std::size_t row, std::size_t col) const {
        return data_[(c * size_ + row) * size_ + col];
    }

    [[nodiscard]] std::span<double> channel(std::size_t c) {
        return {data_.data() + c * pixels(), pixels()};
    }
    [[nodiscard]] std::span<const double> channel(std::size_t c) const {
        return {data_.data() + c * pixels(), pixels()};
    }

    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }
    [[nodiscard]] std::vector<double>& data() noexcept { return data_; }

    [[nodiscard]] bool all_finite() const noexcept;

    bool operator==(const Image&) const = default;

private:
    std::size_t channels_ = 0;
    std::size_t size_ = 0;
    std::vector<double> data_;
};

}  // namespace bscat
