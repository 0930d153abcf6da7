#pragma once

#include "bscat/filterbank.hpp"
#include "bscat/image.hpp"

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bscat {

enum class Variant { windowed, global, global_rotation_invariant };

std::string to_string(Variant v);
/// Accepts "windowed", "global", "rotinv" / "global_rotation_invariant".
Variant parse_variant(const std::string& name);

struct PathStep {
    std::size_t scale = 0;  // j, 0-based
    std::size_t angle = 0;  // l; 0 for rotation-invariant paths
    bool operator==(const PathStep&) const = default;
};

/// Sequence of (scale, angle) steps with strictly increasing scales.
struct Path {
    std::vector<PathStep> steps;
    [[nodiscard]] std::size_t order() const noexcept { return steps.size(); }
    bool operator==(const Path&) const = default;
};

/// All paths of order 1..max_order in lexicographic order (order, scales, angles).
/// Angle-free (all angles 0) when rotation_invariant.
std::vector<Path> enumerate_paths(std::size_t num_scales, std::size_t num_angles,
                                  std::size_t max_order, bool rotation_invariant);

struct ScatteringConfig {
    FilterBankConfig bank;
    std::size_t max_order = 2;
    Variant variant = Variant::global;

    void validate() const;
    [[nodiscard]] bool rotation_invariant() const noexcept {
        return variant == Variant::global_rotation_invariant;
    }
    /// Output cells per path: (N / 2^J)^2 for windowed, 1 otherwise.
    [[nodiscard]] std::size_t spatial_cells() const;
    /// Stable 64-bit digest of every parameter that changes the features.
    [[nodiscard]] std::uint64_t digest() const;
    bool operator==(const ScatteringConfig&) const = default;
};

std::size_t count_features(const ScatteringConfig& cfg, std::size_t image_size,
                           std::size_t channels);

/// Where each output coordinate comes from. path_index is -1 for the order-0
/// coefficient, otherwise an index into `paths`.
struct FeatureLayout {
    struct Entry {
        std::size_t channel = 0;
        int path_index = -1;
        std::size_t cell_row = 0;
        std::size_t cell_col = 0;
    };
    std::vector<Path> paths;
    std::vector<Entry> entries;
    std::size_t channels = 0;

    [[nodiscard]] std::size_t order_of(std::size_t index) const {
        const auto& e = entries.at(index);
        return e.path_index < 0 ? 0 : paths[static_cast<std::size_t>(e.path_index)].order();
    }
};

FeatureLayout feature_layout(const ScatteringConfig& cfg, std::size_t channels);

struct FeatureVector {
    std::vector<double> values;
    std::shared_ptr<const FeatureLayout> layout;
    std::size_t channel_count = 0;
};

FeatureVector scatter(const Image& image, const FilterBank& bank, const ScatteringConfig& cfg);

/// Maps scatter over `images`; threads > 1 splits the batch across workers
/// with results identical to the sequential loop.
std::vector<FeatureVector> scatter_batch(std::span<const Image> images, const FilterBank& bank,
                                         const ScatteringConfig& cfg, std::size_t threads = 1);

}  // namespace bscat
