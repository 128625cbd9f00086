#pragma once

// Decoder-space coherence: pairwise cosine matrices, island scores against
// randomly sampled features, and a 2D principal-component projection for
// figures.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "registerscope/activation_store.hpp"

namespace regscope {

struct SimilarityMatrix {
    std::vector<std::uint32_t> features;
    std::vector<double> values;  // row-major, size() x size()

    std::size_t size() const noexcept { return features.size(); }
    double at(std::size_t i, std::size_t j) const noexcept { return values[i * features.size() + j]; }
    DenseMatrix to_dense() const;
};

/// Cosine of every pair of selected decoder rows; diagonal exactly 1.
/// Throws ComputeError for a zero-norm row, DataError for an index >= rows.
SimilarityMatrix pairwise_cosine(const DenseMatrix& decoder, std::span<const std::uint32_t> features,
                                 unsigned threads = 1);

struct IslandConfig {
    std::size_t random_n = 100;
    std::uint64_t seed = 0;
    double epsilon = 1e-9;
    unsigned threads = 1;
};

struct GeometryReport {
    std::vector<std::uint32_t> feature_set;  // ascending, deduplicated
    std::vector<std::uint32_t> random_set;   // ascending
    double within_mean = 0.0;
    double cross_mean = 0.0;
    double random_within_mean = 0.0;
    double island_score_cross = 0.0;     // within_mean / cross_mean
    double island_score_baseline = 0.0;  // within_mean / random_within_mean
    bool cross_flagged = false;          // |cross_mean| below epsilon
    bool baseline_flagged = false;       // |random_within_mean| below epsilon
    std::uint64_t seed = 0;
    std::size_t random_n = 0;
    double epsilon = 0.0;
};

/// Ratio used by both island scores. When |denominator| < epsilon the result
/// is flagged and capped at +/-kIslandScoreCap (0 when the numerator is
/// also below epsilon).
inline constexpr double kIslandScoreCap = 1e6;
double guarded_ratio(double numerator, double denominator, double epsilon, bool& flagged) noexcept;

/// Random features are drawn uniformly without replacement from all rows
/// outside the core.
GeometryReport island_score(const DenseMatrix& decoder, std::span<const std::uint32_t> core,
                            const IslandConfig& config);

struct ProjectionCoords {
    std::vector<std::uint32_t> features;
    std::vector<std::array<double, 2>> coords;
    std::array<double, 2> explained_variance{0.0, 0.0};
    std::array<std::vector<double>, 2> components;  // unit, orthogonal, length d
    std::size_t iterations = 0;
    bool converged = false;
};

inline constexpr std::size_t kPcaMaxIterations = 1000;
inline constexpr double kPcaTolerance = 1e-10;

/// Top-2 principal components of the mean-centered selected rows, found by
/// block power iteration with Rayleigh-Ritz on the m x m Gram matrix. Each component's
/// largest-magnitude entry is made positive. Rank-1 selections yield a zero
/// second variance fraction; rank 0 (all rows equal) throws ComputeError.
ProjectionCoords pca_project(const DenseMatrix& decoder, std::span<const std::uint32_t> features);

}  // namespace regscope
