#pragma once

// Steering vectors built from decoder rows, random-feature ablation sets, and
// evaluation of steered completions (formality correlation, per-alpha curves,
// language preservation, perplexity).
//
// Injection contract for whoever applies a vector during generation:
//   h'[L, t] = h[L, t] + alpha * v   at every generated position t,
// and alpha = 0 must leave generation unchanged.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "registerscope/activation_store.hpp"

namespace regscope {

inline constexpr std::array<double, 6> kDefaultAlphaGrid{-150.0, -100.0, -50.0, 0.0, 50.0, 100.0};
inline constexpr std::array<double, 7> kExtendedAlphaGrid{-150.0, -100.0, -50.0, 0.0, 50.0, 100.0, 150.0};

struct SteeringVector {
    std::uint32_t layer = 0;
    std::vector<std::uint32_t> features;  // ascending, distinct
    std::vector<double> values;           // unit norm
    double norm = 0.0;                    // L2 norm of `values`
    double mean_norm = 0.0;               // norm of the mean before normalization
    std::optional<std::uint64_t> seed;    // set for random ablation vectors
};

/// Unit-normalized mean of the distinct member rows. Throws DataError for an
/// empty set or an index outside the decoder, ComputeError when the mean is
/// zero (for example two antiparallel rows).
std::vector<double> unit_mean_direction(const DenseMatrix& decoder, std::span<const std::uint32_t> features);

SteeringVector build_steering_vector(const DenseMatrix& decoder, std::span<const std::uint32_t> features,
                                     std::uint32_t layer);

/// `n_sets` independent sets of `set_size` features, each drawn uniformly
/// without replacement from the rows outside `exclusion`. Set i depends only
/// on (seed, i).
std::vector<SteeringVector> random_ablation_vectors(const DenseMatrix& decoder, std::size_t n_sets,
                                                    std::size_t set_size, std::uint64_t seed,
                                                    const std::set<std::uint32_t>& exclusion, std::uint32_t layer,
                                                    unsigned threads = 1);

/// One-row SAEM file with the float32 values.
DenseMatrix steering_matrix(const SteeringVector& vector);

struct CorrelationResult {
    double r = 0.0;
    double p_value = 1.0;
    std::size_t n = 0;
    bool degenerate = false;  // n < 3 or a constant coordinate; r and p meaningless
};

/// Product-moment r with a two-sided Student-t p-value on n - 2 degrees of
/// freedom. Throws DataError on length mismatch; degenerate input is flagged.
CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys);

struct CompletionRecord {
    std::string prompt_id;
    std::string language;
    double alpha = 0.0;
    std::string text;
    std::optional<double> formality;  // clipped to [0, 1]
    std::optional<double> perplexity;
    std::optional<std::string> detected_language;
    std::string vector_id;

    friend bool operator==(const CompletionRecord&, const CompletionRecord&) = default;
};

CompletionRecord parse_completion(std::string_view line);
std::string format_completion(const CompletionRecord& record);
/// Throws DataError naming the 1-based line of the first bad record.
std::vector<CompletionRecord> load_completions(const std::filesystem::path& path);
void write_completions(const std::filesystem::path& path, std::span<const CompletionRecord> records);

struct AlphaSummary {
    double alpha = 0.0;
    std::size_t completions = 0;
    std::size_t scored = 0;  // with formality
    std::optional<double> mean_formality;
    std::size_t detected = 0;  // with a detected language
    std::optional<double> preservation_rate;
    std::size_t with_perplexity = 0;
    std::optional<double> median_perplexity;
};

struct GroupReport {
    std::string language;
    std::string vector_id;
    std::string target_language;
    std::size_t completions = 0;
    std::size_t dropped_formality = 0;
    CorrelationResult correlation;  // n counts scored completions only
    bool flagged = false;           // fewer than 3 scored completions or degenerate
    std::size_t detected = 0;
    std::optional<double> preservation_rate;
    std::vector<AlphaSummary> per_alpha;  // ascending alpha
};

struct SteeringEvalReport {
    std::vector<GroupReport> groups;      // ascending (language, vector_id)
    std::vector<AlphaSummary> per_alpha;  // all completions pooled
    std::size_t completions = 0;
    std::size_t detected = 0;
    std::optional<double> preservation_rate;
};

inline constexpr std::size_t kMinScoredCompletions = 3;

/// `target_language` maps a prompt language to the expected detected code;
/// languages not in the map are expected to be detected as themselves.
/// Completions without a detected language are left out of preservation
/// denominators. The result does not depend on completion order.
SteeringEvalReport eval_report(std::span<const CompletionRecord> completions,
                               const std::map<std::string, std::string>& target_language = {});

struct ContrastResult {
    double core_abs_r = 0.0;
    std::vector<double> random_abs_r;
    double mean_abs_random = 0.0;
    double sd_abs_random = 0.0;  // n - 1 denominator
    std::size_t n = 0;
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;
};

/// One-sample t of |r_random| against the fixed value |r_core|, two-sided.
/// Throws DataError with fewer than 2 random values.
ContrastResult ablation_contrast(double core_r, std::span<const double> random_r);

/// Contrast of one language across reports. Flagged groups are skipped.
ContrastResult ablation_contrast(const SteeringEvalReport& core, std::span<const SteeringEvalReport> random,
                                 std::string_view language);

}  // namespace regscope
