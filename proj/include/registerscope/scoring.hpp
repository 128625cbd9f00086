#pragma once

// Per-feature statistics: differential activation frequency
//   delta_i = P(f_i > 0 | slang) - P(f_i > 0 | literal)
// the two-threshold activity filter, top-k ranking, per-feature binary
// classifier metrics and token-level activation profiles.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "registerscope/activation_store.hpp"

namespace regscope {

inline constexpr std::string_view kPooledScope = "pooled";

/// Either one language or all languages pooled.
class Scope {
public:
    static Scope pooled() { return Scope(std::string(kPooledScope)); }
    static Scope language(std::string code) { return Scope(std::move(code)); }
    /// "pooled" or a language code.
    static Scope parse(std::string_view text) { return Scope(std::string(text)); }

    bool is_pooled() const noexcept { return name_ == kPooledScope; }
    const std::string& name() const noexcept { return name_; }
    bool contains(const SparseActivationRecord& record) const noexcept {
        return is_pooled() || record.language == name_;
    }

private:
    explicit Scope(std::string name) : name_(std::move(name)) {}
    std::string name_;
};

struct FeatureStats {
    std::uint32_t feature = 0;
    std::string language;
    std::uint32_t layer = 0;
    std::uint64_t n_slang = 0;
    std::uint64_t n_slang_active = 0;
    std::uint64_t n_literal = 0;
    std::uint64_t n_literal_active = 0;
    double p_slang = 0.0;
    double p_literal = 0.0;
    double delta = 0.0;

    std::uint64_t fires_total() const noexcept { return n_slang_active + n_literal_active; }
};

/// Rates and delta from raw counts; the single place these are computed so
/// every code path (including the permutation engine) agrees bit-for-bit.
double activation_rate(std::uint64_t active, std::uint64_t total) noexcept;
double delta_from_counts(std::uint64_t slang_active, std::uint64_t n_slang, std::uint64_t literal_active,
                         std::uint64_t n_literal) noexcept;

/// Stats for every feature active at least once in scope, ascending by
/// feature index. Features never active are absent; `lookup` synthesizes
/// their all-zero stats on demand.
struct FeatureTable {
    std::string language;
    std::uint32_t layer = 0;
    std::uint64_t n_slang = 0;
    std::uint64_t n_literal = 0;
    std::vector<FeatureStats> stats;

    FeatureStats lookup(std::uint32_t feature) const;
};

FeatureTable compute_feature_stats(const ActivationStore& store, const Scope& scope, std::uint32_t layer);

struct ActivityFilter {
    double min_slang_rate = 0.05;
    std::uint64_t min_total_fires = 10;

    /// Throws DataError when thresholds are out of range.
    void validate() const;
    bool passes(const FeatureStats& stats) const noexcept {
        return stats.p_slang >= min_slang_rate && stats.fires_total() >= min_total_fires;
    }
};

struct FilterResult {
    ActivityFilter filter;
    FeatureTable table;  // retained features only
    std::size_t pass_count = 0;
};

FilterResult apply_filter(const FeatureTable& table, const ActivityFilter& filter);

/// True when `a` ranks strictly ahead of `b`: larger delta first, ties by
/// ascending feature index. Deltas are compared exactly on integer counts.
bool ranks_before(const FeatureStats& a, const FeatureStats& b) noexcept;

struct RankedEntry {
    std::uint32_t feature = 0;
    double delta = 0.0;

    friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

struct RankedFeatureList {
    std::string language;
    std::uint32_t layer = 0;
    std::size_t k = 0;
    ActivityFilter filter;
    std::vector<RankedEntry> entries;

    std::vector<std::uint32_t> features(std::size_t limit = static_cast<std::size_t>(-1)) const;
};

/// Top min(k, retained) features. Throws DataError when k == 0.
RankedFeatureList rank_top_k(const FilterResult& filtered, std::size_t k);

struct ClassifierMetrics {
    std::uint32_t feature = 0;
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Rule "active => slang" per feature of the (pooled, filtered) table.
std::vector<ClassifierMetrics> classifier_metrics(const FeatureTable& table);

struct TokenActivationProfile {
    Label label = Label::slang;
    std::uint32_t layer = 0;
    std::uint64_t tokens = 0;
    double mean_active_feature_count = 0.0;
    double mean_total_activation = 0.0;
};

/// Index 0 is slang, index 1 literal. Throws ComputeError if either label has
/// no tokens at this layer.
std::array<TokenActivationProfile, 2> token_activation_profile(const ActivationStore& store, std::uint32_t layer,
                                                               const Scope& scope = Scope::pooled());

}  // namespace regscope
