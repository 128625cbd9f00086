#pragma once

// Cross-lingual set algebra over ranked lists, plus the label-permutation
// significance test for the size of the trilingual core.

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "registerscope/activation_store.hpp"
#include "registerscope/scoring.hpp"

namespace regscope {

using FeatureSet = std::set<std::uint32_t>;
using LanguagePair = std::pair<std::string, std::string>;

struct OverlapResult {
    std::uint32_t layer = 0;
    std::size_t k = 0;
    std::vector<std::string> languages;
    FeatureSet core;                               // in all three lists
    std::map<LanguagePair, FeatureSet> bilingual;  // in exactly this pair
    std::map<std::string, FeatureSet> specific;    // in exactly one list
};

/// Three lists with distinct languages and a common layer and k.
OverlapResult intersect_trilingual(std::span<const RankedFeatureList> lists);

struct BilingualExclusiveSet {
    std::string target_language;
    LanguagePair source_pair;
    std::size_t k_source = 0;
    FeatureSet features;
};

/// (top-k_source(A) intersect top-k_source(B)) minus top-k_source(target).
BilingualExclusiveSet bilingual_exclusive(std::span<const RankedFeatureList> lists, std::string_view target,
                                          std::size_t k_source);

struct PermutationConfig {
    std::uint32_t layer = 0;
    std::size_t k = 100;
    ActivityFilter filter;
    std::size_t n_permutations = 10000;
    std::uint64_t seed = 0;
    std::vector<std::string> languages;  // empty: the manifest's languages (must be three)
    unsigned threads = 1;
};

struct PermutationTestResult {
    std::uint32_t layer = 0;
    std::size_t k = 0;
    ActivityFilter filter;
    std::vector<std::string> languages;
    std::size_t observed_overlap = 0;
    std::size_t n_permutations = 0;
    double null_mean = 0.0;
    double null_std = 0.0;  // population convention (divide by n)
    double null_max = 0.0;
    double p_value = 1.0;
    std::uint64_t seed = 0;
    std::vector<std::uint32_t> null_overlaps;  // one per iteration, in iteration order
};

/// Labels of one language after the shuffle used by permutation `iteration`.
/// Depends only on (seed, iteration, language_slot), never on scheduling.
std::vector<Label> permuted_labels(std::span<const Label> labels, std::uint64_t seed, std::uint64_t iteration,
                                   std::size_t language_slot);

/// Recomputes filter + per-language top-k under arbitrary label assignments.
/// Each feature keeps either a posting list or a token bitset, so one
/// relabelling costs a popcount sweep rather than a pass over the records.
class PermutationEngine {
public:
    PermutationEngine(const ActivationStore& store, std::uint32_t layer, std::vector<std::string> languages,
                      const ActivityFilter& filter, std::size_t k);

    std::size_t language_count() const noexcept { return languages_.size(); }
    const std::vector<std::string>& languages() const noexcept { return languages_; }
    std::span<const Label> labels(std::size_t slot) const noexcept { return languages_data_[slot].labels; }

    /// Top-k feature ids (unordered) of one language under `labels`.
    std::vector<std::uint32_t> top_k(std::size_t slot, std::span<const Label> labels) const;

    /// Number of features in every language's top-k under the given labels.
    std::size_t overlap(std::span<const std::vector<Label>> labels) const;
    std::size_t observed_overlap() const;
    std::size_t permuted_overlap(std::uint64_t seed, std::uint64_t iteration) const;

private:
    struct LanguageData {
        std::vector<Label> labels;
        std::size_t n_slang = 0;
        std::size_t n_literal = 0;
        std::size_t words = 0;
        // Features with posting lists.
        std::vector<std::uint32_t> sparse_features;
        std::vector<std::uint32_t> sparse_fires;
        std::vector<std::size_t> sparse_offsets;
        std::vector<std::uint32_t> postings;
        // Features with bitsets (words per feature).
        std::vector<std::uint32_t> dense_features;
        std::vector<std::uint32_t> dense_fires;
        std::vector<std::uint64_t> bits;
    };

    std::vector<std::string> languages_;
    std::vector<LanguageData> languages_data_;
    ActivityFilter filter_;
    std::size_t k_;
    std::uint32_t num_features_;
};

/// Throws ComputeError for a language with single-label data at this layer.
PermutationTestResult permutation_test(const ActivationStore& store, const PermutationConfig& config);

/// Add-one p-value: (1 + #{null >= observed}) / (1 + n).
double permutation_p_value(std::span<const std::uint32_t> null_overlaps, std::size_t observed) noexcept;

/// Fills mean/std/max/p from null_overlaps and observed_overlap.
void summarize_null(PermutationTestResult& result);

/// Per-iteration sum of several layers' null samples; requires equal seeds
/// and iteration counts.
PermutationTestResult sum_layers(std::span<const PermutationTestResult> per_layer);

}  // namespace regscope
