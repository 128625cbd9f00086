#pragma once

// Vocabulary readout: push a decoder direction through the unembedding and
// list the tokens it promotes most.

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "registerscope/activation_store.hpp"

namespace regscope {

/// A single feature projects its raw decoder row; a set projects the
/// unit-normalized mean of its rows (the steering construction).
struct ProjectionSource {
    std::vector<std::uint32_t> features;
    bool is_set = false;

    static ProjectionSource feature(std::uint32_t index) { return {{index}, false}; }
    static ProjectionSource set(std::vector<std::uint32_t> members) { return {std::move(members), true}; }

    /// "feature:35440" or "set:35440+93521".
    std::string descriptor() const;
};

struct VocabEntry {
    std::uint32_t token_id = 0;
    std::string token;
    double score = 0.0;
};

struct VocabReadout {
    ProjectionSource source;
    std::size_t k = 0;
    std::vector<std::uint32_t> excluded;  // ascending token ids left out of the ranking
    std::vector<VocabEntry> top;          // descending score, ties by ascending id
};

/// score[t] = vector . unembedding[:, t]; parallel over token ranges.
std::vector<double> token_scores(std::span<const double> vector, const DenseMatrix& unembedding,
                                 unsigned threads = 1);

/// Throws DataError on dimension mismatch, an empty set or k == 0.
VocabReadout project_vocab(const DenseMatrix& decoder, const DenseMatrix& unembedding,
                           std::span<const std::string> vocab, const ProjectionSource& source, std::size_t k,
                           const std::set<std::uint32_t>& exclusion = {}, unsigned threads = 1);

}  // namespace regscope
