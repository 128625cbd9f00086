#include "registerscope/lexical_projection.hpp"

#include <algorithm>
#include <numeric>

#include "registerscope/errors.hpp"
#include "registerscope/parallel.hpp"
#include "registerscope/steering.hpp"

namespace regscope {

namespace {

constexpr std::size_t kTokenBlock = 4096;

}  // namespace

std::string ProjectionSource::descriptor() const {
    std::string out = is_set ? "set:" : "feature:";
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (i) out += '+';
        out += std::to_string(features[i]);
    }
    return out;
}

std::vector<double> token_scores(std::span<const double> vector, const DenseMatrix& unembedding, unsigned threads) {
    if (vector.size() != unembedding.rows()) {
        throw DataError("projection vector has dimension " + std::to_string(vector.size()) +
                        " but the unembedding has " + std::to_string(unembedding.rows()) + " rows");
    }
    const std::size_t vocab = unembedding.cols();
    std::vector<double> scores(vocab, 0.0);
    const std::size_t blocks = (vocab + kTokenBlock - 1) / kTokenBlock;
    parallel_for(blocks, threads, [&](std::size_t b) {
        const std::size_t begin = b * kTokenBlock;
        const std::size_t end = std::min(vocab, begin + kTokenBlock);
        for (std::size_t c = 0; c < vector.size(); ++c) {
            const double w = vector[c];
            const auto row = unembedding.row(c);
            for (std::size_t t = begin; t < end; ++t) scores[t] += w * row[t];
        }
    });
    return scores;
}

VocabReadout project_vocab(const DenseMatrix& decoder, const DenseMatrix& unembedding,
                           std::span<const std::string> vocab, const ProjectionSource& source, std::size_t k,
                           const std::set<std::uint32_t>& exclusion, unsigned threads) {
    if (k == 0) throw DataError("k must be at least 1");
    if (decoder.cols() != unembedding.rows()) {
        throw DataError("decoder width " + std::to_string(decoder.cols()) + " does not match unembedding rows " +
                        std::to_string(unembedding.rows()));
    }
    if (vocab.size() != unembedding.cols()) {
        throw DataError("vocabulary has " + std::to_string(vocab.size()) + " tokens but the unembedding has " +
                        std::to_string(unembedding.cols()) + " columns");
    }
    if (source.features.empty()) throw DataError("projection source is empty");

    std::vector<double> direction;
    if (source.is_set) {
        direction = unit_mean_direction(decoder, source.features);
    } else {
        if (source.features.size() != 1) throw DataError("a single-feature source has exactly one feature");
        const auto f = source.features.front();
        if (f >= decoder.rows()) {
            throw DataError("feature " + std::to_string(f) + " outside decoder with " +
                            std::to_string(decoder.rows()) + " rows");
        }
        const auto row = decoder.row(f);
        direction.assign(row.begin(), row.end());
    }

    const auto scores = token_scores(direction, unembedding, threads);
    std::vector<std::uint32_t> order;
    order.reserve(scores.size());
    for (std::uint32_t t = 0; t < scores.size(); ++t) {
        if (!exclusion.contains(t)) order.push_back(t);
    }
    const std::size_t n = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return a < b;
                      });

    VocabReadout out;
    out.source = source;
    out.k = k;
    for (auto t : exclusion) {
        if (t < scores.size()) out.excluded.push_back(t);
    }
    out.top.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.top.push_back(VocabEntry{order[i], vocab[order[i]], scores[order[i]]});
    return out;
}

}  // namespace regscope
