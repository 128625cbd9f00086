#include "registerscope/overlap.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cmath>

#include "registerscope/errors.hpp"
#include "registerscope/parallel.hpp"
#include "registerscope/rng.hpp"

namespace regscope {

namespace {

void check_lists(std::span<const RankedFeatureList> lists) {
    if (lists.size() != 3) throw DataError("expected three ranked lists, got " + std::to_string(lists.size()));
    for (const auto& list : lists) {
        if (list.layer != lists[0].layer || list.k != lists[0].k) {
            throw DataError("ranked lists disagree on layer/k");
        }
    }
    for (std::size_t i = 0; i < lists.size(); ++i) {
        for (std::size_t j = i + 1; j < lists.size(); ++j) {
            if (lists[i].language == lists[j].language) {
                throw DataError("duplicate language '" + lists[i].language + "' in ranked lists");
            }
        }
    }
}

FeatureSet prefix_set(const RankedFeatureList& list, std::size_t limit) {
    const auto ids = list.features(limit);
    return FeatureSet(ids.begin(), ids.end());
}

}  // namespace

OverlapResult intersect_trilingual(std::span<const RankedFeatureList> lists) {
    check_lists(lists);
    OverlapResult result;
    result.layer = lists[0].layer;
    result.k = lists[0].k;

    std::map<std::uint32_t, unsigned> membership;  // bit i set: in list i
    for (std::size_t i = 0; i < lists.size(); ++i) {
        result.languages.push_back(lists[i].language);
        result.specific[lists[i].language];
        for (const auto& entry : lists[i].entries) membership[entry.feature] |= 1U << i;
    }
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = i + 1; j < 3; ++j) result.bilingual[{lists[i].language, lists[j].language}];
    }

    for (const auto& [feature, mask] : membership) {
        switch (std::popcount(mask)) {
            case 3:
                result.core.insert(feature);
                break;
            case 2: {
                const unsigned first = static_cast<unsigned>(std::countr_zero(mask));
                const unsigned second = static_cast<unsigned>(std::countr_zero(mask & (mask - 1)));
                result.bilingual[{lists[first].language, lists[second].language}].insert(feature);
                break;
            }
            default:
                result.specific[lists[static_cast<unsigned>(std::countr_zero(mask))].language].insert(feature);
        }
    }
    return result;
}

BilingualExclusiveSet bilingual_exclusive(std::span<const RankedFeatureList> lists, std::string_view target,
                                          std::size_t k_source) {
    check_lists(lists);
    if (k_source == 0) throw DataError("k_source must be at least 1");
    const auto target_it =
        std::find_if(lists.begin(), lists.end(), [&](const RankedFeatureList& l) { return l.language == target; });
    if (target_it == lists.end()) throw DataError("unknown target language '" + std::string(target) + "'");
    for (const auto& list : lists) {
        if (list.k < k_source) {
            throw DataError("list for " + list.language + " holds top-" + std::to_string(list.k) +
                            ", cannot derive top-" + std::to_string(k_source));
        }
    }

    std::vector<const RankedFeatureList*> sources;
    for (const auto& list : lists) {
        if (&list != &*target_it) sources.push_back(&list);
    }

    BilingualExclusiveSet result;
    result.target_language = std::string(target);
    result.source_pair = {sources[0]->language, sources[1]->language};
    result.k_source = k_source;

    const FeatureSet a = prefix_set(*sources[0], k_source);
    const FeatureSet b = prefix_set(*sources[1], k_source);
    const FeatureSet excluded = prefix_set(*target_it, k_source);
    for (auto feature : a) {
        if (b.contains(feature) && !excluded.contains(feature)) result.features.insert(feature);
    }
    return result;
}

std::vector<Label> permuted_labels(std::span<const Label> labels, std::uint64_t seed, std::uint64_t iteration,
                                   std::size_t language_slot) {
    std::vector<Label> out(labels.begin(), labels.end());
    StreamRng rng(seed, iteration, language_slot);
    fisher_yates(std::span<Label>(out), rng);
    return out;
}

PermutationEngine::PermutationEngine(const ActivationStore& store, std::uint32_t layer,
                                     std::vector<std::string> languages, const ActivityFilter& filter, std::size_t k)
    : languages_(std::move(languages)), filter_(filter), k_(k), num_features_(store.num_features()) {
    filter_.validate();
    if (k_ == 0) throw DataError("k must be at least 1");
    const std::uint64_t min_fires = std::max<std::uint64_t>(1, filter_.min_total_fires);

    std::vector<std::uint32_t> fires(num_features_);
    std::vector<std::uint32_t> slot_of(num_features_);
    languages_data_.resize(languages_.size());

    for (std::size_t slot = 0; slot < languages_.size(); ++slot) {
        auto& data = languages_data_[slot];
        const auto& language = languages_[slot];
        std::fill(fires.begin(), fires.end(), 0);

        std::vector<const SparseActivationRecord*> tokens;
        for (const auto& record : store.records()) {
            if (record.layer != layer || record.language != language) continue;
            tokens.push_back(&record);
            data.labels.push_back(record.label);
            (record.label == Label::slang ? data.n_slang : data.n_literal) += 1;
            for (const auto& f : record.features) ++fires[f.index];
        }
        if (data.n_slang == 0 || data.n_literal == 0) {
            throw ComputeError("degenerate scope: language " + language + " at layer " + std::to_string(layer) +
                               " has " + std::to_string(data.n_slang) + " slang and " +
                               std::to_string(data.n_literal) + " literal tokens");
        }
        data.words = (tokens.size() + 63) / 64;

        for (std::uint32_t feature = 0; feature < num_features_; ++feature) {
            if (fires[feature] < min_fires) continue;
            if (fires[feature] <= data.words) {
                slot_of[feature] = static_cast<std::uint32_t>(data.sparse_features.size());
                data.sparse_features.push_back(feature);
                data.sparse_fires.push_back(fires[feature]);
            } else {
                slot_of[feature] = static_cast<std::uint32_t>(data.dense_features.size());
                data.dense_features.push_back(feature);
                data.dense_fires.push_back(fires[feature]);
            }
        }

        data.sparse_offsets.assign(data.sparse_features.size() + 1, 0);
        for (std::size_t i = 0; i < data.sparse_features.size(); ++i) {
            data.sparse_offsets[i + 1] = data.sparse_offsets[i] + data.sparse_fires[i];
        }
        data.postings.resize(data.sparse_offsets.back());
        std::vector<std::size_t> cursor(data.sparse_offsets.begin(), data.sparse_offsets.end() - 1);
        data.bits.assign(data.dense_features.size() * data.words, 0);

        for (std::uint32_t t = 0; t < tokens.size(); ++t) {
            for (const auto& f : tokens[t]->features) {
                if (fires[f.index] < min_fires) continue;
                const auto s = slot_of[f.index];
                if (fires[f.index] <= data.words) {
                    data.postings[cursor[s]++] = t;
                } else {
                    data.bits[s * data.words + t / 64] |= std::uint64_t{1} << (t % 64);
                }
            }
        }
    }
}

std::vector<std::uint32_t> PermutationEngine::top_k(std::size_t slot, std::span<const Label> labels) const {
    const auto& data = languages_data_[slot];
    assert(labels.size() == data.labels.size());

    std::uint64_t n_slang = 0;
    std::vector<std::uint64_t> slang_bits(data.words, 0);
    for (std::size_t t = 0; t < labels.size(); ++t) {
        if (labels[t] == Label::slang) {
            ++n_slang;
            slang_bits[t / 64] |= std::uint64_t{1} << (t % 64);
        }
    }
    const std::uint64_t n_literal = labels.size() - n_slang;
    const auto ns = static_cast<std::int64_t>(n_slang);
    const auto nl = static_cast<std::int64_t>(n_literal);

    struct Candidate {
        std::int64_t key;  // delta * n_slang * n_literal, exact
        std::uint32_t feature;
    };
    std::vector<Candidate> candidates;
    candidates.reserve(data.sparse_features.size() + data.dense_features.size());

    auto consider = [&](std::uint32_t feature, std::uint64_t fires, std::uint64_t slang_active) {
        FeatureStats s;
        s.n_slang = n_slang;
        s.n_literal = n_literal;
        s.n_slang_active = slang_active;
        s.n_literal_active = fires - slang_active;
        s.p_slang = activation_rate(slang_active, n_slang);
        if (!filter_.passes(s)) return;
        const auto a = static_cast<std::int64_t>(slang_active);
        const auto b = static_cast<std::int64_t>(fires - slang_active);
        candidates.push_back(Candidate{a * nl - b * ns, feature});
    };

    for (std::size_t i = 0; i < data.sparse_features.size(); ++i) {
        std::uint64_t a = 0;
        for (std::size_t p = data.sparse_offsets[i]; p < data.sparse_offsets[i + 1]; ++p) {
            a += labels[data.postings[p]] == Label::slang;
        }
        consider(data.sparse_features[i], data.sparse_fires[i], a);
    }
    for (std::size_t i = 0; i < data.dense_features.size(); ++i) {
        const std::uint64_t* row = data.bits.data() + i * data.words;
        std::uint64_t a = 0;
        for (std::size_t w = 0; w < data.words; ++w) a += static_cast<std::uint64_t>(std::popcount(row[w] & slang_bits[w]));
        consider(data.dense_features[i], data.dense_fires[i], a);
    }

    const std::size_t n = std::min(k_, candidates.size());
    auto better = [](const Candidate& x, const Candidate& y) {
        return x.key != y.key ? x.key > y.key : x.feature < y.feature;
    };
    if (n < candidates.size()) {
        std::nth_element(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n), candidates.end(),
                         better);
    }
    std::vector<std::uint32_t> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(candidates[i].feature);
    return out;
}

std::size_t PermutationEngine::overlap(std::span<const std::vector<Label>> labels) const {
    std::vector<std::uint8_t> hits(num_features_, 0);
    for (std::size_t slot = 0; slot < languages_data_.size(); ++slot) {
        for (auto feature : top_k(slot, labels[slot])) ++hits[feature];
    }
    const auto all = static_cast<std::uint8_t>(languages_data_.size());
    return static_cast<std::size_t>(std::count(hits.begin(), hits.end(), all));
}

std::size_t PermutationEngine::observed_overlap() const {
    std::vector<std::vector<Label>> labels;
    for (const auto& data : languages_data_) labels.push_back(data.labels);
    return overlap(labels);
}

std::size_t PermutationEngine::permuted_overlap(std::uint64_t seed, std::uint64_t iteration) const {
    std::vector<std::vector<Label>> labels;
    labels.reserve(languages_data_.size());
    for (std::size_t slot = 0; slot < languages_data_.size(); ++slot) {
        labels.push_back(permuted_labels(languages_data_[slot].labels, seed, iteration, slot));
#ifndef NDEBUG
        const auto n_slang = static_cast<std::size_t>(std::count(labels.back().begin(), labels.back().end(), Label::slang));
        assert(n_slang == languages_data_[slot].n_slang);
#endif
    }
    return overlap(labels);
}

double permutation_p_value(std::span<const std::uint32_t> null_overlaps, std::size_t observed) noexcept {
    const auto at_least = std::count_if(null_overlaps.begin(), null_overlaps.end(),
                                        [&](std::uint32_t v) { return v >= observed; });
    return (1.0 + static_cast<double>(at_least)) / (1.0 + static_cast<double>(null_overlaps.size()));
}

void summarize_null(PermutationTestResult& result) {
    const auto& null = result.null_overlaps;
    result.n_permutations = null.size();
    double sum = 0.0;
    double max = 0.0;
    for (auto v : null) {
        sum += v;
        max = std::max(max, static_cast<double>(v));
    }
    const double n = static_cast<double>(null.size());
    result.null_mean = null.empty() ? 0.0 : sum / n;
    double squares = 0.0;
    for (auto v : null) squares += (v - result.null_mean) * (v - result.null_mean);
    result.null_std = null.empty() ? 0.0 : std::sqrt(squares / n);
    result.null_max = max;
    result.p_value = permutation_p_value(null, result.observed_overlap);
}

PermutationTestResult permutation_test(const ActivationStore& store, const PermutationConfig& config) {
    if (config.n_permutations == 0) throw DataError("n_permutations must be at least 1");
    auto languages = config.languages.empty() ? store.manifest().languages : config.languages;
    if (languages.size() != 3) {
        throw DataError("permutation test needs exactly three languages, got " + std::to_string(languages.size()));
    }
    for (const auto& language : languages) {
        if (!store.manifest().has_language(language)) throw DataError("unknown language '" + language + "'");
    }

    const PermutationEngine engine(store, config.layer, languages, config.filter, config.k);

    PermutationTestResult result;
    result.layer = config.layer;
    result.k = config.k;
    result.filter = config.filter;
    result.languages = languages;
    result.seed = config.seed;
    result.observed_overlap = engine.observed_overlap();
    result.null_overlaps.assign(config.n_permutations, 0);

    parallel_for(config.n_permutations, config.threads, [&](std::size_t i) {
        result.null_overlaps[i] = static_cast<std::uint32_t>(engine.permuted_overlap(config.seed, i));
    });
    summarize_null(result);
    return result;
}

PermutationTestResult sum_layers(std::span<const PermutationTestResult> per_layer) {
    if (per_layer.empty()) throw DataError("no per-layer results to sum");
    PermutationTestResult total;
    total.layer = per_layer[0].layer;
    total.k = per_layer[0].k;
    total.filter = per_layer[0].filter;
    total.languages = per_layer[0].languages;
    total.seed = per_layer[0].seed;
    total.null_overlaps.assign(per_layer[0].null_overlaps.size(), 0);
    for (const auto& r : per_layer) {
        if (r.seed != total.seed || r.null_overlaps.size() != total.null_overlaps.size()) {
            throw DataError("per-layer results disagree on seed or permutation count");
        }
        total.observed_overlap += r.observed_overlap;
        for (std::size_t i = 0; i < r.null_overlaps.size(); ++i) total.null_overlaps[i] += r.null_overlaps[i];
    }
    summarize_null(total);
    return total;
}

}  // namespace regscope
