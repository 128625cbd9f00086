#include "registerscope/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "registerscope/errors.hpp"

namespace regscope {

namespace {

struct ExactDelta {
    __int128 numerator;
    __int128 denominator;  // > 0
};

ExactDelta exact_delta(const FeatureStats& s) noexcept {
    const auto a = static_cast<__int128>(s.n_slang_active);
    const auto b = static_cast<__int128>(s.n_literal_active);
    const auto ns = static_cast<__int128>(s.n_slang);
    const auto nl = static_cast<__int128>(s.n_literal);
    if (ns == 0 && nl == 0) return {0, 1};
    if (ns == 0) return {-b, nl};
    if (nl == 0) return {a, ns};
    return {a * nl - b * ns, ns * nl};
}

}  // namespace

double activation_rate(std::uint64_t active, std::uint64_t total) noexcept {
    return total == 0 ? 0.0 : static_cast<double>(active) / static_cast<double>(total);
}

double delta_from_counts(std::uint64_t slang_active, std::uint64_t n_slang, std::uint64_t literal_active,
                         std::uint64_t n_literal) noexcept {
    return activation_rate(slang_active, n_slang) - activation_rate(literal_active, n_literal);
}

FeatureStats FeatureTable::lookup(std::uint32_t feature) const {
    auto it = std::lower_bound(stats.begin(), stats.end(), feature,
                               [](const FeatureStats& s, std::uint32_t f) { return s.feature < f; });
    if (it != stats.end() && it->feature == feature) return *it;
    FeatureStats empty;
    empty.feature = feature;
    empty.language = language;
    empty.layer = layer;
    empty.n_slang = n_slang;
    empty.n_literal = n_literal;
    return empty;
}

FeatureTable compute_feature_stats(const ActivationStore& store, const Scope& scope, std::uint32_t layer) {
    const std::uint32_t num_features = store.num_features();
    std::vector<std::uint32_t> slang_active(num_features, 0);
    std::vector<std::uint32_t> literal_active(num_features, 0);

    FeatureTable table;
    table.language = scope.name();
    table.layer = layer;

    for (const auto& record : store.records()) {
        if (record.layer != layer || !scope.contains(record)) continue;
        auto& counts = record.label == Label::slang ? slang_active : literal_active;
        (record.label == Label::slang ? table.n_slang : table.n_literal) += 1;
        for (const auto& f : record.features) ++counts[f.index];
    }
    if (table.n_slang == 0 || table.n_literal == 0) {
        throw ComputeError("empty scope: " + scope.name() + " at layer " + std::to_string(layer) + " has " +
                           std::to_string(table.n_slang) + " slang and " + std::to_string(table.n_literal) +
                           " literal tokens");
    }

    for (std::uint32_t feature = 0; feature < num_features; ++feature) {
        if (slang_active[feature] == 0 && literal_active[feature] == 0) continue;
        FeatureStats s;
        s.feature = feature;
        s.language = table.language;
        s.layer = layer;
        s.n_slang = table.n_slang;
        s.n_literal = table.n_literal;
        s.n_slang_active = slang_active[feature];
        s.n_literal_active = literal_active[feature];
        s.p_slang = activation_rate(s.n_slang_active, s.n_slang);
        s.p_literal = activation_rate(s.n_literal_active, s.n_literal);
        s.delta = s.p_slang - s.p_literal;
        table.stats.push_back(std::move(s));
    }
    return table;
}

void ActivityFilter::validate() const {
    if (!(min_slang_rate >= 0.0 && min_slang_rate <= 1.0)) {
        throw DataError("min_slang_rate must lie in [0, 1]");
    }
}

FilterResult apply_filter(const FeatureTable& table, const ActivityFilter& filter) {
    filter.validate();
    FilterResult result;
    result.filter = filter;
    result.table.language = table.language;
    result.table.layer = table.layer;
    result.table.n_slang = table.n_slang;
    result.table.n_literal = table.n_literal;
    for (const auto& s : table.stats) {
        if (filter.passes(s)) result.table.stats.push_back(s);
    }
    result.pass_count = result.table.stats.size();
    return result;
}

bool ranks_before(const FeatureStats& a, const FeatureStats& b) noexcept {
    const auto da = exact_delta(a);
    const auto db = exact_delta(b);
    const __int128 lhs = da.numerator * db.denominator;
    const __int128 rhs = db.numerator * da.denominator;
    if (lhs != rhs) return lhs > rhs;
    return a.feature < b.feature;
}

std::vector<std::uint32_t> RankedFeatureList::features(std::size_t limit) const {
    std::vector<std::uint32_t> out;
    const std::size_t n = std::min(limit, entries.size());
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(entries[i].feature);
    return out;
}

RankedFeatureList rank_top_k(const FilterResult& filtered, std::size_t k) {
    if (k == 0) throw DataError("k must be at least 1");
    std::vector<const FeatureStats*> order;
    order.reserve(filtered.table.stats.size());
    for (const auto& s : filtered.table.stats) order.push_back(&s);

    const std::size_t n = std::min(k, order.size());
    auto cmp = [](const FeatureStats* a, const FeatureStats* b) { return ranks_before(*a, *b); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(), cmp);

    RankedFeatureList list;
    list.language = filtered.table.language;
    list.layer = filtered.table.layer;
    list.k = k;
    list.filter = filtered.filter;
    list.entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) list.entries.push_back(RankedEntry{order[i]->feature, order[i]->delta});
    return list;
}

std::vector<ClassifierMetrics> classifier_metrics(const FeatureTable& table) {
    std::vector<ClassifierMetrics> out;
    out.reserve(table.stats.size());
    for (const auto& s : table.stats) {
        ClassifierMetrics m;
        m.feature = s.feature;
        m.tp = s.n_slang_active;
        m.fp = s.n_literal_active;
        m.fn = s.n_slang - s.n_slang_active;
        m.tn = s.n_literal - s.n_literal_active;
        m.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
        m.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
        m.f1 = m.tp > 0 ? static_cast<double>(2 * m.tp) / static_cast<double>(2 * m.tp + m.fp + m.fn) : 0.0;
        out.push_back(m);
    }
    return out;
}

std::array<TokenActivationProfile, 2> token_activation_profile(const ActivationStore& store, std::uint32_t layer,
                                                               const Scope& scope) {
    std::array<TokenActivationProfile, 2> profile{};
    std::array<double, 2> count_sum{0.0, 0.0};
    std::array<double, 2> value_sum{0.0, 0.0};
    profile[0].label = Label::slang;
    profile[1].label = Label::literal;
    for (auto& p : profile) p.layer = layer;

    for (const auto& record : store.records()) {
        if (record.layer != layer || !scope.contains(record)) continue;
        const auto slot = static_cast<std::size_t>(record.label);
        ++profile[slot].tokens;
        count_sum[slot] += static_cast<double>(record.features.size());
        double total = 0.0;
        for (const auto& f : record.features) total += f.value;
        value_sum[slot] += total;
    }
    for (std::size_t slot = 0; slot < 2; ++slot) {
        if (profile[slot].tokens == 0) {
            throw ComputeError("empty label group: no " + std::string(to_string(profile[slot].label)) +
                               " tokens at layer " + std::to_string(layer));
        }
        const auto n = static_cast<double>(profile[slot].tokens);
        profile[slot].mean_active_feature_count = count_sum[slot] / n;
        profile[slot].mean_total_activation = value_sum[slot] / n;
    }
    return profile;
}

}  // namespace regscope
