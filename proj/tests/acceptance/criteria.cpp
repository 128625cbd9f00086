#include "criteria.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "registerscope/geometry.hpp"
#include "registerscope/overlap.hpp"
#include "registerscope/scoring.hpp"
#include "registerscope/steering.hpp"
#include "registerscope/synth.hpp"
#include "test_data.hpp"

namespace acceptance {
namespace {

using namespace regscope;
using namespace std::chrono_literals;
using testdata::Quad;

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

// ------------------------------------------------------------ delta fixtures

struct TableRow {
    const char* language;
    std::uint32_t layer;
    std::uint32_t feature;
    double slang_pct;
    double literal_pct;
    double delta_pct;
};

// Per-language top-10 tables (rates and delta in percent).
constexpr TableRow kTopFeatureRows[] = {
    {"en", 20, 35440, 59.9, 7.8, 52.1},   {"en", 20, 33236, 45.9, 2.1, 43.7},  {"en", 20, 93521, 40.7, 1.0, 39.7},
    {"en", 20, 7697, 36.0, 17.3, 18.7},   {"en", 20, 108864, 25.8, 7.2, 18.6}, {"en", 20, 21876, 20.2, 2.4, 17.8},
    {"en", 20, 28165, 40.3, 23.1, 17.2},  {"en", 20, 40141, 42.1, 25.0, 17.1}, {"en", 20, 88782, 17.3, 0.3, 17.0},
    {"en", 20, 103326, 18.6, 2.4, 16.3},  {"he", 20, 115163, 51.6, 29.6, 22.0}, {"he", 20, 35440, 24.0, 2.8, 21.3},
    {"he", 20, 74327, 71.1, 56.5, 14.5},  {"he", 20, 93521, 13.3, 0.3, 13.0},  {"he", 20, 97003, 16.7, 3.9, 12.8},
    {"he", 20, 30218, 45.6, 33.1, 12.5},  {"he", 20, 7163, 13.1, 0.7, 12.4},   {"he", 20, 8408, 17.0, 5.7, 11.3},
    {"he", 20, 104622, 23.5, 13.0, 10.5}, {"he", 20, 86719, 48.4, 38.0, 10.4}, {"ru", 20, 93521, 43.0, 1.0, 42.0},
    {"ru", 20, 97003, 39.7, 1.7, 38.0},   {"ru", 20, 115163, 46.5, 9.0, 37.4}, {"ru", 20, 45410, 37.3, 7.8, 29.5},
    {"ru", 20, 35440, 28.7, 1.3, 27.4},   {"ru", 20, 83575, 23.7, 2.4, 21.3},  {"ru", 20, 92777, 21.3, 0.3, 21.0},
    {"ru", 20, 88782, 21.2, 0.6, 20.7},   {"ru", 20, 3598, 21.3, 2.2, 19.2},   {"ru", 20, 24006, 27.5, 8.4, 19.1},
    {"en", 9, 58884, 38.7, 2.0, 36.7},    {"en", 9, 31547, 39.9, 4.8, 35.1},   {"en", 9, 13485, 38.8, 3.7, 35.1},
    {"en", 9, 38266, 38.1, 3.7, 34.3},    {"en", 9, 82164, 38.6, 4.3, 34.3},   {"en", 9, 65823, 31.0, 1.1, 29.9},
    {"en", 9, 99647, 33.1, 3.9, 29.2},    {"en", 9, 22467, 31.6, 4.0, 27.6},   {"en", 9, 127209, 53.8, 26.8, 27.1},
    {"en", 9, 124105, 27.5, 0.6, 26.9},   {"he", 9, 38266, 29.6, 7.9, 21.7},   {"he", 9, 119607, 76.1, 54.7, 21.4},
    {"he", 9, 22467, 22.8, 2.8, 20.1},    {"he", 9, 64480, 69.0, 49.9, 19.1},  {"he", 9, 58884, 29.2, 10.6, 18.5},
    {"he", 9, 8819, 41.0, 23.2, 17.8},    {"he", 9, 13273, 22.0, 5.1, 16.9},   {"he", 9, 86686, 31.6, 15.1, 16.5},
    {"he", 9, 25081, 16.9, 0.4, 16.5},    {"he", 9, 39125, 49.1, 33.0, 16.0},  {"ru", 9, 101504, 57.8, 15.2, 42.6},
    {"ru", 9, 38266, 49.1, 7.7, 41.5},    {"ru", 9, 58884, 52.8, 11.7, 41.1},  {"ru", 9, 1855, 49.8, 10.4, 39.4},
    {"ru", 9, 120652, 36.3, 1.1, 35.1},   {"ru", 9, 106322, 35.6, 2.7, 32.9},  {"ru", 9, 129047, 36.4, 5.0, 31.3},
    {"ru", 9, 47673, 36.8, 5.8, 30.9},    {"ru", 9, 60050, 41.8, 12.9, 28.8},  {"ru", 9, 12375, 39.3, 12.4, 27.0},
};

constexpr std::uint32_t kFixtureFeatures = 131072;
constexpr std::uint64_t kFixtureTokens = 1000;  // per label, so a rate of x% is 10x active tokens

Outcome delta_fixtures(const Context&) {
    // One (language, layer) group per scope; token t of a label fires feature f when t < count(f).
    std::vector<SparseActivationRecord> records;
    std::map<std::pair<std::string, std::uint32_t>, std::vector<const TableRow*>> groups;
    for (const auto& row : kTopFeatureRows) groups[{row.language, row.layer}].push_back(&row);
    for (const auto& [key, rows] : groups) {
        for (Label label : {Label::slang, Label::literal}) {
            for (std::uint64_t t = 0; t < kFixtureTokens; ++t) {
                std::vector<std::uint32_t> active;
                for (const auto* row : rows) {
                    const double pct = label == Label::slang ? row->slang_pct : row->literal_pct;
                    if (t < static_cast<std::uint64_t>(std::llround(pct * 10.0))) active.push_back(row->feature);
                }
                records.push_back(testdata::make_record(key.first + std::to_string(records.size()), key.first,
                                                        key.second, label, active));
            }
        }
    }
    const auto store = testdata::store_for(std::move(records), kFixtureFeatures);

    std::size_t matched = 0;
    std::string mismatches;
    for (const auto& [key, rows] : groups) {
        const auto table = compute_feature_stats(store, Scope::language(key.first), key.second);
        for (const auto* row : rows) {
            const auto stats = table.lookup(row->feature);
            const double expect = row->delta_pct / 100.0;
            if (std::fabs(stats.delta - expect) <= 1e-9) {
                ++matched;
            } else {
                mismatches += fmt(" %s/L%u/%u(%.4f vs %.3f)", row->language, row->layer, row->feature, stats.delta,
                                  expect);
            }
        }
    }
    const std::size_t total = std::size(kTopFeatureRows);
    return {matched == total, fmt("%zu/%zu rows within 1e-9", matched, total) +
                                  (mismatches.empty() ? "" : "; off:" + mismatches)};
}

// --------------------------------------------------- brute-force equivalence

Outcome brute_force_equivalence(const Context&) {
    std::size_t dumps = 0;
    std::size_t comparisons = 0;
    std::string first_failure;
    auto fail = [&](const std::string& what) {
        if (first_failure.empty()) first_failure = fmt("dump %zu: ", dumps) + what;
    };
    const testdata::DumpShape shape;
    for (std::uint64_t seed = 0; seed < 50; ++seed, ++dumps) {
        std::mt19937_64 gen(0xB0F0 + seed);
        const auto F = static_cast<std::uint32_t>(16 + gen() % (shape.max_features - 15));
        const std::size_t n = 60 + gen() % (shape.max_records - 59);
        auto records = testdata::random_records(gen, F, n, shape);
        const auto store = testdata::store_for(records, F);
        const std::size_t k = 1 + gen() % 40;

        for (auto layer : shape.layers) {
            std::vector<RankedFeatureList> lists;
            std::vector<std::vector<std::uint32_t>> naive_lists;
            for (const std::string& scope : {std::string(), std::string("en"), std::string("he"), std::string("ru")}) {
                const auto naive = testdata::naive_stats(records, scope, layer, F);
                const auto table = compute_feature_stats(
                    store, scope.empty() ? Scope::pooled() : Scope::language(scope), layer);
                for (std::uint32_t f = 0; f < F; ++f) {
                    const auto s = table.lookup(f);
                    const double delta = static_cast<double>(naive.slang_active[f]) / static_cast<double>(naive.n_slang) -
                                         static_cast<double>(naive.literal_active[f]) /
                                             static_cast<double>(naive.n_literal);
                    ++comparisons;
                    if (s.n_slang != naive.n_slang || s.n_literal != naive.n_literal ||
                        s.n_slang_active != naive.slang_active[f] || s.n_literal_active != naive.literal_active[f] ||
                        s.delta != delta) {
                        fail(fmt("stats differ for feature %u", f));
                    }
                }
                const auto ranked = rank_top_k(apply_filter(table, ActivityFilter{}), k);
                const auto expect = testdata::naive_top_k(naive, k);
                ++comparisons;
                if (ranked.features() != expect) fail("top-k differs in scope '" + scope + "'");

                if (scope.empty()) {
                    // Classifier "active => slang", counted token by token.
                    const auto metrics = classifier_metrics(table);
                    for (const auto& m : metrics) {
                        std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
                        for (const auto& r : records) {
                            if (r.layer != layer) continue;
                            const bool active = std::any_of(r.features.begin(), r.features.end(),
                                                            [&](const auto& a) { return a.index == m.feature; });
                            const bool slang = r.label == Label::slang;
                            (active ? (slang ? tp : fp) : (slang ? fn : tn)) += 1;
                        }
                        const double precision =
                            tp + fp > 0 ? static_cast<double>(testdata::Rational(tp, tp + fp)) : 0.0;
                        const double recall = tp + fn > 0 ? static_cast<double>(testdata::Rational(tp, tp + fn)) : 0.0;
                        const double f1 = tp > 0 ? static_cast<double>(testdata::Rational(2 * tp, 2 * tp + fp + fn)) : 0.0;
                        ++comparisons;
                        if (m.tp != tp || m.fp != fp || m.fn != fn || m.tn != tn || m.precision != precision ||
                            m.recall != recall || m.f1 != f1) {
                            fail(fmt("classifier differs for feature %u", m.feature));
                        }
                    }
                } else {
                    lists.push_back(ranked);
                    naive_lists.push_back(expect);
                }
            }

            // Set algebra on the naive lists.
            const auto overlap = intersect_trilingual(lists);
            std::map<std::uint32_t, std::vector<std::size_t>> owners;
            for (std::size_t i = 0; i < 3; ++i) {
                for (auto f : naive_lists[i]) owners[f].push_back(i);
            }
            FeatureSet core;
            std::map<std::string, FeatureSet> specific;
            std::map<LanguagePair, FeatureSet> bilingual;
            for (const auto& [f, who] : owners) {
                if (who.size() == 3) core.insert(f);
                if (who.size() == 1) specific[shape.languages[who[0]]].insert(f);
                if (who.size() == 2) bilingual[{shape.languages[who[0]], shape.languages[who[1]]}].insert(f);
            }
            ++comparisons;
            if (overlap.core != core) fail("core differs");
            for (const auto& lang : shape.languages) {
                if (overlap.specific.at(lang) != specific[lang]) fail("specific set differs for " + lang);
            }
            for (const auto& [pair, set] : overlap.bilingual) {
                if (set != bilingual[pair]) fail("bilingual set differs for " + pair.first + "+" + pair.second);
            }

            for (std::size_t target = 0; target < 3; ++target) {
                const std::size_t k_source = 1 + gen() % k;
                const auto got = bilingual_exclusive(lists, shape.languages[target], k_source);
                std::vector<std::set<std::uint32_t>> prefixes;
                for (const auto& l : naive_lists) {
                    prefixes.emplace_back(l.begin(), l.begin() + static_cast<std::ptrdiff_t>(std::min(k_source, l.size())));
                }
                FeatureSet expect;
                const std::size_t a = (target + 1) % 3, b = (target + 2) % 3;
                for (auto f : prefixes[a]) {
                    if (prefixes[b].contains(f) && !prefixes[target].contains(f)) expect.insert(f);
                }
                ++comparisons;
                if (got.features != expect) fail("bilingual-exclusive differs for target " + shape.languages[target]);
            }
        }
    }
    return {first_failure.empty(), fmt("%zu dumps, %zu comparisons", dumps, comparisons) +
                                       (first_failure.empty() ? "" : "; first mismatch: " + first_failure)};
}

// --------------------------------------------------- permutation calibration

double ks_uniform(std::vector<double> ps) {
    std::sort(ps.begin(), ps.end());
    const double n = static_cast<double>(ps.size());
    double d = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        d = std::max(d, static_cast<double>(i + 1) / n - ps[i]);
        d = std::max(d, ps[i] - static_cast<double>(i) / n);
    }
    return d;
}

Outcome permutation_calibration(const Context&) {
    // Null: equal rates everywhere. With k at half the dictionary the overlap
    // count has a wide, nearly continuous null, so p-values are not lumped at 1.
    std::vector<double> null_p;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto c = SynthConfig::null_config();
        c.num_features = 4096;
        c.layers = {20};
        c.tokens = {300, 300};
        c.background_rate = 0.15;
        c.write_decoders = false;
        c.seed = 0x5EED0000 + seed;
        const auto out = generate(c);
        const auto store = ActivationStore::from_records(out.manifest, out.records);
        PermutationConfig pc;
        pc.layer = 20;
        pc.k = 2048;
        pc.n_permutations = 99;
        pc.seed = seed;
        null_p.push_back(permutation_test(store, pc).p_value);
    }
    const double ks = ks_uniform(null_p);

    std::size_t significant = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SynthConfig c;
        c.layers = {20};
        c.write_decoders = false;
        c.seed = 0xC0DE0000 + seed;
        const auto out = generate(c);
        const auto store = ActivationStore::from_records(out.manifest, out.records);
        PermutationConfig pc;
        pc.layer = 20;
        pc.k = 100;
        pc.n_permutations = 199;
        pc.seed = seed;
        if (permutation_test(store, pc).p_value < 0.01) ++significant;
    }
    return {ks < 0.12 && significant >= 95,
            fmt("null KS = %.4f over 200 seeds (< 0.12); planted p < 0.01 in %zu/100 seeds (>= 95)", ks, significant)};
}

// ------------------------------------------------------ planted-core recovery

Outcome planted_core_recovery(const Context&) {
    std::size_t good = 0;
    double worst_recall = 1.0, worst_precision = 1.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        SynthConfig c;
        c.write_decoders = false;
        c.seed = 0xFACE0000 + seed;
        const auto out = generate(c);
        const auto store = ActivationStore::from_records(out.manifest, out.records);
        bool ok = true;
        for (auto layer : c.layers) {
            std::vector<RankedFeatureList> lists;
            for (const auto& lang : c.languages) {
                lists.push_back(rank_top_k(
                    apply_filter(compute_feature_stats(store, Scope::language(lang), layer), ActivityFilter{}), 100));
            }
            const auto score = score_recovery(intersect_trilingual(lists), out.truth);
            worst_recall = std::min(worst_recall, score.recall);
            worst_precision = std::min(worst_precision, score.precision);
            ok = ok && score.true_positives >= 8 && score.precision >= 0.8;
        }
        if (ok) ++good;
    }
    return {good >= 95, fmt("recall >= 8/9 and precision >= 0.8 at both layers in %zu/100 seeds (>= 95); worst "
                            "recall %.3f, worst precision %.3f",
                            good, worst_recall, worst_precision)};
}

// ------------------------------------------------------------------ geometry

Outcome geometry(const Context&) {
    std::size_t clustered_ok = 0, isotropic_ok = 0, flagged = 0;
    double lo = 1e300, hi = -1e300, clustered_min = 1e300;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SynthConfig c;
        c.tokens = {10, 10};
        c.layers = {20};
        c.seed = 0x6E0 + seed;
        for (bool clustered : {true, false}) {
            c.decoder.clustered = clustered;
            const auto out = generate(c);
            const auto& core = out.truth.at(20).core;
            const std::vector<std::uint32_t> ids(core.begin(), core.end());
            IslandConfig ic;
            ic.seed = seed;
            const auto report = island_score(out.decoders.at(20), ids, ic);
            if (report.baseline_flagged) {
                ++flagged;
                continue;
            }
            const double s = report.island_score_baseline;
            if (clustered) {
                clustered_min = std::min(clustered_min, s);
                if (s > 3.0) ++clustered_ok;
            } else {
                lo = std::min(lo, s);
                hi = std::max(hi, s);
                if (s >= 0.3 && s <= 3.0) ++isotropic_ok;
            }
        }
    }

    double worst = 0.0;
    std::mt19937_64 gen(0xC051);
    std::normal_distribution<double> normal;
    for (int fixture = 0; fixture < 100; ++fixture) {
        const std::size_t rows = 2 + gen() % 30;
        DenseMatrix m(rows, 64);
        const double scale = std::pow(10.0, static_cast<double>(gen() % 7) - 3.0);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < 64; ++j) m(r, j) = static_cast<float>(scale * normal(gen));
        }
        std::vector<std::uint32_t> ids(rows);
        for (std::uint32_t i = 0; i < rows; ++i) ids[i] = i;
        const auto sim = pairwise_cosine(m, ids);
        for (std::size_t a = 0; a < rows; ++a) {
            for (std::size_t b = 0; b < rows; ++b) {
                const std::vector<double> x(m.row(a).begin(), m.row(a).end());
                const std::vector<double> y(m.row(b).begin(), m.row(b).end());
                const double oracle = static_cast<double>(testdata::quad_cosine(x, y));
                worst = std::max(worst, std::fabs(sim.values[a * rows + b] - oracle));
            }
        }
    }
    const bool pass = clustered_ok == 10 && isotropic_ok == 10 && flagged == 0 && worst <= 1e-6;
    return {pass, fmt("clustered > 3 in %zu/10 (min %.2f); isotropic in [0.3, 3] in %zu/10 (range %.3f..%.3f); "
                      "%zu flagged; cosine max error %.2e over 100 fixtures",
                      clustered_ok, clustered_min, isotropic_ok, lo, hi, flagged, worst)};
}

// -------------------------------------------------------- steering exactness

Outcome steering_exactness(const Context&) {
    double closed_form_error = 0.0;
    auto compare = [&](const SteeringVector& v, const std::vector<double>& expect) {
        for (std::size_t j = 0; j < expect.size(); ++j) {
            closed_form_error = std::max(closed_form_error, std::fabs(v.values[j] - expect[j]));
        }
    };
    constexpr std::size_t d = 8;
    DenseMatrix hand(4, d);
    const float row0[d] = {3, 0, 4, 0, 0, 0, 0, 0};
    for (std::size_t j = 0; j < d; ++j) hand(0, j) = row0[j];
    hand(1, 0) = 1;  // e0
    hand(2, 1) = 1;  // e1
    hand(3, 1) = 5;  // 5 e1
    const std::vector<std::uint32_t> singleton{0};
    compare(build_steering_vector(hand, singleton, 20), {0.6, 0, 0.8, 0, 0, 0, 0, 0});
    const double h = std::sqrt(2.0) / 2.0;
    const std::vector<std::uint32_t> pair{1, 2};
    compare(build_steering_vector(hand, pair, 20), {h, h, 0, 0, 0, 0, 0, 0});
    // Mean of e0 and 5 e1 is (1/2, 5/2), unit (1, 5) / sqrt(26).
    const std::vector<std::uint32_t> skewed{1, 3};
    compare(build_steering_vector(hand, skewed, 20), {1 / std::sqrt(26.0), 5 / std::sqrt(26.0), 0, 0, 0, 0, 0, 0});

    std::mt19937_64 gen(0x57EE);
    std::normal_distribution<double> normal;
    DenseMatrix decoder(512, 64);
    for (std::size_t r = 0; r < decoder.rows(); ++r) {
        const double scale = std::pow(10.0, static_cast<double>(r % 5) - 2.0);
        for (std::size_t j = 0; j < decoder.cols(); ++j) decoder(r, j) = static_cast<float>(scale * normal(gen));
    }
    double norm_error = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t size = 1 + gen() % 20;
        std::vector<std::uint32_t> ids;
        for (std::size_t i = 0; i < size; ++i) ids.push_back(static_cast<std::uint32_t>(gen() % decoder.rows()));
        const auto v = build_steering_vector(decoder, ids, 9);
        Quad sq = 0;
        for (double x : v.values) sq += Quad(x) * Quad(x);
        norm_error = std::max(norm_error, std::fabs(static_cast<double>(sqrt(sq)) - 1.0));
    }
    return {closed_form_error <= 1e-7 && norm_error <= 1e-6,
            fmt("closed-form max error %.2e (<= 1e-7); |norm - 1| max %.2e over 1000 sets (<= 1e-6)",
                closed_form_error, norm_error)};
}

// --------------------------------------------------------- pearson/inference

Outcome pearson_inference(const Context&) {
    std::mt19937_64 gen(0x9EA5);
    std::normal_distribution<double> normal;
    double r_error = 0.0;
    for (int fixture = 0; fixture < 100; ++fixture) {
        const std::size_t n = 3 + gen() % 200;
        const double slope = normal(gen);
        const double offset = 1e3 * normal(gen);
        std::vector<double> xs(n), ys(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Steering-style x on a coarse grid, y a noisy linear response.
            xs[i] = fixture % 2 == 0 ? 50.0 * static_cast<double>(static_cast<int>(gen() % 6) - 3) : normal(gen);
            ys[i] = offset + slope * xs[i] + normal(gen);
        }
        const auto got = pearson(xs, ys);
        if (got.degenerate) continue;
        r_error = std::max(r_error, std::fabs(got.r - static_cast<double>(testdata::quad_pearson(xs, ys))));
    }

    double p_error = 0.0;
    for (std::size_t n : {5, 30, 120}) {
        for (int fixture = 0; fixture < 30; ++fixture) {
            std::vector<double> xs(n), ys(n);
            const double coupling = 0.1 * fixture;
            for (std::size_t i = 0; i < n; ++i) {
                xs[i] = normal(gen);
                ys[i] = coupling * xs[i] + normal(gen);
            }
            const auto got = pearson(xs, ys);
            const Quad r = testdata::quad_pearson(xs, ys);
            const Quad df = Quad(n - 2);
            const Quad t = r * sqrt(df / (1 - r * r));
            const boost::math::students_t_distribution<Quad> dist{df};
            const Quad reference = 2 * boost::math::cdf(boost::math::complement(dist, abs(t)));
            p_error = std::max(p_error, std::fabs(got.p_value - static_cast<double>(reference)));
        }
    }

    const std::vector<double> en_random{0.080, -0.020, -0.013, -0.131, 0.174};
    const std::vector<double> de_random{-0.020, -0.023, -0.173, 0.002, 0.224};
    const auto en = ablation_contrast(-0.495, en_random);
    const auto de = ablation_contrast(-0.821, de_random);
    const bool t_ok = std::fabs(en.t - -13.17) <= 0.05 && std::fabs(de.t - -16.03) <= 0.05;
    return {r_error <= 1e-12 && p_error <= 1e-9 && t_ok,
            fmt("r max error %.2e (<= 1e-12); p max error %.2e for n in {5,30,120} (<= 1e-9); "
                "t en %.3f (-13.17), de %.3f (-16.03)",
                r_error, p_error, en.t, de.t)};
}

// ----------------------------------------------------- parallel determinism

std::string quote(const std::string& s) { return "'" + s + "'"; }

int run(const Context& ctx, const std::string& args) {
    const std::string command = quote(ctx.cli_path) + " " + args + " > /dev/null 2>&1";
    return std::system(command.c_str());
}

// Every file under `dir`, keyed by relative path.
std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files[std::filesystem::relative(entry.path(), dir).string()] = testdata::read_file(entry.path());
        }
    }
    return files;
}

Outcome parallel_determinism(const Context& ctx) {
    if (ctx.cli_path.empty()) return {false, "no --cli binary given"};
    testdata::TempDir tmp;
    SynthConfig c;
    c.num_features = 1024;
    c.hidden_dim = 128;
    c.tokens = {400, 400};
    c.language_specific.size = 10;
    const auto config = (tmp / "config.json").string();
    testdata::write_file(config, format_synth_config(c));

    const char* names[] = {"synth", "permtest", "geometry", "steer-random"};
    std::size_t identical = 0;
    std::string failures;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::string s = std::to_string(seed);
        // Downstream commands read one reference dump so only their own threading varies.
        const auto ref = tmp / ("ref" + s);
        if (run(ctx, "synth --config " + quote(config) + " --seed " + s + " --out-dir " + quote(ref.string())) != 0) {
            failures += " seed " + s + ": reference synth failed;";
            continue;
        }
        std::string features;
        for (auto f : load_truth(ref / "truth.json").at(20).core) {
            features += (features.empty() ? "" : ",") + std::to_string(f);
        }
        const auto decoder = quote((ref / "decoder_L20.saem").string());

        // Both thread counts write to the same paths, so recorded command lines match.
        const auto work = tmp / "work";
        std::array<std::map<std::string, std::string>, 4> outputs[2];
        bool ran = true;
        for (int side = 0; side < 2 && ran; ++side) {
            std::filesystem::remove_all(work);
            for (const char* sub : {"permtest", "geometry"}) std::filesystem::create_directories(work / sub);
            const std::string common = std::string(" --no-timestamp --threads ") + (side == 0 ? "1" : "8");
            ran = run(ctx, "synth --config " + quote(config) + " --seed " + s + " --out-dir " +
                               quote((work / "synth").string()) + common) == 0 &&
                  run(ctx, "permtest --records " + quote((ref / "records.jsonl").string()) + " --manifest " +
                               quote((ref / "manifest.json").string()) + " --layer 20 --layer 9 --n 49 --seed " + s +
                               " --out " + quote((work / "permtest/out.json").string()) + common) == 0 &&
                  run(ctx, "geometry --decoder " + decoder + " --features " + features +
                               " --random-n 200 --seed " + s + " --matrix-out " +
                               quote((work / "geometry/m.saem").string()) + " --pca-out " +
                               quote((work / "geometry/pca.json").string()) + " --out " +
                               quote((work / "geometry/out.json").string()) + common) == 0 &&
                  run(ctx, "steer-random --decoder " + decoder + " --n-sets 20 --set-size 9 --layer 20 --exclude " +
                               features + " --seed " + s + " --out-dir " + quote((work / "steer").string()) +
                               common) == 0;
            if (ran) {
                outputs[side] = {snapshot(work / "synth"), snapshot(work / "permtest"), snapshot(work / "geometry"),
                                 snapshot(work / "steer")};
            }
        }
        if (!ran) {
            failures += " seed " + s + ": a command failed;";
            continue;
        }
        for (std::size_t i = 0; i < 4; ++i) {
            if (!outputs[0][i].empty() && outputs[0][i] == outputs[1][i]) {
                ++identical;
            } else {
                failures += " seed " + s + " " + names[i] + " differs;";
            }
        }
    }
    return {identical == 40, fmt("%zu/40 subcommand outputs byte-identical at --threads 1 vs 8", identical) + failures};
}

// ------------------------------------------------------ eval report fixture

Outcome eval_report_fixture(const Context&) {
    // Zero-shot languages at the endpoint means 0.628 (alpha -150) and 0.231
    // (alpha 100); interior alphas interpolate. Per-language offsets cancel.
    const std::vector<std::string> languages{"de", "ja", "hi", "th", "ka", "am"};
    const double offsets[] = {0.06, -0.06, 0.03, -0.03, 0.01, -0.01};
    const std::map<double, double> means{{-150.0, 0.628}, {-100.0, 0.549}, {-50.0, 0.470},
                                         {0.0, 0.390},    {50.0, 0.311},   {100.0, 0.231}};
    std::vector<CompletionRecord> completions;
    for (std::size_t li = 0; li < languages.size(); ++li) {
        for (const auto& [alpha, mean] : means) {
            for (int prompt = 0; prompt < 2; ++prompt) {
                CompletionRecord c;
                c.prompt_id = languages[li] + std::to_string(prompt);
                c.language = languages[li];
                c.vector_id = "core";
                c.alpha = alpha;
                c.formality = mean + offsets[li] + (prompt == 0 ? 0.005 : -0.005);
                c.detected_language = languages[li];
                completions.push_back(c);
            }
        }
    }
    // Round trip through the on-disk format first.
    testdata::TempDir tmp;
    write_completions(tmp / "zero_shot.jsonl", completions);
    const auto report = eval_report(load_completions(tmp / "zero_shot.jsonl"));

    std::string detail;
    bool pass = true;
    for (const auto& a : report.per_alpha) {
        const double expect = means.at(a.alpha);
        const bool exact = a.mean_formality && std::fabs(*a.mean_formality - expect) <= 1e-12;
        pass = pass && exact;
        if (a.alpha == -150.0 || a.alpha == 100.0) detail += fmt("alpha %g mean %.6f; ", a.alpha, *a.mean_formality);
    }
    std::size_t negative = 0;
    for (const auto& g : report.groups) {
        if (!g.flagged && g.correlation.r < 0.0) ++negative;
    }
    std::vector<double> xs, ys;
    for (const auto& c : completions) {
        xs.push_back(c.alpha);
        ys.push_back(*c.formality);
    }
    const auto pooled = pearson(xs, ys);
    pass = pass && negative == languages.size() && pooled.r < 0.0 && report.preservation_rate == 1.0;
    detail += fmt("%zu/%zu groups with r < 0; pooled r %.3f", negative, languages.size(), pooled.r);
    return {pass, detail};
}

}  // namespace

const std::vector<Criterion>& all_criteria() {
    static const std::vector<Criterion> criteria{
        {"delta_fixtures", "Delta from fixtures built at the tabulated rates", 1s, delta_fixtures},
        {"brute_force_equivalence", "Scoring, classifier and set algebra against a naive oracle", 30s,
         brute_force_equivalence},
        {"permutation_calibration", "Null p-values uniform; planted core significant", 300s, permutation_calibration},
        {"planted_core_recovery", "Trilingual core recovers the planted features", 120s, planted_core_recovery},
        {"geometry", "Island scores on clustered and isotropic decoders; cosine accuracy", 0s, geometry},
        {"steering_exactness", "Steering vectors match closed forms and have unit norm", 0s, steering_exactness},
        {"pearson_inference", "Pearson r and p against references; ablation contrast t", 0s, pearson_inference},
        {"parallel_determinism", "CLI outputs identical across thread counts", 0s, parallel_determinism},
        {"eval_report_fixture", "Eval report reproduces per-alpha means and negative r", 0s, eval_report_fixture},
    };
    return criteria;
}

}  // namespace acceptance
