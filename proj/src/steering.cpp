#include "registerscope/steering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <tuple>
#include <utility>

#include "json.hpp"
#include "registerscope/errors.hpp"
#include "registerscope/parallel.hpp"
#include "registerscope/rng.hpp"
#include "registerscope/sampling.hpp"
#include "registerscope/stats_math.hpp"

namespace regscope {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kAblationStream = 0xAB1A'7E00ULL;

double normalize_alpha(double alpha) noexcept { return alpha == 0.0 ? 0.0 : alpha; }

std::vector<std::uint32_t> distinct_sorted(std::span<const std::uint32_t> features) {
    std::vector<std::uint32_t> out(features.begin(), features.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

double sorted_mean(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return mean(values);
}

}  // namespace

std::vector<double> unit_mean_direction(const DenseMatrix& decoder, std::span<const std::uint32_t> features) {
    const auto members = distinct_sorted(features);
    if (members.empty()) throw DataError("feature set is empty");
    std::vector<double> sum(decoder.cols(), 0.0);
    double largest_row = 0.0;
    for (auto f : members) {
        if (f >= decoder.rows()) {
            throw DataError("feature " + std::to_string(f) + " outside decoder with " +
                            std::to_string(decoder.rows()) + " rows");
        }
        const auto row = decoder.row(f);
        double row_sq = 0.0;
        for (std::size_t c = 0; c < row.size(); ++c) {
            sum[c] += row[c];
            row_sq += static_cast<double>(row[c]) * row[c];
        }
        largest_row = std::max(largest_row, std::sqrt(row_sq));
    }
    double norm = 0.0;
    for (double& v : sum) {
        v /= static_cast<double>(members.size());
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (!(norm > 1e-12 * largest_row)) throw ComputeError("mean decoder vector is zero");
    for (double& v : sum) v /= norm;
    return sum;
}

SteeringVector build_steering_vector(const DenseMatrix& decoder, std::span<const std::uint32_t> features,
                                     std::uint32_t layer) {
    SteeringVector out;
    out.layer = layer;
    out.features = distinct_sorted(features);
    out.values = unit_mean_direction(decoder, out.features);

    std::vector<double> mean_vec(decoder.cols(), 0.0);
    for (auto f : out.features) {
        const auto row = decoder.row(f);
        for (std::size_t c = 0; c < row.size(); ++c) mean_vec[c] += row[c];
    }
    double mean_sq = 0.0;
    for (double v : mean_vec) {
        const double m = v / static_cast<double>(out.features.size());
        mean_sq += m * m;
    }
    out.mean_norm = std::sqrt(mean_sq);

    double norm = 0.0;
    for (double v : out.values) norm += v * v;
    out.norm = std::sqrt(norm);
    return out;
}

std::vector<SteeringVector> random_ablation_vectors(const DenseMatrix& decoder, std::size_t n_sets,
                                                    std::size_t set_size, std::uint64_t seed,
                                                    const std::set<std::uint32_t>& exclusion, std::uint32_t layer,
                                                    unsigned threads) {
    if (n_sets == 0) throw DataError("n_sets must be at least 1");
    if (set_size == 0) throw DataError("set_size must be at least 1");
    std::size_t excluded = 0;
    for (auto f : exclusion) excluded += f < decoder.rows() ? 1 : 0;
    const std::size_t eligible = decoder.rows() - excluded;
    if (set_size > eligible) {
        throw DataError("set_size " + std::to_string(set_size) + " exceeds the " + std::to_string(eligible) +
                        " features outside the exclusion set");
    }

    std::vector<SteeringVector> out(n_sets);
    parallel_for(n_sets, threads, [&](std::size_t i) {
        StreamRng rng(seed, kAblationStream, i);
        const auto members =
            sample_without_replacement(static_cast<std::uint32_t>(decoder.rows()), set_size, exclusion, rng);
        out[i] = build_steering_vector(decoder, members, layer);
        out[i].seed = seed;
    });
    return out;
}

DenseMatrix steering_matrix(const SteeringVector& vector) {
    const std::size_t d = vector.values.size();
    return DenseMatrix(1, d, std::vector<float>(vector.values.begin(), vector.values.end()));
}

namespace {

// r of the pairs in canonical (sorted) order, so the listing order of the
// pairs never matters. NaN when either coordinate is constant.
double canonical_r(std::span<const double> xs, std::span<const double> ys, double y_sign) {
    const std::size_t n = xs.size();
    std::vector<std::pair<double, double>> pairs(n);
    for (std::size_t i = 0; i < n; ++i) pairs[i] = {xs[i], y_sign * ys[i]};
    std::sort(pairs.begin(), pairs.end());

    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) std::tie(x[i], y[i]) = pairs[i];
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace

CorrelationResult pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw DataError("pearson inputs differ in length (" + std::to_string(xs.size()) + " vs " +
                        std::to_string(ys.size()) + ")");
    }
    CorrelationResult result;
    result.n = xs.size();
    result.r = std::numeric_limits<double>::quiet_NaN();
    result.p_value = std::numeric_limits<double>::quiet_NaN();
    if (result.n < 3) {
        result.degenerate = true;
        return result;
    }

    // Averaging r(x, y) and -r(x, -y) makes negating ys negate r bit-for-bit,
    // which sorting alone cannot guarantee when x has ties.
    const double plus = canonical_r(xs, ys, 1.0);
    const double minus = canonical_r(xs, ys, -1.0);
    if (std::isnan(plus) || std::isnan(minus)) {
        result.degenerate = true;
        return result;
    }
    result.r = std::clamp(0.5 * (plus - minus), -1.0, 1.0);
    const double df = static_cast<double>(result.n - 2);
    // With t^2 = r^2 df / (1 - r^2), the beta argument df / (df + t^2) is 1 - r^2.
    const double one_minus_r2 = (1.0 - result.r) * (1.0 + result.r);
    result.p_value = one_minus_r2 <= 0.0 ? 0.0 : regularized_incomplete_beta(df / 2.0, 0.5, one_minus_r2);
    return result;
}

CompletionRecord parse_completion(std::string_view line) {
    json doc;
    try {
        doc = json::parse(line);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed JSON: ") + e.what());
    }
    if (!doc.is_object()) throw DataError("completion is not a JSON object");

    auto optional_number = [&](const char* key) -> std::optional<double> {
        auto it = doc.find(key);
        if (it == doc.end() || it->is_null()) return std::nullopt;
        if (!it->is_number()) throw DataError(std::string(key) + " must be a number or null");
        const double v = it->get<double>();
        if (!std::isfinite(v)) throw DataError(std::string(key) + " must be finite");
        return v;
    };

    CompletionRecord record;
    try {
        record.prompt_id = doc.at("prompt_id").is_string() ? doc.at("prompt_id").get<std::string>()
                                                           : doc.at("prompt_id").dump();
        record.language = doc.at("language").get<std::string>();
        if (!doc.at("alpha").is_number()) throw DataError("alpha must be a number");
        record.alpha = normalize_alpha(doc.at("alpha").get<double>());
        if (!std::isfinite(record.alpha)) throw DataError("alpha must be finite");
        if (auto it = doc.find("text"); it != doc.end() && !it->is_null()) record.text = it->get<std::string>();
        record.vector_id = doc.at("vector_id").get<std::string>();
        if (auto it = doc.find("detected_language"); it != doc.end() && !it->is_null()) {
            record.detected_language = it->get<std::string>();
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad completion field: ") + e.what());
    }
    if (auto f = optional_number("formality")) record.formality = std::clamp(*f, 0.0, 1.0);
    if (auto p = optional_number("perplexity")) {
        if (!(*p > 0.0)) throw DataError("perplexity must be positive");
        record.perplexity = *p;
    }
    return record;
}

std::string format_completion(const CompletionRecord& record) {
    ordered_json doc;
    doc["prompt_id"] = record.prompt_id;
    doc["language"] = record.language;
    doc["alpha"] = record.alpha;
    doc["text"] = record.text;
    doc["formality"] = record.formality ? json(*record.formality) : json(nullptr);
    doc["perplexity"] = record.perplexity ? json(*record.perplexity) : json(nullptr);
    doc["detected_language"] = record.detected_language ? json(*record.detected_language) : json(nullptr);
    doc["vector_id"] = record.vector_id;
    return doc.dump();
}

std::vector<CompletionRecord> load_completions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<CompletionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse_completion(line));
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_completions(const std::filesystem::path& path, std::span<const CompletionRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : records) out << format_completion(r) << '\n';
    if (!out) throw DataError("write failed for " + path.string());
}

namespace {

struct Tally {
    std::vector<double> formality;
    std::vector<double> perplexity;
    std::size_t completions = 0;
    std::size_t detected = 0;
    std::size_t preserved = 0;

    void add(const CompletionRecord& c, const std::string& target) {
        ++completions;
        if (c.formality) formality.push_back(*c.formality);
        if (c.perplexity) perplexity.push_back(*c.perplexity);
        if (c.detected_language) {
            ++detected;
            if (*c.detected_language == target) ++preserved;
        }
    }

    std::optional<double> preservation() const {
        if (detected == 0) return std::nullopt;
        return static_cast<double>(preserved) / static_cast<double>(detected);
    }

    AlphaSummary summary(double alpha) const {
        AlphaSummary s;
        s.alpha = alpha;
        s.completions = completions;
        s.scored = formality.size();
        if (!formality.empty()) s.mean_formality = sorted_mean(formality);
        s.detected = detected;
        s.preservation_rate = preservation();
        s.with_perplexity = perplexity.size();
        if (!perplexity.empty()) s.median_perplexity = median(perplexity);
        return s;
    }
};

std::vector<AlphaSummary> summarize_alphas(const std::map<double, Tally>& by_alpha) {
    std::vector<AlphaSummary> out;
    out.reserve(by_alpha.size());
    for (const auto& [alpha, tally] : by_alpha) out.push_back(tally.summary(alpha));
    return out;
}

}  // namespace

SteeringEvalReport eval_report(std::span<const CompletionRecord> completions,
                               const std::map<std::string, std::string>& target_language) {
    auto target_of = [&](const std::string& language) -> const std::string& {
        auto it = target_language.find(language);
        return it == target_language.end() ? language : it->second;
    };

    std::map<std::pair<std::string, std::string>, std::vector<const CompletionRecord*>> groups;
    for (const auto& c : completions) groups[{c.language, c.vector_id}].push_back(&c);

    SteeringEvalReport report;
    std::map<double, Tally> pooled_by_alpha;
    Tally pooled;

    for (const auto& [key, members] : groups) {
        GroupReport g;
        g.language = key.first;
        g.vector_id = key.second;
        g.target_language = target_of(g.language);

        Tally all;
        std::map<double, Tally> by_alpha;
        std::vector<double> xs, ys;
        for (const auto* c : members) {
            const double alpha = normalize_alpha(c->alpha);
            all.add(*c, g.target_language);
            by_alpha[alpha].add(*c, g.target_language);
            pooled.add(*c, g.target_language);
            pooled_by_alpha[alpha].add(*c, g.target_language);
            if (c->formality) {
                xs.push_back(alpha);
                ys.push_back(*c->formality);
            }
        }
        g.completions = all.completions;
        g.dropped_formality = all.completions - all.formality.size();
        g.correlation = pearson(xs, ys);
        g.flagged = xs.size() < kMinScoredCompletions || g.correlation.degenerate;
        g.detected = all.detected;
        g.preservation_rate = all.preservation();
        g.per_alpha = summarize_alphas(by_alpha);
        report.groups.push_back(std::move(g));
    }

    report.per_alpha = summarize_alphas(pooled_by_alpha);
    report.completions = pooled.completions;
    report.detected = pooled.detected;
    report.preservation_rate = pooled.preservation();
    return report;
}

ContrastResult ablation_contrast(double core_r, std::span<const double> random_r) {
    if (random_r.size() < 2) throw DataError("ablation contrast needs at least 2 random correlations");
    ContrastResult out;
    out.core_abs_r = std::fabs(core_r);
    out.random_abs_r.reserve(random_r.size());
    for (double r : random_r) {
        if (!std::isfinite(r)) throw DataError("random correlation is not finite");
        out.random_abs_r.push_back(std::fabs(r));
    }
    out.n = out.random_abs_r.size();
    out.df = static_cast<double>(out.n - 1);
    std::vector<double> sorted = out.random_abs_r;
    std::sort(sorted.begin(), sorted.end());
    out.mean_abs_random = mean(sorted);
    out.sd_abs_random = sample_std(sorted);

    const double diff = out.mean_abs_random - out.core_abs_r;
    if (out.sd_abs_random > 0.0) {
        out.t = diff / (out.sd_abs_random / std::sqrt(static_cast<double>(out.n)));
        out.p_value = student_t_two_sided(out.t, out.df);
    } else if (diff == 0.0) {
        out.t = 0.0;
        out.p_value = 1.0;
    } else {
        out.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
        out.p_value = 0.0;
    }
    return out;
}

ContrastResult ablation_contrast(const SteeringEvalReport& core, std::span<const SteeringEvalReport> random,
                                 std::string_view language) {
    const GroupReport* core_group = nullptr;
    for (const auto& g : core.groups) {
        if (g.language != language || g.flagged) continue;
        if (core_group) throw DataError("core report has several usable groups for language " + std::string(language));
        core_group = &g;
    }
    if (!core_group) throw DataError("core report has no usable group for language " + std::string(language));

    std::vector<double> random_r;
    for (const auto& report : random) {
        for (const auto& g : report.groups) {
            if (g.language == language && !g.flagged) random_r.push_back(g.correlation.r);
        }
    }
    return ablation_contrast(core_group->correlation.r, random_r);
}

}  // namespace regscope
