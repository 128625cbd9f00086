#include "registerscope/report_json.hpp"

#include <cmath>
#include <limits>

#include "registerscope/errors.hpp"
#include "registerscope/run_metadata.hpp"

namespace regscope {

using nlohmann::json;

namespace {

template <class T>
Json optional_json(const std::optional<T>& value) {
    return value ? Json(*value) : Json(nullptr);
}

double number_or_nan(const json& value) {
    return value.is_null() ? std::numeric_limits<double>::quiet_NaN() : value.get<double>();
}

std::optional<double> optional_number(const json& object, const char* key) {
    auto it = object.find(key);
    if (it == object.end() || it->is_null()) return std::nullopt;
    return it->get<double>();
}

std::string pair_name(const LanguagePair& pair) { return pair.first + "+" + pair.second; }

}  // namespace

Json to_json(const ActivityFilter& filter) {
    Json out;
    out["min_slang_rate"] = filter.min_slang_rate;
    out["min_total_fires"] = filter.min_total_fires;
    return out;
}

Json to_json(const ValidationReport& report) {
    Json out;
    out["clean"] = report.clean();
    out["total_records"] = report.total_records;
    out["counts"] = Json::array();
    for (const auto& c : report.counts) {
        Json entry;
        entry["language"] = c.key.language;
        entry["layer"] = c.key.layer;
        entry["label"] = to_string(c.key.label);
        entry["tokens"] = c.tokens;
        entry["sentences"] = c.sentences;
        entry["manifest"] = optional_json(c.manifest);
        out["counts"].push_back(std::move(entry));
    }
    out["violations"] = Json::array();
    for (const auto& v : report.violations) {
        Json entry;
        entry["record"] = v.record == Violation::kNoRecord ? Json(nullptr) : Json(v.record);
        entry["kind"] = v.kind;
        entry["detail"] = v.detail;
        out["violations"].push_back(std::move(entry));
    }
    return out;
}

Json to_json(const FeatureStats& s) {
    Json out;
    out["feature"] = s.feature;
    out["n_slang_active"] = s.n_slang_active;
    out["n_literal_active"] = s.n_literal_active;
    out["p_slang"] = s.p_slang;
    out["p_literal"] = s.p_literal;
    out["delta"] = s.delta;
    return out;
}

Json to_json(const FeatureTable& table) {
    Json out;
    out["language"] = table.language;
    out["layer"] = table.layer;
    out["n_slang"] = table.n_slang;
    out["n_literal"] = table.n_literal;
    out["stats"] = Json::array();
    for (const auto& s : table.stats) out["stats"].push_back(to_json(s));
    return out;
}

Json to_json(const TokenActivationProfile& p) {
    Json out;
    out["label"] = to_string(p.label);
    out["layer"] = p.layer;
    out["tokens"] = p.tokens;
    out["mean_active_feature_count"] = p.mean_active_feature_count;
    out["mean_total_activation"] = p.mean_total_activation;
    return out;
}

Json to_json(const ClassifierMetrics& m) {
    Json out;
    out["feature"] = m.feature;
    out["tp"] = m.tp;
    out["fp"] = m.fp;
    out["fn"] = m.fn;
    out["tn"] = m.tn;
    out["precision"] = m.precision;
    out["recall"] = m.recall;
    out["f1"] = m.f1;
    return out;
}

Json to_json(const RankedFeatureList& list) {
    Json out;
    out["language"] = list.language;
    out["layer"] = list.layer;
    out["k"] = list.k;
    out["filter"] = to_json(list.filter);
    out["entries"] = Json::array();
    for (const auto& e : list.entries) out["entries"].push_back(Json::array({e.feature, e.delta}));
    return out;
}

RankedFeatureList ranked_list_from_json(const json& doc) {
    RankedFeatureList list;
    try {
        list.language = doc.at("language").get<std::string>();
        list.layer = doc.at("layer").get<std::uint32_t>();
        list.k = doc.at("k").get<std::size_t>();
        const auto& filter = doc.at("filter");
        list.filter.min_slang_rate = filter.at("min_slang_rate").get<double>();
        list.filter.min_total_fires = filter.at("min_total_fires").get<std::uint64_t>();
        for (const auto& e : doc.at("entries")) {
            if (!e.is_array() || e.size() != 2) throw DataError("ranked entries must be [feature, delta] pairs");
            list.entries.push_back(RankedEntry{e[0].get<std::uint32_t>(), e[1].get<double>()});
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad ranked list: ") + e.what());
    }
    if (list.entries.size() > list.k) throw DataError("ranked list has more entries than k");
    return list;
}

Json to_json(const FeatureSet& set) { return Json(std::vector<std::uint32_t>(set.begin(), set.end())); }

Json to_json(const OverlapResult& result) {
    Json out;
    out["layer"] = result.layer;
    out["k"] = result.k;
    out["languages"] = result.languages;
    out["core"] = to_json(result.core);
    out["core_size"] = result.core.size();
    out["bilingual"] = Json::object();
    for (const auto& [pair, set] : result.bilingual) out["bilingual"][pair_name(pair)] = to_json(set);
    out["specific"] = Json::object();
    for (const auto& [lang, set] : result.specific) out["specific"][lang] = to_json(set);
    return out;
}

Json to_json(const BilingualExclusiveSet& set) {
    Json out;
    out["target_language"] = set.target_language;
    out["source_pair"] = Json::array({set.source_pair.first, set.source_pair.second});
    out["k_source"] = set.k_source;
    out["features"] = to_json(set.features);
    return out;
}

FeatureSet overlap_core_from_json(const json& doc) {
    try {
        const auto core = doc.at("core").get<std::vector<std::uint32_t>>();
        return FeatureSet(core.begin(), core.end());
    } catch (const json::exception& e) {
        throw DataError(std::string("bad overlap file: ") + e.what());
    }
}

Json to_json(const PermutationTestResult& r) {
    Json out;
    out["layer"] = r.layer;
    out["k"] = r.k;
    out["filter"] = to_json(r.filter);
    out["languages"] = r.languages;
    out["observed_overlap"] = r.observed_overlap;
    out["n_permutations"] = r.n_permutations;
    out["null_mean"] = r.null_mean;
    out["null_std"] = r.null_std;
    out["null_max"] = r.null_max;
    out["p_value"] = r.p_value;
    out["seed"] = r.seed;
    out["null_overlaps"] = r.null_overlaps;
    return out;
}

Json to_json(const SimilarityMatrix& matrix) {
    Json out;
    out["features"] = matrix.features;
    out["values"] = Json::array();
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        Json row = Json::array();
        for (std::size_t j = 0; j < matrix.size(); ++j) row.push_back(matrix.at(i, j));
        out["values"].push_back(std::move(row));
    }
    return out;
}

Json to_json(const GeometryReport& r) {
    Json out;
    out["feature_set"] = r.feature_set;
    out["random_set"] = r.random_set;
    out["within_mean"] = r.within_mean;
    out["cross_mean"] = r.cross_mean;
    out["random_within_mean"] = r.random_within_mean;
    out["island_score_cross"] = r.island_score_cross;
    out["island_score_baseline"] = r.island_score_baseline;
    out["cross_flagged"] = r.cross_flagged;
    out["baseline_flagged"] = r.baseline_flagged;
    out["random_n"] = r.random_n;
    out["epsilon"] = r.epsilon;
    out["seed"] = r.seed;
    return out;
}

Json to_json(const ProjectionCoords& p) {
    Json out;
    out["explained_variance"] = Json::array({p.explained_variance[0], p.explained_variance[1]});
    out["iterations"] = p.iterations;
    out["converged"] = p.converged;
    out["points"] = Json::array();
    for (std::size_t i = 0; i < p.features.size(); ++i) {
        out["points"].push_back(Json::array({p.features[i], p.coords[i][0], p.coords[i][1]}));
    }
    return out;
}

Json to_json(const VocabReadout& readout) {
    Json out;
    out["source"] = readout.source.descriptor();
    out["k"] = readout.k;
    out["excluded"] = readout.excluded;
    out["top"] = Json::array();
    for (const auto& e : readout.top) out["top"].push_back(Json::array({e.token_id, e.token, e.score}));
    return out;
}

Json to_json(const SteeringVector& v) {
    Json out;
    out["layer"] = v.layer;
    out["features"] = v.features;
    out["norm"] = v.norm;
    out["mean_norm"] = v.mean_norm;
    out["dimension"] = v.values.size();
    out["tool_version"] = std::string(tool_version());
    if (v.seed) out["seed"] = *v.seed;
    return out;
}

Json to_json(const CorrelationResult& c) {
    Json out;
    out["r"] = c.r;
    out["p_value"] = c.p_value;
    out["n"] = c.n;
    out["degenerate"] = c.degenerate;
    return out;
}

Json to_json(const AlphaSummary& s) {
    Json out;
    out["alpha"] = s.alpha;
    out["completions"] = s.completions;
    out["scored"] = s.scored;
    out["mean_formality"] = optional_json(s.mean_formality);
    out["detected"] = s.detected;
    out["preservation_rate"] = optional_json(s.preservation_rate);
    out["with_perplexity"] = s.with_perplexity;
    out["median_perplexity"] = optional_json(s.median_perplexity);
    return out;
}

Json to_json(const GroupReport& g) {
    Json out;
    out["language"] = g.language;
    out["vector_id"] = g.vector_id;
    out["target_language"] = g.target_language;
    out["completions"] = g.completions;
    out["dropped_formality"] = g.dropped_formality;
    out["correlation"] = to_json(g.correlation);
    out["flagged"] = g.flagged;
    out["detected"] = g.detected;
    out["preservation_rate"] = optional_json(g.preservation_rate);
    out["per_alpha"] = Json::array();
    for (const auto& s : g.per_alpha) out["per_alpha"].push_back(to_json(s));
    return out;
}

Json to_json(const SteeringEvalReport& r) {
    Json out;
    out["completions"] = r.completions;
    out["detected"] = r.detected;
    out["preservation_rate"] = optional_json(r.preservation_rate);
    out["per_alpha"] = Json::array();
    for (const auto& s : r.per_alpha) out["per_alpha"].push_back(to_json(s));
    out["groups"] = Json::array();
    for (const auto& g : r.groups) out["groups"].push_back(to_json(g));
    return out;
}

namespace {

AlphaSummary alpha_summary_from_json(const json& doc) {
    AlphaSummary s;
    s.alpha = doc.at("alpha").get<double>();
    s.completions = doc.at("completions").get<std::size_t>();
    s.scored = doc.at("scored").get<std::size_t>();
    s.mean_formality = optional_number(doc, "mean_formality");
    s.detected = doc.at("detected").get<std::size_t>();
    s.preservation_rate = optional_number(doc, "preservation_rate");
    s.with_perplexity = doc.at("with_perplexity").get<std::size_t>();
    s.median_perplexity = optional_number(doc, "median_perplexity");
    return s;
}

}  // namespace

SteeringEvalReport eval_report_from_json(const json& doc) {
    SteeringEvalReport r;
    try {
        r.completions = doc.at("completions").get<std::size_t>();
        r.detected = doc.at("detected").get<std::size_t>();
        r.preservation_rate = optional_number(doc, "preservation_rate");
        for (const auto& s : doc.at("per_alpha")) r.per_alpha.push_back(alpha_summary_from_json(s));
        for (const auto& g : doc.at("groups")) {
            GroupReport group;
            group.language = g.at("language").get<std::string>();
            group.vector_id = g.at("vector_id").get<std::string>();
            group.target_language = g.at("target_language").get<std::string>();
            group.completions = g.at("completions").get<std::size_t>();
            group.dropped_formality = g.at("dropped_formality").get<std::size_t>();
            const auto& c = g.at("correlation");
            group.correlation.r = number_or_nan(c.at("r"));
            group.correlation.p_value = number_or_nan(c.at("p_value"));
            group.correlation.n = c.at("n").get<std::size_t>();
            group.correlation.degenerate = c.at("degenerate").get<bool>();
            group.flagged = g.at("flagged").get<bool>();
            group.detected = g.at("detected").get<std::size_t>();
            group.preservation_rate = optional_number(g, "preservation_rate");
            for (const auto& s : g.at("per_alpha")) group.per_alpha.push_back(alpha_summary_from_json(s));
            r.groups.push_back(std::move(group));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad eval report: ") + e.what());
    }
    return r;
}

Json to_json(const ContrastResult& c) {
    Json out;
    out["core_abs_r"] = c.core_abs_r;
    out["random_abs_r"] = c.random_abs_r;
    out["mean_abs_random"] = c.mean_abs_random;
    out["sd_abs_random"] = c.sd_abs_random;
    out["n"] = c.n;
    out["t"] = std::isfinite(c.t) ? Json(c.t) : Json(c.t > 0 ? "inf" : "-inf");
    out["df"] = c.df;
    out["p_value"] = c.p_value;
    return out;
}

Json to_json(const RecoveryScore& s) {
    Json out;
    out["layer"] = s.layer;
    out["planted"] = s.planted;
    out["recovered"] = s.recovered;
    out["true_positives"] = s.true_positives;
    out["precision"] = s.precision;
    out["recall"] = s.recall;
    return out;
}

}  // namespace regscope
