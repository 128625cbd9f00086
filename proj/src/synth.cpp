#include "registerscope/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "registerscope/errors.hpp"
#include "registerscope/parallel.hpp"
#include "registerscope/rng.hpp"

namespace regscope {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kPlantStream = 0x5EED'0001ULL;
constexpr std::uint64_t kDirectionStream = 0x5EED'0002ULL;
constexpr std::uint64_t kDecoderStream = 0x5EED'1000ULL;
constexpr std::uint64_t kTokenStream = 0x5EED'2000'0000ULL;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

bool valid_probability(double p) { return p >= 0.0 && p <= 1.0; }

std::string pair_key(const LanguagePair& pair) { return pair.first + "+" + pair.second; }

LanguagePair parse_pair_key(const std::string& key) {
    const auto plus = key.find('+');
    if (plus == std::string::npos) throw DataError("bilingual key '" + key + "' is not of the form a+b");
    return {key.substr(0, plus), key.substr(plus + 1)};
}

std::vector<LanguagePair> language_pairs(const std::vector<std::string>& languages) {
    std::vector<LanguagePair> pairs;
    for (std::size_t i = 0; i < languages.size(); ++i) {
        for (std::size_t j = i + 1; j < languages.size(); ++j) pairs.emplace_back(languages[i], languages[j]);
    }
    return pairs;
}

void check_keys(const json& object, std::initializer_list<std::string_view> allowed, std::string_view where) {
    if (!object.is_object()) throw DataError(std::string(where) + " must be a JSON object");
    for (const auto& item : object.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw DataError("unknown key '" + item.key() + "' in " + std::string(where));
        }
    }
}

template <class T>
void read_optional(const json& object, const char* key, T& target) {
    if (auto it = object.find(key); it != object.end()) target = it->get<T>();
}

PlantedRates parse_rates(const json& object, std::string_view where) {
    check_keys(object, {"size", "p_slang", "p_literal"}, where);
    PlantedRates rates;
    read_optional(object, "size", rates.size);
    read_optional(object, "p_slang", rates.p_slang);
    read_optional(object, "p_literal", rates.p_literal);
    return rates;
}

ordered_json rates_json(const PlantedRates& rates) {
    ordered_json out;
    out["size"] = rates.size;
    out["p_slang"] = rates.p_slang;
    out["p_literal"] = rates.p_literal;
    return out;
}

ordered_json decoder_json(const DecoderGeometry& g) {
    ordered_json out;
    out["clustered"] = g.clustered;
    out["core_noise"] = g.core_noise;
    out["shared_cosine"] = g.shared_cosine;
    return out;
}

DecoderGeometry parse_decoder(const json& object) {
    check_keys(object, {"clustered", "core_noise", "shared_cosine"}, "decoder");
    DecoderGeometry g;
    read_optional(object, "clustered", g.clustered);
    read_optional(object, "core_noise", g.core_noise);
    read_optional(object, "shared_cosine", g.shared_cosine);
    return g;
}

std::vector<double> random_unit(StreamRng& rng, std::size_t d) {
    std::vector<double> v(d);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (double& x : v) {
            x = rng.normal();
            norm += x * x;
        }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

void normalize_in_place(std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    }
}

struct PlantedFeature {
    std::uint32_t feature;
    double p_slang;
    double p_literal;
};

// Per (language, layer): the features whose rates differ from background.
struct RatePlan {
    std::vector<PlantedFeature> planted;  // ascending feature
    std::vector<bool> special;            // size F
};

float draw_value(const ActivationLaw& law, StreamRng& rng) {
    double v = law.kind == ActivationLaw::Kind::constant ? law.value : law.low + (law.high - law.low) * rng.uniform();
    auto f = static_cast<float>(v);
    if (!(f > 0.0f)) f = std::numeric_limits<float>::denorm_min();
    return f;
}

}  // namespace

TokenCounts SynthConfig::counts(const std::string& language, std::uint32_t layer) const {
    auto it = token_overrides.find({language, layer});
    return it == token_overrides.end() ? tokens : it->second;
}

void SynthConfig::validate() const {
    if (num_features == 0) throw DataError("num_features must be positive");
    if (hidden_dim < 2) throw DataError("hidden_dim must be at least 2");
    if (languages.empty()) throw DataError("languages must not be empty");
    if (layers.empty()) throw DataError("layers must not be empty");
    std::set<std::string> seen_languages;
    for (const auto& l : languages) {
        if (l.size() != 2 || !std::islower(static_cast<unsigned char>(l[0])) ||
            !std::islower(static_cast<unsigned char>(l[1]))) {
            throw DataError("language '" + l + "' is not a lowercase two-letter code");
        }
        if (!seen_languages.insert(l).second) throw DataError("duplicate language " + l);
    }
    std::set<std::uint32_t> seen_layers(layers.begin(), layers.end());
    if (seen_layers.size() != layers.size()) throw DataError("duplicate layer");
    for (const auto& [key, _] : token_overrides) {
        if (!seen_languages.contains(key.first) || !seen_layers.contains(key.second)) {
            throw DataError("token override for unknown language/layer " + key.first + "/" +
                            std::to_string(key.second));
        }
    }
    if (!valid_probability(background_rate)) throw DataError("background_rate must lie in [0, 1]");
    for (const auto& [name, rates] : {std::pair<const char*, const PlantedRates&>{"core", core},
                                      {"language_specific", language_specific},
                                      {"bilingual", bilingual}}) {
        if (!valid_probability(rates.p_slang) || !valid_probability(rates.p_literal)) {
            throw DataError(std::string(name) + " rates must lie in [0, 1]");
        }
        if (rates.size > 0 && !(rates.p_slang > rates.p_literal)) {
            throw DataError(std::string(name) + " p_slang must exceed p_literal");
        }
    }
    if (bilingual.size > 0 && languages.size() < 2) throw DataError("bilingual sets need at least 2 languages");
    const std::size_t pairs = languages.size() * (languages.size() - 1) / 2;
    const std::size_t per_layer = core.size + languages.size() * language_specific.size + pairs * bilingual.size;
    if (per_layer * layers.size() > num_features) {
        throw DataError("planted features (" + std::to_string(per_layer * layers.size()) + ") exceed num_features");
    }
    if (activation.kind == ActivationLaw::Kind::constant) {
        if (!(activation.value > 0.0) || !std::isfinite(activation.value)) {
            throw DataError("constant activation value must be positive");
        }
    } else if (!(activation.low > 0.0) || !(activation.high > activation.low) || !std::isfinite(activation.high)) {
        throw DataError("uniform activation law needs 0 < low < high");
    }
    if (!(decoder.core_noise >= 0.0) || !std::isfinite(decoder.core_noise)) {
        throw DataError("decoder core_noise must be non-negative");
    }
    if (!(decoder.shared_cosine >= 0.0 && decoder.shared_cosine < 1.0)) {
        throw DataError("decoder shared_cosine must lie in [0, 1)");
    }
}

SynthConfig SynthConfig::null_config() {
    SynthConfig config;
    config.core.size = 0;
    config.language_specific.size = 0;
    config.bilingual.size = 0;
    return config;
}

SynthConfig parse_synth_config(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("malformed synth config: ") + e.what());
    }
    SynthConfig config;
    try {
        check_keys(doc,
                   {"num_features", "hidden_dim", "languages", "layers", "tokens", "token_overrides",
                    "background_rate", "core", "language_specific", "bilingual", "activation", "decoder",
                    "write_decoders", "seed"},
                   "synth config");
        read_optional(doc, "num_features", config.num_features);
        read_optional(doc, "hidden_dim", config.hidden_dim);
        read_optional(doc, "languages", config.languages);
        read_optional(doc, "layers", config.layers);
        if (auto it = doc.find("tokens"); it != doc.end()) {
            check_keys(*it, {"slang", "literal"}, "tokens");
            read_optional(*it, "slang", config.tokens.n_slang);
            read_optional(*it, "literal", config.tokens.n_literal);
        }
        if (auto it = doc.find("token_overrides"); it != doc.end()) {
            for (const auto& o : *it) {
                check_keys(o, {"language", "layer", "slang", "literal"}, "token_overrides entry");
                TokenCounts counts = config.tokens;
                read_optional(o, "slang", counts.n_slang);
                read_optional(o, "literal", counts.n_literal);
                config.token_overrides[{o.at("language").get<std::string>(), o.at("layer").get<std::uint32_t>()}] =
                    counts;
            }
        }
        read_optional(doc, "background_rate", config.background_rate);
        if (auto it = doc.find("core"); it != doc.end()) config.core = parse_rates(*it, "core");
        if (auto it = doc.find("language_specific"); it != doc.end()) {
            config.language_specific = parse_rates(*it, "language_specific");
        }
        if (auto it = doc.find("bilingual"); it != doc.end()) config.bilingual = parse_rates(*it, "bilingual");
        if (auto it = doc.find("activation"); it != doc.end()) {
            check_keys(*it, {"law", "value", "low", "high"}, "activation");
            const auto law = it->value("law", std::string("constant"));
            if (law == "constant") {
                config.activation.kind = ActivationLaw::Kind::constant;
            } else if (law == "uniform") {
                config.activation.kind = ActivationLaw::Kind::uniform;
            } else {
                throw DataError("activation law must be 'constant' or 'uniform'");
            }
            read_optional(*it, "value", config.activation.value);
            read_optional(*it, "low", config.activation.low);
            read_optional(*it, "high", config.activation.high);
        }
        if (auto it = doc.find("decoder"); it != doc.end()) config.decoder = parse_decoder(*it);
        read_optional(doc, "write_decoders", config.write_decoders);
        read_optional(doc, "seed", config.seed);
    } catch (const json::exception& e) {
        throw DataError(std::string("bad synth config field: ") + e.what());
    }
    config.validate();
    return config;
}

SynthConfig load_synth_config(const std::filesystem::path& path) {
    try {
        return parse_synth_config(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::string format_synth_config(const SynthConfig& config) {
    ordered_json doc;
    doc["num_features"] = config.num_features;
    doc["hidden_dim"] = config.hidden_dim;
    doc["languages"] = config.languages;
    doc["layers"] = config.layers;
    doc["tokens"] = {{"slang", config.tokens.n_slang}, {"literal", config.tokens.n_literal}};
    doc["token_overrides"] = ordered_json::array();
    for (const auto& [key, counts] : config.token_overrides) {
        ordered_json o;
        o["language"] = key.first;
        o["layer"] = key.second;
        o["slang"] = counts.n_slang;
        o["literal"] = counts.n_literal;
        doc["token_overrides"].push_back(o);
    }
    doc["background_rate"] = config.background_rate;
    doc["core"] = rates_json(config.core);
    doc["language_specific"] = rates_json(config.language_specific);
    doc["bilingual"] = rates_json(config.bilingual);
    ordered_json law;
    if (config.activation.kind == ActivationLaw::Kind::constant) {
        law["law"] = "constant";
        law["value"] = config.activation.value;
    } else {
        law["law"] = "uniform";
        law["low"] = config.activation.low;
        law["high"] = config.activation.high;
    }
    doc["activation"] = law;
    doc["decoder"] = decoder_json(config.decoder);
    doc["write_decoders"] = config.write_decoders;
    doc["seed"] = config.seed;
    return doc.dump(2);
}

const LayerTruth& GroundTruth::at(std::uint32_t layer) const {
    for (const auto& l : layers) {
        if (l.layer == layer) return l;
    }
    throw DataError("ground truth has no layer " + std::to_string(layer));
}

std::string format_truth(const GroundTruth& truth) {
    ordered_json doc;
    doc["seed"] = truth.seed;
    doc["background_rate"] = truth.background_rate;
    doc["core_rates"] = rates_json(truth.core);
    doc["language_specific_rates"] = rates_json(truth.language_specific);
    doc["bilingual_rates"] = rates_json(truth.bilingual);
    doc["decoder"] = decoder_json(truth.decoder);
    doc["layers"] = ordered_json::array();
    for (const auto& l : truth.layers) {
        ordered_json entry;
        entry["layer"] = l.layer;
        entry["core"] = std::vector<std::uint32_t>(l.core.begin(), l.core.end());
        entry["language_specific"] = ordered_json::object();
        for (const auto& [lang, set] : l.specific) {
            entry["language_specific"][lang] = std::vector<std::uint32_t>(set.begin(), set.end());
        }
        entry["bilingual"] = ordered_json::object();
        for (const auto& [pair, set] : l.bilingual) {
            entry["bilingual"][pair_key(pair)] = std::vector<std::uint32_t>(set.begin(), set.end());
        }
        doc["layers"].push_back(entry);
    }
    return doc.dump(2);
}

GroundTruth parse_truth(std::string_view text) {
    GroundTruth truth;
    try {
        const json doc = json::parse(text);
        truth.seed = doc.at("seed").get<std::uint64_t>();
        truth.background_rate = doc.at("background_rate").get<double>();
        truth.core = parse_rates(doc.at("core_rates"), "core_rates");
        truth.language_specific = parse_rates(doc.at("language_specific_rates"), "language_specific_rates");
        truth.bilingual = parse_rates(doc.at("bilingual_rates"), "bilingual_rates");
        truth.decoder = parse_decoder(doc.at("decoder"));
        for (const auto& entry : doc.at("layers")) {
            LayerTruth l;
            l.layer = entry.at("layer").get<std::uint32_t>();
            for (auto f : entry.at("core").get<std::vector<std::uint32_t>>()) l.core.insert(f);
            for (const auto& item : entry.at("language_specific").items()) {
                for (auto f : item.value().get<std::vector<std::uint32_t>>()) l.specific[item.key()].insert(f);
            }
            for (const auto& item : entry.at("bilingual").items()) {
                auto& set = l.bilingual[parse_pair_key(item.key())];
                for (auto f : item.value().get<std::vector<std::uint32_t>>()) set.insert(f);
            }
            truth.layers.push_back(std::move(l));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad truth file: ") + e.what());
    }
    return truth;
}

GroundTruth load_truth(const std::filesystem::path& path) {
    try {
        return parse_truth(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

SynthOutput generate(const SynthConfig& config, unsigned threads) {
    config.validate();
    const std::uint32_t F = config.num_features;
    const std::size_t d = config.hidden_dim;
    const auto pairs = language_pairs(config.languages);

    SynthOutput out;
    out.truth.seed = config.seed;
    out.truth.decoder = config.decoder;
    out.truth.core = config.core;
    out.truth.language_specific = config.language_specific;
    out.truth.bilingual = config.bilingual;
    out.truth.background_rate = config.background_rate;

    // Planted features: consecutive slices of one seeded permutation of [0, F).
    std::vector<std::uint32_t> permutation(F);
    for (std::uint32_t i = 0; i < F; ++i) permutation[i] = i;
    StreamRng plant_rng(config.seed, kPlantStream);
    fisher_yates(std::span<std::uint32_t>(permutation), plant_rng);
    std::size_t cursor = 0;
    auto take = [&](std::size_t n) {
        FeatureSet set(permutation.begin() + static_cast<std::ptrdiff_t>(cursor),
                       permutation.begin() + static_cast<std::ptrdiff_t>(cursor + n));
        cursor += n;
        return set;
    };
    for (auto layer : config.layers) {
        LayerTruth l;
        l.layer = layer;
        l.core = take(config.core.size);
        for (const auto& lang : config.languages) l.specific[lang] = take(config.language_specific.size);
        for (const auto& pair : pairs) l.bilingual[pair] = take(config.bilingual.size);
        out.truth.layers.push_back(std::move(l));
    }

    // Rate plans per (language slot, layer slot).
    const std::size_t n_lang = config.languages.size();
    const std::size_t n_layer = config.layers.size();
    std::vector<RatePlan> plans(n_lang * n_layer);
    for (std::size_t li = 0; li < n_lang; ++li) {
        const auto& lang = config.languages[li];
        for (std::size_t yi = 0; yi < n_layer; ++yi) {
            const auto& truth = out.truth.layers[yi];
            auto& plan = plans[li * n_layer + yi];
            plan.special.assign(F, false);
            auto add = [&](const FeatureSet& set, const PlantedRates& rates) {
                for (auto f : set) {
                    plan.planted.push_back({f, rates.p_slang, rates.p_literal});
                    plan.special[f] = true;
                }
            };
            add(truth.core, config.core);
            add(truth.specific.at(lang), config.language_specific);
            for (const auto& [pair, set] : truth.bilingual) {
                if (pair.first == lang || pair.second == lang) add(set, config.bilingual);
            }
            std::sort(plan.planted.begin(), plan.planted.end(),
                      [](const PlantedFeature& a, const PlantedFeature& b) { return a.feature < b.feature; });
        }
    }

    // Manifest and the flat token index.
    out.manifest.schema_version = 1;
    out.manifest.num_features = F;
    out.manifest.hidden_dim = config.hidden_dim;
    out.manifest.languages = config.languages;
    out.manifest.layers = config.layers;
    struct Group {
        std::size_t lang_slot;
        std::size_t layer_slot;
        Label label;
        std::uint64_t count;
        std::size_t first_record;
    };
    std::vector<Group> groups;
    std::size_t total = 0;
    for (std::size_t li = 0; li < n_lang; ++li) {
        for (std::size_t yi = 0; yi < n_layer; ++yi) {
            const auto counts = config.counts(config.languages[li], config.layers[yi]);
            for (Label label : {Label::slang, Label::literal}) {
                const auto n = label == Label::slang ? counts.n_slang : counts.n_literal;
                out.manifest.counts[CountKey{config.languages[li], config.layers[yi], label}] = n;
                groups.push_back({li, yi, label, n, total});
                total += n;
            }
        }
    }
    out.records.resize(total);

    const double background = config.background_rate;
    const double log_miss = background < 1.0 ? std::log1p(-background) : 0.0;

    std::vector<std::size_t> group_of(total);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::uint64_t i = 0; i < groups[g].count; ++i) group_of[groups[g].first_record + i] = g;
    }

    parallel_for(total, threads, [&](std::size_t r) {
        const auto& group = groups[group_of[r]];
        const std::uint64_t i = r - group.first_record;
        const auto& plan = plans[group.lang_slot * n_layer + group.layer_slot];
        const bool slang = group.label == Label::slang;
        StreamRng rng(config.seed, kTokenStream + group_of[r], i);

        std::vector<std::uint32_t> active;
        if (background >= 1.0) {
            for (std::uint32_t f = 0; f < F; ++f) {
                if (!plan.special[f]) active.push_back(f);
            }
        } else if (background > 0.0) {
            // Geometric gaps between successive background firings.
            double pos = -1.0;
            while (true) {
                pos += std::floor(std::log(rng.uniform_positive()) / log_miss) + 1.0;
                if (pos >= static_cast<double>(F)) break;
                const auto f = static_cast<std::uint32_t>(pos);
                if (!plan.special[f]) active.push_back(f);
            }
        }
        const std::size_t background_end = active.size();
        for (const auto& p : plan.planted) {
            if (rng.uniform() < (slang ? p.p_slang : p.p_literal)) active.push_back(p.feature);
        }
        std::inplace_merge(active.begin(), active.begin() + static_cast<std::ptrdiff_t>(background_end),
                           active.end());

        auto& record = out.records[r];
        const auto& lang = config.languages[group.lang_slot];
        record.sentence_id = lang + (slang ? "-s" : "-l") + std::to_string(i);
        record.language = lang;
        record.layer = config.layers[group.layer_slot];
        record.label = group.label;
        record.features.reserve(active.size());
        for (auto f : active) record.features.push_back({f, draw_value(config.activation, rng)});
    });

    if (config.write_decoders) {
        const double c0 = config.decoder.shared_cosine;
        const double gamma = std::sqrt(c0 / (1.0 - c0));
        const double sigma_scaled = config.decoder.core_noise / std::sqrt(static_cast<double>(d));
        for (std::size_t yi = 0; yi < n_layer; ++yi) {
            StreamRng dir_rng(config.seed, kDirectionStream, yi);
            const auto shared = random_unit(dir_rng, d);
            const auto core_dir = random_unit(dir_rng, d);
            const auto& core = out.truth.layers[yi].core;

            DenseMatrix decoder(F, d);
            parallel_for(F, threads, [&](std::size_t row) {
                StreamRng rng(config.seed, kDecoderStream + yi, row);
                std::vector<double> z;
                if (config.decoder.clustered && core.contains(static_cast<std::uint32_t>(row))) {
                    z.resize(d);
                    for (std::size_t c = 0; c < d; ++c) z[c] = core_dir[c] + sigma_scaled * rng.normal();
                    normalize_in_place(z);
                } else {
                    z = random_unit(rng, d);
                }
                for (std::size_t c = 0; c < d; ++c) z[c] += gamma * shared[c];
                normalize_in_place(z);
                auto dst = decoder.row(row);
                for (std::size_t c = 0; c < d; ++c) dst[c] = static_cast<float>(z[c]);
            });
            out.decoders.emplace(config.layers[yi], std::move(decoder));
        }
    }
    return out;
}

std::filesystem::path decoder_file_name(std::uint32_t layer) {
    return "decoder_L" + std::to_string(layer) + ".saem";
}

void write_synth_output(const std::filesystem::path& out_dir, const SynthOutput& output) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
    write_records(out_dir / "records.jsonl", output.records);
    write_manifest(out_dir / "manifest.json", output.manifest);
    write_file(out_dir / "truth.json", format_truth(output.truth) + "\n");
    for (const auto& [layer, decoder] : output.decoders) write_matrix(out_dir / decoder_file_name(layer), decoder);
}

RecoveryScore score_recovery(const FeatureSet& recovered, const FeatureSet& planted, std::uint32_t layer) {
    RecoveryScore score;
    score.layer = layer;
    score.planted = planted.size();
    score.recovered = recovered.size();
    for (auto f : recovered) score.true_positives += planted.contains(f) ? 1 : 0;
    auto ratio = [](std::size_t num, std::size_t den, std::size_t other) {
        if (den == 0) return other == 0 ? 1.0 : 0.0;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    score.precision = ratio(score.true_positives, score.recovered, score.planted);
    score.recall = ratio(score.true_positives, score.planted, score.recovered);
    return score;
}

RecoveryScore score_recovery(const OverlapResult& result, const GroundTruth& truth) {
    return score_recovery(result.core, truth.at(result.layer).core, result.layer);
}

}  // namespace regscope
