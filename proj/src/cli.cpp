#include "registerscope/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "registerscope/errors.hpp"
#include "registerscope/report_json.hpp"
#include "registerscope/run_metadata.hpp"

namespace regscope::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kDefaultTopK = 100;
constexpr std::size_t kDefaultPermutations = 10000;
constexpr std::size_t kDefaultRandomN = 100;
constexpr std::size_t kDefaultVocabK = 20;
constexpr std::size_t kDefaultAblationSets = 5;
constexpr std::size_t kDefaultAblationSize = 20;

struct Common {
    unsigned threads = 1;
    bool no_timestamp = false;
    std::string out = "-";
};

struct Session {
    std::ostream& out;
    RunMetadata metadata;
    Common common;

    void stamp_start() {
        if (!common.no_timestamp) metadata.started_at = utc_timestamp();
    }
};

// Command line recorded in metadata: everything except flags that must not
// change the bytes of an output.
std::vector<std::string> recorded_command_line(std::span<const std::string> args) {
    std::vector<std::string> out{"registerscope"};
    for (std::size_t i = 0; i < args.size(); ++i) {
        const auto& a = args[i];
        if (a == "--no-timestamp" || a.rfind("--threads=", 0) == 0) continue;
        if (a == "--threads") {
            ++i;
            continue;
        }
        out.push_back(a);
    }
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": malformed JSON: " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text, std::ostream& fallback) {
    if (path == "-") {
        fallback << text;
        return;
    }
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream file(p, std::ios::binary);
    if (!file) throw DataError("cannot write " + path);
    file << text;
    if (!file) throw DataError("write failed for " + path);
}

void emit(Session& s, const std::string& path, Json body) {
    if (!s.common.no_timestamp) s.metadata.finished_at = utc_timestamp();
    body["metadata"] = to_json(s.metadata);
    write_text(path, body.dump(2) + "\n", s.out);
}

DatasetManifest load_manifest_input(Session& s, const std::string& path) {
    s.metadata.add_input("manifest", path);
    return load_manifest(path);
}

ActivationStore load_store(Session& s, const std::string& records, const std::string& manifest) {
    auto m = load_manifest_input(s, manifest);
    s.metadata.add_input("records", records);
    return ActivationStore::load(records, std::move(m));
}

DenseMatrix load_matrix_input(Session& s, const std::string& role, const std::string& path) {
    s.metadata.add_input(role, path);
    return load_matrix(path);
}

void require_layer(const DatasetManifest& manifest, std::uint32_t layer) {
    if (!manifest.has_layer(layer)) throw DataError("layer " + std::to_string(layer) + " is not in the manifest");
}

Scope resolve_scope(const DatasetManifest& manifest, const std::string& language) {
    auto scope = Scope::parse(language);
    if (!scope.is_pooled() && !manifest.has_language(language)) {
        throw DataError("language '" + language + "' is not in the manifest");
    }
    return scope;
}

ActivityFilter make_filter(double min_slang_rate, std::uint64_t min_fires) {
    ActivityFilter filter{min_slang_rate, min_fires};
    filter.validate();
    return filter;
}

std::vector<std::uint32_t> features_from_core(Session& s, const std::string& path) {
    s.metadata.add_input("core-from", path);
    const auto core = overlap_core_from_json(read_json(path));
    return {core.begin(), core.end()};
}

// Features named by --features, or the core of an overlap file.
std::vector<std::uint32_t> selected_features(Session& s, const std::vector<std::uint32_t>& listed,
                                             const std::string& core_from) {
    if (!listed.empty() && !core_from.empty()) throw DataError("give either --features or --core-from, not both");
    auto features = core_from.empty() ? listed : features_from_core(s, core_from);
    if (features.empty()) throw DataError("no features selected");
    return features;
}

void add_common(CLI::App* sub, Common& common, bool has_out = true) {
    sub->add_option("--threads", common.threads, "Worker threads; results do not depend on it")
        ->capture_default_str()
        ->check(CLI::Range(1u, 4096u));
    sub->add_flag("--no-timestamp", common.no_timestamp, "Omit timestamps from output metadata");
    if (has_out) sub->add_option("--out", common.out, "Output path ('-' for stdout)")->capture_default_str();
}

struct FilterOptions {
    double min_slang_rate = ActivityFilter{}.min_slang_rate;
    std::uint64_t min_fires = ActivityFilter{}.min_total_fires;

    void attach(CLI::App* sub) {
        sub->add_option("--min-slang-rate", min_slang_rate, "Minimum slang activation rate")
            ->capture_default_str()
            ->check(CLI::Range(0.0, 1.0));
        sub->add_option("--min-fires", min_fires, "Minimum total activations (slang + literal)")
            ->capture_default_str();
    }
};

// ---------------------------------------------------------------- validate

struct ValidateArgs {
    std::string records, manifest;
};

int cmd_validate(Session& s, const ValidateArgs& a) {
    const auto manifest = load_manifest_input(s, a.manifest);
    s.metadata.add_input("records", a.records);

    std::ifstream in(a.records);
    if (!in) throw DataError("cannot open " + a.records);
    std::vector<SparseActivationRecord> records;
    std::vector<std::size_t> line_of;
    std::vector<Violation> malformed;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            ++line_no;
            continue;
        }
        try {
            records.push_back(parse_record(line));
            line_of.push_back(line_no);
        } catch (const DataError& e) {
            malformed.push_back(Violation{line_no, "malformed record", e.what()});
        }
        ++line_no;
    }

    auto report = validate_dataset(records, manifest);
    for (auto& v : report.violations) {
        if (v.record != Violation::kNoRecord) v.record = line_of[v.record];
    }
    report.violations.insert(report.violations.begin(), malformed.begin(), malformed.end());
    report.total_records += malformed.size();

    Json body = to_json(report);
    emit(s, s.common.out, std::move(body));
    return report.clean() ? kExitOk : kExitDataError;
}

// ------------------------------------------------------------------- score

struct ScoreArgs {
    std::string records, manifest, language, stats_out;
    std::uint32_t layer = 0;
    std::size_t top_k = kDefaultTopK;
    FilterOptions filter;
};

int cmd_score(Session& s, const ScoreArgs& a) {
    const auto store = load_store(s, a.records, a.manifest);
    require_layer(store.manifest(), a.layer);
    const auto scope = resolve_scope(store.manifest(), a.language);
    const auto filter = make_filter(a.filter.min_slang_rate, a.filter.min_fires);

    const auto table = compute_feature_stats(store, scope, a.layer);
    const auto filtered = apply_filter(table, filter);
    const auto ranked = rank_top_k(filtered, a.top_k);
    const auto profile = token_activation_profile(store, a.layer, scope);

    Json body = to_json(ranked);
    body["n_slang"] = table.n_slang;
    body["n_literal"] = table.n_literal;
    body["active_features"] = table.stats.size();
    body["pass_count"] = filtered.pass_count;
    body["token_profile"] = Json::array({to_json(profile[0]), to_json(profile[1])});
    if (!a.stats_out.empty()) emit(s, a.stats_out, to_json(table));
    emit(s, s.common.out, std::move(body));
    return kExitOk;
}

// ---------------------------------------------------------------- classify

struct ClassifyArgs {
    std::string records, manifest, language = std::string(kPooledScope);
    std::uint32_t layer = 0;
    std::size_t top_k = 0;
    FilterOptions filter;
};

int cmd_classify(Session& s, const ClassifyArgs& a) {
    const auto store = load_store(s, a.records, a.manifest);
    require_layer(store.manifest(), a.layer);
    const auto scope = resolve_scope(store.manifest(), a.language);
    const auto filter = make_filter(a.filter.min_slang_rate, a.filter.min_fires);

    const auto filtered = apply_filter(compute_feature_stats(store, scope, a.layer), filter);
    std::vector<const FeatureStats*> order;
    for (const auto& st : filtered.table.stats) order.push_back(&st);
    std::sort(order.begin(), order.end(), [](const auto* x, const auto* y) { return ranks_before(*x, *y); });
    if (a.top_k > 0 && order.size() > a.top_k) order.resize(a.top_k);

    FeatureTable selected = filtered.table;
    selected.stats.clear();
    for (const auto* st : order) selected.stats.push_back(*st);
    const auto metrics = classifier_metrics(selected);

    Json body;
    body["language"] = filtered.table.language;
    body["layer"] = a.layer;
    body["filter"] = to_json(filter);
    body["pass_count"] = filtered.pass_count;
    body["metrics"] = Json::array();
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        Json m = to_json(metrics[i]);
        m["delta"] = selected.stats[i].delta;
        body["metrics"].push_back(std::move(m));
    }
    emit(s, s.common.out, std::move(body));
    return kExitOk;
}

// ----------------------------------------------------------------- overlap

struct OverlapArgs {
    std::vector<std::string> ranked;
    std::size_t k_source = 0;
    std::string truth;
};

int cmd_overlap(Session& s, const OverlapArgs& a) {
    std::vector<RankedFeatureList> lists;
    for (const auto& path : a.ranked) {
        s.metadata.add_input("ranked", path);
        lists.push_back(ranked_list_from_json(read_json(path)));
    }
    const auto result = intersect_trilingual(lists);
    Json body = to_json(result);
    if (a.k_source > 0) {
        body["bilingual_exclusive"] = Json::array();
        for (const auto& list : lists) {
            body["bilingual_exclusive"].push_back(to_json(bilingual_exclusive(lists, list.language, a.k_source)));
        }
    }
    if (!a.truth.empty()) {
        s.metadata.add_input("truth", a.truth);
        body["recovery"] = to_json(score_recovery(result, load_truth(a.truth)));
    }
    emit(s, s.common.out, std::move(body));
    return kExitOk;
}

// ---------------------------------------------------------------- permtest

struct PermtestArgs {
    std::string records, manifest;
    std::vector<std::uint32_t> layers;
    std::vector<std::string> languages;
    std::size_t k = kDefaultTopK;
    std::size_t n = kDefaultPermutations;
    std::uint64_t seed = 0;
    FilterOptions filter;
};

int cmd_permtest(Session& s, const PermtestArgs& a) {
    s.metadata.seeds["seed"] = a.seed;
    const auto store = load_store(s, a.records, a.manifest);
    for (auto layer : a.layers) require_layer(store.manifest(), layer);
    if (a.k == 0) throw DataError("k must be at least 1");
    const auto filter = make_filter(a.filter.min_slang_rate, a.filter.min_fires);

    std::vector<PermutationTestResult> results;
    for (auto layer : a.layers) {
        PermutationConfig config;
        config.layer = layer;
        config.k = a.k;
        config.filter = filter;
        config.n_permutations = a.n;
        config.seed = a.seed;
        config.languages = a.languages;
        config.threads = s.common.threads;
        results.push_back(permutation_test(store, config));
    }

    Json body;
    body["per_layer"] = Json::array();
    for (const auto& r : results) body["per_layer"].push_back(to_json(r));
    if (results.size() > 1) {
        const auto total = sum_layers(results);
        Json summed = to_json(total);
        summed.erase("layer");
        summed["layers"] = a.layers;
        body["summed"] = std::move(summed);
    }
    emit(s, s.common.out, std::move(body));
    return kExitOk;
}

// ---------------------------------------------------------------- geometry

struct GeometryArgs {
    std::string decoder, core_from, matrix_out, pca_out, pca_basis = "joint";
    std::vector<std::uint32_t> features;
    std::size_t random_n = kDefaultRandomN;
    std::uint64_t seed = 0;
    double epsilon = IslandConfig{}.epsilon;
};

int cmd_geometry(Session& s, const GeometryArgs& a) {
    s.metadata.seeds["seed"] = a.seed;
    const auto decoder = load_matrix_input(s, "decoder", a.decoder);
    const auto features = selected_features(s, a.features, a.core_from);

    IslandConfig config;
    config.random_n = a.random_n;
    config.seed = a.seed;
    config.epsilon = a.epsilon;
    config.threads = s.common.threads;
    const auto report = island_score(decoder, features, config);

    std::vector<std::uint32_t> joint = report.feature_set;
    joint.insert(joint.end(), report.random_set.begin(), report.random_set.end());

    if (!a.matrix_out.empty()) {
        const auto matrix = pairwise_cosine(decoder, joint, s.common.threads);
        if (fs::path(a.matrix_out).extension() == ".saem") {
            write_matrix(a.matrix_out, matrix.to_dense());
            Json sidecar;
            sidecar["features"] = matrix.features;
            sidecar["core_size"] = report.feature_set.size();
            emit(s, a.matrix_out + ".json", std::move(sidecar));
        } else {
            Json body = to_json(matrix);
            body["core_size"] = report.feature_set.size();
            emit(s, a.matrix_out, std::move(body));
        }
    }
    if (!a.pca_out.empty()) {
        const auto& basis = a.pca_basis == "core" ? report.feature_set : joint;
        Json body = to_json(pca_project(decoder, basis));
        body["basis"] = a.pca_basis;
        body["core_size"] = report.feature_set.size();
        emit(s, a.pca_out, std::move(body));
    }
    emit(s, s.common.out, to_json(report));
    return kExitOk;
}

// ----------------------------------------------------------- project-vocab

struct VocabArgs {
    std::string decoder, unembedding, vocab, exclude_file;
    std::optional<std::uint32_t> feature;
    std::vector<std::uint32_t> set, exclude;
    std::size_t k = kDefaultVocabK;
};

int cmd_project_vocab(Session& s, const VocabArgs& a) {
    if (a.feature.has_value() == !a.set.empty()) throw DataError("give exactly one of --feature or --set");
    const auto decoder = load_matrix_input(s, "decoder", a.decoder);
    const auto unembedding = load_matrix_input(s, "unembedding", a.unembedding);
    s.metadata.add_input("vocab", a.vocab);
    const auto vocab = load_vocab(a.vocab);

    std::set<std::uint32_t> exclusion(a.exclude.begin(), a.exclude.end());
    if (!a.exclude_file.empty()) {
        s.metadata.add_input("exclude-file", a.exclude_file);
        std::istringstream in(read_text(a.exclude_file));
        std::string token;
        while (in >> token) {
            try {
                exclusion.insert(static_cast<std::uint32_t>(std::stoul(token)));
            } catch (const std::exception&) {
                throw DataError("bad token id '" + token + "' in " + a.exclude_file);
            }
        }
    }
    const auto source = a.feature ? ProjectionSource::feature(*a.feature) : ProjectionSource::set(a.set);
    const auto readout = project_vocab(decoder, unembedding, vocab, source, a.k, exclusion, s.common.threads);
    emit(s, s.common.out, to_json(readout));
    return kExitOk;
}

// ---------------------------------------------------------- steer-build/random

struct SteerBuildArgs {
    std::string decoder, core_from, out;
    std::vector<std::uint32_t> features;
    std::uint32_t layer = 0;
};

void write_vector(Session& s, const std::string& path, const SteeringVector& v) {
    if (path == "-") throw DataError("steering vectors need a file path");
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_matrix(p, steering_matrix(v));
    emit(s, path + ".json", to_json(v));
}

int cmd_steer_build(Session& s, const SteerBuildArgs& a) {
    const auto decoder = load_matrix_input(s, "decoder", a.decoder);
    const auto features = selected_features(s, a.features, a.core_from);
    write_vector(s, a.out, build_steering_vector(decoder, features, a.layer));
    return kExitOk;
}

struct SteerRandomArgs {
    std::string decoder, out_dir;
    std::vector<std::uint32_t> exclude;
    std::vector<std::string> exclude_ranked, exclude_core;
    std::size_t n_sets = kDefaultAblationSets;
    std::size_t set_size = kDefaultAblationSize;
    std::uint64_t seed = 0;
    std::uint32_t layer = 0;
};

int cmd_steer_random(Session& s, const SteerRandomArgs& a) {
    s.metadata.seeds["seed"] = a.seed;
    const auto decoder = load_matrix_input(s, "decoder", a.decoder);
    std::set<std::uint32_t> exclusion(a.exclude.begin(), a.exclude.end());
    for (const auto& path : a.exclude_ranked) {
        s.metadata.add_input("exclude-ranked", path);
        for (auto f : ranked_list_from_json(read_json(path)).features()) exclusion.insert(f);
    }
    for (const auto& path : a.exclude_core) {
        s.metadata.add_input("exclude-core", path);
        for (auto f : overlap_core_from_json(read_json(path))) exclusion.insert(f);
    }

    const auto vectors =
        random_ablation_vectors(decoder, a.n_sets, a.set_size, a.seed, exclusion, a.layer, s.common.threads);
    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    Json summary;
    summary["layer"] = a.layer;
    summary["n_sets"] = a.n_sets;
    summary["set_size"] = a.set_size;
    summary["seed"] = a.seed;
    summary["exclusion"] = std::vector<std::uint32_t>(exclusion.begin(), exclusion.end());
    summary["vectors"] = Json::array();
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        const std::string name = "random_" + std::to_string(i) + ".saem";
        write_vector(s, (dir / name).string(), vectors[i]);
        Json entry;
        entry["file"] = name;
        entry["features"] = vectors[i].features;
        summary["vectors"].push_back(std::move(entry));
    }
    emit(s, (dir / "sets.json").string(), std::move(summary));
    return kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
    std::vector<std::string> completions, targets;
    std::string alpha_grid = "default";
};

int cmd_eval(Session& s, const EvalArgs& a) {
    std::map<std::string, std::string> target;
    for (const auto& t : a.targets) {
        const auto eq = t.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == t.size()) {
            throw DataError("--target expects language=code, got '" + t + "'");
        }
        target[t.substr(0, eq)] = t.substr(eq + 1);
    }
    std::vector<CompletionRecord> completions;
    for (const auto& path : a.completions) {
        s.metadata.add_input("completions", path);
        auto loaded = load_completions(path);
        completions.insert(completions.end(), loaded.begin(), loaded.end());
    }
    if (a.alpha_grid != "any") {
        std::vector<double> grid = a.alpha_grid == "extended"
                                       ? std::vector<double>(kExtendedAlphaGrid.begin(), kExtendedAlphaGrid.end())
                                       : std::vector<double>(kDefaultAlphaGrid.begin(), kDefaultAlphaGrid.end());
        for (const auto& c : completions) {
            if (std::find(grid.begin(), grid.end(), c.alpha) == grid.end()) {
                throw DataError("completion " + c.prompt_id + " has alpha " + Json(c.alpha).dump() +
                                " outside the " + a.alpha_grid + " grid (use --alpha-grid any)");
            }
        }
    }
    Json body = to_json(eval_report(completions, target));
    emit(s, s.common.out, std::move(body));
    return kExitOk;
}

// ---------------------------------------------------------------- contrast

struct ContrastArgs {
    std::string core;
    std::vector<std::string> random, languages;
};

int cmd_contrast(Session& s, const ContrastArgs& a) {
    s.metadata.add_input("core", a.core);
    const auto core = eval_report_from_json(read_json(a.core));
    std::vector<SteeringEvalReport> random;
    for (const auto& path : a.random) {
        s.metadata.add_input("random", path);
        random.push_back(eval_report_from_json(read_json(path)));
    }
    std::vector<std::string> languages = a.languages;
    if (languages.empty()) {
        for (const auto& g : core.groups) {
            if (!g.flagged && std::find(languages.begin(), languages.end(), g.language) == languages.end()) {
                languages.push_back(g.language);
            }
        }
    }
    if (languages.empty()) throw DataError("core report has no usable groups");

    Json body;
    body["contrasts"] = Json::array();
    for (const auto& language : languages) {
        Json entry = to_json(ablation_contrast(core, random, language));
        entry["language"] = language;
        body["contrasts"].push_back(std::move(entry));
    }
    emit(s, s.common.out, std::move(body));
    return kExitOk;
}

// ------------------------------------------------------------------- synth

struct SynthArgs {
    std::string config, out_dir;
    std::uint64_t seed = 0;
    bool null_data = false;
};

int cmd_synth(Session& s, const SynthArgs& a) {
    s.metadata.seeds["seed"] = a.seed;
    SynthConfig config = SynthConfig{};
    if (!a.config.empty()) {
        if (a.null_data) throw DataError("--null cannot be combined with --config");
        s.metadata.add_input("config", a.config);
        config = load_synth_config(a.config);
    } else if (a.null_data) {
        config = SynthConfig::null_config();
    }
    config.seed = a.seed;

    const auto output = generate(config, s.common.threads);
    write_synth_output(a.out_dir, output);

    const fs::path dir(a.out_dir);
    Json body;
    body["config"] = Json::parse(format_synth_config(config));
    body["files"] = Json::array();
    std::vector<std::string> names{"records.jsonl", "manifest.json", "truth.json"};
    for (const auto& [layer, _] : output.decoders) names.push_back(decoder_file_name(layer).string());
    for (const auto& name : names) body["files"].push_back({{"file", name}, {"sha256", sha256_file(dir / name)}});
    emit(s, (dir / "run.json").string(), std::move(body));
    return kExitOk;
}

void error_line(std::ostream& err, std::string_view kind, int code, std::string_view message) {
    Json e;
    e["error"] = kind;
    e["exit_code"] = code;
    e["message"] = message;
    err << e.dump() << '\n';
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Cross-lingual register feature analysis for sparse-autoencoder activation dumps", "registerscope"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(tool_version()));

    Common common;
    std::function<int(Session&)> action;

    ValidateArgs validate;
    auto* sub = app.add_subcommand("validate", "Check records against a manifest; exit 1 when violations exist");
    sub->add_option("--records", validate.records, "Activation records (NDJSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--manifest", validate.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_validate(s, validate); }; });

    ScoreArgs score;
    sub = app.add_subcommand("score", "Per-feature differential activation, activity filter and top-k ranking");
    sub->add_option("--records", score.records, "Activation records (NDJSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--manifest", score.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    sub->add_option("--language", score.language, "Language code or 'pooled'")->required();
    sub->add_option("--layer", score.layer, "Layer")->required();
    sub->add_option("--top-k", score.top_k, "Ranked list length")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--stats-out", score.stats_out, "Also write the full per-feature table here");
    score.filter.attach(sub);
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_score(s, score); }; });

    ClassifyArgs classify;
    sub = app.add_subcommand("classify", "Per-feature binary classifier metrics (active => slang)");
    sub->add_option("--records", classify.records, "Activation records (NDJSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--manifest", classify.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    sub->add_option("--language", classify.language, "Language code or 'pooled'")->capture_default_str();
    sub->add_option("--layer", classify.layer, "Layer")->required();
    sub->add_option("--top-k", classify.top_k, "Keep only the top-k ranked features (0 = all)")->capture_default_str();
    classify.filter.attach(sub);
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_classify(s, classify); }; });

    OverlapArgs overlap;
    sub = app.add_subcommand("overlap", "Trilingual core, bilingual and language-specific partition of 3 ranked lists");
    sub->add_option("--ranked", overlap.ranked, "Ranked list from `score` (give three)")
        ->required()
        ->expected(3)
        ->check(CLI::ExistingFile);
    sub->add_option("--k-source", overlap.k_source, "Also derive bilingual-exclusive sets from top-k prefixes");
    sub->add_option("--truth", overlap.truth, "Synthetic truth.json: add a core recovery score")
        ->check(CLI::ExistingFile);
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_overlap(s, overlap); }; });

    PermtestArgs permtest;
    sub = app.add_subcommand("permtest", "Label-permutation test of the trilingual top-k overlap");
    sub->add_option("--records", permtest.records, "Activation records (NDJSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--manifest", permtest.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    sub->add_option("--layer", permtest.layers, "Layer (repeat to also report the summed statistic)")->required();
    sub->add_option("--languages", permtest.languages, "Three languages (default: the manifest's)")->delimiter(',');
    sub->add_option("--k", permtest.k, "Top-k per language")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--n", permtest.n, "Permutations")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--seed", permtest.seed, "Random seed")->required();
    permtest.filter.attach(sub);
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_permtest(s, permtest); }; });

    GeometryArgs geometry;
    sub = app.add_subcommand("geometry", "Decoder cosine structure: island scores, similarity matrix, 2D PCA");
    sub->add_option("--decoder", geometry.decoder, "Decoder matrix (SAEM, F x d)")->required()->check(CLI::ExistingFile);
    sub->add_option("--features", geometry.features, "Comma-separated core features")->delimiter(',');
    sub->add_option("--core-from", geometry.core_from, "Take the core set from an `overlap` output")
        ->check(CLI::ExistingFile);
    sub->add_option("--random-n", geometry.random_n, "Random comparison features")->capture_default_str();
    sub->add_option("--seed", geometry.seed, "Random seed")->required();
    sub->add_option("--epsilon", geometry.epsilon, "Denominator guard for island ratios")->capture_default_str();
    sub->add_option("--matrix-out", geometry.matrix_out, "Cosine matrix of core + random (.json or .saem)");
    sub->add_option("--pca-out", geometry.pca_out, "2D principal-component coordinates");
    sub->add_option("--pca-basis", geometry.pca_basis, "Fit PCA on 'joint' (core + random) or 'core'")
        ->capture_default_str()
        ->check(CLI::IsMember({"joint", "core"}));
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_geometry(s, geometry); }; });

    VocabArgs vocab;
    sub = app.add_subcommand("project-vocab", "Top tokens promoted by a decoder direction through the unembedding");
    sub->add_option("--decoder", vocab.decoder, "Decoder matrix (SAEM, F x d)")->required()->check(CLI::ExistingFile);
    sub->add_option("--unembedding", vocab.unembedding, "Unembedding matrix (SAEM, d x V)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--vocab", vocab.vocab, "Vocabulary, one token per line")->required()->check(CLI::ExistingFile);
    sub->add_option("--feature", vocab.feature, "Project one feature's raw decoder row");
    sub->add_option("--set", vocab.set, "Project the unit mean of these features")->delimiter(',');
    sub->add_option("--k", vocab.k, "Tokens to report")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_option("--exclude", vocab.exclude, "Token ids to leave out")->delimiter(',');
    sub->add_option("--exclude-file", vocab.exclude_file, "Whitespace-separated token ids to leave out")
        ->check(CLI::ExistingFile);
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_project_vocab(s, vocab); }; });

    SteerBuildArgs steer_build;
    sub = app.add_subcommand("steer-build", "Unit-norm mean decoder direction of a feature set (SAEM + JSON sidecar)");
    sub->add_option("--decoder", steer_build.decoder, "Decoder matrix (SAEM, F x d)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--features", steer_build.features, "Comma-separated features")->delimiter(',');
    sub->add_option("--core-from", steer_build.core_from, "Take the set from an `overlap` output")
        ->check(CLI::ExistingFile);
    sub->add_option("--layer", steer_build.layer, "Layer the vector is injected at")->required();
    add_common(sub, common);
    sub->callback([&] {
        action = [&](Session& s) {
            SteerBuildArgs args = steer_build;
            args.out = s.common.out;
            return cmd_steer_build(s, args);
        };
    });

    SteerRandomArgs steer_random;
    sub = app.add_subcommand("steer-random", "Random-feature ablation vectors disjoint from an exclusion set");
    sub->add_option("--decoder", steer_random.decoder, "Decoder matrix (SAEM, F x d)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--n-sets", steer_random.n_sets, "Number of random sets")->capture_default_str();
    sub->add_option("--set-size", steer_random.set_size, "Features per set")->capture_default_str();
    sub->add_option("--seed", steer_random.seed, "Random seed")->required();
    sub->add_option("--layer", steer_random.layer, "Layer the vectors are injected at")->required();
    sub->add_option("--exclude", steer_random.exclude, "Comma-separated features to exclude")->delimiter(',');
    sub->add_option("--exclude-ranked", steer_random.exclude_ranked, "Exclude every feature of a ranked list")
        ->check(CLI::ExistingFile);
    sub->add_option("--exclude-core", steer_random.exclude_core, "Exclude the core of an `overlap` output")
        ->check(CLI::ExistingFile);
    sub->add_option("--out-dir", steer_random.out_dir, "Directory for random_<i>.saem files and sets.json")
        ->required();
    add_common(sub, common, false);
    sub->callback([&] { action = [&](Session& s) { return cmd_steer_random(s, steer_random); }; });

    EvalArgs eval;
    sub = app.add_subcommand("eval", "Formality correlation, per-alpha means, language preservation, perplexity");
    sub->add_option("--completions", eval.completions, "Completions (NDJSON); repeatable")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--target", eval.targets, "Expected detected language, as language=code; repeatable");
    sub->add_option("--alpha-grid", eval.alpha_grid,
                    "Allowed steering coefficients: 'default' {-150,-100,-50,0,50,100}, 'extended' (adds 150), 'any'")
        ->capture_default_str()
        ->check(CLI::IsMember({"default", "extended", "any"}));
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_eval(s, eval); }; });

    ContrastArgs contrast;
    sub = app.add_subcommand("contrast", "One-sample t of random-vector |r| against the core vector's |r|");
    sub->add_option("--core", contrast.core, "`eval` report for the core vector")->required()->check(CLI::ExistingFile);
    sub->add_option("--random", contrast.random, "`eval` report(s) for random vectors; repeatable")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--language", contrast.languages, "Languages to contrast (default: all in the core report)");
    add_common(sub, common);
    sub->callback([&] { action = [&](Session& s) { return cmd_contrast(s, contrast); }; });

    SynthArgs synth;
    sub = app.add_subcommand("synth", "Synthetic activation dump with planted ground truth");
    sub->add_option("--config", synth.config, "Synth config JSON (default: built-in planted config)")
        ->check(CLI::ExistingFile);
    sub->add_flag("--null", synth.null_data, "Use the built-in null config (no planted features)");
    sub->add_option("--seed", synth.seed, "Random seed")->required();
    sub->add_option("--out-dir", synth.out_dir, "Output directory")->required();
    add_common(sub, common, false);
    sub->callback([&] { action = [&](Session& s) { return cmd_synth(s, synth); }; });

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::Success& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        error_line(err, "usage", kExitDataError, e.what());
        return kExitDataError;
    }

    Session session{out, RunMetadata{}, common};
    session.metadata.command_line = recorded_command_line(args);
    session.stamp_start();
    try {
        return action(session);
    } catch (const DataError& e) {
        error_line(err, "data", kExitDataError, e.what());
        return kExitDataError;
    } catch (const ComputeError& e) {
        error_line(err, "compute", kExitComputeError, e.what());
        return kExitComputeError;
    } catch (const fs::filesystem_error& e) {
        error_line(err, "data", kExitDataError, e.what());
        return kExitDataError;
    } catch (const std::exception& e) {
        error_line(err, "compute", kExitComputeError, e.what());
        return kExitComputeError;
    }
}

}  // namespace regscope::cli
