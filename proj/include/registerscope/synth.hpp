#pragma once

// Synthetic activation dumps with planted ground truth.
//
// Every feature fires independently per token. Planted features use their
// configured (slang, literal) rates in the languages they belong to; every
// other (feature, language) pair fires at the background rate for both
// labels. Decoder rows are unit(gamma * u + z) with a shared direction u
// (gamma^2 = c0 / (1 - c0), so unrelated rows have cosine about c0); z is a
// random unit vector, or for clustered core rows unit(c + sigma * g / sqrt(d))
// around a common core direction c.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "registerscope/activation_store.hpp"
#include "registerscope/overlap.hpp"

namespace regscope {

struct PlantedRates {
    std::size_t size = 0;
    double p_slang = 0.0;
    double p_literal = 0.0;
};

struct ActivationLaw {
    enum class Kind { constant, uniform };
    Kind kind = Kind::constant;
    double value = 1.0;  // constant
    double low = 0.5;    // uniform [low, high)
    double high = 2.0;
};

struct DecoderGeometry {
    bool clustered = true;       // false: core rows drawn like all others (isotropic control)
    double core_noise = 2.0;     // sigma
    double shared_cosine = 0.03; // c0
};

struct TokenCounts {
    std::uint64_t n_slang = 0;
    std::uint64_t n_literal = 0;
};

struct SynthConfig {
    std::uint32_t num_features = 2048;
    std::uint32_t hidden_dim = 1024;
    std::vector<std::string> languages{"en", "he", "ru"};
    std::vector<std::uint32_t> layers{9, 20};
    TokenCounts tokens{1000, 1000};
    std::map<std::pair<std::string, std::uint32_t>, TokenCounts> token_overrides;
    double background_rate = 0.08;
    PlantedRates core{9, 0.4, 0.02};
    PlantedRates language_specific{20, 0.3, 0.03};
    PlantedRates bilingual{5, 0.3, 0.03};
    ActivationLaw activation;
    DecoderGeometry decoder;
    bool write_decoders = true;
    std::uint64_t seed = 0;

    TokenCounts counts(const std::string& language, std::uint32_t layer) const;
    /// Throws DataError describing the first problem.
    void validate() const;

    /// Default shape with no planted features: every rate equals the
    /// background rate, so labels carry no signal.
    static SynthConfig null_config();
};

SynthConfig parse_synth_config(std::string_view text);
SynthConfig load_synth_config(const std::filesystem::path& path);
std::string format_synth_config(const SynthConfig& config);

struct LayerTruth {
    std::uint32_t layer = 0;
    FeatureSet core;
    std::map<std::string, FeatureSet> specific;
    std::map<LanguagePair, FeatureSet> bilingual;
};

struct GroundTruth {
    std::uint64_t seed = 0;
    std::vector<LayerTruth> layers;
    DecoderGeometry decoder;
    PlantedRates core;
    PlantedRates language_specific;
    PlantedRates bilingual;
    double background_rate = 0.0;

    /// Throws DataError for a layer that was not generated.
    const LayerTruth& at(std::uint32_t layer) const;
};

std::string format_truth(const GroundTruth& truth);
GroundTruth parse_truth(std::string_view text);
GroundTruth load_truth(const std::filesystem::path& path);

struct SynthOutput {
    DatasetManifest manifest;
    std::vector<SparseActivationRecord> records;
    std::map<std::uint32_t, DenseMatrix> decoders;  // by layer
    GroundTruth truth;
};

/// Deterministic in config.seed; `threads` never changes the result.
SynthOutput generate(const SynthConfig& config, unsigned threads = 1);

/// Writes records.jsonl, manifest.json, truth.json and decoder_L<layer>.saem.
void write_synth_output(const std::filesystem::path& out_dir, const SynthOutput& output);

std::filesystem::path decoder_file_name(std::uint32_t layer);

struct RecoveryScore {
    std::uint32_t layer = 0;
    std::size_t planted = 0;
    std::size_t recovered = 0;
    std::size_t true_positives = 0;
    double precision = 0.0;  // 1 when both sets are empty, 0 when only `recovered` is
    double recall = 0.0;     // 1 when both sets are empty, 0 when only the truth is
};

RecoveryScore score_recovery(const OverlapResult& result, const GroundTruth& truth);
RecoveryScore score_recovery(const FeatureSet& recovered, const FeatureSet& planted, std::uint32_t layer = 0);

}  // namespace regscope
