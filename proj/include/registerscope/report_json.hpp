#pragma once

// JSON forms of every report the command-line tool writes. Keys keep
// insertion order so output bytes are stable.

#include "json.hpp"
#include "registerscope/activation_store.hpp"
#include "registerscope/geometry.hpp"
#include "registerscope/lexical_projection.hpp"
#include "registerscope/overlap.hpp"
#include "registerscope/scoring.hpp"
#include "registerscope/steering.hpp"
#include "registerscope/synth.hpp"

namespace regscope {

using Json = nlohmann::ordered_json;

Json to_json(const ActivityFilter& filter);
Json to_json(const ValidationReport& report);
Json to_json(const FeatureStats& stats);
Json to_json(const FeatureTable& table);
Json to_json(const TokenActivationProfile& profile);
Json to_json(const ClassifierMetrics& metrics);

/// `{language, layer, k, filter, entries: [[feature, delta], ...]}`.
Json to_json(const RankedFeatureList& list);
/// Accepts the output of `score` (extra keys are ignored).
RankedFeatureList ranked_list_from_json(const nlohmann::json& doc);

Json to_json(const FeatureSet& set);
Json to_json(const OverlapResult& result);
Json to_json(const BilingualExclusiveSet& set);
/// Core set of an `overlap` output.
FeatureSet overlap_core_from_json(const nlohmann::json& doc);

Json to_json(const PermutationTestResult& result);

Json to_json(const SimilarityMatrix& matrix);
Json to_json(const GeometryReport& report);
Json to_json(const ProjectionCoords& coords);

Json to_json(const VocabReadout& readout);

/// Sidecar for a steering vector file.
Json to_json(const SteeringVector& vector);

Json to_json(const CorrelationResult& result);
Json to_json(const AlphaSummary& summary);
Json to_json(const GroupReport& group);
Json to_json(const SteeringEvalReport& report);
SteeringEvalReport eval_report_from_json(const nlohmann::json& doc);

Json to_json(const ContrastResult& result);
Json to_json(const RecoveryScore& score);

}  // namespace regscope
