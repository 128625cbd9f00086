#include <cmath>

#include "doctest.h"
#include "registerscope/errors.hpp"
#include "registerscope/report_json.hpp"
#include "registerscope/run_metadata.hpp"
#include "test_data.hpp"

using namespace regscope;

TEST_SUITE("report_json") {

TEST_CASE("ranked list round-trips through JSON text") {
    RankedFeatureList list;
    list.language = "ru";
    list.layer = 20;
    list.k = 3;
    list.filter = {0.1, 4};
    list.entries = {{93521, 0.42}, {97003, 0.38}};
    const auto text = to_json(list).dump(2);
    const auto back = ranked_list_from_json(nlohmann::json::parse(text));
    CHECK(back.language == "ru");
    CHECK(back.k == 3);
    CHECK(back.filter.min_total_fires == 4);
    CHECK(back.entries == list.entries);

    auto doc = nlohmann::json::parse(text);
    doc["k"] = 1;
    CHECK_THROWS_AS(ranked_list_from_json(doc), DataError);
    doc.erase("entries");
    CHECK_THROWS_AS(ranked_list_from_json(doc), DataError);
}

TEST_CASE("overlap core reader") {
    OverlapResult r;
    r.core = {5, 1, 9};
    r.languages = {"en", "he", "ru"};
    const auto doc = nlohmann::json::parse(to_json(r).dump());
    CHECK(overlap_core_from_json(doc) == FeatureSet{1, 5, 9});
    CHECK_THROWS_AS(overlap_core_from_json(nlohmann::json::object()), DataError);
}

TEST_CASE("eval report round-trips, including NaN correlations") {
    std::vector<CompletionRecord> cs;
    for (double alpha : kDefaultAlphaGrid) {
        CompletionRecord c;
        c.language = "de";
        c.vector_id = "core";
        c.alpha = alpha;
        c.formality = 0.5 - alpha / 1000.0;
        c.detected_language = "de";
        c.perplexity = 10.0 + alpha / 100.0;
        cs.push_back(c);
    }
    CompletionRecord lone;
    lone.language = "en";
    lone.vector_id = "core";
    lone.formality = 0.5;
    cs.push_back(lone);
    const auto report = eval_report(cs);
    const auto text = to_json(report).dump(2);
    const auto back = eval_report_from_json(nlohmann::json::parse(text));
    CHECK(to_json(back).dump(2) == text);
    CHECK(std::isnan(back.groups[1].correlation.r));
    CHECK(back.groups[0].correlation.r == report.groups[0].correlation.r);
}

TEST_CASE("run metadata digests and layout") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    testdata::TempDir dir;
    testdata::write_file(dir / "x.txt", "abc");
    CHECK(sha256_file(dir / "x.txt") == sha256_hex("abc"));
    CHECK_THROWS_AS(sha256_file(dir / "missing"), DataError);

    RunMetadata m;
    m.command_line = {"registerscope", "geometry"};
    m.seeds["seed"] = 7;
    m.add_input("--decoder", dir / "x.txt");
    const auto doc = to_json(m);
    CHECK(doc["version"] == std::string(tool_version()));
    CHECK(doc["seeds"]["seed"] == 7);
    CHECK(doc["inputs"][0]["sha256"] == sha256_hex("abc"));
    CHECK_FALSE(doc.contains("started_at"));
    const auto stamp = utc_timestamp();
    CHECK(stamp.size() == 20);
    CHECK(stamp.back() == 'Z');
}

}  // TEST_SUITE
