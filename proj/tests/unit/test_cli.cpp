#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "registerscope/cli.hpp"
#include "registerscope/run_metadata.hpp"
#include "registerscope/steering.hpp"
#include "registerscope/synth.hpp"
#include "test_data.hpp"

using namespace regscope;

namespace {

struct Outcome {
    int code = 0;
    std::string out;
    std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

std::string p(const testdata::TempDir& dir, const std::string& name) { return (dir / name).string(); }

// Small planted dump shared by the pipeline tests.
void make_dump(const testdata::TempDir& dir) {
    SynthConfig c;
    c.num_features = 512;
    c.hidden_dim = 64;
    c.tokens = {300, 300};
    testdata::write_file(dir / "config.json", format_synth_config(c));
    const auto r = run_cli({"synth", "--config", p(dir, "config.json"), "--seed", "4", "--out-dir", p(dir, "d"),
                            "--no-timestamp"});
    REQUIRE(r.code == 0);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("errors are single JSON lines with exit codes") {
    auto r = run_cli({"permtest"});
    CHECK(r.code == cli::kExitDataError);
    const auto e = nlohmann::json::parse(r.err);
    CHECK(e["exit_code"] == 1);
    CHECK(e.contains("message"));
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);

    CHECK(run_cli({"frobnicate"}).code == cli::kExitDataError);
    CHECK(run_cli({}).code == cli::kExitDataError);
    CHECK(run_cli({"--version"}).code == 0);

    testdata::TempDir dir;
    make_dump(dir);
    // Missing --seed on a randomized subcommand.
    r = run_cli({"permtest", "--records", p(dir, "d/records.jsonl"), "--manifest", p(dir, "d/manifest.json"),
                 "--layer", "20"});
    CHECK(r.code == cli::kExitDataError);
    // A layer outside the manifest is a data error.
    r = run_cli({"score", "--records", p(dir, "d/records.jsonl"), "--manifest", p(dir, "d/manifest.json"),
                 "--language", "en", "--layer", "3"});
    CHECK(r.code == cli::kExitDataError);
    // Antiparallel rows have no mean direction: a compute error.
    DenseMatrix flip(2, 3, {1.0f, 2.0f, 0.0f, -1.0f, -2.0f, 0.0f});
    write_matrix(dir / "flip.saem", flip);
    r = run_cli({"steer-build", "--decoder", p(dir, "flip.saem"), "--features", "0,1", "--layer", "20", "--out",
                 p(dir, "v.saem")});
    CHECK(r.code == cli::kExitComputeError);
    CHECK(nlohmann::json::parse(r.err)["exit_code"] == 2);
    CHECK(nlohmann::json::parse(r.err)["error"] == "compute");
    // Unknown language for the permutation test.
    r = run_cli({"permtest", "--records", p(dir, "d/records.jsonl"), "--manifest", p(dir, "d/manifest.json"),
                 "--layer", "20", "--languages", "en,he,de", "--seed", "1"});
    CHECK(r.code == cli::kExitDataError);
}

TEST_CASE("validate reports violations with exit 1") {
    testdata::TempDir dir;
    make_dump(dir);
    auto ok = run_cli({"validate", "--records", p(dir, "d/records.jsonl"), "--manifest", p(dir, "d/manifest.json")});
    CHECK(ok.code == 0);
    CHECK(nlohmann::json::parse(ok.out)["violations"].empty());

    auto text = testdata::read_file(dir / "d/records.jsonl");
    text += R"({"sentence_id":"x","language":"en","layer":9,"label":"slang","term":null,"features":[[5,1],[2,1]]})";
    text += "\n";
    testdata::write_file(dir / "bad.jsonl", text);
    auto bad = run_cli({"validate", "--records", p(dir, "bad.jsonl"), "--manifest", p(dir, "d/manifest.json")});
    CHECK(bad.code == cli::kExitDataError);
    CHECK_FALSE(nlohmann::json::parse(bad.out)["violations"].empty());
}

TEST_CASE("end-to-end pipeline, reruns are byte-identical and inputs untouched") {
    testdata::TempDir dir;
    make_dump(dir);
    const auto records = p(dir, "d/records.jsonl");
    const auto manifest = p(dir, "d/manifest.json");
    const auto decoder = p(dir, "d/decoder_L20.saem");
    const auto before = sha256_file(records) + sha256_file(manifest) + sha256_file(decoder);

    std::vector<std::string> ranked;
    for (const char* lang : {"en", "he", "ru"}) {
        const auto out = p(dir, std::string("rank_") + lang + ".json");
        const auto r = run_cli({"score", "--records", records, "--manifest", manifest, "--language", lang, "--layer",
                                "20", "--top-k", "100", "--out", out, "--no-timestamp"});
        REQUIRE(r.code == 0);
        ranked.push_back(out);
    }
    auto r = run_cli({"overlap", "--ranked", ranked[0], ranked[1], ranked[2], "--truth", p(dir, "d/truth.json"),
                      "--k-source", "50", "--out", p(dir, "overlap.json"), "--no-timestamp"});
    REQUIRE(r.code == 0);
    const auto overlap = nlohmann::json::parse(testdata::read_file(dir / "overlap.json"));
    CHECK(overlap["core"].size() >= 8);
    CHECK(overlap.contains("metadata"));

    const std::vector<std::string> permtest{"permtest", "--records", records, "--manifest", manifest, "--layer", "20",
                                            "--layer", "9", "--n", "19", "--seed", "3", "--no-timestamp"};
    const auto first = run_cli(permtest);
    REQUIRE(first.code == 0);
    auto threaded = permtest;
    threaded.insert(threaded.end(), {"--threads", "3"});
    const auto second = run_cli(threaded);
    CHECK(first.out == second.out);
    const auto perm = nlohmann::json::parse(first.out);
    CHECK(perm["metadata"]["seeds"]["seed"] == 3);
    CHECK(perm["metadata"]["inputs"].size() == 2);
    CHECK_FALSE(perm["metadata"].contains("started_at"));

    r = run_cli({"geometry", "--decoder", decoder, "--core-from", p(dir, "overlap.json"), "--seed", "2", "--random-n",
                 "50", "--matrix-out", p(dir, "m.saem"), "--pca-out", p(dir, "pca.json"), "--no-timestamp"});
    REQUIRE(r.code == 0);
    const auto geo = nlohmann::json::parse(r.out);
    CHECK(geo["island_score_baseline"].get<double>() > 3.0);
    const auto m = load_matrix(dir / "m.saem");
    CHECK(m.rows() == overlap["core"].size() + 50);

    r = run_cli({"steer-build", "--decoder", decoder, "--core-from", p(dir, "overlap.json"), "--layer", "20", "--out",
                 p(dir, "core.saem"), "--no-timestamp"});
    REQUIRE(r.code == 0);
    CHECK(load_matrix(dir / "core.saem").rows() == 1);

    r = run_cli({"steer-random", "--decoder", decoder, "--exclude-core", p(dir, "overlap.json"), "--n-sets", "3",
                 "--set-size", "9", "--seed", "8", "--layer", "20", "--out-dir", p(dir, "rand"), "--no-timestamp"});
    REQUIRE(r.code == 0);
    CHECK(std::filesystem::exists(dir / "rand/random_2.saem"));

    CHECK(sha256_file(records) + sha256_file(manifest) + sha256_file(decoder) == before);
}

TEST_CASE("eval and contrast commands") {
    testdata::TempDir dir;
    std::vector<CompletionRecord> core, random;
    for (double alpha : kDefaultAlphaGrid) {
        for (int i = 0; i < 4; ++i) {
            CompletionRecord c;
            c.prompt_id = std::to_string(i);
            c.language = "en";
            c.vector_id = "core";
            c.alpha = alpha;
            c.formality = 0.5 - alpha / 500.0 + 0.01 * i;
            c.detected_language = "en";
            core.push_back(c);
            c.vector_id = "random_" + std::to_string(i % 2);
            c.formality = 0.5 + 0.02 * ((i * 7 + static_cast<int>(alpha)) % 5);
            random.push_back(c);
        }
    }
    write_completions(dir / "core.jsonl", core);
    write_completions(dir / "random.jsonl", random);
    auto r = run_cli({"eval", "--completions", p(dir, "core.jsonl"), "--out", p(dir, "core.json"), "--no-timestamp"});
    REQUIRE(r.code == 0);
    r = run_cli({"eval", "--completions", p(dir, "random.jsonl"), "--out", p(dir, "random.json"), "--no-timestamp"});
    REQUIRE(r.code == 0);
    r = run_cli({"contrast", "--core", p(dir, "core.json"), "--random", p(dir, "random.json"), "--no-timestamp"});
    REQUIRE(r.code == 0);
    const auto doc = nlohmann::json::parse(r.out);
    CHECK(doc.dump().find("\"t\"") != std::string::npos);

    // An alpha outside the default grid is rejected unless the grid is relaxed.
    core[0].alpha = 150;
    write_completions(dir / "wide.jsonl", core);
    CHECK(run_cli({"eval", "--completions", p(dir, "wide.jsonl")}).code == cli::kExitDataError);
    CHECK(run_cli({"eval", "--completions", p(dir, "wide.jsonl"), "--alpha-grid", "extended"}).code == 0);
}

}  // TEST_SUITE
