#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "criteria.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Runs the acceptance criteria and prints one PASS/FAIL line each"};
    std::vector<std::string> only;
    acceptance::Context context;
    bool list = false;
    app.add_option("--only", only, "Criterion names to run (default: all)");
    app.add_option("--cli", context.cli_path, "Path to the registerscope binary");
    app.add_flag("--list", list, "Print criterion names and exit");
    CLI11_PARSE(app, argc, argv);

    const auto& criteria = acceptance::all_criteria();
    if (list) {
        for (const auto& c : criteria) std::printf("%-26s %s\n", c.name.c_str(), c.summary.c_str());
        return 0;
    }
    for (const auto& name : only) {
        bool known = false;
        for (const auto& c : criteria) known = known || c.name == name;
        if (!known) {
            std::fprintf(stderr, "unknown criterion '%s'\n", name.c_str());
            return 2;
        }
    }

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        acceptance::Outcome outcome;
        try {
            outcome = c.run(context);
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        std::string detail = outcome.detail;
        if (c.budget.count() > 0 && elapsed > c.budget) {
            outcome.pass = false;
            detail += "; over the " + std::to_string(c.budget.count()) + " s budget";
        }
        std::printf("%s %s (%.2f s): %s\n", outcome.pass ? "PASS" : "FAIL", c.name.c_str(), elapsed.count(),
                    detail.c_str());
        std::fflush(stdout);
        if (!outcome.pass) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
