#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

namespace acceptance {

struct Context {
    std::string cli_path;  // registerscope binary, for subprocess checks
};

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    std::string summary;
    std::chrono::duration<double> budget;  // zero: no runtime bound
    std::function<Outcome(const Context&)> run;
};

const std::vector<Criterion>& all_criteria();

}  // namespace acceptance
