#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "registerscope/errors.hpp"
#include "registerscope/rng.hpp"

namespace regscope {

/// `count` distinct indices drawn uniformly from [0, population) minus
/// `exclusion`, returned ascending. Partial Fisher-Yates over the allowed ids.
inline std::vector<std::uint32_t> sample_without_replacement(std::uint32_t population, std::size_t count,
                                                             const std::set<std::uint32_t>& exclusion,
                                                             StreamRng& rng) {
    std::vector<std::uint32_t> allowed;
    allowed.reserve(population);
    for (std::uint32_t i = 0; i < population; ++i) {
        if (!exclusion.contains(i)) allowed.push_back(i);
    }
    if (count > allowed.size()) {
        throw ComputeError("cannot sample " + std::to_string(count) + " features from " +
                           std::to_string(allowed.size()) + " eligible");
    }
    for (std::size_t i = 0; i < count; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(allowed.size() - i));
        std::swap(allowed[i], allowed[j]);
    }
    allowed.resize(count);
    std::sort(allowed.begin(), allowed.end());
    return allowed;
}

}  // namespace regscope
