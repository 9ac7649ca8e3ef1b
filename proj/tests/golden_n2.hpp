#pragma once

#include <string>
#include <vector>

#include "symode/n2_cases.hpp"
#include "test_util.hpp"

namespace symode::testing {

struct GoldenCase {
    std::string label;
    System sys;
    long k;
    long dim_ess;
};

/// Library representatives paired with the expected (k, dim_ess) of their table row.
inline std::vector<GoldenCase> golden_n2() {
    std::vector<GoldenCase> out;
    for (auto& c : n2_representatives(Field::complex, true)) {
        const auto [k, dim] = n2_reference(c.label);
        out.push_back({c.label, c.sys, k, dim});
    }
    return out;
}

} // namespace symode::testing
