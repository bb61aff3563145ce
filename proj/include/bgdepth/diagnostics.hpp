#pragma once

#include <string>
#include <utility>
#include <vector>

namespace bgdepth {

// Central finite-difference verification of every differentiable operation,
// three random shapes per op, plus the end-to-end lift/forward/slice/mse
// chain on an 8x8x8 grid. Returns (op name, max relative error) pairs.
std::vector<std::pair<std::string, double>> run_gradient_suite(std::uint64_t seed = 12345);

// Largest error across the suite.
double gradient_suite_max_error(const std::vector<std::pair<std::string, double>>& results);

}  // namespace bgdepth
