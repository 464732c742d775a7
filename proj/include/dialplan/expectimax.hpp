#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dialplan/core.hpp"
#include "dialplan/synthetic.hpp"

namespace dialplan {

struct ExpectimaxResult {
    ActId optimal_act = 0;
    std::vector<double> values;  // exact expected terminal value per first act
};

inline constexpr double kExpectimaxEnumerationCap = 1e7;

namespace detail {

// Plain enumeration, no memoisation: the solver serves as an independent reference.
inline double expectimax_value(const SyntheticTask& task, int state, int depth) {
    if (depth == 0) return inclination_value(state);
    double best = -std::numeric_limits<double>::infinity();
    for (ActId a = 0; a < task.act_count(); ++a) {
        const auto& d = task.distribution(state, a);
        double v = 0.0;
        for (int k = 0; k < 3; ++k)
            if (d[k] > 0.0) v += d[k] * expectimax_value(task, clamp_inclination(state + k - 1), depth - 1);
        if (v > best) best = v;
    }
    return best;
}

}  // namespace detail

/// Exhaustive expectimax over `depth` act/outcome layers starting from the
/// inclination replayed from `h`. Terminal value is inclination / 2.
inline ExpectimaxResult solve_expectimax(const SyntheticTask& task, const DialogueHistory& h, int depth) {
    if (depth < 1) throw std::invalid_argument("solve_expectimax: depth must be at least 1");
    const double size = std::pow(static_cast<double>(task.act_count()) * 3.0, depth);
    if (size > kExpectimaxEnumerationCap)
        throw std::length_error("solve_expectimax: enumeration of " + std::to_string(size) +
                                " sequences exceeds the 1e7 cap");

    const int root = SyntheticOracle(task).hidden_state(h);
    ExpectimaxResult out;
    out.values.resize(task.act_count());
    for (ActId a = 0; a < task.act_count(); ++a) {
        const auto& d = task.distribution(root, a);
        double v = 0.0;
        for (int k = 0; k < 3; ++k)
            if (d[k] > 0.0) v += d[k] * detail::expectimax_value(task, clamp_inclination(root + k - 1), depth - 1);
        out.values[a] = v;
    }
    out.optimal_act = argmax_lowest(std::span<const double>(out.values));
    return out;
}

}  // namespace dialplan
