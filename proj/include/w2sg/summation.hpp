#pragma once

#include <cstddef>
#include <span>

namespace w2sg {

/// Pairwise (tree) summation. The reduction order depends only on the length,
/// so results are bit-stable regardless of how the terms were produced.
inline double pairwise_sum(std::span<const double> xs) {
    constexpr std::size_t block = 8;
    if (xs.size() <= block) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

}  // namespace w2sg
