#pragma once

// Independent reference implementations used as test oracles. Everything
// here is written as plain scalar loops in long double, straight from the
// defining formulas, and deliberately shares no code with the library
// kernels it checks.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

enum class ShiftMode { MaxAbs, Zero };

/// Signed-exponential attention row: s = sign(p), e_j = s_j exp(s_j p_j - m),
/// a_j = e_j / sum_k |e_k|, with m = max |p| over live entries (or 0 under
/// ShiftMode::Zero). Masked and exactly-zero entries contribute nothing; an
/// empty normalizer yields an all-zero row.
inline std::vector<double> cog_row(const std::vector<double>& p, const std::vector<bool>& masked,
                                   ShiftMode mode = ShiftMode::MaxAbs) {
    const std::size_t n = p.size();
    long double m = 0.0L;
    if (mode == ShiftMode::MaxAbs) {
        for (std::size_t j = 0; j < n; ++j)
            if (!masked[j] && std::fabs(static_cast<long double>(p[j])) > m)
                m = std::fabs(static_cast<long double>(p[j]));
    }
    std::vector<long double> e(n, 0.0L);
    long double denom = 0.0L;
    for (std::size_t j = 0; j < n; ++j) {
        if (masked[j] || p[j] == 0.0) continue;
        const long double s = p[j] > 0.0 ? 1.0L : -1.0L;
        e[j] = s * std::exp(s * static_cast<long double>(p[j]) - m);
        denom += std::fabs(e[j]);
    }
    std::vector<double> a(n, 0.0);
    if (denom > 0.0L)
        for (std::size_t j = 0; j < n; ++j) a[j] = static_cast<double>(e[j] / denom);
    return a;
}

/// Standard max-shifted softmax row; masked entries get weight 0.
inline std::vector<double> softmax_row(const std::vector<double>& p,
                                       const std::vector<bool>& masked) {
    const std::size_t n = p.size();
    long double m = -std::numeric_limits<long double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
        if (!masked[j] && static_cast<long double>(p[j]) > m) m = p[j];
    std::vector<long double> e(n, 0.0L);
    long double denom = 0.0L;
    for (std::size_t j = 0; j < n; ++j) {
        if (masked[j]) continue;
        e[j] = std::exp(static_cast<long double>(p[j]) - m);
        denom += e[j];
    }
    std::vector<double> a(n, 0.0);
    if (denom > 0.0L)
        for (std::size_t j = 0; j < n; ++j) a[j] = static_cast<double>(e[j] / denom);
    return a;
}

}  // namespace oracle
