#pragma once

#include "cog/matrix.hpp"

#include <cmath>
#include <span>
#include <stdexcept>

namespace cog {

namespace detail {

/// Rotates consecutive coordinate pairs of each row by dir * pos * theta_i,
/// theta_i = base^(-2i/d). dir = -1 undoes a forward rotation (rotations are
/// orthogonal, so this is also the gradient map).
template <typename Scalar>
Matrix<Scalar> rope_rotate(const Matrix<Scalar>& x, std::span<const int> positions, double base,
                           double dir) {
    if (x.cols() % 2 != 0) throw std::invalid_argument("rope: head dimension must be even");
    check_shape(static_cast<Index>(positions.size()) == x.rows(), "rope positions vs rows");
    const Index pairs = x.cols() / 2;
    Matrix<Scalar> out(x.rows(), x.cols());
    std::vector<double> inv_freq(static_cast<std::size_t>(pairs));
    for (Index i = 0; i < pairs; ++i)
        inv_freq[static_cast<std::size_t>(i)] =
            std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(x.cols()));
    for (Index r = 0; r < x.rows(); ++r) {
        const double pos = dir * static_cast<double>(positions[static_cast<std::size_t>(r)]);
        for (Index i = 0; i < pairs; ++i) {
            const double angle = pos * inv_freq[static_cast<std::size_t>(i)];
            const Scalar c = static_cast<Scalar>(std::cos(angle));
            const Scalar s = static_cast<Scalar>(std::sin(angle));
            const Scalar x0 = x(r, 2 * i);
            const Scalar x1 = x(r, 2 * i + 1);
            out(r, 2 * i) = x0 * c - x1 * s;
            out(r, 2 * i + 1) = x0 * s + x1 * c;
        }
    }
    return out;
}

} // namespace detail

/// Rotary position embedding over rows of x (one row per position).
template <typename Scalar>
Matrix<Scalar> rope_apply(const Matrix<Scalar>& x, std::span<const int> positions, double base) {
    return detail::rope_rotate(x, positions, base, +1.0);
}

/// Gradient of rope_apply: rotate by the opposite angles.
template <typename Scalar>
Matrix<Scalar> rope_backward(const Matrix<Scalar>& grad, std::span<const int> positions, double base) {
    return detail::rope_rotate(grad, positions, base, -1.0);
}

} // namespace cog
