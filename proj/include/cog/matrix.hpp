#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace cog {

using Index = Eigen::Index;

/// Dense row-major matrix, the substrate for all math in this library.
/// Scalar is float (single precision) or double.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using ColVec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Score-level sentinel for masked entries.
template <typename Scalar>
constexpr Scalar masked_sentinel() {
    return -std::numeric_limits<Scalar>::infinity();
}

inline void check_shape(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("shape mismatch: " + what);
}

/// Matrix product. Evaluated through Eigen's fixed single-threaded blocking,
/// so repeated runs of the same build produce bit-identical results at a
/// given precision.
template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
    check_shape(a.cols() == b.rows(), "matmul inner dimensions " + std::to_string(a.cols()) +
                                          " vs " + std::to_string(b.rows()));
    Matrix<Scalar> out(a.rows(), b.cols());
    out.noalias() = a * b;
    return out;
}

enum class RowReduce { Max, Sum, AbsMax, AbsSum };

/// Per-row reduction values plus a degenerate flag per row. A row is
/// degenerate when an abs_* reduction finds no entries left after skipping
/// masked sentinels; its value is reported as 0.
template <typename Scalar>
struct RowReduction {
    ColVec<Scalar> values;
    std::vector<std::uint8_t> degenerate;
};

/// Row reductions over a 2-D matrix. The abs_* variants skip masked
/// sentinel entries (-inf) entirely; max and sum treat every entry as-is.
template <typename Scalar>
RowReduction<Scalar> rowwise(const Matrix<Scalar>& x, RowReduce op) {
    const Scalar ninf = masked_sentinel<Scalar>();
    RowReduction<Scalar> out;
    out.values.resize(x.rows());
    out.degenerate.assign(static_cast<std::size_t>(x.rows()), 0);
    for (Index i = 0; i < x.rows(); ++i) {
        switch (op) {
        case RowReduce::Max:
            out.values[i] = x.cols() > 0 ? x.row(i).maxCoeff() : Scalar(0);
            break;
        case RowReduce::Sum:
            out.values[i] = x.row(i).sum();
            break;
        case RowReduce::AbsMax:
        case RowReduce::AbsSum: {
            Scalar acc = 0;
            bool any = false;
            for (Index j = 0; j < x.cols(); ++j) {
                const Scalar v = x(i, j);
                if (v == ninf) continue;
                const Scalar a = std::abs(v);
                acc = (op == RowReduce::AbsMax) ? (any ? std::max(acc, a) : a) : acc + a;
                any = true;
            }
            out.values[i] = any ? acc : Scalar(0);
            if (!any) out.degenerate[static_cast<std::size_t>(i)] = 1;
            break;
        }
        }
    }
    return out;
}

enum class MapOp { Exp, Sign, Abs, Neg, Scale };

/// Elementwise map. Sign is exact: sign(0) == 0. Exp assumes callers keep
/// inputs <= 0 when overflow must be impossible (max-subtraction contract).
template <typename Scalar>
Matrix<Scalar> map(const Matrix<Scalar>& x, MapOp op, Scalar c = Scalar(1)) {
    switch (op) {
    case MapOp::Exp: return x.array().exp().matrix();
    case MapOp::Sign: return x.array().sign().matrix();
    case MapOp::Abs: return x.array().abs().matrix();
    case MapOp::Neg: return (-x.array()).matrix();
    case MapOp::Scale: return (x.array() * c).matrix();
    }
    throw std::invalid_argument("map: unknown op");
}

/// Replace entries above the diagonal with the masked sentinel (-inf).
/// Idempotent; requires a square score matrix.
template <typename Scalar>
Matrix<Scalar> apply_causal_mask(const Matrix<Scalar>& p) {
    check_shape(p.rows() == p.cols(), "apply_causal_mask expects a square matrix");
    Matrix<Scalar> out = p;
    const Scalar ninf = masked_sentinel<Scalar>();
    for (Index i = 0; i < out.rows(); ++i)
        for (Index j = i + 1; j < out.cols(); ++j) out(i, j) = ninf;
    return out;
}

} // namespace cog
