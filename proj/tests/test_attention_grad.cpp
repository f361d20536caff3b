#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"

#include "cog/attention.hpp"
#include "cog/matrix.hpp"
#include "cog/rng.hpp"

using cog::Matrix;

namespace {

constexpr double kFdStep = 1e-6;

/// Central-difference gradient of loss(p) = sum(grad_a ⊙ activation(p)).
Matrix<double> fd_row_gradient(const Matrix<double>& p_masked, const Matrix<double>& grad_a,
                               cog::AttnActivation act) {
    Matrix<double> grad = Matrix<double>::Zero(1, p_masked.cols());
    for (cog::Index j = 0; j < p_masked.cols(); ++j) {
        if (p_masked(0, j) == cog::masked_sentinel<double>()) continue;
        Matrix<double> plus = p_masked, minus = p_masked;
        plus(0, j) += kFdStep;
        minus(0, j) -= kFdStep;
        const double lp = (cog::activation_rows(act, plus).weights.array() * grad_a.array()).sum();
        const double lm = (cog::activation_rows(act, minus).weights.array() * grad_a.array()).sum();
        grad(0, j) = (lp - lm) / (2.0 * kFdStep);
    }
    return grad;
}

double relative_error(const Matrix<double>& got, const Matrix<double>& want) {
    const double scale = std::max(want.norm(), 1e-12);
    return (got - want).norm() / scale;
}

/// Random live row with entries kept away from the sign boundary.
Matrix<double> random_row(const cog::Rng& rng, std::uint64_t& c, int len, int live) {
    Matrix<double> p(1, len);
    for (int j = 0; j < len; ++j) {
        if (j >= live) {
            p(0, j) = cog::masked_sentinel<double>();
            continue;
        }
        double v = 0.0;
        while (std::abs(v) < 1e-3) v = 6.0 * cog::rng_unit(rng, c++) - 3.0;
        p(0, j) = v;
    }
    return p;
}

}  // namespace

TEST_CASE("signed-attention Jacobian at p = [1, -1] is the pinned closed form") {
    Matrix<double> p(1, 2);
    p << 1.0, -1.0;
    const auto a = cog::cog_rows_fast(p);
    // columns of J recovered by feeding unit upstream gradients
    Matrix<double> j(2, 2);
    for (int r = 0; r < 2; ++r) {
        Matrix<double> grad_a = Matrix<double>::Zero(1, 2);
        grad_a(0, r) = 1.0;
        j.row(r) = cog::cog_backward(a.weights, grad_a);
    }
    for (int r = 0; r < 2; ++r)
        for (int s = 0; s < 2; ++s) CHECK(j(r, s) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax Jacobian closed forms") {
    Matrix<double> a(1, 2);
    a << 0.5, 0.5;
    Matrix<double> g(1, 2);
    g << 1.0, 0.0;
    const auto grad = cog::softmax_backward(a, g);
    CHECK(grad(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(grad(0, 1) == doctest::Approx(-0.25).epsilon(1e-12));

    Matrix<double> sat(1, 1);
    sat << 1.0;
    Matrix<double> gs(1, 1);
    gs << 2.5;
    CHECK(cog::softmax_backward(sat, gs)(0, 0) == doctest::Approx(0.0).epsilon(1e-15));

    Matrix<double> zero_grad = Matrix<double>::Zero(1, 2);
    CHECK(cog::softmax_backward(a, zero_grad).isZero(0.0));
}

TEST_CASE("zero upstream gradient gives zero score gradient") {
    Matrix<double> p(1, 3);
    p << 0.5, -1.25, 2.0;
    const auto a = cog::cog_rows_fast(p);
    Matrix<double> zero = Matrix<double>::Zero(1, 3);
    CHECK(cog::cog_backward(a.weights, zero).isZero(0.0));
}

TEST_CASE("all-positive rows reduce to the softmax backward") {
    const cog::Rng rng{21, cog::stream_of("reduction_grad")};
    std::uint64_t c = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Matrix<double> p(1, 6);
        for (int j = 0; j < 6; ++j) p(0, j) = 0.01 + 4.0 * cog::rng_unit(rng, c++);
        Matrix<double> g(1, 6);
        for (int j = 0; j < 6; ++j) g(0, j) = 2.0 * cog::rng_unit(rng, c++) - 1.0;
        const auto a = cog::cog_rows_fast(p);
        const auto via_cog = cog::cog_backward(a.weights, g);
        const auto via_softmax = cog::softmax_backward(a.weights, g);
        CHECK((via_cog - via_softmax).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("signed-attention backward matches central differences on 1000 rows") {
    const cog::Rng rng{22, cog::stream_of("fd_rows")};
    std::uint64_t c = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int len = 2 + static_cast<int>(cog::rng_bits(rng, c++) % 15);
        const int live = 1 + static_cast<int>(cog::rng_bits(rng, c++) % static_cast<std::uint64_t>(len));
        const auto p = random_row(rng, c, len, live);
        Matrix<double> g(1, len);
        for (int j = 0; j < len; ++j) g(0, j) = 2.0 * cog::rng_unit(rng, c++) - 1.0;

        const auto a = cog::cog_rows_fast(p);
        const auto analytic = cog::cog_backward(a.weights, g);
        const auto numeric = fd_row_gradient(p, g, cog::AttnActivation::Cog);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("softmax backward matches central differences") {
    const cog::Rng rng{23, cog::stream_of("fd_softmax")};
    std::uint64_t c = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int len = 2 + static_cast<int>(cog::rng_bits(rng, c++) % 10);
        const auto p = random_row(rng, c, len, len);
        Matrix<double> g(1, len);
        for (int j = 0; j < len; ++j) g(0, j) = 2.0 * cog::rng_unit(rng, c++) - 1.0;
        const auto a = cog::softmax_rows(p);
        const auto analytic = cog::softmax_backward(a.weights, g);
        const auto numeric = fd_row_gradient(p, g, cog::AttnActivation::Softmax);
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("multihead backward matches finite differences over params and input") {
    const int d_model = 8, n_heads = 2, n = 5;
    auto mk = [&](const char* name, double std) {
        return cog::randn<double>(cog::Rng{31, cog::stream_of(name)}, d_model, d_model, std);
    };
    cog::AttentionParams<double> ap{mk("gq", 0.4), mk("gk", 0.4), mk("gv", 0.4), mk("go", 0.4),
                                    n_heads};
    const auto x = cog::randn<double>(cog::Rng{31, cog::stream_of("gx")}, n, d_model, 1.0);
    const auto upstream = cog::randn<double>(cog::Rng{31, cog::stream_of("gu")}, n, d_model, 1.0);

    for (const auto act : {cog::AttnActivation::Softmax, cog::AttnActivation::Cog}) {
        CAPTURE(static_cast<int>(act));
        auto loss_of = [&](const Matrix<double>& xin, const cog::AttentionParams<double>& params) {
            const auto res = cog::multihead_block(xin, params, act);
            return (res.out.array() * upstream.array()).sum();
        };

        cog::MultiheadTrace<double> trace;
        const auto out = cog::multihead_forward(x, ap, act, 10000.0, true, &trace);
        (void)out;
        auto grad_ap = cog::zeros_like(ap);
        const auto grad_x =
            cog::multihead_backward(upstream, x, ap, trace, act, 10000.0, true, grad_ap);

        const double h = 1e-6;
        // input gradient
        double worst = 0.0;
        for (cog::Index i = 0; i < n; ++i)
            for (cog::Index j = 0; j < d_model; ++j) {
                auto xp = x, xm = x;
                xp(i, j) += h;
                xm(i, j) -= h;
                const double fd = (loss_of(xp, ap) - loss_of(xm, ap)) / (2 * h);
                worst = std::max(worst, std::abs(fd - grad_x(i, j)) /
                                            std::max(std::abs(fd), 1e-8));
            }
        CHECK(worst <= 1e-4);

        // parameter gradients
        struct Slot {
            Matrix<double> cog::AttentionParams<double>::* member;
            const Matrix<double>* grad;
        };
        const Slot slots[] = {{&cog::AttentionParams<double>::w_q, &grad_ap.w_q},
                              {&cog::AttentionParams<double>::w_k, &grad_ap.w_k},
                              {&cog::AttentionParams<double>::w_v, &grad_ap.w_v},
                              {&cog::AttentionParams<double>::w_o, &grad_ap.w_o}};
        for (const auto& slot : slots) {
            Matrix<double> fd_grad(d_model, d_model);
            for (cog::Index i = 0; i < d_model; ++i)
                for (cog::Index j = 0; j < d_model; ++j) {
                    auto pp = ap, pm = ap;
                    (pp.*slot.member)(i, j) += h;
                    (pm.*slot.member)(i, j) -= h;
                    fd_grad(i, j) = (loss_of(x, pp) - loss_of(x, pm)) / (2 * h);
                }
            CHECK(relative_error(*slot.grad, fd_grad) <= 1e-6);
        }
    }
}
