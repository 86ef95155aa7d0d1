#pragma once

// Gauss-Legendre rules and adaptive quadrature of double line integrals
// over pairs of panels with a kernel that is singular on the diagonal.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "vec3.hpp"

namespace hopflab {

/// Gauss-Legendre nodes and weights mapped to [0, 1].
struct GaussRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

inline GaussRule compute_gauss_rule(int n)
{
    GaussRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        // Newton iteration on P_n from the Chebyshev-like initial guess.
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 1.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::fabs(dx) < 1e-16)
                break;
        }
        // Recompute derivative at the converged node.
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n == 1 ? 1.0 : n * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[n - 1 - i] = 0.5 * (x + 1.0);
        rule.weights[n - 1 - i] = 0.5 * w;
    }
    return rule;
}

} // namespace detail

inline constexpr int max_gauss_order = 16;

/// Cached rule of order n in [1, max_gauss_order].
inline const GaussRule& gauss_rule(int n)
{
    static const auto rules = [] {
        std::array<GaussRule, max_gauss_order + 1> r;
        for (int k = 1; k <= max_gauss_order; ++k)
            r[k] = detail::compute_gauss_rule(k);
        return r;
    }();
    return rules[std::clamp(n, 1, max_gauss_order)];
}

/// Straight segment a -> b parameterized on [0, 1].
struct SegmentPanel {
    Vec3 a, b;

    Vec3 point(double u) const { return a + u * (b - a); }
    Vec3 tangent(double) const { return b - a; }
    Vec3 center() const { return 0.5 * (a + b); }
    double radius() const { return 0.5 * norm(b - a); }
    SegmentPanel sub(double u0, double u1) const { return {point(u0), point(u1)}; }
};

struct PairQuadratureResult {
    double value = 0.0;
    double error = 0.0;
    long evaluations = 0;
};

struct PairQuadratureOptions {
    double singular_floor = 1e-10;
    int max_depth = 40;
    double rel_tol = 0.0; // also accept when |high - low| <= rel_tol * |high|
};

namespace detail {

template <class PA, class PB, class Integrand>
double tensor_rule(const PA& pa, const PB& pb, int n, Integrand& f, long& evals)
{
    const GaussRule& g = gauss_rule(n);
    std::array<Vec3, max_gauss_order> xb, vb;
    for (int j = 0; j < n; ++j) {
        xb[j] = pb.point(g.nodes[j]);
        vb[j] = pb.tangent(g.nodes[j]) * g.weights[j];
    }
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const Vec3 xa = pa.point(g.nodes[i]);
        const Vec3 va = pa.tangent(g.nodes[i]) * g.weights[i];
        double row = 0.0;
        for (int j = 0; j < n; ++j)
            row += f(xa, va, xb[j], vb[j]);
        sum += row;
    }
    evals += static_cast<long>(n) * n;
    return sum;
}

// Starting order from the ratio of the panel size to the separation.
inline int initial_order(double ratio)
{
    if (ratio < 0.05)
        return 1;
    if (ratio < 0.15)
        return 2;
    if (ratio < 0.35)
        return 3;
    if (ratio < 0.6)
        return 4;
    return 5;
}

template <class PA, class PB, class Integrand>
void integrate_pair_rec(const PA& pa, const PB& pb, double tol, int depth, Integrand& f,
                        const PairQuadratureOptions& opt, PairQuadratureResult& out)
{
    const double ra = pa.radius();
    const double rb = pb.radius();
    const double gap = distance(pa.center(), pb.center()) - ra - rb;
    const double longer = 2.0 * std::max(ra, rb);

    const bool too_close = gap <= longer;
    if (!too_close || depth >= opt.max_depth) {
        if (gap < opt.singular_floor && depth >= opt.max_depth)
            throw ProximityError("panels closer than the singular floor", std::max(gap, 0.0));
        // Raise the order before subdividing.
        int n = initial_order(longer / std::max(gap, 1e-300));
        double low = tensor_rule(pa, pb, n, f, out.evaluations);
        for (;;) {
            const double high = tensor_rule(pa, pb, n + 2, f, out.evaluations);
            const double err = std::fabs(high - low);
            const bool last = n + 2 >= max_gauss_order;
            if (err <= tol || err <= opt.rel_tol * std::fabs(high) || depth >= opt.max_depth) {
                out.value += high;
                out.error += err;
                return;
            }
            if (last)
                break;
            n += 2;
            low = high;
        }
    }
    // Split the longer panel.
    if (ra >= rb) {
        integrate_pair_rec(pa.sub(0.0, 0.5), pb, 0.5 * tol, depth + 1, f, opt, out);
        integrate_pair_rec(pa.sub(0.5, 1.0), pb, 0.5 * tol, depth + 1, f, opt, out);
    } else {
        integrate_pair_rec(pa, pb.sub(0.0, 0.5), 0.5 * tol, depth + 1, f, opt, out);
        integrate_pair_rec(pa, pb.sub(0.5, 1.0), 0.5 * tol, depth + 1, f, opt, out);
    }
}

} // namespace detail

/// Adaptive tensor Gauss-Legendre quadrature of
///   int_0^1 int_0^1 f(pa(u), pa'(u), pb(v), pb'(v)) du dv
/// with recursive subdivision of the longer panel while the panels are closer
/// than the longer panel's length, and an order-n vs order-(n+2) error check;
/// separated pairs that miss the tolerance first raise the order up to 16.
///
/// A panel type provides point(u), tangent(u), center(), radius() (bounding
/// sphere about center()) and sub(u0, u1).
template <class PA, class PB, class Integrand>
PairQuadratureResult integrate_pair(const PA& pa, const PB& pb, double tol, Integrand&& f,
                                    const PairQuadratureOptions& opt = {})
{
    PairQuadratureResult out;
    detail::integrate_pair_rec(pa, pb, tol, 0, f, opt, out);
    return out;
}

} // namespace hopflab
