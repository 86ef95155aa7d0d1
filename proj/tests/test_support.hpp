#pragma once

// Shared helpers for the test suites: random rigid motions, reference
// quadrature and brute-force oracles that do not reuse library code paths.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "hopflab/vec3.hpp"

namespace hopflab::testkit {

struct Rotation {
    Vec3 r0, r1, r2; // rows
    Vec3 operator()(const Vec3& v) const { return {dot(r0, v), dot(r1, v), dot(r2, v)}; }
};

// Uniformly random rotation from a random unit quaternion.
inline Rotation random_rotation(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    double q[4];
    double s = 0;
    for (double& c : q) {
        c = n(rng);
        s += c * c;
    }
    s = std::sqrt(s);
    const double w = q[0] / s, x = q[1] / s, y = q[2] / s, z = q[3] / s;
    return {{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
            {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
            {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}};
}

inline Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v{n(rng), n(rng), n(rng)};
    return v / norm(v);
}

// Composite Simpson rule with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n)
{
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i)
        s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

// Closed polygon approximating a circle.
inline std::vector<Vec3> circle_polyline(const Vec3& center, const Vec3& axis, double radius, int n,
                                         double phase = 0.0)
{
    const Vec3 e1 = any_orthogonal(axis);
    const Vec3 e2 = cross(axis, e1);
    std::vector<Vec3> v;
    v.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double t = phase + 2.0 * std::numbers::pi * i / n;
        v.push_back(center + radius * (std::cos(t) * e1 + std::sin(t) * e2));
    }
    return v;
}

} // namespace hopflab::testkit
