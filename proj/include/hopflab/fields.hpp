#pragma once

// Divergence-free vector fields on R^3 built from circular flux tubes.
//
// A tube with core circle of radius R around `axis` through `center` carries
// the field F(r) e_phi, where r is the distance to the core circle, e_phi the
// azimuthal unit vector about the axis and F(r) = F0 (1 - (r/a)^2)^2 for r < a.
// Since grad r is orthogonal to e_phi and div e_phi = 0, the field is exactly
// divergence free. Superpositions are sums over tubes.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "vec3.hpp"

namespace hopflab {

struct TubeSpec {
    Vec3 center{};
    Vec3 axis{0, 0, 1};
    double major_radius = 1.0;
    double minor_radius = 0.5;
    double amplitude = 1.0;
    int sign = +1;

    // Throws ValidationError when an invariant does not hold.
    void validate() const
    {
        if (!is_finite(center) || !is_finite(axis))
            throw ValidationError("tube: non-finite center or axis");
        if (std::fabs(norm(axis) - 1.0) > 1e-12)
            throw ValidationError("tube: axis must be a unit vector (|axis| = " +
                                  std::to_string(norm(axis)) + ")");
        if (!(major_radius > 0.0) || !std::isfinite(major_radius))
            throw ValidationError("tube: major_radius must be positive");
        if (!(minor_radius > 0.0) || !(minor_radius < major_radius))
            throw ValidationError("tube: minor_radius must satisfy 0 < a < R");
        if (!std::isfinite(amplitude))
            throw ValidationError("tube: amplitude must be finite");
        if (sign != 1 && sign != -1)
            throw ValidationError("tube: sign must be +1 or -1");
    }

    double volume() const
    {
        return 2.0 * std::numbers::pi * std::numbers::pi * major_radius * minor_radius * minor_radius;
    }
};

/// Axis-aligned box. A default box is the degenerate box at the origin.
struct AABB {
    Vec3 min_corner{};
    Vec3 max_corner{};

    Vec3 extent() const { return max_corner - min_corner; }
    double volume() const
    {
        const Vec3 e = extent();
        return e.x * e.y * e.z;
    }
    double diagonal() const { return norm(extent()); }
    bool contains(const Vec3& p) const
    {
        return p.x >= min_corner.x && p.x <= max_corner.x && p.y >= min_corner.y &&
               p.y <= max_corner.y && p.z >= min_corner.z && p.z <= max_corner.z;
    }
    bool intersects(const AABB& o) const
    {
        for (int i = 0; i < 3; ++i)
            if (max_corner[i] < o.min_corner[i] || o.max_corner[i] < min_corner[i])
                return false;
        return true;
    }
};

inline AABB unite(const AABB& a, const AABB& b)
{
    AABB r;
    for (int i = 0; i < 3; ++i) {
        r.min_corner[i] = std::min(a.min_corner[i], b.min_corner[i]);
        r.max_corner[i] = std::max(a.max_corner[i], b.max_corner[i]);
    }
    return r;
}

/// Signed cross-sectional flux of a tube, sign * pi * F0 * a^2 / 3.
inline double tube_flux(const TubeSpec& tube)
{
    return tube.sign * std::numbers::pi * tube.amplitude * tube.minor_radius * tube.minor_radius / 3.0;
}

/// Tight bounding box of a single tube's solid torus.
inline AABB tube_box(const TubeSpec& t)
{
    AABB box;
    for (int i = 0; i < 3; ++i) {
        const double half = t.major_radius * std::sqrt(std::max(0.0, 1.0 - t.axis[i] * t.axis[i])) +
                            t.minor_radius;
        box.min_corner[i] = t.center[i] - half;
        box.max_corner[i] = t.center[i] + half;
    }
    return box;
}

namespace detail {

// Geometry of a point relative to one tube.
struct TubeLocal {
    Vec3 radial;     // component of p - center orthogonal to the axis
    double rho = 0;  // |radial|
    double height = 0;
    double r2 = 0;   // squared distance to the core circle
};

inline TubeLocal tube_local(const TubeSpec& t, const Vec3& p)
{
    TubeLocal l;
    const Vec3 q = p - t.center;
    l.height = dot(q, t.axis);
    l.radial = q - l.height * t.axis;
    l.rho = norm(l.radial);
    const double dr = l.rho - t.major_radius;
    l.r2 = dr * dr + l.height * l.height;
    return l;
}

inline Vec3 eval_tube(const TubeSpec& t, const Vec3& p)
{
    const TubeLocal l = tube_local(t, p);
    const double a2 = t.minor_radius * t.minor_radius;
    if (l.r2 >= a2)
        return {};
    const double s = 1.0 - l.r2 / a2;
    const double magnitude = t.sign * t.amplitude * s * s;
    // rho > R - a > 0 inside the support
    return cross(t.axis, l.radial) * (magnitude / l.rho);
}

} // namespace detail

/// Immutable superposition of flux tubes. The empty list is the zero field.
class FieldSpec {
public:
    FieldSpec() = default;

    explicit FieldSpec(std::vector<TubeSpec> tubes, std::string name = {})
        : tubes_(std::move(tubes)), name_(std::move(name))
    {
        for (const auto& t : tubes_)
            t.validate();
    }

    std::span<const TubeSpec> tubes() const { return tubes_; }
    const std::string& name() const { return name_; }
    bool empty() const { return tubes_.empty(); }

    Vec3 operator()(const Vec3& p) const
    {
        Vec3 v{};
        for (const auto& t : tubes_)
            v += detail::eval_tube(t, p);
        return v;
    }

    /// Number of tube supports containing p.
    int support_count(const Vec3& p) const
    {
        int n = 0;
        for (const auto& t : tubes_)
            n += detail::tube_local(t, p).r2 < t.minor_radius * t.minor_radius ? 1 : 0;
        return n;
    }

    /// Union of the tube lists (the sum of both fields).
    friend FieldSpec operator+(const FieldSpec& a, const FieldSpec& b)
    {
        std::vector<TubeSpec> all(a.tubes_);
        all.insert(all.end(), b.tubes_.begin(), b.tubes_.end());
        std::string name = a.name_.empty() || b.name_.empty() ? a.name_ + b.name_
                                                              : a.name_ + "+" + b.name_;
        return FieldSpec(std::move(all), std::move(name));
    }

private:
    std::vector<TubeSpec> tubes_;
    std::string name_;
};

inline Vec3 eval(const FieldSpec& field, const Vec3& p) { return field(p); }

/// Central-difference divergence with step h.
inline double divergence(const FieldSpec& field, const Vec3& p, double h)
{
    double div = 0.0;
    for (int i = 0; i < 3; ++i) {
        Vec3 e{};
        e[i] = h;
        div += (field(p + e)[i] - field(p - e)[i]) / (2.0 * h);
    }
    return div;
}

/// Box containing every tube support (no padding); degenerate box at the
/// origin for the empty field.
inline AABB support_box(const FieldSpec& field)
{
    const auto tubes = field.tubes();
    if (tubes.empty())
        return {};
    AABB box = tube_box(tubes.front());
    for (const auto& t : tubes.subspan(1))
        box = unite(box, tube_box(t));
    return box;
}

/// Total volume of the tube supports counted with multiplicity.
inline double support_volume(const FieldSpec& field)
{
    double v = 0.0;
    for (const auto& t : field.tubes())
        v += t.volume();
    return v;
}

/// Hopf pair: X on the unit circle in the xy-plane (axis +z), Y on the unit
/// circle in the xz-plane centred at (1,0,0) (axis +y). The cores are 1 apart,
/// so 0 < a < 1/2 keeps the supports disjoint. With these orientations the
/// cores have linking number +1.
inline std::pair<FieldSpec, FieldSpec> make_hopf_pair(double a, double amplitude)
{
    if (!(a > 0.0) || !(a < 0.5))
        throw ValidationError("hopf pair: minor radius must satisfy 0 < a < 1/2 (got " +
                              std::to_string(a) + ")");
    TubeSpec x{{0, 0, 0}, {0, 0, 1}, 1.0, a, amplitude, +1};
    TubeSpec y{{1, 0, 0}, {0, 1, 0}, 1.0, a, amplitude, +1};
    return {FieldSpec({x}, "X"), FieldSpec({y}, "Y")};
}

} // namespace hopflab
