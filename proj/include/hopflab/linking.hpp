#pragma once

// Linking numbers of closed polylines in R^3.
//
// The linking form is the Gauss kernel
//   L(V, W) = <V, W x (x - y)> / (4 pi |x - y|^3),   V in T_x, W in T_y,
// and lk(A, B) is its double line integral over two disjoint closed curves.
// Flow arcs are closed by the straight segment from the end point back to
// the start, which is the unique minimal geodesic in R^3.
//
// Orientation convention: right-handed ambient frame, curves oriented by their
// vertex order (flow direction for closed flow arcs). With this convention the
// crossing oracle counts a crossing as +1 when (t_over x t_under) points to the
// viewer; it agrees with the Gauss integral (checked in the tests).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "fields.hpp"
#include "flow.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "vec3.hpp"

namespace hopflab {

inline constexpr double singular_distance = 1e-14;
inline constexpr double vertex_merge_distance = 1e-12;

namespace detail {

inline double kernel_unchecked(const Vec3& x, const Vec3& v, const Vec3& y, const Vec3& w)
{
    const Vec3 d = x - y;
    const double r2 = norm2(d);
    return dot(v, cross(w, d)) / (4.0 * std::numbers::pi * r2 * std::sqrt(r2));
}

} // namespace detail

/// Gauss linking kernel L(V, W) for V at x and W at y.
inline double kernel(const Vec3& x, const Vec3& v, const Vec3& y, const Vec3& w)
{
    if (distance(x, y) < singular_distance)
        throw SingularEvaluationError("kernel evaluated at coincident points");
    return detail::kernel_unchecked(x, v, y, w);
}

/// Half-open range of edge indices.
struct EdgeRange {
    std::size_t first = 0;
    std::size_t end = 0;
    bool empty() const { return end <= first; }
    bool contains(std::size_t i) const { return i >= first && i < end; }
};

/// Oriented closed polyline; edge i joins vertex i to vertex (i + 1) mod n.
/// `closure` marks the edges of the straight short path.
class ClosedCurve {
public:
    ClosedCurve() = default;

    explicit ClosedCurve(std::vector<Vec3> vertices, EdgeRange closure = {})
        : vertices_(std::move(vertices)), closure_(closure)
    {
        for (const auto& v : vertices_)
            if (!is_finite(v))
                throw ValidationError("closed curve: non-finite vertex");
        if (vertices_.size() < 3)
            throw ValidationError("closed curve: need at least 3 vertices");
        for (std::size_t i = 0; i < vertices_.size(); ++i)
            if (distance(vertices_[i], vertices_[(i + 1) % vertices_.size()]) <= vertex_merge_distance)
                throw ValidationError("closed curve: consecutive vertices coincide at index " +
                                      std::to_string(i));
        if (closure_.end > vertices_.size() || closure_.first > closure_.end)
            throw ValidationError("closed curve: closure range out of bounds");
    }

    /// Curve collapsed to a point (or a doubly traversed chord): links nothing.
    static ClosedCurve degenerate(const Vec3& at)
    {
        ClosedCurve c;
        c.vertices_ = {at};
        c.degenerate_ = true;
        return c;
    }

    const std::vector<Vec3>& vertices() const { return vertices_; }
    std::size_t size() const { return vertices_.size(); }
    std::size_t edge_count() const { return degenerate_ ? 0 : vertices_.size(); }
    EdgeRange closure() const { return closure_; }
    bool is_degenerate() const { return degenerate_; }

    SegmentPanel edge(std::size_t i) const
    {
        return {vertices_[i], vertices_[(i + 1) % vertices_.size()]};
    }

    double max_edge_length() const
    {
        double m = 0.0;
        for (std::size_t i = 0; i < edge_count(); ++i)
            m = std::max(m, 2.0 * edge(i).radius());
        return m;
    }

private:
    std::vector<Vec3> vertices_;
    EdgeRange closure_{};
    bool degenerate_ = false;
};

/// Same curve traversed backwards (the closure range is mapped along).
inline ClosedCurve reversed(const ClosedCurve& c)
{
    if (c.is_degenerate())
        return c;
    const std::size_t n = c.size();
    std::vector<Vec3> v(c.vertices().rbegin(), c.vertices().rend());
    // Old edge i (vertex i -> i+1) becomes new edge n - 2 - i (mod n).
    EdgeRange cl{};
    if (!c.closure().empty()) {
        const std::size_t a = (2 * n - 2 - (c.closure().end - 1)) % n;
        cl = {a, a + (c.closure().end - c.closure().first)};
        if (cl.end > n)
            cl = {}; // wraps around; drop the marker
    }
    return ClosedCurve(std::move(v), cl);
}

/// Closes a flow arc with the straight segment from its end back to its start,
/// subdivided so no closure edge is longer than `max_seglen` (default: the
/// longest chord of the arc). Vertices closer than 1e-12 are merged; fewer than
/// three distinct vertices give a degenerate curve.
inline ClosedCurve close_curve(const Trajectory& traj, std::optional<double> max_seglen = {})
{
    const auto& s = traj.samples();
    if (s.empty())
        throw ValidationError("close_curve: empty trajectory");
    std::vector<Vec3> arc;
    arc.reserve(s.size());
    arc.push_back(s.front().p);
    double longest = 0.0;
    for (std::size_t i = 1; i < s.size(); ++i) {
        const double d = distance(s[i].p, arc.back());
        if (d > vertex_merge_distance) {
            longest = std::max(longest, d);
            arc.push_back(s[i].p);
        }
    }
    if (arc.size() > 1 && distance(arc.back(), arc.front()) <= vertex_merge_distance)
        arc.pop_back(); // zero-length closure
    if (arc.size() < 3)
        return ClosedCurve::degenerate(s.front().p);

    const std::size_t arc_edges = arc.size() - 1;
    const Vec3 from = arc.back();
    const Vec3 to = arc.front();
    const double gap = distance(from, to);
    const double seg = max_seglen.value_or(longest);
    if (!(seg > 0.0))
        throw ValidationError("close_curve: max_seglen must be positive");
    std::vector<Vec3> v = std::move(arc);
    const std::size_t pieces = gap <= vertex_merge_distance
                                   ? 0
                                   : std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(gap / seg)));
    for (std::size_t k = 1; k < pieces; ++k)
        v.push_back(from + (to - from) * (static_cast<double>(k) / pieces));
    const EdgeRange closure{arc_edges, arc_edges + pieces};
    return ClosedCurve(std::move(v), closure);
}

// ---------------------------------------------------------------------------
// Segment geometry

/// Distance between segments [p0, p1] and [q0, q1] (clamped closest points).
inline double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1)
{
    const Vec3 d1 = p1 - p0;
    const Vec3 d2 = q1 - q0;
    const Vec3 r = p0 - q0;
    const double a = norm2(d1);
    const double e = norm2(d2);
    const double f = dot(d2, r);
    constexpr double tiny = 1e-300;
    double s = 0.0, t = 0.0;
    if (a <= tiny && e <= tiny)
        return norm(r);
    if (a <= tiny) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        const double c = dot(d1, r);
        if (e <= tiny) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            const double b = dot(d1, d2);
            const double denom = a * e - b * b;
            s = denom > 0.0 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
            t = (b * s + f) / e;
            if (t < 0.0) {
                t = 0.0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1.0) {
                t = 1.0;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    return distance(p0 + s * d1, q0 + t * d2);
}

/// Minimum over all edge pairs of the segment-segment distance. Degenerate
/// curves act as their single point.
inline double min_distance(const ClosedCurve& a, const ClosedCurve& b, unsigned workers = 1)
{
    const auto seg_of = [](const ClosedCurve& c, std::size_t i) {
        return c.is_degenerate() ? SegmentPanel{c.vertices()[0], c.vertices()[0]} : c.edge(i);
    };
    const std::size_t na = std::max<std::size_t>(1, a.edge_count());
    const std::size_t nb = std::max<std::size_t>(1, b.edge_count());
    std::vector<double> rows(na, std::numeric_limits<double>::infinity());
    parallel_for(na, workers, [&](std::size_t i) {
        const SegmentPanel sa = seg_of(a, i);
        const Vec3 ca = sa.center();
        const double ra = sa.radius();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nb; ++j) {
            const SegmentPanel sb = seg_of(b, j);
            if (distance(ca, sb.center()) - ra - sb.radius() >= best)
                continue;
            best = std::min(best, segment_distance(sa.a, sa.b, sb.a, sb.b));
        }
        rows[i] = best;
    });
    return *std::min_element(rows.begin(), rows.end());
}

// ---------------------------------------------------------------------------
// Gauss linking integral

struct LinkingOptions {
    double tol = 1e-6;                 // absolute error target of the double integral
    double singular_floor = 1e-10;     // closer curves are refused
    unsigned workers = 1;
};

struct GaussIntegral {
    double value = 0.0;
    double error_estimate = 0.0;
    long evaluations = 0;
};

namespace detail {

struct SignedKernel {
    double operator()(const Vec3& x, const Vec3& v, const Vec3& y, const Vec3& w) const
    {
        return kernel_unchecked(x, v, y, w);
    }
};

struct AbsKernel {
    double operator()(const Vec3& x, const Vec3& v, const Vec3& y, const Vec3& w) const
    {
        return std::fabs(kernel_unchecked(x, v, y, w));
    }
};

// Double integral of f over two sets of panels, tolerance split uniformly
// across panel pairs, rows reduced in index order.
template <class PA, class PB, class F>
GaussIntegral integrate_panels(const std::vector<PA>& as, const std::vector<PB>& bs, double tol,
                               F f, const PairQuadratureOptions& opt, unsigned workers)
{
    GaussIntegral out;
    if (as.empty() || bs.empty())
        return out;
    const double pair_tol = tol / (static_cast<double>(as.size()) * static_cast<double>(bs.size()));
    std::vector<double> values(as.size()), errors(as.size());
    std::vector<long> evals(as.size());
    parallel_for(as.size(), workers, [&](std::size_t i) {
        CompensatedSum row, err;
        long n = 0;
        for (const auto& pb : bs) {
            const auto r = integrate_pair(as[i], pb, pair_tol, f, opt);
            row.add(r.value);
            err.add(r.error);
            n += r.evaluations;
        }
        values[i] = row.value();
        errors[i] = err.value();
        evals[i] = n;
    });
    out.value = pairwise_sum(values);
    out.error_estimate = pairwise_sum(errors);
    for (long n : evals)
        out.evaluations += n;
    return out;
}

inline std::vector<SegmentPanel> edges_of(const ClosedCurve& c)
{
    std::vector<SegmentPanel> e;
    e.reserve(c.edge_count());
    for (std::size_t i = 0; i < c.edge_count(); ++i)
        e.push_back(c.edge(i));
    return e;
}

inline std::vector<SegmentPanel> edges_in(const ClosedCurve& c, EdgeRange r, bool inside)
{
    std::vector<SegmentPanel> e;
    for (std::size_t i = 0; i < c.edge_count(); ++i)
        if (r.contains(i) == inside)
            e.push_back(c.edge(i));
    return e;
}

} // namespace detail

/// lk(A, B) as the double line integral of the Gauss kernel, with error
/// estimate. Throws ProximityError when the curves are closer than the
/// singular floor.
inline GaussIntegral gauss_linking_integral(const ClosedCurve& a, const ClosedCurve& b,
                                            const LinkingOptions& opt = {})
{
    if (a.is_degenerate() || b.is_degenerate())
        throw ValidationError("gauss_linking: degenerate curve");
    const double dmin = min_distance(a, b, opt.workers);
    if (dmin < opt.singular_floor)
        throw ProximityError("gauss_linking: curves closer than the singular floor", dmin);
    PairQuadratureOptions q;
    q.singular_floor = opt.singular_floor;
    return detail::integrate_panels(detail::edges_of(a), detail::edges_of(b), opt.tol,
                                    detail::SignedKernel{}, q, opt.workers);
}

inline double gauss_linking(const ClosedCurve& a, const ClosedCurve& b, double tol = 1e-6,
                            unsigned workers = 1)
{
    LinkingOptions opt;
    opt.tol = tol;
    opt.workers = workers;
    return gauss_linking_integral(a, b, opt).value;
}

// ---------------------------------------------------------------------------
// Crossing oracle

/// Linking number as half the signed count of crossings between A and B in
/// the projection along `direction` (viewer at +infinity * direction).
/// Throws GenericityError when a crossing lies within 1e-9 of a vertex or two
/// projected edges overlap.
inline int crossing_linking(const ClosedCurve& a, const ClosedCurve& b, const Vec3& direction)
{
    if (a.is_degenerate() || b.is_degenerate())
        return 0;
    const Vec3 d = normalized(direction);
    const Vec3 e1 = any_orthogonal(d);
    const Vec3 e2 = cross(d, e1);
    struct P2 {
        double u, v, h;
    };
    const auto project = [&](const Vec3& p) { return P2{dot(p, e1), dot(p, e2), dot(p, d)}; };
    std::vector<P2> pa, pb;
    pa.reserve(a.size());
    pb.reserve(b.size());
    for (const auto& v : a.vertices())
        pa.push_back(project(v));
    for (const auto& v : b.vertices())
        pb.push_back(project(v));

    constexpr double vertex_tol = 1e-9;
    const auto cross2 = [](double ax, double ay, double bx, double by) { return ax * by - ay * bx; };

    long twice_lk = 0;
    const std::size_t na = a.size(), nb = b.size();
    for (std::size_t i = 0; i < na; ++i) {
        const P2& a0 = pa[i];
        const P2& a1 = pa[(i + 1) % na];
        const double dax = a1.u - a0.u, day = a1.v - a0.v;
        const double la = std::hypot(dax, day);
        const double aminx = std::min(a0.u, a1.u) - vertex_tol, amaxx = std::max(a0.u, a1.u) + vertex_tol;
        const double aminy = std::min(a0.v, a1.v) - vertex_tol, amaxy = std::max(a0.v, a1.v) + vertex_tol;
        for (std::size_t j = 0; j < nb; ++j) {
            const P2& b0 = pb[j];
            const P2& b1 = pb[(j + 1) % nb];
            if (std::max(b0.u, b1.u) < aminx || std::min(b0.u, b1.u) > amaxx ||
                std::max(b0.v, b1.v) < aminy || std::min(b0.v, b1.v) > amaxy)
                continue;
            const double dbx = b1.u - b0.u, dby = b1.v - b0.v;
            const double lb = std::hypot(dbx, dby);
            const double rx = b0.u - a0.u, ry = b0.v - a0.v;
            const double denom = cross2(dax, day, dbx, dby);
            if (la <= vertex_tol || lb <= vertex_tol)
                throw GenericityError("crossing_linking: edge projects to a point");
            if (std::fabs(denom) <= 1e-12 * la * lb) {
                // Parallel in projection: only an overlap is non-generic.
                const double off = std::fabs(cross2(dax, day, rx, ry)) / la;
                if (off <= vertex_tol) {
                    const double s0 = (rx * dax + ry * day) / (la * la);
                    const double s1 = ((b1.u - a0.u) * dax + (b1.v - a0.v) * day) / (la * la);
                    if (std::max(s0, s1) >= -vertex_tol / la && std::min(s0, s1) <= 1 + vertex_tol / la)
                        throw GenericityError("crossing_linking: overlapping projected edges");
                }
                continue;
            }
            const double s = cross2(rx, ry, dbx, dby) / denom;
            const double t = cross2(rx, ry, dax, day) / denom;
            const double sa = vertex_tol / la, sb = vertex_tol / lb;
            if (s < -sa || s > 1 + sa || t < -sb || t > 1 + sb)
                continue;
            if (s < sa || s > 1 - sa || t < sb || t > 1 - sb)
                throw GenericityError("crossing_linking: crossing within tolerance of a vertex");
            const double ha = a0.h + s * (a1.h - a0.h);
            const double hb = b0.h + t * (b1.h - b0.h);
            if (std::fabs(ha - hb) <= vertex_merge_distance)
                throw ProximityError("crossing_linking: curves intersect", std::fabs(ha - hb));
            const double orient = cross2(dax, day, dbx, dby); // (t_a x t_b) . d in the projection frame
            const int sign = (ha > hb ? orient : -orient) > 0 ? 1 : -1;
            twice_lk += sign;
        }
    }
    if (twice_lk % 2 != 0)
        throw GenericityError("crossing_linking: odd crossing sum");
    return static_cast<int>(twice_lk / 2);
}

struct CrossingResult {
    int value = 0;
    Vec3 direction{};
    int attempts = 0;
};

/// Crossing oracle with retries: `direction` first, then random directions
/// drawn from `seed`, up to `budget` attempts in total.
inline CrossingResult crossing_linking_retry(const ClosedCurve& a, const ClosedCurve& b,
                                             const Vec3& direction, std::uint64_t seed,
                                             int budget = 32)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 dir = direction;
    for (int attempt = 1; attempt <= budget; ++attempt) {
        try {
            return {crossing_linking(a, b, dir), dir, attempt};
        } catch (const GenericityError&) {
            dir = normalized(Vec3{n(rng), n(rng), n(rng)});
        }
    }
    throw GenericityError("crossing_linking: no generic direction within the retry budget");
}

// ---------------------------------------------------------------------------
// Combined result

struct LinkingResult {
    double gauss_value = std::numeric_limits<double>::quiet_NaN();
    std::optional<int> oracle_value;
    double min_distance = 0.0;
    bool generic = false;
    bool discarded = false;
    double error_estimate = 0.0;
};

struct LinkOptions {
    LinkingOptions quadrature{};
    double separation_floor = 0.0;     // eps_sep: closer pairs are discarded
    Vec3 direction{0.0123, -0.0456, 1.0};
    std::uint64_t seed = 0x5eed;
    int retry_budget = 32;
};

/// Gauss value, crossing oracle and separation diagnostics for one pair.
inline LinkingResult link(const ClosedCurve& a, const ClosedCurve& b, const LinkOptions& opt = {})
{
    LinkingResult r;
    r.min_distance = min_distance(a, b, opt.quadrature.workers);
    if (a.is_degenerate() || b.is_degenerate()) {
        r.gauss_value = 0.0;
        r.oracle_value = 0;
        r.generic = true;
        return r;
    }
    if (r.min_distance < std::max(opt.separation_floor, opt.quadrature.singular_floor)) {
        r.discarded = true;
        return r;
    }
    const GaussIntegral g = gauss_linking_integral(a, b, opt.quadrature);
    r.gauss_value = g.value;
    r.error_estimate = g.error_estimate;
    try {
        r.oracle_value = crossing_linking_retry(a, b, opt.direction, opt.seed, opt.retry_budget).value;
        r.generic = true;
    } catch (const GenericityError&) {
        r.generic = false;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Short-path terms

struct ShortPathTerms {
    double arc_closure = 0.0;     // (1/TS) int_{phi x} int_{sigma_S} |L|
    double closure_arc = 0.0;     // (1/TS) int_{sigma_T} int_{psi y} |L|
    double closure_closure = 0.0; // (1/TS) int_{sigma_T} int_{sigma_S} |L|
    double sum() const { return arc_closure + closure_arc + closure_closure; }
};

struct ShortPathOptions {
    double max_seglen = 0.05;
    double tol = 1e-8;
    double rel_tol = 1e-6;
    double singular_floor = 1e-10;
    unsigned workers = 1;
};

/// The three normalized |L| integrals involving the closures of two closed
/// flow arcs with horizons T and S.
inline ShortPathTerms short_path_terms(const ClosedCurve& a, const ClosedCurve& b, double T, double S,
                                       const ShortPathOptions& opt = {})
{
    if (!(T > 0.0) || !(S > 0.0))
        throw ValidationError("short_path_terms: T and S must be positive");
    ShortPathTerms out;
    if (a.is_degenerate() || b.is_degenerate())
        return out;
    PairQuadratureOptions q;
    q.singular_floor = opt.singular_floor;
    q.rel_tol = opt.rel_tol;
    const auto arc_a = detail::edges_in(a, a.closure(), false);
    const auto sig_a = detail::edges_in(a, a.closure(), true);
    const auto arc_b = detail::edges_in(b, b.closure(), false);
    const auto sig_b = detail::edges_in(b, b.closure(), true);
    const auto check = [&](const std::vector<SegmentPanel>& p, const std::vector<SegmentPanel>& r) {
        for (const auto& s : p)
            for (const auto& t : r)
                if (segment_distance(s.a, s.b, t.a, t.b) < opt.singular_floor)
                    throw ProximityError("short_path_terms: closure meets the other curve", 0.0);
    };
    check(sig_a, detail::edges_of(b));
    check(sig_b, detail::edges_of(a));
    const double norm_ts = 1.0 / (T * S);
    const detail::AbsKernel f;
    out.arc_closure = norm_ts * detail::integrate_panels(arc_a, sig_b, opt.tol, f, q, opt.workers).value;
    out.closure_arc = norm_ts * detail::integrate_panels(sig_a, arc_b, opt.tol, f, q, opt.workers).value;
    out.closure_closure = norm_ts * detail::integrate_panels(sig_a, sig_b, opt.tol, f, q, opt.workers).value;
    return out;
}

/// Short-path terms for the flow arcs phi_[0,T] x and psi_[0,S] y, resampled
/// to `opt.max_seglen` and closed by straight segments.
inline ShortPathTerms short_path_terms(const FieldSpec& x_field, const FieldSpec& y_field, const Vec3& x,
                                       const Vec3& y, double T, double S, const StepControl& ctrl,
                                       const ShortPathOptions& opt = {})
{
    if (!(T > 0.0) || !(S > 0.0))
        throw ValidationError("short_path_terms: T and S must be positive");
    const ClosedCurve a = close_curve(resample(integrate(x_field, x, T, ctrl), opt.max_seglen), opt.max_seglen);
    const ClosedCurve b = close_curve(resample(integrate(y_field, y, S, ctrl), opt.max_seglen), opt.max_seglen);
    return short_path_terms(a, b, T, S, opt);
}

// ---------------------------------------------------------------------------
// CSV

/// Vertex list with a "# closure_range: first,end" header comment.
inline void write_csv(std::ostream& os, const ClosedCurve& c)
{
    const auto old = os.precision(17);
    os << "# closure_range: " << c.closure().first << ',' << c.closure().end << '\n';
    if (c.is_degenerate())
        os << "# degenerate\n";
    os << "x,y,z\n";
    for (const auto& v : c.vertices())
        os << v.x << ',' << v.y << ',' << v.z << '\n';
    os.precision(old);
}

inline ClosedCurve read_curve_csv(std::istream& is)
{
    std::vector<Vec3> v;
    EdgeRange closure{};
    bool degenerate = false;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty())
            continue;
        if (line[0] == '#') {
            const std::string key = "# closure_range:";
            if (line.rfind(key, 0) == 0) {
                std::istringstream ls(line.substr(key.size()));
                char comma;
                if (!(ls >> closure.first >> comma >> closure.end))
                    throw ValidationError("curve csv: malformed closure_range");
            } else if (line.rfind("# degenerate", 0) == 0) {
                degenerate = true;
            }
            continue;
        }
        if (line.rfind("x,", 0) == 0)
            continue;
        std::istringstream ls(line);
        Vec3 p;
        char c1, c2;
        if (!(ls >> p.x >> c1 >> p.y >> c2 >> p.z))
            throw ValidationError("curve csv: malformed row: " + line);
        v.push_back(p);
    }
    if (degenerate) {
        if (v.empty())
            throw ValidationError("curve csv: degenerate curve without a point");
        return ClosedCurve::degenerate(v.front());
    }
    return ClosedCurve(std::move(v), closure);
}

} // namespace hopflab
