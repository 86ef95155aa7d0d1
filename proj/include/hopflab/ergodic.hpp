#pragma once

// Asymptotic and average linking numbers, the Hopf invariant by double grid
// quadrature and through a vector potential, and the Arnold comparison.
//
// lambda(x, y) at finite horizons (T, S) is estimated either geometrically,
//   lk(phi_[0,T] x + sigma_T, psi_[0,S] y + sigma_S) / (T S),
// or through the linking form along the two flow arcs,
//   (1/TS) int_0^T int_0^S L(X(phi_t x), Y(psi_s y)) ds dt.
// Lambda = int int lambda dx dy is averaged by Monte Carlo; H(X, Y) is
//   int int L(X(x), Y(y)) dx dy.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "fields.hpp"
#include "flow.hpp"
#include "linking.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "vec3.hpp"

namespace hopflab {

inline constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

struct Horizon {
    double T = 16 * std::numbers::pi;
    double S = 16 * std::numbers::pi;

    void validate() const
    {
        if (!(T > 0.0) || !(S > 0.0) || !std::isfinite(T) || !std::isfinite(S))
            throw ValidationError("horizon: T and S must be positive and finite");
    }
};

enum class LambdaMode { geometric, kernel };

inline const char* to_string(LambdaMode m) { return m == LambdaMode::geometric ? "geometric" : "kernel"; }

struct LambdaEstimate {
    double value = 0.0;
    LambdaMode mode = LambdaMode::kernel;
    Horizon horizon{};
    bool discarded = false;
    // Geometric mode only.
    double gauss = nan_value;
    std::optional<int> linking_number;
    double min_distance = nan_value;
};

struct LambdaOptions {
    // geometric mode
    double max_seglen = 0.05;
    double gauss_tol = 1e-6;
    double eps_sep = -1.0;        // negative: 1e-6 x diagonal of the joint support box
    std::uint64_t direction_seed = 0x1234;
    // kernel mode
    double panel_length = 0.2;
    double kernel_tol = 1e-7;     // absolute, on lambda
    double singular_floor = 1e-10;
    unsigned workers = 1;
};

inline double default_eps_sep(const FieldSpec& x, const FieldSpec& y)
{
    AABB box;
    if (x.empty())
        box = support_box(y);
    else if (y.empty())
        box = support_box(x);
    else
        box = unite(support_box(x), support_box(y));
    return 1e-6 * box.diagonal();
}

/// Closed flow arc phi_[0,T] x + sigma_T as a polyline with edges at most
/// `max_seglen` long.
inline ClosedCurve closed_flow_arc(const FieldSpec& field, const Vec3& x, double T, double max_seglen,
                                   const StepControl& ctrl)
{
    return close_curve(resample(integrate(field, x, T, ctrl), max_seglen), max_seglen);
}

inline LambdaEstimate lambda_geometric(const FieldSpec& xf, const FieldSpec& yf, const Vec3& x, const Vec3& y,
                                       const Horizon& h, const StepControl& ctrl = {},
                                       const LambdaOptions& opt = {})
{
    h.validate();
    LambdaEstimate est;
    est.mode = LambdaMode::geometric;
    est.horizon = h;
    const ClosedCurve a = closed_flow_arc(xf, x, h.T, opt.max_seglen, ctrl);
    const ClosedCurve b = closed_flow_arc(yf, y, h.S, opt.max_seglen, ctrl);
    LinkOptions lo;
    lo.quadrature.tol = opt.gauss_tol;
    lo.quadrature.singular_floor = opt.singular_floor;
    lo.quadrature.workers = opt.workers;
    lo.separation_floor = opt.eps_sep >= 0.0 ? opt.eps_sep : default_eps_sep(xf, yf);
    lo.seed = opt.direction_seed;
    const LinkingResult r = link(a, b, lo);
    est.min_distance = r.min_distance;
    if (r.discarded) {
        est.discarded = true;
        est.value = nan_value;
        return est;
    }
    est.gauss = r.gauss_value;
    const int lk = r.oracle_value ? *r.oracle_value : static_cast<int>(std::lround(r.gauss_value));
    est.linking_number = lk;
    est.value = lk / (h.T * h.S);
    return est;
}

// ---------------------------------------------------------------------------
// Kernel mode

/// Piece [t0, t1] of a trajectory as a quadrature panel: points from the
/// dense output, tangents from the field itself.
struct TrajectoryPanel {
    const Trajectory* traj = nullptr;
    const FieldSpec* field = nullptr;
    double t0 = 0.0, t1 = 0.0;
    Vec3 mid{};
    double bound = 0.0;

    TrajectoryPanel() = default;
    TrajectoryPanel(const Trajectory& tr, const FieldSpec& f, double a, double b)
        : traj(&tr), field(&f), t0(a), t1(b)
    {
        const double tm = 0.5 * (a + b);
        mid = tr.at(tm);
        // Chord-interpolated arc lengths, padded for the curvature of the arc.
        bound = 1.05 * std::max(tr.arc_length(a, tm), tr.arc_length(tm, b)) + 1e-12;
    }

    Vec3 point(double u) const { return traj->at(t0 + u * (t1 - t0)); }
    Vec3 tangent(double u) const { return (*field)(point(u)) * (t1 - t0); }
    Vec3 center() const { return mid; }
    double radius() const { return bound; }
    TrajectoryPanel sub(double u0, double u1) const
    {
        return {*traj, *field, t0 + u0 * (t1 - t0), t0 + u1 * (t1 - t0)};
    }
};

/// Splits a trajectory at sample times into panels of about `length` arc length.
inline std::vector<TrajectoryPanel> trajectory_panels(const Trajectory& tr, const FieldSpec& f, double length)
{
    std::vector<TrajectoryPanel> out;
    if (tr.is_constant())
        return out;
    const auto& s = tr.samples();
    double start = s.front().t;
    double acc = 0.0;
    for (std::size_t i = 1; i < s.size(); ++i) {
        acc += distance(s[i - 1].p, s[i].p);
        if (acc >= length || i + 1 == s.size()) {
            if (s[i].t > start)
                out.emplace_back(tr, f, start, s[i].t);
            start = s[i].t;
            acc = 0.0;
        }
    }
    return out;
}

inline LambdaEstimate lambda_kernel(const FieldSpec& xf, const FieldSpec& yf, const Vec3& x, const Vec3& y,
                                    const Horizon& h, const StepControl& ctrl = {},
                                    const LambdaOptions& opt = {})
{
    h.validate();
    LambdaEstimate est;
    est.mode = LambdaMode::kernel;
    est.horizon = h;
    const Trajectory a = integrate(xf, x, h.T, ctrl);
    const Trajectory b = integrate(yf, y, h.S, ctrl);
    const auto pa = trajectory_panels(a, xf, opt.panel_length);
    const auto pb = trajectory_panels(b, yf, opt.panel_length);
    if (pa.empty() || pb.empty())
        return est;
    PairQuadratureOptions q;
    q.singular_floor = opt.singular_floor;
    try {
        const GaussIntegral g = detail::integrate_panels(pa, pb, opt.kernel_tol * h.T * h.S,
                                                         detail::SignedKernel{}, q, opt.workers);
        est.value = g.value / (h.T * h.S);
    } catch (const ProximityError&) {
        est.discarded = true;
        est.value = nan_value;
    }
    return est;
}

inline LambdaEstimate lambda_estimate(LambdaMode mode, const FieldSpec& xf, const FieldSpec& yf, const Vec3& x,
                                      const Vec3& y, const Horizon& h, const StepControl& ctrl,
                                      const LambdaOptions& opt)
{
    return mode == LambdaMode::geometric ? lambda_geometric(xf, yf, x, y, h, ctrl, opt)
                                         : lambda_kernel(xf, yf, x, y, h, ctrl, opt);
}

// ---------------------------------------------------------------------------
// Sampling

enum class Sampling {
    box,   // uniform in the support box, weight = box volume
    tube,  // uniform in the union of solid tori, weight = total volume / multiplicity
    speed  // density proportional to |X|, weight = int |X| / |X(x)|
};

inline const char* to_string(Sampling s)
{
    switch (s) {
    case Sampling::box:
        return "box";
    case Sampling::tube:
        return "tube";
    default:
        return "speed";
    }
}

/// Independent generator for work item `index` of a run seeded with `seed`.
inline std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x68u};
    return std::mt19937_64(seq);
}

/// Uniform point in the solid torus of a tube.
inline Vec3 sample_in_tube(const TubeSpec& t, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Vec3 e1 = any_orthogonal(t.axis);
    const Vec3 e2 = cross(t.axis, e1);
    const double R = t.major_radius, a = t.minor_radius;
    for (;;) {
        const double px = (R + a) * u(rng), py = (R + a) * u(rng), pz = a * u(rng);
        const double dr = std::hypot(px, py) - R;
        if (dr * dr + pz * pz < a * a)
            return t.center + px * e1 + py * e2 + pz * t.axis;
    }
}

/// int |X| dmu over the supports, by Gauss-3 cells of an eighth of the
/// smallest minor radius.
inline double speed_integral(const FieldSpec& f)
{
    if (f.empty())
        return 0.0;
    double amin = std::numeric_limits<double>::infinity();
    for (const auto& t : f.tubes())
        amin = std::min(amin, t.minor_radius);
    const double h = amin / 8.0;
    const AABB box = support_box(f);
    std::array<long, 3> lo{}, n{};
    for (int i = 0; i < 3; ++i) {
        lo[i] = static_cast<long>(std::floor(box.min_corner[i] / h));
        n[i] = static_cast<long>(std::ceil(box.max_corner[i] / h)) - lo[i];
    }
    const GaussRule& g = gauss_rule(3);
    std::vector<double> planes(static_cast<std::size_t>(n[0]));
    for (long i = 0; i < n[0]; ++i) {
        CompensatedSum s;
        for (long j = 0; j < n[1]; ++j)
            for (long k = 0; k < n[2]; ++k)
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b)
                        for (int c = 0; c < 3; ++c) {
                            const Vec3 p{(lo[0] + i + g.nodes[a]) * h, (lo[1] + j + g.nodes[b]) * h,
                                         (lo[2] + k + g.nodes[c]) * h};
                            s.add(g.weights[a] * g.weights[b] * g.weights[c] * norm(f(p)));
                        }
        planes[static_cast<std::size_t>(i)] = s.value() * h * h * h;
    }
    return pairwise_sum(planes);
}

/// Draws seeds for one field under a sampling scheme. The speed scheme is a
/// defensive mixture: with probability `speed_fraction` from the density
/// |X| / int |X|, otherwise uniform in the tubes, weighted by the mixture
/// density so that slow seeds near the tube boundary keep bounded weights.
class SeedSampler {
public:
    SeedSampler(const FieldSpec& f, Sampling mode, double speed_fraction = 0.9)
        : field_(&f), mode_(mode), beta_(speed_fraction)
    {
        if (!(beta_ >= 0.0 && beta_ <= 1.0))
            throw ValidationError("sampler: speed_fraction must lie in [0, 1]");
        box_ = support_box(f);
        volume_ = support_volume(f);
        for (const auto& t : f.tubes()) {
            tube_weights_.push_back(t.volume());
            speed_bound_ += std::fabs(t.amplitude);
        }
        if (mode == Sampling::speed && !f.empty())
            speed_integral_ = speed_integral(f);
    }

    bool empty() const { return field_->empty(); }

    /// Point and its importance weight (1 / density).
    std::pair<Vec3, double> draw(std::mt19937_64& rng) const
    {
        if (empty())
            return {{}, 0.0};
        std::uniform_real_distribution<double> u(0.0, 1.0);
        if (mode_ == Sampling::box) {
            Vec3 p;
            for (int i = 0; i < 3; ++i)
                p[i] = box_.min_corner[i] + u(rng) * (box_.max_corner[i] - box_.min_corner[i]);
            return {p, box_.volume()};
        }
        std::discrete_distribution<std::size_t> pick(tube_weights_.begin(), tube_weights_.end());
        const bool from_speed = mode_ == Sampling::speed && u(rng) < beta_;
        for (;;) {
            const Vec3 p = sample_in_tube(field_->tubes()[pick(rng)], rng);
            const int count = field_->support_count(p);
            if (mode_ == Sampling::tube)
                return {p, volume_ / count};
            // The volume-weighted tube mixture has density count / volume;
            // accepting with |X| / (count * bound) leaves density |X| / int |X|.
            const double speed = norm((*field_)(p));
            if (from_speed && !(u(rng) * speed_bound_ * count < speed))
                continue;
            const double density = beta_ * speed / speed_integral_ + (1.0 - beta_) * count / volume_;
            return {p, 1.0 / density};
        }
    }

private:
    const FieldSpec* field_;
    Sampling mode_;
    double beta_;
    AABB box_;
    double volume_ = 0.0;
    double speed_bound_ = 0.0;
    double speed_integral_ = 0.0;
    std::vector<double> tube_weights_;
};

struct SampleRecord {
    std::size_t index = 0;
    Vec3 x{}, y{};
    double lambda = 0.0;
    double weight = 0.0;
    bool discarded = false;
};

struct AverageOptions {
    LambdaMode mode = LambdaMode::kernel;
    Sampling sampling = Sampling::speed;
    double speed_fraction = 0.9;
    LambdaOptions lambda{};
    double oversampling = 3.0;       // attempts allowed per requested sample
    double warn_discard_rate = 0.2;
    unsigned workers = 1;
};

struct AverageResult {
    double value = 0.0;
    double standard_error = 0.0;
    long n_samples = 0;
    long n_discarded = 0;
    bool discard_warning = false;
    Horizon horizon{};
    std::vector<SampleRecord> samples;
};

/// Monte-Carlo estimate of Lambda(X, Y) from n accepted seed pairs.
inline AverageResult average_linking(const FieldSpec& xf, const FieldSpec& yf, const Horizon& h, long n,
                                     std::uint64_t seed, const StepControl& ctrl = {},
                                     const AverageOptions& opt = {})
{
    if (n < 2)
        throw ValidationError("average_linking: n must be at least 2");
    h.validate();
    AverageResult out;
    out.horizon = h;
    if (xf.empty() || yf.empty()) {
        out.n_samples = n;
        return out;
    }
    const SeedSampler sx(xf, opt.sampling, opt.speed_fraction), sy(yf, opt.sampling, opt.speed_fraction);
    LambdaOptions lo = opt.lambda;
    lo.workers = 1;
    if (lo.eps_sep < 0.0)
        lo.eps_sep = default_eps_sep(xf, yf);
    const std::size_t max_attempts = static_cast<std::size_t>(std::ceil(opt.oversampling * n));

    std::vector<SampleRecord> all;
    std::size_t accepted = 0;
    while (accepted < static_cast<std::size_t>(n) && all.size() < max_attempts) {
        const std::size_t first = all.size();
        const std::size_t batch = std::min(static_cast<std::size_t>(n) - accepted, max_attempts - first);
        std::vector<SampleRecord> rec(batch);
        parallel_for(batch, opt.workers, [&](std::size_t k) {
            auto rng = sample_stream(seed, first + k);
            const auto [x, wx] = sx.draw(rng);
            const auto [y, wy] = sy.draw(rng);
            const LambdaEstimate e = lambda_estimate(opt.mode, xf, yf, x, y, h, ctrl, lo);
            rec[k] = {first + k, x, y, e.value, wx * wy, e.discarded};
        });
        for (auto& r : rec) {
            accepted += r.discarded ? 0 : 1;
            all.push_back(r);
        }
    }
    std::vector<double> v;
    for (const auto& r : all) {
        if (r.discarded)
            ++out.n_discarded;
        else if (v.size() < static_cast<std::size_t>(n))
            v.push_back(r.weight * r.lambda);
    }
    out.n_samples = static_cast<long>(v.size());
    if (v.size() >= 2) {
        const double mean = pairwise_sum(v) / v.size();
        std::vector<double> sq(v.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            sq[i] = (v[i] - mean) * (v[i] - mean);
        out.value = mean;
        out.standard_error = std::sqrt(pairwise_sum(sq) / (v.size() - 1) / v.size());
    }
    const double attempts = static_cast<double>(all.size());
    out.discard_warning = attempts > 0 && out.n_discarded / attempts > opt.warn_discard_rate;
    out.discard_warning = out.discard_warning || out.n_samples < n;
    out.samples = std::move(all);
    return out;
}

// ---------------------------------------------------------------------------
// Grid quadrature of the Hopf invariant

enum class GridRule { midpoint, gauss };

/// Cubic cells of side `cell` on the lattice anchored at the origin, covering
/// each field's support box. `gauss_order` applies to GridRule::gauss.
struct QuadratureGrid {
    double cell = 0.05;
    GridRule rule = GridRule::midpoint;
    int gauss_order = 2;
    bool exclusion = true;
    double exclusion_diagonals = 2.0;

    void validate() const
    {
        if (!(cell > 0.0) || !std::isfinite(cell))
            throw ValidationError("grid: cell size must be positive");
        if (rule == GridRule::gauss && (gauss_order < 1 || gauss_order > max_gauss_order))
            throw ValidationError("grid: gauss_order out of range");
        if (!(exclusion_diagonals >= 0.0))
            throw ValidationError("grid: exclusion_diagonals must be non-negative");
    }
    double diagonal() const { return std::sqrt(3.0) * cell; }
    double exclusion_radius() const { return exclusion_diagonals * diagonal(); }
    QuadratureGrid scaled(double factor) const
    {
        QuadratureGrid g = *this;
        g.cell *= factor;
        return g;
    }
};

/// Quadrature nodes of a field where it does not vanish, with the field
/// value premultiplied by the node weight.
struct GridNodes {
    std::vector<Vec3> position;
    std::vector<Vec3> weighted;   // X(p) * weight
    std::vector<Vec3> cell_center;
    AABB bounds{};

    std::size_t size() const { return position.size(); }
};

inline GridNodes grid_nodes(const FieldSpec& f, const QuadratureGrid& grid)
{
    grid.validate();
    GridNodes out;
    if (f.empty())
        return out;
    const double h = grid.cell;
    const AABB box = support_box(f);
    std::array<long, 3> lo{}, n{};
    for (int i = 0; i < 3; ++i) {
        lo[i] = static_cast<long>(std::floor(box.min_corner[i] / h));
        n[i] = std::max(1L, static_cast<long>(std::ceil(box.max_corner[i] / h)) - lo[i]);
    }
    std::vector<double> nodes{0.5}, weights{1.0};
    if (grid.rule == GridRule::gauss) {
        nodes = gauss_rule(grid.gauss_order).nodes;
        weights = gauss_rule(grid.gauss_order).weights;
    }
    const double vol = h * h * h;
    bool first = true;
    for (long i = 0; i < n[0]; ++i)
        for (long j = 0; j < n[1]; ++j)
            for (long k = 0; k < n[2]; ++k) {
                const Vec3 corner{(lo[0] + i) * h, (lo[1] + j) * h, (lo[2] + k) * h};
                const Vec3 center = corner + Vec3{0.5 * h, 0.5 * h, 0.5 * h};
                for (std::size_t a = 0; a < nodes.size(); ++a)
                    for (std::size_t b = 0; b < nodes.size(); ++b)
                        for (std::size_t c = 0; c < nodes.size(); ++c) {
                            const Vec3 p = corner + Vec3{nodes[a] * h, nodes[b] * h, nodes[c] * h};
                            const Vec3 v = f(p);
                            if (norm2(v) == 0.0)
                                continue;
                            out.position.push_back(p);
                            out.weighted.push_back(v * (weights[a] * weights[b] * weights[c] * vol));
                            out.cell_center.push_back(center);
                            if (first) {
                                out.bounds = {p, p};
                                first = false;
                            } else {
                                out.bounds = unite(out.bounds, AABB{p, p});
                            }
                        }
            }
    return out;
}

namespace detail {

inline double box_gap(const AABB& a, const AABB& b)
{
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double d = std::max({0.0, a.min_corner[i] - b.max_corner[i], b.min_corner[i] - a.max_corner[i]});
        s += d * d;
    }
    return std::sqrt(s);
}

// Lexicographic order of node sets, so that H(X, Y) and H(Y, X) reduce in the
// same order.
inline bool node_order_less(const GridNodes& a, const GridNodes& b)
{
    if (a.size() != b.size())
        return a.size() < b.size();
    for (std::size_t i = 0; i < a.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            if (a.position[i][c] != b.position[i][c])
                return a.position[i][c] < b.position[i][c];
            if (a.weighted[i][c] != b.weighted[i][c])
                return a.weighted[i][c] < b.weighted[i][c];
        }
    return false;
}

struct PairSum {
    double value = 0.0;
    long excluded = 0;
};

inline PairSum kernel_double_sum(const GridNodes& a, const GridNodes& b, const QuadratureGrid& grid,
                                 unsigned workers)
{
    PairSum out;
    if (a.size() == 0 || b.size() == 0)
        return out;
    const double excl = grid.exclusion_radius();
    const bool near = box_gap(a.bounds, b.bounds) <= excl + grid.diagonal();
    std::vector<double> rows(a.size());
    std::vector<long> skipped(a.size(), 0);
    parallel_for(a.size(), workers, [&](std::size_t i) {
        const Vec3 x = a.position[i], v = a.weighted[i];
        double row = 0.0;
        long skip = 0;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (near) {
                if (grid.exclusion) {
                    if (distance(a.cell_center[i], b.cell_center[j]) < excl) {
                        ++skip;
                        continue;
                    }
                } else if (distance(x, b.position[j]) < singular_distance) {
                    throw SingularEvaluationError("hopf_kernel: coincident quadrature nodes (enable exclusion)");
                }
            }
            row += kernel_unchecked(x, v, b.position[j], b.weighted[j]);
        }
        rows[i] = row;
        skipped[i] = skip;
    });
    out.value = pairwise_sum(rows);
    for (long s : skipped)
        out.excluded += s;
    return out;
}

} // namespace detail

struct HopfEstimate {
    double value = 0.0;
    double coarse = 0.0;          // same rule at twice the cell size
    double error_estimate = 0.0;  // |value - coarse| / 3 (second-order refinement)
    std::size_t nodes_x = 0, nodes_y = 0;
    long excluded_pairs = 0;
};

/// H(X, Y) = int int L(X(x), Y(y)) dx dy by a double sum over grid nodes.
inline HopfEstimate hopf_kernel(const FieldSpec& xf, const FieldSpec& yf, const QuadratureGrid& grid = {},
                                unsigned workers = 1)
{
    grid.validate();
    HopfEstimate est;
    const auto run = [&](const QuadratureGrid& g, bool count) {
        GridNodes a = grid_nodes(xf, g), b = grid_nodes(yf, g);
        if (count) {
            est.nodes_x = a.size();
            est.nodes_y = b.size();
        }
        if (detail::node_order_less(b, a))
            std::swap(a, b);
        return detail::kernel_double_sum(a, b, g, workers);
    };
    const detail::PairSum fine = run(grid, true);
    est.value = fine.value;
    est.excluded_pairs = fine.excluded;
    est.coarse = run(grid.scaled(2.0), false).value;
    est.error_estimate = std::fabs(est.value - est.coarse) / 3.0;
    return est;
}

// ---------------------------------------------------------------------------
// Vector potential

namespace detail {

// Partition of unity: 1 at s = 0, 0 for s >= 1, C^2 in between.
inline double cutoff(double s)
{
    if (s <= 0.0)
        return 1.0;
    if (s >= 1.0)
        return 0.0;
    return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

// (1/4 pi) int_{|p - y| < eps} chi X(y) x (p - y) / |p - y|^3 dy in spherical
// coordinates about p, where the integrand is X(p - r w) x w chi(r/eps).
inline Vec3 local_potential(const FieldSpec& f, const Vec3& p, double eps)
{
    const GaussRule& gr = gauss_rule(12);
    const GaussRule& gc = gauss_rule(12);
    constexpr int n_phi = 24;
    Vec3 acc{};
    for (std::size_t a = 0; a < gc.nodes.size(); ++a) {
        const double ct = 2.0 * gc.nodes[a] - 1.0;
        const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
        for (int k = 0; k < n_phi; ++k) {
            const double ph = 2.0 * std::numbers::pi * (k + 0.5) / n_phi;
            const Vec3 w{st * std::cos(ph), st * std::sin(ph), ct};
            const double wa = 2.0 * gc.weights[a] * (2.0 * std::numbers::pi / n_phi);
            Vec3 radial{};
            for (std::size_t b = 0; b < gr.nodes.size(); ++b) {
                const double s = gr.nodes[b];
                radial += f(p - (s * eps) * w) * (gr.weights[b] * cutoff(s));
            }
            acc += cross(radial, w) * (wa * eps);
        }
    }
    return acc / (4.0 * std::numbers::pi);
}

inline Vec3 potential_from_nodes(const FieldSpec& f, const GridNodes& nodes, const Vec3& p,
                                 const QuadratureGrid& grid)
{
    const double eps = grid.exclusion_radius();
    const bool near = grid.exclusion && eps > 0.0 && box_gap(nodes.bounds, AABB{p, p}) < eps;
    if (!grid.exclusion && box_gap(nodes.bounds, AABB{p, p}) < grid.diagonal()) {
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (distance(nodes.cell_center[i], p) <= 0.5 * grid.diagonal())
                throw SingularEvaluationError("vector_potential: evaluation point in a support cell (enable exclusion)");
    }
    Vec3 acc{};
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Vec3 d = p - nodes.position[i];
        const double r2 = norm2(d);
        double w = 1.0;
        if (near) {
            w = 1.0 - cutoff(std::sqrt(r2) / eps);
            if (w == 0.0)
                continue;
        }
        acc += cross(nodes.weighted[i], d) * (w / (r2 * std::sqrt(r2)));
    }
    acc /= 4.0 * std::numbers::pi;
    if (near)
        acc += local_potential(f, p, eps);
    return acc;
}

} // namespace detail

/// Biot-Savart potential A(p) = (1/4 pi) int X(y) x (p - y) / |p - y|^3 dy.
/// With exclusion enabled the part within the exclusion radius of p is
/// integrated in spherical coordinates about p (no singularity), the rest on
/// the grid, joined by a smooth partition of unity.
inline Vec3 vector_potential(const FieldSpec& f, const Vec3& p, const QuadratureGrid& grid = {})
{
    return detail::potential_from_nodes(f, grid_nodes(f, grid), p, grid);
}

/// Evaluates A at many points with one node set.
inline std::vector<Vec3> vector_potential(const FieldSpec& f, const std::vector<Vec3>& points,
                                          const QuadratureGrid& grid, unsigned workers = 1)
{
    const GridNodes nodes = grid_nodes(f, grid);
    std::vector<Vec3> out(points.size());
    parallel_for(points.size(), workers,
                 [&](std::size_t i) { out[i] = detail::potential_from_nodes(f, nodes, points[i], grid); });
    return out;
}

inline QuadratureGrid default_potential_grid()
{
    QuadratureGrid g;
    g.cell = 0.1;
    g.rule = GridRule::gauss;
    g.gauss_order = 2;
    return g;
}

/// H(X, Y) = int <A_X(y), Y(y)> dy.
inline double hopf_potential(const FieldSpec& xf, const FieldSpec& yf,
                             const QuadratureGrid& grid = default_potential_grid(), unsigned workers = 1)
{
    const GridNodes xs = grid_nodes(xf, grid);
    const GridNodes ys = grid_nodes(yf, grid);
    if (xs.size() == 0 || ys.size() == 0)
        return 0.0;
    std::vector<double> terms(ys.size());
    parallel_for(ys.size(), workers, [&](std::size_t j) {
        terms[j] = dot(detail::potential_from_nodes(xf, xs, ys.position[j], grid), ys.weighted[j]);
    });
    return pairwise_sum(terms);
}

// ---------------------------------------------------------------------------
// Thin-tube prediction

/// sum_ij Phi_i Phi_j lk(core_i, core_j) over tubes i of X and j of Y; absent
/// when two cores are too close to link reliably.
inline std::optional<double> thin_tube_prediction(const FieldSpec& xf, const FieldSpec& yf, int vertices = 256)
{
    const auto core = [&](const TubeSpec& t) {
        const Vec3 e1 = any_orthogonal(t.axis);
        const Vec3 e2 = cross(t.axis, e1);
        std::vector<Vec3> v;
        for (int k = 0; k < vertices; ++k) {
            const double s = 2.0 * std::numbers::pi * k / vertices;
            v.push_back(t.center + t.major_radius * (std::cos(s) * e1 + std::sin(s) * e2));
        }
        return ClosedCurve(std::move(v));
    };
    double total = 0.0;
    for (const auto& ti : xf.tubes())
        for (const auto& tj : yf.tubes()) {
            const ClosedCurve a = core(ti), b = core(tj);
            if (min_distance(a, b) < 1e-6)
                return std::nullopt;
            const LinkingResult r = link(a, b);
            if (!r.oracle_value)
                return std::nullopt;
            total += tube_flux(ti) * tube_flux(tj) * *r.oracle_value;
        }
    return total;
}

// ---------------------------------------------------------------------------
// Convergence diagnostics

struct ConvergenceRow {
    Horizon horizon{};
    double lambda_mean = 0.0;
    double l1_increment = nan_value;   // absent for the first row
    double term1 = 0.0, term2 = 0.0, term3 = 0.0;
    long n_used = 0;
};

struct ConvergenceOptions {
    LambdaMode mode = LambdaMode::kernel;
    LambdaOptions lambda{};
    bool short_path_terms = true;
    ShortPathOptions terms{};
    unsigned workers = 1;
};

/// Per horizon: mean lambda over the pairs, mean |lambda_n - lambda_{n-1}|
/// against the previous horizon, and mean short-path terms.
inline std::vector<ConvergenceRow> convergence_series(const FieldSpec& xf, const FieldSpec& yf,
                                                      const std::vector<std::pair<Vec3, Vec3>>& pairs,
                                                      const std::vector<Horizon>& schedule,
                                                      const StepControl& ctrl = {},
                                                      const ConvergenceOptions& opt = {})
{
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        schedule[k].validate();
        if (k > 0 && !(schedule[k].T > schedule[k - 1].T && schedule[k].S > schedule[k - 1].S))
            throw ValidationError("convergence_series: schedule must increase strictly in T and S");
    }
    const std::size_t np = pairs.size(), nh = schedule.size();
    std::vector<double> lam(np * nh, 0.0);
    std::vector<char> bad(np * nh, 0);
    std::vector<std::array<double, 3>> terms(np * nh, {0.0, 0.0, 0.0});
    LambdaOptions lo = opt.lambda;
    lo.workers = 1;
    ShortPathOptions so = opt.terms;
    so.workers = 1;
    parallel_for(np * nh, opt.workers, [&](std::size_t idx) {
        const std::size_t p = idx / nh, k = idx % nh;
        const auto& [x, y] = pairs[p];
        const LambdaEstimate e = lambda_estimate(opt.mode, xf, yf, x, y, schedule[k], ctrl, lo);
        lam[idx] = e.value;
        bad[idx] = e.discarded;
        if (opt.short_path_terms && !e.discarded) {
            try {
                const ShortPathTerms t = short_path_terms(xf, yf, x, y, schedule[k].T, schedule[k].S, ctrl, so);
                terms[idx] = {t.arc_closure, t.closure_arc, t.closure_closure};
            } catch (const ProximityError&) {
                bad[idx] = 1;
            }
        }
    });
    std::vector<ConvergenceRow> rows(nh);
    for (std::size_t k = 0; k < nh; ++k) {
        ConvergenceRow& r = rows[k];
        r.horizon = schedule[k];
        std::vector<double> l, t1, t2, t3, inc;
        for (std::size_t p = 0; p < np; ++p) {
            const std::size_t i = p * nh + k;
            if (bad[i])
                continue;
            l.push_back(lam[i]);
            t1.push_back(terms[i][0]);
            t2.push_back(terms[i][1]);
            t3.push_back(terms[i][2]);
            if (k > 0 && !bad[i - 1])
                inc.push_back(std::fabs(lam[i] - lam[i - 1]));
        }
        r.n_used = static_cast<long>(l.size());
        const auto mean = [](const std::vector<double>& v) { return v.empty() ? 0.0 : pairwise_sum(v) / v.size(); };
        r.lambda_mean = mean(l);
        r.term1 = mean(t1);
        r.term2 = mean(t2);
        r.term3 = mean(t3);
        if (k > 0)
            r.l1_increment = mean(inc);
    }
    return rows;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.size() < 2)
        throw ValidationError("loglog_slope: need at least two points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0) || !(y[i] > 0))
            throw ValidationError("loglog_slope: values must be positive");
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Per-sample mode consistency

struct ModeComparison {
    LambdaEstimate geometric;
    LambdaEstimate kernel;
    ShortPathTerms terms;
    double tolerance = 0.0;
    double difference() const { return std::fabs(geometric.value - kernel.value); }
    bool discarded() const { return geometric.discarded || kernel.discarded; }
    bool consistent() const { return !discarded() && difference() <= terms.sum() + tolerance; }
};

/// lambda_geometric and lambda_kernel for one pair with the short-path terms
/// that separate them. The tolerance collects the quadrature targets, the
/// rounding of the Gauss integral and the polyline discretization of the two
/// arcs (arc x arc Gauss integral on the polylines against the kernel value).
inline ModeComparison compare_modes(const FieldSpec& xf, const FieldSpec& yf, const Vec3& x, const Vec3& y,
                                    const Horizon& h, const StepControl& ctrl = {}, const LambdaOptions& opt = {})
{
    ModeComparison c;
    c.geometric = lambda_geometric(xf, yf, x, y, h, ctrl, opt);
    c.kernel = lambda_kernel(xf, yf, x, y, h, ctrl, opt);
    if (c.discarded())
        return c;
    const ClosedCurve a = closed_flow_arc(xf, x, h.T, opt.max_seglen, ctrl);
    const ClosedCurve b = closed_flow_arc(yf, y, h.S, opt.max_seglen, ctrl);
    ShortPathOptions so;
    so.max_seglen = opt.max_seglen;
    so.singular_floor = opt.singular_floor;
    so.workers = opt.workers;
    try {
        c.terms = short_path_terms(a, b, h.T, h.S, so);
    } catch (const ProximityError&) {
        c.geometric.discarded = true;
        return c;
    }
    const double ts = h.T * h.S;
    double disc = 0.0;
    if (!a.is_degenerate() && !b.is_degenerate()) {
        PairQuadratureOptions q;
        q.singular_floor = opt.singular_floor;
        const auto arc_a = detail::edges_in(a, a.closure(), false);
        const auto arc_b = detail::edges_in(b, b.closure(), false);
        const double poly = detail::integrate_panels(arc_a, arc_b, opt.gauss_tol, detail::SignedKernel{}, q,
                                                     opt.workers).value / ts;
        disc = std::fabs(poly - c.kernel.value);
    }
    const double rounding = c.geometric.linking_number && std::isfinite(c.geometric.gauss)
                                ? std::fabs(c.geometric.gauss - *c.geometric.linking_number)
                                : 0.0;
    c.tolerance = (rounding + 2.0 * opt.gauss_tol) / ts + opt.kernel_tol + disc + 1e-12;
    return c;
}

// ---------------------------------------------------------------------------
// Arnold comparison

struct VerifyConfig {
    Horizon horizon{};
    long n_samples = 200;
    std::uint64_t seed = 1;
    AverageOptions average{};
    QuadratureGrid kernel_grid{};
    QuadratureGrid potential_grid = default_potential_grid();
    bool compute_potential = true;
    long decay_pairs = 4;
    std::vector<Horizon> decay_schedule{{4 * std::numbers::pi, 4 * std::numbers::pi},
                                        {8 * std::numbers::pi, 8 * std::numbers::pi},
                                        {16 * std::numbers::pi, 16 * std::numbers::pi}};
    double relative_tolerance = 0.05;
    double sigma_factor = 3.0;
    StepControl ctrl{};
    unsigned workers = 1;
};

struct DecayRow {
    Horizon horizon{};
    double term1 = 0, term2 = 0, term3 = 0;
};

struct ArnoldReport {
    double lambda_avg = nan_value;
    double lambda_stderr = nan_value;
    double hopf_kernel = nan_value;
    double hopf_kernel_coarse = nan_value;
    double hopf_kernel_error = nan_value;
    double hopf_potential = nan_value;
    std::optional<double> thin_tube_prediction;
    long n_samples = 0;
    long n_discarded = 0;
    bool discard_warning = false;
    Horizon horizon{};
    std::vector<DecayRow> decay_table;
    std::map<std::string, std::string> errors;   // section -> message
    double difference = nan_value;
    double allowed = nan_value;
    bool pass = false;
};

/// Runs every section, recording failures per section; passes when
/// |Lambda - H| <= sigma_factor * stderr + relative_tolerance * |H|.
inline ArnoldReport verify_arnold(const FieldSpec& xf, const FieldSpec& yf, const VerifyConfig& cfg)
{
    ArnoldReport rep;
    rep.horizon = cfg.horizon;
    const auto section = [&](const char* name, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            rep.errors[name] = e.what();
        }
    };
    section("average_linking", [&] {
        AverageOptions ao = cfg.average;
        ao.workers = cfg.workers;
        const AverageResult r = average_linking(xf, yf, cfg.horizon, cfg.n_samples, cfg.seed, cfg.ctrl, ao);
        rep.lambda_avg = r.value;
        rep.lambda_stderr = r.standard_error;
        rep.n_samples = r.n_samples;
        rep.n_discarded = r.n_discarded;
        rep.discard_warning = r.discard_warning;
    });
    section("hopf_kernel", [&] {
        const HopfEstimate h = hopf_kernel(xf, yf, cfg.kernel_grid, cfg.workers);
        rep.hopf_kernel = h.value;
        rep.hopf_kernel_coarse = h.coarse;
        rep.hopf_kernel_error = h.error_estimate;
    });
    if (cfg.compute_potential)
        section("hopf_potential", [&] { rep.hopf_potential = hopf_potential(xf, yf, cfg.potential_grid, cfg.workers); });
    section("thin_tube_prediction", [&] { rep.thin_tube_prediction = thin_tube_prediction(xf, yf); });
    if (cfg.decay_pairs > 0 && !cfg.decay_schedule.empty())
        section("decay_table", [&] {
            std::vector<std::pair<Vec3, Vec3>> pairs;
            if (!xf.empty() && !yf.empty()) {
                const SeedSampler sx(xf, Sampling::tube), sy(yf, Sampling::tube);
                for (long i = 0; i < cfg.decay_pairs; ++i) {
                    auto rng = sample_stream(cfg.seed ^ 0xdecaULL, static_cast<std::uint64_t>(i));
                    const Vec3 x = sx.draw(rng).first;
                    pairs.emplace_back(x, sy.draw(rng).first);
                }
            }
            ConvergenceOptions co;
            co.workers = cfg.workers;
            for (const auto& row : convergence_series(xf, yf, pairs, cfg.decay_schedule, cfg.ctrl, co))
                rep.decay_table.push_back({row.horizon, row.term1, row.term2, row.term3});
        });
    if (std::isfinite(rep.lambda_avg) && std::isfinite(rep.hopf_kernel)) {
        rep.difference = std::fabs(rep.lambda_avg - rep.hopf_kernel);
        rep.allowed = cfg.sigma_factor * rep.lambda_stderr + cfg.relative_tolerance * std::fabs(rep.hopf_kernel);
        rep.pass = rep.errors.empty() && rep.difference <= rep.allowed;
    }
    return rep;
}

} // namespace hopflab
