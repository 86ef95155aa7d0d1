#pragma once

// Flow lines of FieldSpec vector fields: adaptive Dormand-Prince 5(4)
// integration with the method's 4th-order continuous extension.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "fields.hpp"
#include "vec3.hpp"

namespace hopflab {

struct StepControl {
    double rel_tol = 1e-9;
    double abs_tol = 1e-9;
    double max_step = 0.05;
    long max_steps = 2'000'000;

    void validate() const
    {
        if (!(rel_tol > 0) || !(abs_tol > 0) || !(max_step > 0) || max_steps <= 0)
            throw ValidationError("step control: all parameters must be positive");
    }
};

struct TrajectorySample {
    double t;
    Vec3 p;
};

/// Continuous extension of one accepted step on [t0, t0 + h].
struct DenseSegment {
    double t0 = 0;
    double h = 0;
    std::array<Vec3, 5> c{};

    Vec3 at(double t) const
    {
        const double s = (t - t0) / h;
        const double s1 = 1.0 - s;
        return c[0] + s * (c[1] + s1 * (c[2] + s * (c[3] + s1 * c[4])));
    }
};

/// Time-stamped polyline of a flow arc phi_[0,T] x0 with dense output.
class Trajectory {
public:
    Trajectory() = default;
    Trajectory(std::vector<TrajectorySample> samples, std::vector<DenseSegment> segments,
               std::string field_id)
        : samples_(std::move(samples)), segments_(std::move(segments)), field_id_(std::move(field_id))
    {
        build_arc_table();
    }

    const std::vector<TrajectorySample>& samples() const { return samples_; }
    const std::vector<DenseSegment>& segments() const { return segments_; }
    const std::string& field_id() const { return field_id_; }

    double t0() const { return samples_.empty() ? 0.0 : samples_.front().t; }
    double T() const { return samples_.empty() ? 0.0 : samples_.back().t; }
    const Vec3& start() const { return samples_.front().p; }
    const Vec3& end() const { return samples_.back().p; }

    bool is_constant() const { return segments_.empty(); }

    /// Position at time t in [0, T] from the dense output.
    Vec3 at(double t) const
    {
        if (segments_.empty())
            return samples_.front().p;
        auto it = std::upper_bound(segments_.begin(), segments_.end(), t,
                                   [](double v, const DenseSegment& s) { return v < s.t0; });
        if (it != segments_.begin())
            --it;
        return it->at(t);
    }

    /// Polyline arc length between two times (linear interpolation of the
    /// cumulative chord length of the samples).
    double arc_length(double ta, double tb) const { return cumulative(tb) - cumulative(ta); }
    double arc_length() const { return cum_.empty() ? 0.0 : cum_.back(); }

private:
    void build_arc_table()
    {
        cum_.assign(samples_.size(), 0.0);
        for (std::size_t i = 1; i < samples_.size(); ++i)
            cum_[i] = cum_[i - 1] + distance(samples_[i].p, samples_[i - 1].p);
    }

    double cumulative(double t) const
    {
        if (samples_.size() < 2)
            return 0.0;
        auto it = std::upper_bound(samples_.begin(), samples_.end(), t,
                                   [](double v, const TrajectorySample& s) { return v < s.t; });
        if (it == samples_.begin())
            return 0.0;
        if (it == samples_.end())
            return cum_.back();
        const std::size_t i = static_cast<std::size_t>(it - samples_.begin());
        const double w = (t - samples_[i - 1].t) / (samples_[i].t - samples_[i - 1].t);
        return cum_[i - 1] + w * (cum_[i] - cum_[i - 1]);
    }

    std::vector<TrajectorySample> samples_;
    std::vector<DenseSegment> segments_;
    std::string field_id_;
    std::vector<double> cum_;
};

/// Thrown when the step budget runs out; carries the trajectory so far.
class StepLimitError : public NumericalError {
public:
    StepLimitError(const std::string& what, Trajectory partial_)
        : NumericalError(what), partial(std::move(partial_))
    {
    }
    Trajectory partial;
};

namespace detail {

// Dormand-Prince 5(4) tableau.
struct Dopri5 {
    static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
    static constexpr double a21 = 1.0 / 5;
    static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
    static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
    static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                            a54 = -212.0 / 729;
    static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                            a64 = 49.0 / 176, a65 = -5103.0 / 18656;
    static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                            a75 = -2187.0 / 6784, a76 = 11.0 / 84;
    static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                            e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
    // Continuous extension (Hairer, Norsett & Wanner).
    static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                            d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                            d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
};

template <std::size_t N>
using State = std::array<Vec3, N>;

template <std::size_t N>
State<N> rhs(const FieldSpec& field, const State<N>& y)
{
    State<N> k;
    for (std::size_t i = 0; i < N; ++i)
        k[i] = field(y[i]);
    return k;
}

// y + h * sum_j coef_j k_j over the listed stages.
template <std::size_t N, std::size_t M>
State<N> combine(const State<N>& y, double h, const std::array<double, M>& coef,
                 const std::array<const State<N>*, M>& ks)
{
    State<N> out = y;
    for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < M; ++j)
            out[i] += (h * coef[j]) * (*ks[j])[i];
    return out;
}

template <std::size_t N>
struct StepResult {
    State<N> y1;
    State<N> k7;
    double err = 0;
    std::array<State<N>, 7> k;
};

template <std::size_t N>
StepResult<N> dopri_step(const FieldSpec& field, const State<N>& y, const State<N>& k1, double h,
                         const StepControl& ctrl)
{
    using D = Dopri5;
    StepResult<N> r;
    r.k[0] = k1;
    r.k[1] = rhs(field, combine<N, 1>(y, h, {D::a21}, {&r.k[0]}));
    r.k[2] = rhs(field, combine<N, 2>(y, h, {D::a31, D::a32}, {&r.k[0], &r.k[1]}));
    r.k[3] = rhs(field, combine<N, 3>(y, h, {D::a41, D::a42, D::a43}, {&r.k[0], &r.k[1], &r.k[2]}));
    r.k[4] = rhs(field, combine<N, 4>(y, h, {D::a51, D::a52, D::a53, D::a54},
                                      {&r.k[0], &r.k[1], &r.k[2], &r.k[3]}));
    r.k[5] = rhs(field, combine<N, 5>(y, h, {D::a61, D::a62, D::a63, D::a64, D::a65},
                                      {&r.k[0], &r.k[1], &r.k[2], &r.k[3], &r.k[4]}));
    r.y1 = combine<N, 5>(y, h, {D::a71, D::a73, D::a74, D::a75, D::a76},
                         {&r.k[0], &r.k[2], &r.k[3], &r.k[4], &r.k[5]});
    r.k[6] = rhs(field, r.y1);
    r.k7 = r.k[6];

    double acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        const Vec3 e = h * (D::e1 * r.k[0][i] + D::e3 * r.k[2][i] + D::e4 * r.k[3][i] +
                            D::e5 * r.k[4][i] + D::e6 * r.k[5][i] + D::e7 * r.k[6][i]);
        for (int c = 0; c < 3; ++c) {
            const double sk =
                ctrl.abs_tol + ctrl.rel_tol * std::max(std::fabs(y[i][c]), std::fabs(r.y1[i][c]));
            acc += (e[c] / sk) * (e[c] / sk);
        }
    }
    r.err = std::sqrt(acc / (3.0 * N));
    return r;
}

inline DenseSegment dense_segment(double t0, double h, const Vec3& y0, const Vec3& y1,
                                  const std::array<State<1>, 7>& k)
{
    using D = Dopri5;
    DenseSegment s;
    s.t0 = t0;
    s.h = h;
    const Vec3 ydiff = y1 - y0;
    const Vec3 bspl = h * k[0][0] - ydiff;
    s.c[0] = y0;
    s.c[1] = ydiff;
    s.c[2] = bspl;
    s.c[3] = ydiff - h * k[6][0] - bspl;
    s.c[4] = h * (D::d1 * k[0][0] + D::d3 * k[2][0] + D::d4 * k[3][0] + D::d5 * k[4][0] +
                  D::d6 * k[5][0] + D::d7 * k[6][0]);
    return s;
}

inline double next_step_factor(double err)
{
    if (err == 0.0)
        return 10.0;
    return std::clamp(0.9 * std::pow(err, -0.2), 0.2, 10.0);
}

template <std::size_t N>
struct DriveResult {
    State<N> y;
    long steps = 0;
    bool completed = false;
};

// Adaptive loop over [0, T]; on_accept(t, h, y0, step) is called per accepted step.
template <std::size_t N, class OnAccept>
DriveResult<N> drive(const FieldSpec& field, State<N> y, double T, const StepControl& ctrl,
                     OnAccept&& on_accept)
{
    DriveResult<N> out;
    double t = 0.0;
    double h = std::min(ctrl.max_step, T);
    State<N> k1 = rhs(field, y);
    bool last_rejected = false;
    while (t < T) {
        if (out.steps >= ctrl.max_steps) {
            out.y = y;
            return out;
        }
        // Stretch the step slightly rather than leave a sliver at the end.
        const bool final_step = t + 1.0000001 * h >= T;
        if (final_step)
            h = T - t;
        StepResult<N> r = dopri_step(field, y, k1, h, ctrl);
        ++out.steps;
        if (r.err <= 1.0) {
            on_accept(t, h, y, r);
            t = final_step ? T : t + h;
            y = r.y1;
            k1 = r.k7;
            double fac = next_step_factor(r.err);
            if (last_rejected)
                fac = std::min(fac, 1.0);
            h = std::min(h * fac, ctrl.max_step);
            last_rejected = false;
        } else {
            h *= std::max(0.2, 0.9 * std::pow(r.err, -0.2));
            last_rejected = true;
        }
    }
    out.y = y;
    out.completed = true;
    return out;
}

} // namespace detail

/// Flow arc of `field` from x0 over [0, T].
inline Trajectory integrate(const FieldSpec& field, const Vec3& x0, double T,
                            const StepControl& ctrl = {})
{
    ctrl.validate();
    if (!(T >= 0.0) || !std::isfinite(T))
        throw ValidationError("integrate: T must be finite and non-negative");
    if (!is_finite(x0))
        throw ValidationError("integrate: non-finite seed");

    std::vector<TrajectorySample> samples{{0.0, x0}};
    std::vector<DenseSegment> segments;
    if (T == 0.0)
        return Trajectory(std::move(samples), {}, field.name());
    if (norm2(field(x0)) == 0.0) {
        // Fixed point: the orbit is constant.
        samples.push_back({T, x0});
        return Trajectory(std::move(samples), {}, field.name());
    }

    const auto on_accept = [&](double t, double h, const detail::State<1>& y0,
                               const detail::StepResult<1>& r) {
        segments.push_back(detail::dense_segment(t, h, y0[0], r.y1[0], r.k));
        samples.push_back({std::min(t + h, T), r.y1[0]});
    };
    const auto run = detail::drive<1>(field, {x0}, T, ctrl, on_accept);
    if (!run.completed) {
        Trajectory partial(std::move(samples), std::move(segments), field.name());
        throw StepLimitError("integrate: max_steps exceeded", std::move(partial));
    }
    samples.back().t = T;
    return Trajectory(std::move(samples), std::move(segments), field.name());
}

/// Time-T flow map of several points advanced with one shared step sequence.
template <std::size_t N>
std::array<Vec3, N> flow_map(const FieldSpec& field, const std::array<Vec3, N>& x0, double T,
                             const StepControl& ctrl = {})
{
    ctrl.validate();
    const auto run = detail::drive<N>(field, x0, T, ctrl, [](auto&&...) {});
    if (!run.completed)
        throw StepLimitError("flow_map: max_steps exceeded", Trajectory{});
    return run.y;
}

/// Determinant of the finite-difference Jacobian of the time-T flow map at
/// x0, using the fourth-order five-point central stencil with step h. The
/// seed and its twelve perturbations are integrated as one coupled system so
/// that every point sees the same step sequence.
inline double flow_jacobian_det(const FieldSpec& field, const Vec3& x0, double T, double h,
                                const StepControl& ctrl = {})
{
    if (!(h > 0.0))
        throw ValidationError("flow_jacobian_det: h must be positive");
    // Per axis: x0 + 2h, x0 + h, x0 - h, x0 - 2h.
    constexpr double offsets[4] = {2.0, 1.0, -1.0, -2.0};
    constexpr double weights[4] = {-1.0, 8.0, -8.0, 1.0};
    std::array<Vec3, 13> pts;
    pts[0] = x0;
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 4; ++k) {
            Vec3 e{};
            e[i] = offsets[k] * h;
            pts[1 + 4 * i + k] = x0 + e;
        }
    const auto out = flow_map<13>(field, pts, T, ctrl);
    // Stencil applied to displacements, plus the exact identity part, so
    // that a vanishing flow gives exactly the identity.
    Vec3 col[3];
    for (int i = 0; i < 3; ++i) {
        Vec3 acc{};
        for (int k = 0; k < 4; ++k)
            acc += weights[k] * (out[1 + 4 * i + k] - pts[1 + 4 * i + k]);
        col[i] = acc / (12.0 * h);
        col[i][i] += 1.0;
    }
    return dot(col[0], cross(col[1], col[2]));
}

/// Piecewise-linear refinement from the dense output so that every chord is
/// at most max_seglen long. The first and last samples are kept exactly.
inline Trajectory resample(const Trajectory& traj, double max_seglen)
{
    if (!(max_seglen > 0.0))
        throw ValidationError("resample: max_seglen must be positive");
    const auto& src = traj.samples();
    if (src.size() < 2 || traj.is_constant())
        return traj;

    std::vector<TrajectorySample> out;
    out.reserve(src.size());
    out.push_back(src.front());
    for (std::size_t i = 1; i < src.size(); ++i) {
        const double ta = src[i - 1].t;
        const double tb = src[i].t;
        const double chord = distance(src[i - 1].p, src[i].p);
        int m = std::max(1, static_cast<int>(std::ceil(chord / max_seglen)));
        for (int attempt = 0; attempt < 30; ++attempt) {
            bool ok = true;
            Vec3 prev = src[i - 1].p;
            for (int k = 1; k <= m && ok; ++k) {
                const Vec3 p = k == m ? src[i].p : traj.at(ta + (tb - ta) * k / m);
                ok = distance(prev, p) <= max_seglen;
                prev = p;
            }
            if (ok)
                break;
            m *= 2;
        }
        for (int k = 1; k < m; ++k) {
            const double t = ta + (tb - ta) * k / m;
            out.push_back({t, traj.at(t)});
        }
        out.push_back(src[i]);
    }
    return Trajectory(std::move(out), traj.segments(), traj.field_id());
}

/// CSV with header "t,x,y,z".
inline void write_csv(std::ostream& os, const Trajectory& traj)
{
    const auto old = os.precision(17);
    os << "t,x,y,z\n";
    for (const auto& s : traj.samples())
        os << s.t << ',' << s.p.x << ',' << s.p.y << ',' << s.p.z << '\n';
    os.precision(old);
}

/// Reads the samples of a trajectory CSV (no dense output).
inline std::vector<TrajectorySample> read_trajectory_csv(std::istream& is)
{
    std::vector<TrajectorySample> out;
    std::string line;
    bool header = true;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        if (header) {
            header = false;
            if (line.rfind("t,", 0) == 0)
                continue;
        }
        std::istringstream ls(line);
        TrajectorySample s{};
        char c1, c2, c3;
        if (!(ls >> s.t >> c1 >> s.p.x >> c2 >> s.p.y >> c3 >> s.p.z))
            throw ValidationError("trajectory csv: malformed row: " + line);
        out.push_back(s);
    }
    return out;
}

} // namespace hopflab
