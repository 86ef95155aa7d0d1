#pragma once

// Acceptance checks 1-8. Each returns one result with a pass flag, a short
// measurement summary and its wall time; a check that exceeds its time
// budget fails. Oracles here avoid the code path under test: crossing counts
// for linking numbers, closed-form tube fluxes for the thin-tube value.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ergodic.hpp"
#include "fields.hpp"
#include "flow.hpp"
#include "linking.hpp"

namespace hopflab::acceptance {

struct Result {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
    double budget = 0.0;
};

using NamedField = std::pair<std::string, FieldSpec>;

struct Settings {
    std::vector<NamedField> fields;   // shipped fields for checks 5 and 6
    StepControl ctrl{};
    unsigned workers = 1;
    std::uint64_t seed = 1;
};

namespace detail {

constexpr double pi = std::numbers::pi;

inline std::string format(const char* fmt, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

inline double rel_diff(double a, double b)
{
    const double s = std::max(std::fabs(a), std::fabs(b));
    return s == 0.0 ? 0.0 : std::fabs(a - b) / s;
}

inline Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    const Vec3 v{n(rng), n(rng), n(rng)};
    return v / norm(v);
}

// Rotation taking e_z to `axis` followed by a spin by `angle` about it.
inline Vec3 rotate(const Vec3& p, const Vec3& axis, double angle)
{
    const Vec3 e1 = any_orthogonal(axis);
    const Vec3 e2 = cross(axis, e1);
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec3 u = c * e1 + s * e2, w = -s * e1 + c * e2;
    return p.x * u + p.y * w + p.z * axis;
}

inline ClosedCurve circle(const Vec3& center, const Vec3& axis, double radius, int n, double phase)
{
    const Vec3 e1 = any_orthogonal(axis);
    const Vec3 e2 = cross(axis, e1);
    std::vector<Vec3> v;
    for (int i = 0; i < n; ++i) {
        const double t = phase + 2.0 * pi * i / n;
        v.push_back(center + radius * (std::cos(t) * e1 + std::sin(t) * e2));
    }
    return ClosedCurve(std::move(v));
}

// Core circle of a tube, oriented with its flow.
inline ClosedCurve core(const TubeSpec& t, int n)
{
    const Vec3 e1 = any_orthogonal(t.axis);
    const Vec3 e2 = cross(t.axis, e1);
    std::vector<Vec3> v;
    for (int i = 0; i < n; ++i) {
        const double s = 2.0 * pi * i / n;
        v.push_back(t.center + t.major_radius * (std::cos(s) * e1 + std::sin(s) * e2));
    }
    return t.sign * t.amplitude >= 0 ? ClosedCurve(std::move(v)) : reversed(ClosedCurve(std::move(v)));
}

// Closed-form flux of the quartic profile.
inline double flux(const TubeSpec& t) { return t.sign * pi * t.amplitude * t.minor_radius * t.minor_radius / 3.0; }

// Flux-weighted crossing linking numbers of the cores.
inline double thin_tube_oracle(const FieldSpec& x, const FieldSpec& y)
{
    double total = 0.0;
    for (const auto& a : x.tubes())
        for (const auto& b : y.tubes())
            total += std::fabs(flux(a)) * std::fabs(flux(b)) *
                     crossing_linking_retry(core(a, 400), core(b, 400), {0.0123, -0.0456, 1.0}, 11).value;
    return total;
}

inline FieldSpec tube(const Vec3& c, const Vec3& axis, double a = 0.2)
{
    return FieldSpec({TubeSpec{c, axis, 1.0, a, 1.0, +1}});
}

inline std::vector<std::pair<Vec3, Vec3>> seed_pairs(const FieldSpec& x, const FieldSpec& y, Sampling mode,
                                                     std::uint64_t seed, long n)
{
    const SeedSampler sx(x, mode), sy(y, mode);
    std::vector<std::pair<Vec3, Vec3>> out;
    for (long i = 0; i < n; ++i) {
        auto rng = sample_stream(seed, static_cast<std::uint64_t>(i));
        const Vec3 p = sx.draw(rng).first;
        out.emplace_back(p, sy.draw(rng).first);
    }
    return out;
}

} // namespace detail

// 1. Gauss integral against crossing counts on random rigid circle pairs.
inline Result linking_form_identity(const Settings& s)
{
    using namespace detail;
    Result r{1, "linking-form identity", true, {}, 0, 60};
    std::mt19937_64 rng(s.seed + 2024);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> verts(64, 512);
    double worst = 0.0;
    int linked = 0, tested = 0, mismatched = 0;
    while (tested < 50) {
        const Vec3 axis = random_unit(rng);
        const double spin = 2 * pi * u(rng);
        const Vec3 shift = 2.0 * random_unit(rng);
        const double ra = 0.5 + u(rng), rb = 0.5 + u(rng);
        // B passes through A's disk when the offset is below ra.
        const double offset = 2.0 * ra * u(rng);
        const double tilt = 0.4 * (u(rng) - 0.5);
        const Vec3 axis_b = normalized(Vec3{std::sin(tilt), std::cos(tilt), 0.0});
        const auto place = [&](const ClosedCurve& c) {
            std::vector<Vec3> v;
            for (const auto& p : c.vertices())
                v.push_back(rotate(p, axis, spin) + shift);
            return ClosedCurve(std::move(v));
        };
        ClosedCurve a = place(circle({0, 0, 0}, {0, 0, 1}, ra, verts(rng), u(rng)));
        ClosedCurve b = place(circle({offset + rb, 0, 0}, axis_b, rb, verts(rng), u(rng)));
        if (u(rng) < 0.5)
            b = reversed(b);
        if (min_distance(a, b, s.workers) < 0.02)
            continue;
        ++tested;
        const double g = gauss_linking(a, b, 1e-6, s.workers);
        const int c = crossing_linking_retry(a, b, random_unit(rng), static_cast<std::uint64_t>(tested)).value;
        worst = std::max(worst, std::fabs(g - c));
        mismatched += std::lround(g) != c;
        linked += c != 0;
    }
    r.pass = worst < 1e-3 && mismatched == 0;
    r.detail = format("50 pairs (%d linked), max |gauss - crossing| = %.2e, rounding mismatches = %d", linked, worst,
                      mismatched);
    return r;
}

// 2. Time-averaged linking against the Hopf invariant for the Hopf pair.
inline Result arnold_theorem(const Settings& s)
{
    using namespace detail;
    Result r{2, "Arnold theorem on the Hopf pair", true, {}, 0, 600};
    const auto [x, y] = make_hopf_pair(0.2, 1.0);
    const double oracle = thin_tube_oracle(x, y);

    QuadratureGrid grid;
    grid.cell = 0.05;
    const HopfEstimate h = hopf_kernel(x, y, grid, s.workers);
    const double extrapolated = (4.0 * h.value - h.coarse) / 3.0;
    const bool oracle_ok = std::fabs(extrapolated - oracle) <= 0.01 * std::fabs(oracle);

    AverageOptions ao;
    ao.mode = LambdaMode::kernel;
    ao.workers = s.workers;
    const AverageResult avg = average_linking(x, y, {16 * pi, 16 * pi}, 200, s.seed, s.ctrl, ao);

    const double gap = std::fabs(avg.value - h.value);
    const double allowed = 3.0 * avg.standard_error + 0.05 * std::fabs(h.value);
    const double lam_off = std::fabs(avg.value - oracle) / std::fabs(oracle);
    const double h_off = std::fabs(h.value - oracle) / std::fabs(oracle);
    r.pass = oracle_ok && gap <= allowed && lam_off <= 0.05 && h_off <= 0.05;
    r.detail = format("Lambda = %.5e +- %.1e (n=200, %ld discarded), H(h=0.05) = %.5e, H(h=0.1) = %.5e, "
                      "|Lambda - H| = %.2e <= %.2e, oracle %.5e (extrapolated H %.5e), offsets %.1f%% / %.1f%%",
                      avg.value, avg.standard_error, avg.n_discarded, h.value, h.coarse, gap, allowed, oracle,
                      extrapolated, 100 * lam_off, 100 * h_off);
    return r;
}

// 3. Kernel and potential forms of the Hopf invariant, symmetry, bilinearity.
inline Result hopf_consistency(const Settings& s)
{
    using namespace detail;
    Result r{3, "Hopf invariant consistency", true, {}, 0, 300};
    const auto [x, y] = make_hopf_pair(0.2, 1.0);
    const FieldSpec z = tube({1, -0.5, 0}, {0, 1, 0});
    QuadratureGrid fine;
    fine.cell = 0.05;
    double worst_form = 0.0;
    for (const FieldSpec& second : {y, y + z}) {
        const double hk = hopf_kernel(x, second, fine, s.workers).value;
        const double hp = hopf_potential(x, second, default_potential_grid(), s.workers);
        worst_form = std::max(worst_form, std::fabs(hk - hp) / std::fabs(hk));
    }
    QuadratureGrid grid;
    grid.cell = 0.1;
    const auto hk = [&](const FieldSpec& a, const FieldSpec& b) { return hopf_kernel(a, b, grid, s.workers).value; };
    const double sym = rel_diff(hk(x, y), hk(y, x));
    const double lin2 = rel_diff(hk(x, y + z), hk(x, y) + hk(x, z));
    const double lin1 = rel_diff(hk(y + z, x), hk(y, x) + hk(z, x));
    const double lin = std::max(lin1, lin2);
    r.pass = worst_form <= 0.02 && sym <= 1e-12 && lin <= 1e-10;
    r.detail = format("max |H_kernel - H_potential| / |H| = %.2e, symmetry %.1e, bilinearity %.1e", worst_form, sym,
                      lin);
    return r;
}

// 4. Decay of the short-path terms: L1 means over fixed random seed pairs.
inline Result short_path_decay(const Settings& s)
{
    using namespace detail;
    Result r{4, "short-path decay", true, {}, 0, 300};
    const auto [x, y] = make_hopf_pair(0.2, 1.0);
    const auto pairs = seed_pairs(x, y, Sampling::tube, s.seed + 3, 100);
    const double fixed = 4 * pi;
    std::vector<double> h, hh, t1, t2, t3;
    ShortPathOptions so;
    so.workers = s.workers;
    for (int k = 0; k < 5; ++k) {
        const double v = 4 * pi * std::pow(2.0, k);
        double a1 = 0, a2 = 0, a3 = 0;
        for (const auto& [p, q] : pairs) {
            a1 += std::fabs(short_path_terms(x, y, p, q, fixed, v, s.ctrl, so).arc_closure);
            a2 += std::fabs(short_path_terms(x, y, p, q, v, fixed, s.ctrl, so).closure_arc);
            a3 += std::fabs(short_path_terms(x, y, p, q, v, v, s.ctrl, so).closure_closure);
        }
        h.push_back(v);
        hh.push_back(v * v);
        t1.push_back(a1 / pairs.size());
        t2.push_back(a2 / pairs.size());
        t3.push_back(a3 / pairs.size());
    }
    const double s1 = loglog_slope(h, t1), s2 = loglog_slope(h, t2), s3 = loglog_slope(hh, t3);
    const auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    r.pass = in(s1, -1.15, -0.85) && in(s2, -1.15, -0.85) && in(s3, -1.2, -0.8);
    r.detail = format("slopes: term1 vs S %.3f, term2 vs T %.3f, term3 vs TS %.3f (100 pairs, 4pi..64pi)", s1, s2, s3);
    return r;
}

// 5. Volume preservation of the flow map.
inline Result volume_preservation(const Settings& s)
{
    using namespace detail;
    Result r{5, "volume preservation", true, {}, 0, 60};
    double worst = 0.0;
    for (const auto& [name, f] : s.fields) {
        if (f.empty())
            continue;
        const SeedSampler sampler(f, Sampling::tube);
        for (int i = 0; i < 100; ++i) {
            auto rng = sample_stream(s.seed + 5, static_cast<std::uint64_t>(i));
            worst = std::max(worst, std::fabs(flow_jacobian_det(f, sampler.draw(rng).first, 10.0, 1e-4, s.ctrl) - 1.0));
        }
    }
    r.pass = worst < 1e-4 && !s.fields.empty();
    r.detail = format("%zu fields x 100 seeds, max |det - 1| = %.2e", s.fields.size(), worst);
    return r;
}

// 6. Divergence at random support points.
inline Result divergence_free(const Settings& s)
{
    using namespace detail;
    Result r{6, "divergence-free fields", true, {}, 0, 10};
    double worst = 0.0;
    for (const auto& [name, f] : s.fields) {
        if (f.empty())
            continue;
        const SeedSampler sampler(f, Sampling::tube);
        auto rng = sample_stream(s.seed + 6, 0);
        for (int i = 0; i < 10000; ++i)
            worst = std::max(worst, std::fabs(divergence(f, sampler.draw(rng).first, 1e-6)));
    }
    r.pass = worst < 1e-6 && !s.fields.empty();
    r.detail = format("%zu fields x 10^4 points, max |div| = %.2e", s.fields.size(), worst);
    return r;
}

// 7. L1 increments of the time average decrease along the schedule.
inline Result ergodic_diagnostic(const Settings& s)
{
    using namespace detail;
    Result r{7, "ergodic L1 diagnostic", true, {}, 0, 600};
    const auto [x, y] = make_hopf_pair(0.2, 1.0);
    const auto pairs = seed_pairs(x, y, Sampling::tube, s.seed + 7, 50);
    ConvergenceOptions co;
    co.short_path_terms = false;
    co.workers = s.workers;
    const auto rows = convergence_series(x, y, pairs, {{4 * pi, 4 * pi}, {8 * pi, 8 * pi}, {16 * pi, 16 * pi},
                                                       {32 * pi, 32 * pi}},
                                         s.ctrl, co);
    bool decreasing = rows.size() == 4;
    for (std::size_t k = 2; k < rows.size(); ++k)
        decreasing = decreasing && rows[k].l1_increment < rows[k - 1].l1_increment;
    r.pass = decreasing;
    r.detail = format("increments %.3e, %.3e, %.3e (50 pairs, 4pi..32pi)", rows[1].l1_increment, rows[2].l1_increment,
                      rows[3].l1_increment);
    return r;
}

// 8. Geometric and kernel lambda differ by at most the short-path terms.
inline Result mode_consistency(const Settings& s)
{
    using namespace detail;
    Result r{8, "per-sample mode consistency", true, {}, 0, 300};
    const auto [x, y] = make_hopf_pair(0.2, 1.0);
    LambdaOptions lo;
    lo.workers = s.workers;
    const SeedSampler sx(x, Sampling::speed), sy(y, Sampling::speed);
    int used = 0, failed = 0;
    double worst_ratio = 0.0;
    for (std::uint64_t i = 0; used < 50 && i < 200; ++i) {
        auto rng = sample_stream(s.seed + 8, i);
        const Vec3 p = sx.draw(rng).first;
        const Vec3 q = sy.draw(rng).first;
        const ModeComparison c = compare_modes(x, y, p, q, {8 * pi, 8 * pi}, s.ctrl, lo);
        if (c.discarded())
            continue;
        ++used;
        failed += !c.consistent();
        worst_ratio = std::max(worst_ratio, c.difference() / (c.terms.sum() + c.tolerance));
    }
    r.pass = used == 50 && failed == 0;
    r.detail = format("%d pairs at T=S=8pi, %d inconsistent, max |geo - kernel| / bound = %.3f", used, failed,
                      worst_ratio);
    return r;
}

inline Result run(int id, const Settings& s)
{
    static const std::function<Result(const Settings&)> checks[] = {
        linking_form_identity, arnold_theorem,      hopf_consistency,  short_path_decay,
        volume_preservation,   divergence_free,     ergodic_diagnostic, mode_consistency};
    if (id < 1 || id > 8)
        throw ValidationError("acceptance: criterion must lie in 1..8");
    const auto t0 = std::chrono::steady_clock::now();
    Result r;
    try {
        r = checks[id - 1](s);
    } catch (const std::exception& e) {
        r = {id, "criterion " + std::to_string(id), false, std::string("error: ") + e.what(), 0, 0};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (r.budget > 0 && r.seconds > r.budget) {
        r.pass = false;
        r.detail += " [over time budget]";
    }
    return r;
}

inline std::string line(const Result& r)
{
    return detail::format("criterion %d %s  %s: %s (%.1f s, budget %.0f s)", r.id, r.pass ? "PASS" : "FAIL",
                          r.name.c_str(), r.detail.c_str(), r.seconds, r.budget);
}

} // namespace hopflab::acceptance
