#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "hopflab/flow.hpp"
#include "test_support.hpp"

using namespace hopflab;
using std::numbers::pi;

namespace {

FieldSpec canonical(double a = 0.5)
{
    return FieldSpec({TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, a, 1.0, +1}}, "canonical");
}

Vec3 random_support_point(const FieldSpec& f, std::mt19937_64& rng)
{
    const AABB box = support_box(f);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (;;) {
        const Vec3 e = box.extent();
        const Vec3 p = box.min_corner + Vec3{u(rng) * e.x, u(rng) * e.y, u(rng) * e.z};
        if (f.support_count(p) > 0)
            return p;
    }
}

} // namespace

TEST(Flow, QuarterTurnOnCore)
{
    const Trajectory tr = integrate(canonical(), {1, 0, 0}, pi / 2);
    EXPECT_EQ(tr.samples().front().t, 0.0);
    EXPECT_EQ(tr.T(), pi / 2);
    EXPECT_LT(distance(tr.end(), {0, 1, 0}), 1e-6);
    for (std::size_t i = 1; i < tr.samples().size(); ++i)
        EXPECT_GT(tr.samples()[i].t, tr.samples()[i - 1].t);
}

TEST(Flow, ConstantAndEmptyTrajectories)
{
    const Trajectory outside = integrate(canonical(), {3, 0, 0}, 5.0);
    EXPECT_TRUE(outside.is_constant());
    for (const auto& s : outside.samples())
        EXPECT_EQ(s.p, Vec3(3, 0, 0));
    EXPECT_EQ(outside.T(), 5.0);

    const Trajectory zero_time = integrate(canonical(), {1, 0, 0}, 0.0);
    ASSERT_EQ(zero_time.samples().size(), 1u);
    EXPECT_EQ(zero_time.start(), Vec3(1, 0, 0));

    EXPECT_THROW(integrate(canonical(), {1, 0, 0}, -1.0), ValidationError);
}

TEST(Flow, StepBudgetCarriesPartialTrajectory)
{
    StepControl ctrl;
    ctrl.max_steps = 10;
    try {
        integrate(canonical(), {1, 0, 0}, 10.0, ctrl);
        FAIL() << "expected StepLimitError";
    } catch (const StepLimitError& e) {
        EXPECT_GT(e.partial.samples().size(), 1u);
        EXPECT_LT(e.partial.T(), 10.0);
        EXPECT_EQ(e.partial.start(), Vec3(1, 0, 0));
    }
}

TEST(Flow, DenseOutputFollowsCircle)
{
    const Trajectory tr = integrate(canonical(), {1, 0, 0}, 2 * pi);
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
        const double t = 2 * pi * i / 1000;
        worst = std::max(worst, distance(tr.at(t), {std::cos(t), std::sin(t), 0}));
    }
    EXPECT_LT(worst, 1e-7);
}

TEST(Flow, FixedStepConvergenceOrder)
{
    // With loose tolerances the step is pinned at max_step; halving it must
    // cut the endpoint error on the exact circular orbit by at least 8x.
    const FieldSpec f = canonical();
    const double T = 2.0;
    const Vec3 exact{std::cos(T), std::sin(T), 0};
    double prev = -1.0;
    for (double h : {0.4, 0.2, 0.1, 0.05}) {
        StepControl ctrl{1.0, 1.0, h, 100000};
        const double err = distance(integrate(f, {1, 0, 0}, T, ctrl).end(), exact);
        if (prev > 0) {
            EXPECT_GE(prev / err, 8.0) << "h = " << h;
        }
        prev = err;
    }
}

TEST(Flow, ErrorTracksTolerance)
{
    const FieldSpec f = canonical();
    const double T = 4 * pi;
    double prev = 1e9;
    for (double tol : {1e-5, 1e-6, 1e-7, 1e-8, 1e-9}) {
        StepControl ctrl{tol, tol, 10.0, 100000};
        const double err = distance(integrate(f, {1, 0, 0}, T, ctrl).end(), {1, 0, 0});
        EXPECT_LT(err, 100 * tol) << tol;
        EXPECT_LT(err, prev) << tol;
        prev = err;
    }
}

TEST(Flow, GroupProperty)
{
    std::mt19937_64 rng(1);
    const auto [x, y] = make_hopf_pair(0.2, 1.0);
    for (int i = 0; i < 10; ++i) {
        const Vec3 x0 = random_support_point(x, rng);
        const Vec3 mid = integrate(x, x0, 3.0).end();
        const Vec3 two_legs = integrate(x, mid, 4.5).end();
        const Vec3 one_leg = integrate(x, x0, 7.5).end();
        EXPECT_LT(distance(two_legs, one_leg), 1e-7);
    }
}

TEST(Flow, CanonicalOrbitsArePlanarCircles)
{
    std::mt19937_64 rng(2);
    const FieldSpec f = canonical(0.3);
    for (int i = 0; i < 10; ++i) {
        const Vec3 x0 = random_support_point(f, rng);
        const Trajectory tr = integrate(f, x0, 20.0);
        const double rho0 = std::hypot(x0.x, x0.y);
        double dz = 0, drho = 0;
        for (const auto& s : tr.samples()) {
            dz = std::max(dz, std::fabs(s.p.z - x0.z));
            drho = std::max(drho, std::fabs(std::hypot(s.p.x, s.p.y) - rho0));
        }
        EXPECT_LT(dz, 1e-8);
        EXPECT_LT(drho, 1e-8);
    }
}

TEST(Flow, JacobianDeterminant)
{
    EXPECT_NEAR(flow_jacobian_det(canonical(), {1, 0, 0.1}, 10.0, 1e-4), 1.0, 1e-4);
    EXPECT_EQ(flow_jacobian_det(FieldSpec{}, {0.3, 0.7, -0.2}, 10.0, 1e-4), 1.0);
    EXPECT_THROW(flow_jacobian_det(canonical(), {1, 0, 0}, 1.0, 0.0), ValidationError);

    std::mt19937_64 rng(4);
    const auto [x, y] = make_hopf_pair(0.2, 1.0);
    const FieldSpec both = x + y;
    for (int i = 0; i < 10; ++i) {
        const Vec3 x0 = random_support_point(both, rng);
        EXPECT_NEAR(flow_jacobian_det(both, x0, 20.0, 1e-4), 1.0, 1e-3);
    }
}

TEST(Flow, ResampleStraightLine)
{
    // A hand-built constant-speed straight trajectory of length 1.
    DenseSegment seg;
    seg.t0 = 0;
    seg.h = 1;
    seg.c = {Vec3{0, 0, 0}, Vec3{1, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 0}, Vec3{0, 0, 0}};
    const Trajectory line({{0, {0, 0, 0}}, {1, {1, 0, 0}}}, {seg}, "line");
    const Trajectory r = resample(line, 0.1);
    ASSERT_GE(r.samples().size(), 11u);
    for (std::size_t i = 1; i < r.samples().size(); ++i)
        EXPECT_LE(distance(r.samples()[i].p, r.samples()[i - 1].p), 0.1 + 1e-15);
    EXPECT_EQ(r.start(), Vec3(0, 0, 0));
    EXPECT_EQ(r.end(), Vec3(1, 0, 0));

    const Trajectory single = integrate(canonical(), {1, 0, 0}, 0.0);
    EXPECT_EQ(resample(single, 0.1).samples().size(), 1u);
    EXPECT_THROW(resample(line, 0.0), ValidationError);
}

TEST(Flow, ResampleCircularOrbit)
{
    const Trajectory tr = integrate(canonical(), {1, 0, 0}, 2 * pi);
    const Trajectory r = resample(tr, 0.01);
    EXPECT_EQ(r.end(), tr.end());
    EXPECT_EQ(r.start(), tr.start());
    for (std::size_t i = 1; i < r.samples().size(); ++i)
        EXPECT_LE(distance(r.samples()[i].p, r.samples()[i - 1].p), 0.01);
    // Chords of a unit circle no longer than 0.01: at least 2 pi / 0.01 of them.
    EXPECT_GE(r.samples().size(), 629u);
}

TEST(Flow, CsvRoundTrip)
{
    const Trajectory tr = integrate(canonical(), {1, 0, 0.1}, 3.0);
    std::stringstream ss;
    write_csv(ss, tr);
    EXPECT_EQ(ss.str().rfind("t,x,y,z\n", 0), 0u);
    const auto back = read_trajectory_csv(ss);
    ASSERT_EQ(back.size(), tr.samples().size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        EXPECT_EQ(back[i].t, tr.samples()[i].t);
        EXPECT_EQ(back[i].p, tr.samples()[i].p);
    }
}
