#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "hopflab/fields.hpp"
#include "test_support.hpp"

using namespace hopflab;

namespace {

FieldSpec canonical(double a = 0.5, double amplitude = 1.0)
{
    return FieldSpec({TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, a, amplitude, +1}});
}

Vec3 uniform_in(const AABB& box, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Vec3 e = box.extent();
    return box.min_corner + Vec3{u(rng) * e.x, u(rng) * e.y, u(rng) * e.z};
}

std::vector<FieldSpec> shipped_fields()
{
    auto [x, y] = make_hopf_pair(0.2, 1.0);
    TubeSpec shifted = y.tubes()[0];
    shifted.center = shifted.center + Vec3{0, -0.5, 0};
    TubeSpec tilted{{0.3, -0.2, 0.1}, normalized(Vec3{1, 2, 2}), 0.8, 0.3, -1.5, -1};
    return {canonical(), x, y, y + FieldSpec({shifted}), FieldSpec({tilted}),
            FieldSpec({TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 0.4, 1.0, 1},
                       TubeSpec{{0.5, 0, 0.1}, normalized(Vec3{0, 1, 1}), 0.9, 0.3, 0.7, -1}})};
}

// Phi = int_0^a F(r) 2 pi r dr by composite Simpson.
double simpson_flux(const TubeSpec& t)
{
    const double a = t.minor_radius;
    return t.sign * testkit::simpson(
                        [&](double r) {
                            const double s = 1.0 - (r / a) * (r / a);
                            return t.amplitude * s * s * 2.0 * std::numbers::pi * r;
                        },
                        0.0, a, 2000);
}

} // namespace

TEST(Fields, CanonicalTubeValues)
{
    const FieldSpec f = canonical();
    const Vec3 core = f({1, 0, 0});
    EXPECT_NEAR(core.x, 0.0, 1e-15);
    EXPECT_NEAR(core.y, 1.0, 1e-15);
    EXPECT_NEAR(core.z, 0.0, 1e-15);

    EXPECT_EQ(f({3, 0, 0}), Vec3(0, 0, 0));

    // r = 0.25, F = (1 - 0.25)^2
    const Vec3 off = f({1, 0, 0.25});
    EXPECT_NEAR(off.x, 0.0, 1e-15);
    EXPECT_NEAR(off.y, 0.5625, 1e-15);
    EXPECT_NEAR(off.z, 0.0, 1e-15);
}

TEST(Fields, ValidationHappensAtConstruction)
{
    EXPECT_THROW(FieldSpec({TubeSpec{{0, 0, 0}, {0, 0, 1.001}, 1.0, 0.5, 1.0, 1}}), ValidationError);
    EXPECT_THROW(FieldSpec({TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 1.0, 1.0, 1}}), ValidationError);
    EXPECT_THROW(FieldSpec({TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 0.5, 1.0, 0}}), ValidationError);
    EXPECT_NO_THROW(FieldSpec({TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 0.5, 0.0, 1}}));
}

TEST(Fields, DivergenceCanonicalPoint)
{
    EXPECT_LT(std::fabs(divergence(canonical(), {1, 0, 0.1}, 1e-4)), 1e-6);
    EXPECT_EQ(divergence(FieldSpec{}, {0.3, 0.2, 0.1}, 1e-4), 0.0);
}

TEST(Fields, DivergenceInOverlapOfTwoTubes)
{
    // Two tubes whose supports overlap around (1, 0, 0).
    const FieldSpec f({TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 0.4, 1.0, 1},
                       TubeSpec{{1, 0, 0}, {1, 0, 0}, 0.2, 0.15, 2.0, -1}});
    const Vec3 p{1.0, 0.18, 0.05};
    ASSERT_EQ(f.support_count(p), 2);
    EXPECT_LT(std::fabs(divergence(f, p, 1e-5)), 1e-6);
}

// Central differences straddling the C1 kink at r = a carry an O(h) error, and
// inside thin tubes the O(h^2) term exceeds 1e-6 at h = 1e-4; h = 1e-6 keeps
// both below the threshold.
TEST(Fields, DivergenceFreeAtRandomSupportPoints)
{
    std::mt19937_64 rng(7);
    for (const auto& f : shipped_fields()) {
        const AABB box = support_box(f);
        int checked = 0;
        double worst = 0.0;
        for (int i = 0; i < 10000; ++i) {
            const Vec3 p = uniform_in(box, rng);
            worst = std::max(worst, std::fabs(divergence(f, p, 1e-6)));
            ++checked;
        }
        EXPECT_LT(worst, 1e-6) << f.name();
    }
}

TEST(Fields, TubeFluxClosedFormMatchesRadialQuadrature)
{
    for (double a : {0.5, 0.2}) {
        const TubeSpec t{{0, 0, 0}, {0, 0, 1}, 1.0, a, 1.0, 1};
        const double oracle = simpson_flux(t);
        EXPECT_NEAR(tube_flux(t), oracle, 1e-12);
    }
    EXPECT_NEAR(tube_flux(TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 0.5, 1.0, 1}), std::numbers::pi / 12, 1e-15);
    EXPECT_NEAR(tube_flux(TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 0.2, 1.0, 1}), 0.04 * std::numbers::pi / 3,
                1e-15);
    EXPECT_EQ(tube_flux(TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 0.2, 0.0, 1}), 0.0);
    EXPECT_NEAR(tube_flux(TubeSpec{{0, 0, 0}, {0, 0, 1}, 1.0, 0.2, 1.0, -1}), -0.04 * std::numbers::pi / 3,
                1e-15);
}

TEST(Fields, TubeFluxMatchesMeridianCrossSection)
{
    // Flux of X through the half plane {y = 0, x > 0} by 2-D quadrature.
    for (double a : {0.5, 0.2}) {
        const FieldSpec f = canonical(a, 1.3);
        const auto inner = [&](double x) {
            return testkit::simpson([&](double z) { return f({x, 0, z}).y; }, -a, a, 2000);
        };
        const double flux = testkit::simpson(inner, 1.0 - a, 1.0 + a, 2000);
        EXPECT_NEAR(flux, tube_flux(f.tubes()[0]), 1e-10 * std::fabs(flux));
    }
}

TEST(Fields, SupportBox)
{
    const AABB box = support_box(canonical());
    EXPECT_NEAR(box.min_corner.x, -1.5, 1e-15);
    EXPECT_NEAR(box.max_corner.y, 1.5, 1e-15);
    EXPECT_NEAR(box.min_corner.z, -0.5, 1e-15);
    EXPECT_NEAR(box.max_corner.z, 0.5, 1e-15);

    const AABB empty = support_box(FieldSpec{});
    EXPECT_EQ(empty.min_corner, Vec3(0, 0, 0));
    EXPECT_EQ(empty.max_corner, Vec3(0, 0, 0));

    const TubeSpec far{{10, 0, 0}, {1, 0, 0}, 1.0, 0.1, 1.0, 1};
    const AABB u = support_box(canonical() + FieldSpec({far}));
    EXPECT_NEAR(u.min_corner.x, -1.5, 1e-15);
    EXPECT_NEAR(u.max_corner.x, 10.1, 1e-15);
    EXPECT_NEAR(u.max_corner.y, 1.5, 1e-15);
    EXPECT_NEAR(u.max_corner.z, 1.1, 1e-15);
}

TEST(Fields, VanishesOutsideSupportBox)
{
    std::mt19937_64 rng(11);
    for (const auto& f : shipped_fields()) {
        const AABB box = support_box(f);
        AABB big{box.min_corner - Vec3{1, 1, 1}, box.max_corner + Vec3{1, 1, 1}};
        int tested = 0;
        while (tested < 1000) {
            const Vec3 p = uniform_in(big, rng);
            if (box.contains(p))
                continue;
            EXPECT_EQ(f(p), Vec3(0, 0, 0));
            ++tested;
        }
    }
}

TEST(Fields, SuperpositionIsLinear)
{
    const auto fields = shipped_fields();
    FieldSpec all;
    for (const auto& f : fields)
        all = all + f;
    std::mt19937_64 rng(3);
    const AABB box = support_box(all);
    for (int i = 0; i < 2000; ++i) {
        const Vec3 p = uniform_in(box, rng);
        Vec3 sum{};
        for (const auto& f : fields)
            sum += f(p);
        const Vec3 total = all(p);
        EXPECT_LE(norm(total - sum), 1e-14 * std::max(1.0, norm(sum)));
    }
}

TEST(Fields, RigidMotionEquivariance)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const FieldSpec base = canonical(0.4, 1.7);
    for (int i = 0; i < 200; ++i) {
        const auto rot = testkit::random_rotation(rng);
        const Vec3 shift{3 * u(rng), 3 * u(rng), 3 * u(rng)};
        const FieldSpec moved({TubeSpec{shift, rot(Vec3{0, 0, 1}), 1.0, 0.4, 1.7, 1}});
        const Vec3 p{1 + 0.4 * u(rng), 0.4 * u(rng), 0.4 * u(rng)};
        const Vec3 expect = rot(base(p));
        const Vec3 got = moved(rot(p) + shift);
        EXPECT_LE(norm(got - expect), 1e-12);
    }
}

TEST(Fields, HopfPair)
{
    EXPECT_THROW(make_hopf_pair(0.5, 1.0), ValidationError);
    EXPECT_THROW(make_hopf_pair(0.0, 1.0), ValidationError);
    const auto [x, y] = make_hopf_pair(0.2, 1.0);
    ASSERT_EQ(x.tubes().size(), 1u);
    ASSERT_EQ(y.tubes().size(), 1u);

    // Core separation by grid search over both angles, then margin to 2a.
    double best = 1e9;
    const int n = 720;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double s = 2 * std::numbers::pi * i / n, t = 2 * std::numbers::pi * j / n;
            const Vec3 p{std::cos(s), std::sin(s), 0};
            const Vec3 q{1 + std::cos(t), 0, std::sin(t)};
            best = std::min(best, distance(p, q));
        }
    EXPECT_NEAR(best, 1.0, 1e-6);
    EXPECT_GT(best - 2 * 0.2, 0.0);
}
