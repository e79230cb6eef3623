#include <doctest.h>

#include <dynspike/ultrasound.hpp>

#include <numeric>

using namespace dynspike;

namespace {

Particle bubble(double x, double y, double vx, double vy)
{
    Vector p(2), v(2);
    p << x, y;
    v << vx, vy;
    return Particle{p, v, 1.0};
}

FrameSequence constant_sequence(int n, double value)
{
    FrameSequence s;
    s.duration = n * s.tau;
    s.frames.assign(n, Eigen::MatrixXd::Constant(25, 25, value));
    return s;
}

VesselPhantom straight_phantom()
{
    VesselPhantom p;
    p.vessels.push_back(
        Vessel{{Point2(0.1, 0.5), Point2(0.4, 0.5), Point2(0.6, 0.5), Point2(0.9, 0.5)}});
    return p;
}

} // namespace

TEST_CASE("centerline arc length")
{
    const Centerline line({Point2(0.1, 0.2), Point2(0.3, 0.2), Point2(0.5, 0.2), Point2(0.7, 0.2)});
    CHECK(line.length() == doctest::Approx(0.6).epsilon(1e-6));
    CHECK((line.point(0.3) - Point2(0.4, 0.2)).norm() <= 1e-6);
    CHECK((line.tangent(0.3) - Point2(1.0, 0.0)).norm() <= 1e-9);
    const auto n = line.nearest(Point2(0.45, 0.25));
    CHECK(n.distance == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(n.s == doctest::Approx(0.35).epsilon(1e-3));
}

TEST_CASE("standard phantom")
{
    const VesselPhantom p = VesselPhantom::standard();
    CHECK_NOTHROW(p.validate());
    REQUIRE(p.vessels.size() == 4);
    CHECK(p.vessels[0].flow == -p.vessels[1].flow);
    const auto lines = p.centerlines();
    for (double s : {0.1, 0.4, 0.7})
    {
        const double gap = lines[1].nearest(lines[0].point(s * lines[0].length())).distance;
        CHECK(gap == doctest::Approx(0.03).epsilon(0.2));
    }

    VesselPhantom bad = p;
    bad.vessels[0].control[0] = Point2(-0.2, 0.5);
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = p;
    bad.vessels[2].parent = 7;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = p;
    bad.vessels[1].flow = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("interval selection")
{
    SUBCASE("constant sequence is one interval")
    {
        const std::vector<double> norms(50, 3.0);
        const IntervalSelection s = select_intervals(norms, 5);
        REQUIRE(s.intervals.size() == 1);
        CHECK(s.intervals[0].first == 0);
        CHECK(s.intervals[0].count == 50);
        CHECK(s.windows.size() == 10);
    }
    SUBCASE("a jump splits the sequence")
    {
        std::vector<double> norms(40, 1.0);
        std::fill(norms.begin() + 17, norms.end(), 2.0);
        const IntervalSelection s = select_intervals(norms, 5);
        REQUIRE(s.intervals.size() == 2);
        CHECK(s.intervals[0].last() == 16);
        CHECK(s.intervals[1].first == 17);
        for (const auto& w : s.windows)
        {
            CHECK(((w.last() <= 16) || (w.first >= 17)));
        }
    }
    SUBCASE("windows are centred and disjoint")
    {
        const std::vector<double> norms(13, 1.0);
        const IntervalSelection s = select_intervals(norms, 5);
        REQUIRE(s.windows.size() == 2);
        CHECK(s.windows[0].first == 1);
        CHECK(s.windows[1].first == 6);
    }
    SUBCASE("short runs are dropped")
    {
        const std::vector<double> norms{1, 1, 1, 2, 2, 2, 2, 2, 4, 4};
        const IntervalSelection s = select_intervals(norms, 5);
        REQUIRE(s.intervals.size() == 1);
        CHECK(s.intervals[0].first == 3);
        CHECK(s.intervals[0].count == 5);
    }
    CHECK_THROWS_AS(select_intervals(std::vector<double>(10, 1.0), 2), InvalidArgument);
    CHECK(select_intervals(std::vector<double>{}, 5).windows.empty());
}

TEST_CASE("pure noise with a tight tolerance gives few windows")
{
    AcquisitionSpec spec;
    spec.duration = 0.4;
    spec.alpha    = 0.01;
    const Acquisition acq =
        simulate_acquisition(VesselPhantom::standard(), BubbleProcess{0.0, 60.0, 1}, spec);
    const IntervalSelection s = select_intervals(acq.sequence, 5, 1e-4);
    CHECK(s.windows.size() <= 2);
}

TEST_CASE("bmode")
{
    const FrameSequence a = constant_sequence(4, 1.0);
    FrameSequence b       = constant_sequence(4, 0.0);
    for (int i = 0; i < 4; ++i)
    {
        b.frames[i](3, 5) = i;
    }
    FrameSequence ab = a;
    for (int i = 0; i < 4; ++i)
    {
        ab.frames[i] += b.frames[i];
    }
    CHECK((bmode(ab) - bmode(a) - bmode(b)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(bmode(b)(3, 5) == doctest::Approx(1.5));
}

TEST_CASE("bmode of a static bubble alive for part of the time")
{
    const PixelGrid pixels{};
    const PSFOperator op(0.04, pixels, TimeGrid(1, 0.002, 2));
    const std::vector<Particle> one{bubble(pixels.center_x(10), pixels.center_y(14), 0, 0)};
    const Eigen::MatrixXd psf = apply_psf(op, one).frames[1];
    FrameSequence s = constant_sequence(20, 0.0);
    for (int i = 5; i < 12; ++i)
    {
        s.frames[i] = psf;
    }
    CHECK((bmode(s) - psf * (7.0 / 20.0)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("simulation")
{
    AcquisitionSpec spec;
    spec.duration = 0.2;
    CHECK(spec.frame_count() == 100);

    SUBCASE("no activation leaves pure noise")
    {
        const Acquisition acq = simulate_acquisition(VesselPhantom::standard(),
                                                     BubbleProcess{0.0, 60.0, 3}, spec);
        REQUIRE(acq.sequence.frames.size() == 100);
        for (const auto& t : acq.truth)
        {
            CHECK(t.empty());
        }
        const auto norms = acq.sequence.norms();
        const double mean =
            std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(norms.size());
        CHECK(mean == doctest::Approx(0.01 * 25).epsilon(0.05));
    }
    SUBCASE("bubbles move at the vessel speed")
    {
        const Acquisition acq = simulate_acquisition(straight_phantom(),
                                                     BubbleProcess{0.2, 60.0, 4}, spec);
        int pairs = 0;
        for (std::size_t f = 1; f < acq.truth.size(); ++f)
        {
            for (const auto& b : acq.truth[f])
            {
                for (const auto& a : acq.truth[f - 1])
                {
                    if (a.id == b.id)
                    {
                        CHECK((b.position - a.position).norm() == doctest::Approx(0.004));
                        CHECK(b.velocity.norm() == doctest::Approx(2.0));
                        ++pairs;
                    }
                }
            }
        }
        CHECK(pairs > 50);
    }
    SUBCASE("same seed, same frames")
    {
        const BubbleProcess proc{0.05, 60.0, 5};
        const Acquisition a = simulate_acquisition(VesselPhantom::standard(), proc, spec);
        const Acquisition b = simulate_acquisition(VesselPhantom::standard(), proc, spec);
        CHECK(a.sequence.frames[40] == b.sequence.frames[40]);
    }
    SUBCASE("activation raises the frame norm")
    {
        AcquisitionSpec quiet = spec;
        quiet.duration        = 2.0;
        const Acquisition acq =
            simulate_acquisition(VesselPhantom::standard(), BubbleProcess{0.01, 60.0, 6}, quiet);
        const auto norms = acq.sequence.norms();
        int births = 0, rises = 0;
        for (std::size_t f = 1; f < acq.truth.size(); ++f)
        {
            if (acq.truth[f].size() == acq.truth[f - 1].size() + 1)
            {
                ++births;
                rises += norms[f] > norms[f - 1];
            }
        }
        REQUIRE(births >= 5);
        CHECK(rises >= births * 9 / 10);
    }
}

TEST_CASE("window reconstruction round trips")
{
    const PixelGrid pixels{};
    const TimeGrid g(2, 0.002, 2);
    const PSFOperator op(0.04, pixels, g);
    const SolverConfig cfg = PipelineSettings::default_solver();

    SUBCASE("static bubble on a pixel centre")
    {
        const std::vector<Particle> one{bubble(pixels.center_x(12), pixels.center_y(12), 0, 0)};
        const Reconstruction r = reconstruct_window(apply_psf(op, one), op, cfg);
        REQUIRE(r.particles.size() == 1);
        CHECK((r.particles[0].position - one[0].position).norm() <= 1e-3);
        CHECK(r.particles[0].velocity.norm() <= 1e-3);
    }
    SUBCASE("moving bubble on a straight segment")
    {
        const std::vector<Particle> one{bubble(0.43, 0.57, 1.6, -1.2)};
        const Reconstruction r = reconstruct_window(apply_psf(op, one), op, cfg);
        REQUIRE(r.particles.size() == 1);
        CHECK(r.particles[0].velocity.norm() == doctest::Approx(2.0).epsilon(0.05));
    }
    SUBCASE("bubble on a curved segment")
    {
        // Circular arc with curvature 1/radius; beta = a tau K / (2 v) ~ 0.01.
        const double v = 2.0, a = 0.01 * 2 * v / (0.002 * 2), radius = v * v / a;
        FrameStack s;
        s.pixels = pixels;
        s.grid   = g;
        for (int k = -2; k <= 2; ++k)
        {
            const double ang = v * k * 0.002 / radius;
            const std::vector<Particle> at{
                bubble(0.5 + radius * std::sin(ang), 0.5 + radius * (1 - std::cos(ang)), 0, 0)};
            s.frames.push_back(apply_psf(PSFOperator(0.04, pixels, TimeGrid(1, 1.0, 2)), at)
                                   .frames[1]);
        }
        const Reconstruction r = reconstruct_window(s, op, cfg);
        REQUIRE(r.particles.size() == 1);
        CHECK(std::abs(r.particles[0].position[0] - 0.5) <= 0.01);
        CHECK(std::abs(r.particles[0].position[1] - 0.5) <= 0.01);
        CHECK(r.particles[0].velocity[0] == doctest::Approx(2.0).epsilon(0.1));
    }
    SUBCASE("tv bound estimate")
    {
        const std::vector<Particle> two{bubble(0.3, 0.3, 0, 0), bubble(0.7, 0.6, 0, 0)};
        CHECK(window_tv_bound(apply_psf(op, two), op) == doctest::Approx(2.4).epsilon(0.02));
    }
}

TEST_CASE("window stack")
{
    const FrameSequence s = constant_sequence(10, 2.0);
    const FrameStack w    = window_stack(s, 3, 2);
    CHECK(w.frames.size() == 5);
    CHECK(w.grid.K() == 2);
    CHECK(w.grid.tau() == s.tau);
    CHECK_THROWS_AS(window_stack(s, 7, 2), InvalidArgument);
}

TEST_CASE("aggregation and scoring")
{
    CHECK(aggregate({}).empty());
    const VesselPhantom p = straight_phantom();
    std::vector<MapPoint> pts{{0.5, 0.5, 2.0, 0.0, 0}, {0.5, 0.51, 2.0, 0.0, 0},
                              {0.5, 0.6, -2.0, 0.0, 1}};
    const PointScore s = score_points(p, pts, 0.02);
    CHECK(s.count == 3);
    CHECK(s.near_fraction == doctest::Approx(2.0 / 3.0));
    CHECK(s.sign_fraction == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("profiles and valleys")
{
    const std::vector<double> flat{1, 1, 1, 1};
    CHECK(valley_depth(flat) == 0.0);
    const std::vector<double> dip{0, 1, 0.5, 1, 0};
    CHECK(valley_depth(dip) == doctest::Approx(0.5));
    const std::vector<double> hill{0, 0.5, 1, 0.5, 0};
    CHECK(valley_depth(hill) == 0.0);

    Eigen::MatrixXd img(25, 25);
    for (int r = 0; r < 25; ++r)
    {
        for (int c = 0; c < 25; ++c)
        {
            img(r, c) = c;
        }
    }
    const PixelGrid pixels{};
    const auto prof = cross_profile(img, pixels, Point2(0.1, 0.5), Point2(0.5, 0.5), 5);
    REQUIRE(prof.size() == 5);
    for (std::size_t i = 0; i < prof.size(); ++i)
    {
        const double x = 0.1 + 0.1 * static_cast<double>(i);
        CHECK(prof[i] == doctest::Approx(x / 0.04 - 0.5));
    }
}

TEST_CASE("noiseless isolated bubbles are recovered window by window")
{
    AcquisitionSpec spec;
    spec.duration = 2.0;
    spec.alpha    = 0.0;
    const Acquisition acq =
        simulate_acquisition(straight_phantom(), BubbleProcess{0.01, 60.0, 7}, spec);
    PipelineSettings settings;
    settings.alpha = 1e-4;
    const PipelineResult res = run_pipeline(acq.sequence, settings, 1);

    std::vector<WindowResult> isolated;
    for (const auto& w : res.windows)
    {
        if (!w.skipped && acq.truth.at(w.window.center()).size() == 1)
        {
            isolated.push_back(w);
        }
    }
    MESSAGE("isolated windows: " << isolated.size() << ", match rate "
            << window_match_rate(acq, isolated, 0.01, 0.1));
    REQUIRE(isolated.size() >= 20);
    CHECK(window_match_rate(acq, isolated, 0.01, 0.1) >= 0.95);

    for (const auto& w : res.windows)
    {
        bool inside = false;
        for (const auto& iv : res.selection.intervals)
        {
            inside |= w.window.first >= iv.first && w.window.last() <= iv.last();
        }
        CHECK(inside);
    }
}

TEST_CASE("pipeline output does not depend on the thread count")
{
    AcquisitionSpec spec;
    spec.duration = 0.3;
    const Acquisition acq =
        simulate_acquisition(VesselPhantom::standard(), BubbleProcess{0.02, 60.0, 8}, spec);
    const PipelineResult a = run_pipeline(acq.sequence, PipelineSettings{}, 1);
    const PipelineResult b = run_pipeline(acq.sequence, PipelineSettings{}, 3);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i)
    {
        CHECK(a.points[i].x == b.points[i].x);
        CHECK(a.points[i].vy == b.points[i].vy);
    }
}
