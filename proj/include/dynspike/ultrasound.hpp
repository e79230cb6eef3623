#pragma once

#include <dynspike/forward_model.hpp>
#include <dynspike/solver.hpp>

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace dynspike {

using Point2 = Eigen::Vector2d;

///
/// Cubic Bezier curve with an arc-length table, so that positions and
/// tangents can be queried at a distance s (mm) from the first control point.
///
class Centerline
{
public:
    explicit Centerline(std::array<Point2, 4> control, int samples = 2048);

    const std::array<Point2, 4>& control() const noexcept { return m_control; }
    double length() const noexcept { return m_arc.back(); }

    Point2 point(double s) const;
    /// Unit tangent in the direction of increasing s.
    Point2 tangent(double s) const;

    struct Nearest
    {
        double distance;
        double s;
    };
    /// Closest point of the sampled polyline.
    Nearest nearest(const Point2& p) const;

private:
    double parameter(double s) const;
    Point2 bezier(double t) const;
    Point2 bezier_derivative(double t) const;

    std::array<Point2, 4> m_control;
    std::vector<double> m_t;
    std::vector<double> m_arc;
    std::vector<Point2> m_points;
};

struct Vessel
{
    std::array<Point2, 4> control;
    /// +1: flow towards increasing arc length, -1: the reverse.
    int flow     = 1;
    double speed = 2.0;
    /// Index of the vessel this one branches off, -1 for a main vessel.
    int parent   = -1;
};

struct VesselPhantom
{
    std::vector<Vessel> vessels;
    PixelGrid pixels{};
    double sigma = 0.04;

    /// Throws InvalidArgument when a curve leaves the field of view, a flow
    /// sign is not +-1, a speed is not positive or a parent index is invalid.
    void validate() const;
    std::vector<Centerline> centerlines() const;

    /// Two curved vessels 0.03 mm apart with opposite flows, each with one
    /// branch, in a 1 x 1 mm field of 0.04 mm pixels.
    static VesselPhantom standard();
};

///
/// Every frame, each vessel activates a bubble with probability `activation`
/// at a uniform arc-length position. A bubble lives 1 + Poisson(mean_lifetime)
/// frames or until it runs off the end of its vessel.
///
struct BubbleProcess
{
    double activation    = 0.01;
    double mean_lifetime = 60.0;
    std::uint64_t seed   = 0;

    void validate() const;
};

struct AcquisitionSpec
{
    double tau      = 0.002;
    double duration = 2.0;
    /// Real Gaussian noise per pixel.
    double alpha    = 0.01;

    int frame_count() const;
    void validate() const;
};

struct FrameSequence
{
    PixelGrid pixels{};
    double sigma    = 0.04;
    double tau      = 0.002;
    double duration = 0.0;
    std::vector<Eigen::MatrixXd> frames;

    std::vector<double> norms() const;
};

struct TrueBubble
{
    int id     = 0;
    int vessel = 0;
    Point2 position;
    Point2 velocity;
};

struct Acquisition
{
    FrameSequence sequence;
    /// Bubbles alive in each frame.
    std::vector<std::vector<TrueBubble>> truth;
};

Acquisition simulate_acquisition(const VesselPhantom& phantom,
                                 const BubbleProcess& process,
                                 const AcquisitionSpec& spec);

struct FrameWindow
{
    int first = 0;
    int count = 0;

    int last() const noexcept { return first + count - 1; }
    int center() const noexcept { return first + count / 2; }
};

struct IntervalSelection
{
    /// Maximal runs of at least `window` frames with consecutive relative
    /// norm changes <= rel_tol.
    std::vector<FrameWindow> intervals;
    /// Non-overlapping windows of exactly `window` frames, centred in their
    /// interval.
    std::vector<FrameWindow> windows;
};

IntervalSelection select_intervals(std::span<const double> norms, int window,
                                   double rel_tol = 0.02);
IntervalSelection select_intervals(const FrameSequence& seq, int window,
                                   double rel_tol = 0.02);

/// Frames first .. first + 2K of seq as a stack with frame times -K..K.
FrameStack window_stack(const FrameSequence& seq, int first, int K);

/// 1.2 times the centre-frame energy over the energy of one unit source.
double window_tv_bound(const FrameStack& window, const PSFOperator& op);

/// solve_dynamic with the PSF operator and cfg.tv_bound = window_tv_bound().
Reconstruction reconstruct_window(const FrameStack& window, const PSFOperator& op,
                                  const SolverConfig& cfg);

struct PipelineSettings
{
    int K            = 2;
    double rel_tol   = 0.02;
    /// Noise level used for the residual tolerance alpha sqrt(#pixels).
    double alpha     = 0.01;
    /// Windows whose estimated bubble count (window_tv_bound / 1.2) is below
    /// this are treated as empty and skipped.
    double min_bubbles = 0.5;
    SolverConfig solver = default_solver();

    static SolverConfig default_solver();
};

struct WindowResult
{
    int window_id = 0;
    FrameWindow window;
    double tv_bound = 0.0;
    bool skipped    = false;
    Reconstruction reconstruction;
};

/// One recovered (position, velocity) pair, reported at the window centre.
struct MapPoint
{
    double x  = 0.0;
    double y  = 0.0;
    double vx = 0.0;
    double vy = 0.0;
    int window_id = 0;
};

struct PipelineResult
{
    IntervalSelection selection;
    std::vector<WindowResult> windows;
    std::vector<MapPoint> points;
    Eigen::MatrixXd bmode;
};

/// Windows are reconstructed on `threads` workers (0: hardware concurrency);
/// the result does not depend on the thread count.
PipelineResult run_pipeline(const FrameSequence& seq, const PipelineSettings& settings,
                            int threads = 0);

std::vector<MapPoint> aggregate(std::span<const WindowResult> windows);

/// Pixelwise mean over all frames.
Eigen::MatrixXd bmode(const FrameSequence& seq);

/// Bilinear samples of an image (values at pixel centres) along a -> b, mm.
std::vector<double> cross_profile(const Eigen::MatrixXd& image, const PixelGrid& pixels,
                                  const Point2& a, const Point2& b, int samples);

///
/// Depth of the deepest interior minimum relative to the smaller of the
/// highest values on its two sides; 0 for a profile without a dip.
///
double valley_depth(std::span<const double> profile);

struct PointScore
{
    int count = 0;
    /// Fraction of points within the distance tolerance of some centerline.
    double near_fraction = 0.0;
    /// Fraction of points whose velocity points along the flow of the
    /// nearest vessel.
    double sign_fraction = 0.0;
};

PointScore score_points(const VesselPhantom& phantom, std::span<const MapPoint> points,
                        double tolerance = 0.02);

///
/// Matches each processed window against the bubbles alive at its centre
/// frame; returns the fraction of windows matched within the thresholds.
///
double window_match_rate(const Acquisition& acq, std::span<const WindowResult> windows,
                         double position_tol, double velocity_tol);

} // namespace dynspike
