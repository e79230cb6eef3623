#include <dynspike/ultrasound.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

namespace dynspike {

// --- centerlines ---------------------------------------------------------------

Centerline::Centerline(std::array<Point2, 4> control, int samples)
    : m_control(std::move(control))
{
    if (samples < 2)
    {
        throw InvalidArgument("a centerline needs at least two samples");
    }
    m_t.resize(samples + 1);
    m_arc.resize(samples + 1);
    m_points.resize(samples + 1);
    for (int i = 0; i <= samples; ++i)
    {
        m_t[i]      = static_cast<double>(i) / samples;
        m_points[i] = bezier(m_t[i]);
        m_arc[i]    = i == 0 ? 0.0 : m_arc[i - 1] + (m_points[i] - m_points[i - 1]).norm();
    }
    if (!(length() > 0.0))
    {
        throw InvalidArgument("degenerate centerline");
    }
}

Point2 Centerline::bezier(double t) const
{
    const double u = 1.0 - t;
    return u * u * u * m_control[0] + 3.0 * u * u * t * m_control[1] +
           3.0 * u * t * t * m_control[2] + t * t * t * m_control[3];
}

Point2 Centerline::bezier_derivative(double t) const
{
    const double u = 1.0 - t;
    return 3.0 * u * u * (m_control[1] - m_control[0]) +
           6.0 * u * t * (m_control[2] - m_control[1]) +
           3.0 * t * t * (m_control[3] - m_control[2]);
}

double Centerline::parameter(double s) const
{
    s           = std::clamp(s, 0.0, length());
    const auto it = std::upper_bound(m_arc.begin(), m_arc.end(), s);
    if (it == m_arc.end())
    {
        return 1.0;
    }
    const auto i    = static_cast<std::size_t>(it - m_arc.begin());
    const double f = (s - m_arc[i - 1]) / (m_arc[i] - m_arc[i - 1]);
    return m_t[i - 1] + f * (m_t[i] - m_t[i - 1]);
}

Point2 Centerline::point(double s) const { return bezier(parameter(s)); }

Point2 Centerline::tangent(double s) const
{
    return bezier_derivative(parameter(s)).normalized();
}

Centerline::Nearest Centerline::nearest(const Point2& p) const
{
    Nearest best{std::numeric_limits<double>::infinity(), 0.0};
    for (std::size_t i = 1; i < m_points.size(); ++i)
    {
        const Point2 a   = m_points[i - 1];
        const Point2 ab  = m_points[i] - a;
        const double len2 = ab.squaredNorm();
        const double f   = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const double d   = (a + f * ab - p).norm();
        if (d < best.distance)
        {
            best = {d, m_arc[i - 1] + f * (m_arc[i] - m_arc[i - 1])};
        }
    }
    return best;
}

// --- phantom and bubbles --------------------------------------------------------

void VesselPhantom::validate() const
{
    if (vessels.empty())
    {
        throw InvalidArgument("phantom has no vessels");
    }
    if (pixels.width < 1 || pixels.height < 1 || !(pixels.pitch > 0.0) || !(sigma > 0.0))
    {
        throw InvalidArgument("phantom needs a nonempty pixel grid and sigma > 0");
    }
    for (std::size_t i = 0; i < vessels.size(); ++i)
    {
        const auto& v = vessels[i];
        if (v.flow != 1 && v.flow != -1)
        {
            throw InvalidArgument("vessel flow must be +1 or -1");
        }
        if (!(v.speed > 0.0))
        {
            throw InvalidArgument("vessel speed must be positive");
        }
        if (v.parent < -1 || v.parent >= static_cast<int>(vessels.size()) ||
            v.parent == static_cast<int>(i))
        {
            throw InvalidArgument("vessel parent index out of range");
        }
        const Centerline c(v.control, 256);
        for (int k = 0; k <= 256; ++k)
        {
            const Point2 p = c.point(c.length() * k / 256.0);
            if (!pixels.contains(p.x(), p.y()))
            {
                throw InvalidArgument("vessel " + std::to_string(i) +
                                      " leaves the field of view");
            }
        }
    }
}

std::vector<Centerline> VesselPhantom::centerlines() const
{
    std::vector<Centerline> out;
    for (const auto& v : vessels)
    {
        out.emplace_back(v.control);
    }
    return out;
}

VesselPhantom VesselPhantom::standard()
{
    const std::array<Point2, 4> lower{Point2(0.08, 0.40), Point2(0.35, 0.60),
                                      Point2(0.65, 0.30), Point2(0.92, 0.48)};
    std::array<Point2, 4> upper = lower;
    for (auto& p : upper)
    {
        p.y() += 0.03;
    }
    auto at = [](const std::array<Point2, 4>& c, double t) {
        const double u = 1.0 - t;
        return Point2(u * u * u * c[0] + 3 * u * u * t * c[1] + 3 * u * t * t * c[2] +
                      t * t * t * c[3]);
    };
    const Point2 a = at(lower, 0.55);
    const Point2 b = at(upper, 0.30);

    VesselPhantom ph;
    ph.vessels.push_back(Vessel{lower, 1, 2.0, -1});
    ph.vessels.push_back(Vessel{upper, -1, 2.0, -1});
    ph.vessels.push_back(Vessel{{a, a + Point2(0.05, -0.12), Point2(0.62, 0.18),
                                 Point2(0.80, 0.10)},
                                1, 2.0, 0});
    ph.vessels.push_back(Vessel{{b, b + Point2(-0.02, 0.12), Point2(0.25, 0.80),
                                 Point2(0.12, 0.90)},
                                -1, 2.0, 1});
    return ph;
}

void BubbleProcess::validate() const
{
    if (!(activation >= 0.0 && activation <= 1.0))
    {
        throw InvalidArgument("activation probability must lie in [0, 1]");
    }
    if (!(mean_lifetime >= 0.0) || !std::isfinite(mean_lifetime))
    {
        throw InvalidArgument("mean lifetime must be finite and >= 0");
    }
}

int AcquisitionSpec::frame_count() const
{
    return static_cast<int>(std::lround(duration / tau));
}

void AcquisitionSpec::validate() const
{
    if (!(tau > 0.0) || !(duration >= tau))
    {
        throw InvalidArgument("acquisition needs tau > 0 and duration >= tau");
    }
    if (!(alpha >= 0.0))
    {
        throw InvalidArgument("noise level must be >= 0");
    }
}

std::vector<double> FrameSequence::norms() const
{
    std::vector<double> out;
    out.reserve(frames.size());
    for (const auto& f : frames)
    {
        out.push_back(f.norm());
    }
    return out;
}

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint32_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      stream};
    return std::mt19937_64(seq);
}

void render(Eigen::MatrixXd& image, const PixelGrid& pixels, double sigma, const Point2& p)
{
    Eigen::VectorXd gx(pixels.width), gy(pixels.height);
    const double s2 = 2.0 * sigma * sigma;
    for (int c = 0; c < pixels.width; ++c)
    {
        const double d = pixels.center_x(c) - p.x();
        gx[c]          = std::exp(-d * d / s2);
    }
    for (int r = 0; r < pixels.height; ++r)
    {
        const double d = pixels.center_y(r) - p.y();
        gy[r]          = std::exp(-d * d / s2);
    }
    image.noalias() += gy * gx.transpose();
}

struct Bubble
{
    int id;
    int vessel;
    double s;
    int remaining;
};

} // namespace

Acquisition simulate_acquisition(const VesselPhantom& phantom,
                                 const BubbleProcess& process,
                                 const AcquisitionSpec& spec)
{
    phantom.validate();
    process.validate();
    spec.validate();
    const auto lines = phantom.centerlines();
    auto rng         = seeded(process.seed, 1);
    auto noise_rng   = seeded(process.seed, 2);
    std::bernoulli_distribution spawn(process.activation);
    std::poisson_distribution<int> lifetime(process.mean_lifetime);

    Acquisition acq;
    auto& seq    = acq.sequence;
    seq.pixels   = phantom.pixels;
    seq.sigma    = phantom.sigma;
    seq.tau      = spec.tau;
    const int nf = spec.frame_count();
    seq.duration = nf * spec.tau;
    seq.frames.reserve(nf);
    acq.truth.reserve(nf);

    std::vector<Bubble> alive;
    int next_id = 0;
    for (int f = 0; f < nf; ++f)
    {
        for (std::size_t v = 0; v < lines.size(); ++v)
        {
            if (spawn(rng))
            {
                std::uniform_real_distribution<double> us(0.0, lines[v].length());
                alive.push_back(Bubble{next_id++, static_cast<int>(v), us(rng),
                                       1 + (process.mean_lifetime > 0.0 ? lifetime(rng) : 0)});
            }
        }
        Eigen::MatrixXd image = Eigen::MatrixXd::Zero(seq.pixels.height, seq.pixels.width);
        std::vector<TrueBubble> truth;
        for (const auto& b : alive)
        {
            const auto& line   = lines[b.vessel];
            const Vessel& ves  = phantom.vessels[b.vessel];
            const Point2 p     = line.point(b.s);
            render(image, seq.pixels, seq.sigma, p);
            truth.push_back(TrueBubble{b.id, b.vessel, p,
                                       ves.flow * ves.speed * line.tangent(b.s)});
        }
        seq.frames.push_back(add_noise(std::move(image), spec.alpha, noise_rng));
        acq.truth.push_back(std::move(truth));

        for (auto& b : alive)
        {
            const Vessel& ves = phantom.vessels[b.vessel];
            b.s += ves.flow * ves.speed * spec.tau;
            --b.remaining;
        }
        std::erase_if(alive, [&](const Bubble& b) {
            return b.remaining <= 0 || b.s < 0.0 || b.s > lines[b.vessel].length();
        });
    }
    return acq;
}

// --- protocol -------------------------------------------------------------------

IntervalSelection select_intervals(std::span<const double> norms, int window,
                                   double rel_tol)
{
    if (window < 3)
    {
        throw InvalidArgument("window must cover at least three frames");
    }
    if (!(rel_tol >= 0.0))
    {
        throw InvalidArgument("rel_tol must be >= 0");
    }
    IntervalSelection out;
    const int n = static_cast<int>(norms.size());
    auto close  = [&](int f) {
        const double scale = std::max(norms[f], norms[f + 1]);
        return scale == 0.0 || std::abs(norms[f + 1] - norms[f]) <= rel_tol * scale;
    };
    int start = 0;
    for (int f = 0; f < n; ++f)
    {
        if (f + 1 < n && close(f))
        {
            continue;
        }
        const int count = f - start + 1;
        if (count >= window)
        {
            out.intervals.push_back(FrameWindow{start, count});
            const int m      = count / window;
            const int offset = (count - m * window) / 2;
            for (int j = 0; j < m; ++j)
            {
                out.windows.push_back(FrameWindow{start + offset + j * window, window});
            }
        }
        start = f + 1;
    }
    return out;
}

IntervalSelection select_intervals(const FrameSequence& seq, int window, double rel_tol)
{
    const auto n = seq.norms();
    return select_intervals(n, window, rel_tol);
}

FrameStack window_stack(const FrameSequence& seq, int first, int K)
{
    const int count = 2 * K + 1;
    if (K < 1 || first < 0 || first + count > static_cast<int>(seq.frames.size()))
    {
        throw InvalidArgument("window lies outside the frame sequence");
    }
    FrameStack out;
    out.pixels = seq.pixels;
    out.sigma  = seq.sigma;
    out.grid   = TimeGrid(K, seq.tau, 2);
    out.frames.assign(seq.frames.begin() + first, seq.frames.begin() + first + count);
    return out;
}

double window_tv_bound(const FrameStack& window, const PSFOperator& op)
{
    const auto& centre = window.frames.at(window.grid.frame_slot(0));
    return 1.2 * centre.squaredNorm() / op.unit_energy();
}

Reconstruction reconstruct_window(const FrameStack& window, const PSFOperator& op,
                                  const SolverConfig& cfg)
{
    if (static_cast<int>(window.frames.size()) != op.grid().frame_count())
    {
        throw InvalidArgument("window length must be 2K + 1");
    }
    SolverConfig c = cfg;
    c.tv_bound     = window_tv_bound(window, op);
    if (!(c.tv_bound > 0.0))
    {
        return {};
    }
    return solve_dynamic(window, op, c);
}

SolverConfig PipelineSettings::default_solver()
{
    SolverConfig c;
    c.candidate_grid       = CandidateGrid{25, 1, 0.0};
    c.max_spikes           = 10;
    c.max_outer_iterations = 20;
    c.prune_threshold      = 0.1;
    return c;
}

PipelineResult run_pipeline(const FrameSequence& seq, const PipelineSettings& settings,
                            int threads)
{
    if (settings.K < 1 || !(settings.alpha >= 0.0))
    {
        throw InvalidArgument("pipeline needs K >= 1 and alpha >= 0");
    }
    PipelineResult out;
    out.bmode     = bmode(seq);
    out.selection = select_intervals(seq, 2 * settings.K + 1, settings.rel_tol);

    const PSFOperator op(seq.sigma, seq.pixels, TimeGrid(settings.K, seq.tau, 2));
    SolverConfig cfg = settings.solver;
    if (settings.alpha > 0.0)
    {
        cfg.residual_tolerance =
            settings.alpha * std::sqrt(static_cast<double>(op.measurement_size()));
    }

    const int n = static_cast<int>(out.selection.windows.size());
    out.windows.resize(n);
    if (threads <= 0)
    {
        threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }
    threads = std::max(1, std::min(threads, n));

    std::atomic<int> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;
    auto worker = [&] {
        for (int i = next++; i < n; i = next++)
        {
            try
            {
                WindowResult& r = out.windows[i];
                r.window_id     = i;
                r.window        = out.selection.windows[i];
                const FrameStack stack = window_stack(seq, r.window.first, settings.K);
                r.tv_bound             = window_tv_bound(stack, op);
                r.skipped              = r.tv_bound / 1.2 < settings.min_bubbles;
                if (!r.skipped)
                {
                    r.reconstruction = reconstruct_window(stack, op, cfg);
                }
            }
            catch (...)
            {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                {
                    failure = std::current_exception();
                }
                next = n;
            }
        }
    };
    if (threads == 1)
    {
        worker();
    }
    else
    {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t)
        {
            pool.emplace_back(worker);
        }
    }
    if (failure)
    {
        std::rethrow_exception(failure);
    }
    out.points = aggregate(out.windows);
    return out;
}

std::vector<MapPoint> aggregate(std::span<const WindowResult> windows)
{
    std::vector<MapPoint> out;
    for (const auto& w : windows)
    {
        if (w.skipped)
        {
            continue;
        }
        for (const auto& p : w.reconstruction.particles)
        {
            out.push_back(MapPoint{p.position[0], p.position[1], p.velocity[0],
                                   p.velocity[1], w.window_id});
        }
    }
    return out;
}

Eigen::MatrixXd bmode(const FrameSequence& seq)
{
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(seq.pixels.height, seq.pixels.width);
    for (const auto& f : seq.frames)
    {
        out += f;
    }
    if (!seq.frames.empty())
    {
        out /= static_cast<double>(seq.frames.size());
    }
    return out;
}

std::vector<double> cross_profile(const Eigen::MatrixXd& image, const PixelGrid& pixels,
                                  const Point2& a, const Point2& b, int samples)
{
    if (samples < 2)
    {
        throw InvalidArgument("a profile needs at least two samples");
    }
    if (image.rows() != pixels.height || image.cols() != pixels.width)
    {
        throw InvalidArgument("image does not match the pixel grid");
    }
    auto sample = [&](const Point2& p) {
        const double u  = std::clamp(p.x() / pixels.pitch - 0.5, 0.0, pixels.width - 1.0);
        const double v  = std::clamp(p.y() / pixels.pitch - 0.5, 0.0, pixels.height - 1.0);
        const int c0    = std::min(static_cast<int>(u), pixels.width - 1);
        const int r0    = std::min(static_cast<int>(v), pixels.height - 1);
        const int c1    = std::min(c0 + 1, pixels.width - 1);
        const int r1    = std::min(r0 + 1, pixels.height - 1);
        const double fu = u - c0;
        const double fv = v - r0;
        return (1 - fv) * ((1 - fu) * image(r0, c0) + fu * image(r0, c1)) +
               fv * ((1 - fu) * image(r1, c0) + fu * image(r1, c1));
    };
    std::vector<double> out;
    for (int i = 0; i < samples; ++i)
    {
        out.push_back(sample(a + (b - a) * (static_cast<double>(i) / (samples - 1))));
    }
    return out;
}

double valley_depth(std::span<const double> profile)
{
    const std::size_t n = profile.size();
    if (n < 3)
    {
        return 0.0;
    }
    std::vector<double> left(n), right(n);
    left[0] = profile[0];
    for (std::size_t i = 1; i < n; ++i)
    {
        left[i] = std::max(left[i - 1], profile[i]);
    }
    right[n - 1] = profile[n - 1];
    for (std::size_t i = n - 1; i-- > 0;)
    {
        right[i] = std::max(right[i + 1], profile[i]);
    }
    double depth = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i)
    {
        const double peak = std::min(left[i], right[i]);
        if (peak > 0.0)
        {
            depth = std::max(depth, (peak - profile[i]) / peak);
        }
    }
    return depth;
}

PointScore score_points(const VesselPhantom& phantom, std::span<const MapPoint> points,
                        double tolerance)
{
    PointScore score;
    score.count = static_cast<int>(points.size());
    if (points.empty())
    {
        return score;
    }
    const auto lines = phantom.centerlines();
    int near = 0, sign = 0;
    for (const auto& p : points)
    {
        const Point2 q(p.x, p.y);
        std::size_t best = 0;
        Centerline::Nearest nb{std::numeric_limits<double>::infinity(), 0.0};
        for (std::size_t v = 0; v < lines.size(); ++v)
        {
            const auto nv = lines[v].nearest(q);
            if (nv.distance < nb.distance)
            {
                nb   = nv;
                best = v;
            }
        }
        near += nb.distance <= tolerance;
        const Point2 flow = phantom.vessels[best].flow * lines[best].tangent(nb.s);
        sign += flow.dot(Point2(p.vx, p.vy)) > 0.0;
    }
    score.near_fraction = static_cast<double>(near) / score.count;
    score.sign_fraction = static_cast<double>(sign) / score.count;
    return score;
}

double window_match_rate(const Acquisition& acq, std::span<const WindowResult> windows,
                         double position_tol, double velocity_tol)
{
    if (windows.empty())
    {
        return 0.0;
    }
    int matched = 0;
    for (const auto& w : windows)
    {
        const auto& truth = acq.truth.at(w.window.center());
        if (w.skipped || truth.empty())
        {
            matched += truth.empty() && w.reconstruction.particles.empty();
            continue;
        }
        const TimeGrid grid(w.window.count / 2, acq.sequence.tau, 2);
        std::vector<Particle> ps;
        for (const auto& b : truth)
        {
            ps.push_back(Particle{b.position, b.velocity, 1.0});
        }
        const Configuration cfg(grid, std::move(ps));
        matched += match_reconstruction(cfg, w.reconstruction.particles,
                                        {position_tol, velocity_tol, 0.25})
                       .success;
    }
    return static_cast<double>(matched) / static_cast<double>(windows.size());
}

} // namespace dynspike
