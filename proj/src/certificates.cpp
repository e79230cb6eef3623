#include <dynspike/certificates.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dynspike {

namespace {

constexpr double pi     = std::numbers::pi;
constexpr double two_pi = 2.0 * pi;

/// |sin(pi t)| below which closed forms give way to the coefficient series.
constexpr double value_switch      = 1e-6;
constexpr double derivative_switch = 0.05;

} // namespace

double wrap_distance(double a, double b)
{
    double d = std::fmod(std::abs(a - b), 1.0);
    return std::min(d, 1.0 - d);
}

// --- FejerKernel -------------------------------------------------------------------

FejerKernel::FejerKernel(int cutoff) : m_cutoff(cutoff), m_M(cutoff / 2 + 1)
{
    if (cutoff < 2)
    {
        throw InvalidArgument("kernel cutoff must be >= 2");
    }
    const int M = m_M;
    Eigen::VectorXd tri(2 * M - 1);
    for (int j = -(M - 1); j <= M - 1; ++j)
    {
        tri[j + M - 1] = static_cast<double>(M - std::abs(j)) / (M * M);
    }
    m_coeffs = Eigen::VectorXd::Zero(2 * cutoff + 1);
    for (int a = 0; a < tri.size(); ++a)
    {
        for (int b = 0; b < tri.size(); ++b)
        {
            const int l = (a - (M - 1)) + (b - (M - 1));
            m_coeffs[l + cutoff] += tri[a] * tri[b];
        }
    }
}

double FejerKernel::series(double t, int order) const
{
    // Real part of sum_l g_l (2 pi i l)^order e^{2 pi i l t}; g is even.
    double out = 0.0;
    for (int l = -m_cutoff; l <= m_cutoff; ++l)
    {
        const double g = m_coeffs[l + m_cutoff];
        if (g == 0.0)
        {
            continue;
        }
        const double w     = two_pi * l;
        const double phase = w * t;
        double factor      = g;
        for (int n = 0; n < order; ++n)
        {
            factor *= w;
        }
        switch (order % 4)
        {
        case 0: out += factor * std::cos(phase); break;
        case 1: out -= factor * std::sin(phase); break;
        case 2: out -= factor * std::cos(phase); break;
        default: out += factor * std::sin(phase); break;
        }
    }
    return out;
}

double FejerKernel::value(double t) const
{
    const double sp = std::sin(pi * t);
    if (std::abs(sp) < value_switch)
    {
        return series(t, 0);
    }
    const double s  = std::sin(m_M * pi * t) / (m_M * sp);
    const double s2 = s * s;
    return s2 * s2;
}

double FejerKernel::derivative(double t) const
{
    const double sp = std::sin(pi * t);
    if (std::abs(sp) < derivative_switch)
    {
        return series(t, 1);
    }
    const double cp = std::cos(pi * t);
    const double sm = std::sin(m_M * pi * t);
    const double cm = std::cos(m_M * pi * t);
    const double s  = sm / (m_M * sp);
    const double ds = pi * (m_M * cm * sp - sm * cp) / (m_M * sp * sp);
    return 4.0 * s * s * s * ds;
}

// --- StaticCertificate -----------------------------------------------------------------

StaticCertificate::StaticCertificate(FejerKernel kernel, int frame,
                                     std::vector<double> nodes,
                                     std::vector<Complex> values,
                                     Eigen::VectorXcd alpha, Eigen::VectorXcd beta)
    : m_kernel(std::move(kernel)), m_frame(frame), m_nodes(std::move(nodes)),
      m_values(std::move(values)), m_alpha(std::move(alpha)), m_beta(std::move(beta))
{
    const int fc = m_kernel.cutoff();
    m_coeffs     = Eigen::VectorXcd::Zero(2 * fc + 1);
    for (int l = -fc; l <= fc; ++l)
    {
        Complex acc = 0.0;
        for (std::size_t i = 0; i < m_nodes.size(); ++i)
        {
            acc += std::polar(1.0, -two_pi * l * m_nodes[i]) *
                   (m_alpha[i] + Complex(0.0, two_pi * l) * m_beta[i]);
        }
        m_coeffs[l + fc] = m_kernel.coefficients()[l + fc] * acc;
    }
}

Complex StaticCertificate::operator()(double t) const
{
    Complex out = 0.0;
    for (std::size_t i = 0; i < m_nodes.size(); ++i)
    {
        const double d = t - m_nodes[i];
        out += m_alpha[i] * m_kernel.value(d) + m_beta[i] * m_kernel.derivative(d);
    }
    return out;
}

Complex StaticCertificate::derivative(double t) const
{
    Complex out = 0.0;
    for (std::size_t i = 0; i < m_nodes.size(); ++i)
    {
        const double d = t - m_nodes[i];
        out += m_alpha[i] * m_kernel.derivative(d) + m_beta[i] * m_kernel.series(d, 2);
    }
    return out;
}

Complex StaticCertificate::series(double t) const
{
    const int fc = cutoff();
    Complex out  = 0.0;
    for (int l = -fc; l <= fc; ++l)
    {
        out += m_coeffs[l + fc] * std::polar(1.0, two_pi * l * t);
    }
    return out;
}

Complex StaticCertificate::series_derivative(double t) const
{
    const int fc = cutoff();
    Complex out  = 0.0;
    for (int l = -fc; l <= fc; ++l)
    {
        out += Complex(0.0, two_pi * l) * m_coeffs[l + fc] *
               std::polar(1.0, two_pi * l * t);
    }
    return out;
}

StaticCertificate build_static_certificate(std::span<const double> nodes,
                                           std::span<const Complex> values,
                                           int cutoff, int frame)
{
    const auto n = static_cast<Eigen::Index>(nodes.size());
    if (n == 0 || values.size() != nodes.size())
    {
        throw InvalidArgument("certificate needs one value per node");
    }
    if (cutoff < 2 * n)
    {
        throw InvalidArgument("certificate needs f_c >= 2N");
    }
    const double min_sep = separation_constant / cutoff;
    for (Eigen::Index i = 0; i < n; ++i)
    {
        if (!std::isfinite(nodes[i]) || !std::isfinite(std::abs(values[i])))
        {
            throw NumericalFailure("certificate nodes and values must be finite");
        }
        for (Eigen::Index j = 0; j < i; ++j)
        {
            if (wrap_distance(nodes[i], nodes[j]) < min_sep - 1e-12)
            {
                throw SeparationViolation(
                    "interpolation nodes closer than 1.87/f_c (frame " +
                    std::to_string(frame) + ")");
            }
        }
    }

    const FejerKernel kernel(cutoff);
    const double fc = cutoff;
    Eigen::MatrixXd A(2 * n, 2 * n);
    for (Eigen::Index j = 0; j < n; ++j)
    {
        for (Eigen::Index i = 0; i < n; ++i)
        {
            const double d  = nodes[j] - nodes[i];
            const double k0 = kernel.series(d, 0);
            const double k1 = kernel.series(d, 1);
            const double k2 = kernel.series(d, 2);
            A(j, i)         = k0;
            A(j, n + i)     = k1 / fc;
            A(n + j, i)     = k1 / fc;
            A(n + j, n + i) = k2 / (fc * fc);
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const auto& sv = svd.singularValues();
    if (!(sv[sv.size() - 1] > 0.0) || sv[0] / sv[sv.size() - 1] > 1e10)
    {
        throw SeparationViolation("certificate interpolation system is ill-conditioned");
    }
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(2 * n, 2);
    for (Eigen::Index j = 0; j < n; ++j)
    {
        rhs(j, 0) = values[j].real();
        rhs(j, 1) = values[j].imag();
    }
    const Eigen::MatrixXd sol = A.partialPivLu().solve(rhs);
    Eigen::VectorXcd alpha(n), beta(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        alpha[i] = Complex(sol(i, 0), sol(i, 1));
        beta[i]  = Complex(sol(n + i, 0), sol(n + i, 1)) / fc;
    }
    return StaticCertificate(kernel, frame,
                             std::vector<double>(nodes.begin(), nodes.end()),
                             std::vector<Complex>(values.begin(), values.end()),
                             std::move(alpha), std::move(beta));
}

// --- DynamicalCertificate -------------------------------------------------------------

DynamicalCertificate::DynamicalCertificate(TimeGrid grid,
                                           std::vector<StaticCertificate> frames)
    : m_grid(grid), m_frames(std::move(frames))
{
    if (m_frames.size() < 3)
    {
        throw InvalidArgument("a dynamical certificate needs at least three frames");
    }
    for (const auto& f : m_frames)
    {
        (void)m_grid.frame_slot(f.frame());
        if (f.cutoff() != m_frames.front().cutoff())
        {
            throw InvalidArgument("frame certificates use different cutoffs");
        }
    }
}

std::vector<int> DynamicalCertificate::frame_set() const
{
    std::vector<int> out;
    for (const auto& f : m_frames)
    {
        out.push_back(f.frame());
    }
    return out;
}

Complex DynamicalCertificate::operator()(double x, double v) const
{
    Complex out = 0.0;
    for (const auto& f : m_frames)
    {
        out += f(x + f.frame() * m_grid.tau() * v);
    }
    return out / static_cast<double>(m_frames.size());
}

Complex DynamicalCertificate::series(double x, double v) const
{
    Complex out = 0.0;
    for (const auto& f : m_frames)
    {
        out += f.series(x + f.frame() * m_grid.tau() * v);
    }
    return out / static_cast<double>(m_frames.size());
}

Complex DynamicalCertificate::gamma(std::size_t i, std::size_t j) const
{
    return m_frames.at(j).values().at(i);
}

namespace {

std::vector<int> checked_frames(const TimeGrid& grid, std::vector<int> frames)
{
    std::sort(frames.begin(), frames.end());
    frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
    if (frames.size() < 3)
    {
        throw InvalidArgument("certificates need at least three distinct frames");
    }
    for (int k : frames)
    {
        (void)grid.frame_slot(k);
    }
    return frames;
}

} // namespace

DynamicalCertificate build_dynamical_certificate(const Configuration& cfg,
                                                 const Eigen::MatrixXcd& gamma,
                                                 std::vector<int> frames, int cutoff)
{
    if (cfg.grid().dim() != 1)
    {
        throw InvalidArgument("certificates are implemented for d = 1");
    }
    frames = checked_frames(cfg.grid(), std::move(frames));
    if (gamma.rows() != static_cast<Eigen::Index>(cfg.size()) ||
        gamma.cols() != static_cast<Eigen::Index>(frames.size()))
    {
        throw InvalidArgument("gamma must have one row per particle, one column per frame");
    }
    return DynamicalCertificate(cfg.grid(), [&] {
        std::vector<StaticCertificate> out;
        for (std::size_t j = 0; j < frames.size(); ++j)
        {
            std::vector<double> nodes;
            std::vector<Complex> values;
            for (std::size_t i = 0; i < cfg.size(); ++i)
            {
                nodes.push_back(position_at(cfg[i], frames[j], cfg.grid())[0]);
                values.push_back(gamma(i, j));
            }
            out.push_back(build_static_certificate(nodes, values, cutoff, frames[j]));
        }
        return out;
    }());
}

DynamicalCertificate build_static_average(const Configuration& cfg,
                                          std::span<const Complex> eta,
                                          std::vector<int> frames, int cutoff)
{
    if (eta.size() != cfg.size())
    {
        throw InvalidArgument("one sign per particle is required");
    }
    for (const Complex& e : eta)
    {
        if (std::abs(std::abs(e) - 1.0) > 1e-12)
        {
            throw InvalidArgument("sign vector entries must have unit modulus");
        }
    }
    frames = checked_frames(cfg.grid(), std::move(frames));
    Eigen::MatrixXcd gamma(cfg.size(), frames.size());
    for (std::size_t i = 0; i < cfg.size(); ++i)
    {
        gamma.row(i).setConstant(eta[i]);
    }
    return build_dynamical_certificate(cfg, gamma, std::move(frames), cutoff);
}

DynamicalCertificate build_perturbed_certificate(const Configuration& cfg,
                                                 double eps, int cutoff)
{
    const TimeGrid& grid = cfg.grid();
    if (grid.K() != 1 || grid.dim() != 1 || cfg.size() != 3)
    {
        throw InvalidArgument("perturbed certificate needs three particles on a K = 1 grid");
    }
    if (!(eps >= 0.0 && eps < 1.0))
    {
        throw InvalidArgument("eps must lie in [0, 1)");
    }
    if (cutoff < 128)
    {
        throw InvalidArgument("perturbed certificate needs f_c >= 128");
    }
    std::vector<std::size_t> order{0, 1, 2};
    for (std::size_t i = 0; i < 3; ++i)
    {
        if (cfg[i].velocity[0] != 0.0)
        {
            throw InvalidArgument("perturbed certificate needs static particles");
        }
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return cfg[a].position[0] < cfg[b].position[0];
    });
    const double d1 = cfg[order[1]].position[0] - cfg[order[0]].position[0];
    const double d2 = cfg[order[2]].position[0] - cfg[order[1]].position[0];
    if (std::abs(d1 - d2) > 1e-12)
    {
        throw InvalidArgument("perturbed certificate needs equispaced particles");
    }
    if (d1 < separation_constant / cutoff - 1e-12 || d1 >= 1.0)
    {
        throw SeparationViolation("particle spacing outside [1.87/f_c, 1)");
    }
    // Columns are frames -1, 0, 1.
    Eigen::MatrixXcd gamma = Eigen::MatrixXcd::Ones(3, 3);
    for (std::size_t outer : {order[0], order[2]})
    {
        gamma(outer, 0) = 1.0 - eps;
        gamma(outer, 1) = 1.0 + 2.0 * eps;
        gamma(outer, 2) = 1.0 - eps;
    }
    return build_dynamical_certificate(cfg, gamma, {-1, 0, 1}, cutoff);
}

VerificationReport verify_certificate(const DynamicalCertificate& cert,
                                      const Configuration& cfg,
                                      std::span<const Complex> eta,
                                      int grid_resolution, double margin)
{
    const TimeGrid& grid = cfg.grid();
    const int fc         = cert.cutoff();
    if (!(grid == cert.grid()))
    {
        throw InvalidArgument("certificate and configuration use different grids");
    }
    if (eta.size() != cfg.size())
    {
        throw InvalidArgument("one sign per particle is required");
    }
    if (grid_resolution < 4 * fc * grid.frame_count())
    {
        throw InvalidArgument("verification grid needs >= 4 f_c (2K + 1) samples per axis");
    }

    VerificationReport report;
    for (std::size_t i = 0; i < cfg.size(); ++i)
    {
        const Complex q = cert(cfg[i].position[0], cfg[i].velocity[0]);
        report.max_interpolation_error =
            std::max(report.max_interpolation_error, std::abs(q - eta[i]));
        report.max_modulus = std::max(report.max_modulus, std::abs(q));
    }
    report.interpolation_ok = report.max_interpolation_error <= 1e-8;

    report.ghosts     = detect_ghosts(cfg, cert.frame_set());
    const double r    = 0.3 / fc;
    const double h    = grid.half_window();
    const double vb   = PhaseSpaceDomain(grid).velocity_bound();
    const double bound = 1.0 - margin;
    auto inside_ball  = [&](double x, double v, double cx, double cv) {
        return std::abs(x - cx) + h * std::abs(v - cv) < r;
    };
    constexpr std::size_t max_reported = 1000;

    for (int iv = 0; iv < grid_resolution; ++iv)
    {
        const double v = -vb + 2.0 * vb * iv / (grid_resolution - 1);
        for (int ix = 0; ix < grid_resolution; ++ix)
        {
            const double x = static_cast<double>(ix) / (grid_resolution - 1);
            if (!in_domain(Vector::Constant(1, x), Vector::Constant(1, v), grid))
            {
                continue;
            }
            ++report.grid_points;
            const double m     = std::abs(cert(x, v));
            report.max_modulus = std::max(report.max_modulus, m);
            bool excluded      = false;
            for (std::size_t i = 0; i < cfg.size() && !excluded; ++i)
            {
                excluded = inside_ball(x, v, cfg[i].position[0], cfg[i].velocity[0]);
            }
            for (std::size_t g = 0; g < report.ghosts.size() && !excluded; ++g)
            {
                excluded = inside_ball(x, v, report.ghosts[g].position,
                                       report.ghosts[g].velocity);
            }
            if (excluded)
            {
                continue;
            }
            report.max_modulus_outside = std::max(report.max_modulus_outside, m);
            if (m > bound && report.violations.size() < max_reported)
            {
                report.violations.push_back(CertificatePoint{x, v, m});
            }
        }
    }
    for (const auto& g : report.ghosts)
    {
        const double m     = std::abs(cert(g.position, g.velocity));
        report.max_modulus = std::max(report.max_modulus, m);
        report.max_modulus_outside = std::max(report.max_modulus_outside, m);
        if (m > bound)
        {
            report.violations.push_back(CertificatePoint{g.position, g.velocity, m});
        }
    }
    report.bounded_ok = report.max_modulus <= 1.0 + 1e-6;
    report.strict_ok  = report.violations.empty();
    return report;
}

double find_perturbation(const Configuration& cfg, int cutoff, double margin,
                         int grid_resolution)
{
    const std::vector<Complex> eta(cfg.size(), Complex(1.0));
    auto passes = [&](double eps) {
        const auto cert = build_perturbed_certificate(cfg, eps, cutoff);
        return verify_certificate(cert, cfg, eta, grid_resolution, margin).passed();
    };
    double lo = 0.0;
    double hi = 0.2;
    if (!passes(hi))
    {
        throw NumericalFailure("no eps in (0, 0.2] reaches the requested margin");
    }
    for (int it = 0; it < 30; ++it)
    {
        const double mid = 0.5 * (lo + hi);
        (passes(mid) ? hi : lo) = mid;
    }
    return hi;
}

double ghost_sum(const Configuration& cfg, int cutoff, double x, double v)
{
    const TimeGrid& grid = cfg.grid();
    const double cap     = std::pow(stability_c2 / cutoff, 2);
    double total         = 0.0;
    for (int k = -grid.K(); k <= grid.K(); ++k)
    {
        const double p = x + k * grid.tau() * v;
        double best    = cap;
        for (const auto& particle : cfg.particles())
        {
            const double d = wrap_distance(p, position_at(particle, k, grid)[0]);
            best           = std::min(best, d * d);
        }
        total += best;
    }
    return total / grid.frame_count();
}

StabilityReport check_stability_conditions(const StabilityInputs& in)
{
    const Configuration& cfg = in.config;
    const TimeGrid& grid     = cfg.grid();
    if (grid.dim() != 1)
    {
        throw InvalidArgument("stability conditions are implemented for d = 1");
    }
    if (!(in.delta_x > 0.0) || !(in.delta_v > 0.0) || in.cutoff < 1)
    {
        throw InvalidArgument("grid widths and cutoff must be positive");
    }
    const double fc = in.cutoff;
    const int K     = grid.K();
    StabilityReport out;

    const double lhs = in.delta_x * in.delta_x;
    const double rhs =
        K * (K + 1) / 3.0 * grid.tau() * grid.tau() * in.delta_v * in.delta_v;
    out.relation_ok = lhs <= rhs * (1.0 + 1e-12);

    out.separation_ok = true;
    for (int k = -K; k <= K && out.separation_ok; ++k)
    {
        for (std::size_t i = 0; i < cfg.size() && out.separation_ok; ++i)
        {
            for (std::size_t j = 0; j < i; ++j)
            {
                const double d = wrap_distance(position_at(cfg[i], k, grid)[0],
                                               position_at(cfg[j], k, grid)[0]);
                if (d < separation_constant / fc - 1e-12)
                {
                    out.separation_ok = false;
                    break;
                }
            }
        }
    }

    const double radius = stability_c2 / fc;
    const double h      = grid.half_window();
    auto outside        = [&](double x, double v) {
        for (const auto& p : cfg.particles())
        {
            if (std::abs(x - p.position[0]) + h * std::abs(v - p.velocity[0]) < radius)
            {
                return false;
            }
        }
        return true;
    };
    const int res = in.grid_resolution > 0 ? in.grid_resolution
                                           : 4 * in.cutoff * grid.frame_count();
    const double vb = PhaseSpaceDomain(grid).velocity_bound();
    double smallest = std::numeric_limits<double>::infinity();
    for (int iv = 0; iv < res; ++iv)
    {
        const double v = res == 1 ? 0.0 : -vb + 2.0 * vb * iv / (res - 1);
        for (int ix = 0; ix < res; ++ix)
        {
            const double x = res == 1 ? 0.5 : static_cast<double>(ix) / (res - 1);
            if (!in_domain(Vector::Constant(1, x), Vector::Constant(1, v), grid) ||
                !outside(x, v))
            {
                continue;
            }
            smallest = std::min(smallest, ghost_sum(cfg, in.cutoff, x, v));
        }
    }
    for (const auto& g : detect_ghosts(cfg, grid.frames()))
    {
        if (outside(g.position, g.velocity))
        {
            smallest = std::min(smallest, ghost_sum(cfg, in.cutoff, g.position, g.velocity));
        }
    }
    out.min_ghost_sum      = smallest;
    out.ghost_condition_ok = smallest >= lhs;
    out.margin_bound       = 1.0 - stability_c1 * fc * fc * lhs;
    out.srf_x              = 1.0 / (in.delta_x * fc);
    return out;
}

} // namespace dynspike
