#include <dynspike/forward_model.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace dynspike {

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

/// e^{-2 pi i l t} for l = -fc..fc written into out[offset + l + fc].
/// Built from one sincos and conjugate pairs, so the +l/-l entries are exact
/// conjugates of each other.
template <typename Out>
void fill_phases(double t, int fc, Out& out, Eigen::Index offset)
{
    const Complex z = std::polar(1.0, -two_pi * t);
    Complex p(1.0, 0.0);
    out[offset + fc] = p;
    for (int l = 1; l <= fc; ++l)
    {
        p *= z;
        out[offset + fc + l] = p;
        out[offset + fc - l] = std::conj(p);
    }
}

std::vector<double> linspace(double lo, double hi, int n)
{
    std::vector<double> out;
    if (n == 1)
    {
        out.push_back(0.5 * (lo + hi));
        return out;
    }
    for (int i = 0; i < n; ++i)
    {
        out.push_back(lo + (hi - lo) * i / (n - 1));
    }
    return out;
}

void check_candidate_grid(const CandidateGrid& grid)
{
    if (grid.n_x < 1 || grid.n_v < 1)
    {
        throw InvalidArgument("candidate grid counts must be positive");
    }
}

} // namespace

// --- MeasurementTensor --------------------------------------------------------

MeasurementTensor::MeasurementTensor(int cutoff, TimeGrid grid)
    : m_cutoff(cutoff), m_grid(grid)
{
    if (cutoff < 1)
    {
        throw InvalidArgument("cutoff frequency must be >= 1");
    }
    m_data = Eigen::VectorXcd::Zero(
        static_cast<Eigen::Index>(2 * cutoff + 1) * grid.frame_count());
}

MeasurementTensor::MeasurementTensor(int cutoff, TimeGrid grid,
                                     Eigen::VectorXcd data)
    : MeasurementTensor(cutoff, grid)
{
    if (data.size() != m_data.size())
    {
        throw InvalidArgument("measurement data size does not match header");
    }
    m_data = std::move(data);
}

Eigen::Index MeasurementTensor::index(int l, int k) const
{
    if (l < -m_cutoff || l > m_cutoff)
    {
        throw InvalidArgument("frequency index outside -f_c..f_c");
    }
    return static_cast<Eigen::Index>(m_grid.frame_slot(k)) * frequency_count() +
           (l + m_cutoff);
}

Eigen::VectorXcd MeasurementTensor::frame(int k) const
{
    return m_data.segment(index(-m_cutoff, k), frequency_count());
}

bool MeasurementTensor::all_finite() const
{
    return m_data.allFinite();
}

void MeasurementTensor::check_compatible(const MeasurementTensor& other) const
{
    if (m_cutoff != other.m_cutoff || !(m_grid == other.m_grid))
    {
        throw InvalidArgument("measurement tensors have different headers");
    }
}

MeasurementTensor& MeasurementTensor::operator+=(const MeasurementTensor& other)
{
    check_compatible(other);
    m_data += other.m_data;
    return *this;
}

MeasurementTensor& MeasurementTensor::operator-=(const MeasurementTensor& other)
{
    check_compatible(other);
    m_data -= other.m_data;
    return *this;
}

MeasurementTensor operator+(MeasurementTensor a, const MeasurementTensor& b)
{
    a += b;
    return a;
}

MeasurementTensor operator-(MeasurementTensor a, const MeasurementTensor& b)
{
    a -= b;
    return a;
}

Complex inner(const MeasurementTensor& a, const MeasurementTensor& b)
{
    if (a.size() != b.size())
    {
        throw InvalidArgument("inner product of tensors of different sizes");
    }
    return a.data().dot(b.data());
}

// --- FourierOperator -----------------------------------------------------------

FourierOperator::FourierOperator(int cutoff, TimeGrid grid)
    : m_cutoff(cutoff), m_grid(grid)
{
    if (cutoff < 1)
    {
        throw InvalidArgument("cutoff frequency must be >= 1");
    }
    if (grid.dim() != 1)
    {
        throw InvalidArgument("the Fourier operator is implemented for d = 1");
    }
}

Eigen::VectorXcd FourierOperator::atom(const Vector& theta) const
{
    Eigen::VectorXcd a(measurement_size());
    const int nl = 2 * m_cutoff + 1;
    for (int k = -m_grid.K(); k <= m_grid.K(); ++k)
    {
        const double t = theta[0] + k * m_grid.tau() * theta[1];
        fill_phases(t, m_cutoff, a, static_cast<Eigen::Index>(k + m_grid.K()) * nl);
    }
    return a;
}

void FourierOperator::atom_with_jacobian(const Vector& theta,
                                         Eigen::VectorXcd& a,
                                         Eigen::MatrixXcd& jacobian) const
{
    a = atom(theta);
    jacobian.resize(measurement_size(), 2);
    const int nl = 2 * m_cutoff + 1;
    for (int k = -m_grid.K(); k <= m_grid.K(); ++k)
    {
        const Eigen::Index base = static_cast<Eigen::Index>(k + m_grid.K()) * nl;
        for (int l = -m_cutoff; l <= m_cutoff; ++l)
        {
            const Eigen::Index j = base + l + m_cutoff;
            const Complex dx     = Complex(0.0, -two_pi * l) * a[j];
            jacobian(j, 0)       = dx;
            jacobian(j, 1)       = (k * m_grid.tau()) * dx;
        }
    }
}

Correlation<Complex> FourierOperator::correlate(const Eigen::VectorXcd& residual,
                                                const Vector& theta) const
{
    Correlation<Complex> out;
    out.gradient = Eigen::VectorXcd::Zero(2);
    const int nl = 2 * m_cutoff + 1;
    for (int k = -m_grid.K(); k <= m_grid.K(); ++k)
    {
        const double t    = theta[0] + k * m_grid.tau() * theta[1];
        const Complex z   = std::polar(1.0, -two_pi * t);
        const auto base   = static_cast<Eigen::Index>(k + m_grid.K()) * nl + m_cutoff;
        Complex value     = std::conj(residual[base]);
        Complex slope     = 0.0;
        Complex p(1.0, 0.0);
        for (int l = 1; l <= m_cutoff; ++l)
        {
            p *= z;
            const Complex up   = std::conj(residual[base + l]) * p;
            const Complex down = std::conj(residual[base - l]) * std::conj(p);
            value += up + down;
            slope += static_cast<double>(l) * (up - down);
        }
        slope *= Complex(0.0, -two_pi);
        out.value += value;
        out.gradient[0] += slope;
        out.gradient[1] += (k * m_grid.tau()) * slope;
    }
    return out;
}

std::vector<Vector> FourierOperator::candidates(const CandidateGrid& grid) const
{
    check_candidate_grid(grid);
    const PhaseSpaceDomain domain(m_grid);
    const double vb = grid.velocity_bound > 0.0
                          ? std::min(grid.velocity_bound, domain.velocity_bound())
                          : domain.velocity_bound();
    std::vector<Vector> out;
    for (double x : linspace(0.0, 1.0, grid.n_x))
    {
        for (double v : linspace(-vb, vb, grid.n_v))
        {
            Vector theta(2);
            theta << x, v;
            if (contains(theta))
            {
                out.push_back(theta);
            }
        }
    }
    return out;
}

Vector FourierOperator::project(const Vector& theta) const
{
    Vector x = theta.head(1);
    Vector v = theta.tail(1);
    PhaseSpaceDomain(m_grid).project(x, v);
    Vector out(2);
    out << x[0], v[0];
    return out;
}

bool FourierOperator::contains(const Vector& theta) const
{
    return in_domain(theta.head(1), theta.tail(1), m_grid);
}

Vector FourierOperator::scales() const
{
    Vector s(2);
    s << 1.0 / m_cutoff, 1.0 / (m_cutoff * m_grid.half_window());
    return s;
}

Particle FourierOperator::to_particle(const Vector& theta, double weight) const
{
    return Particle{theta.head(1), theta.tail(1), weight};
}

// --- StaticFourierOperator -------------------------------------------------------

StaticFourierOperator::StaticFourierOperator(int cutoff) : m_cutoff(cutoff)
{
    if (cutoff < 1)
    {
        throw InvalidArgument("cutoff frequency must be >= 1");
    }
}

Eigen::VectorXcd StaticFourierOperator::atom(const Vector& theta) const
{
    Eigen::VectorXcd a(measurement_size());
    fill_phases(theta[0], m_cutoff, a, 0);
    return a;
}

void StaticFourierOperator::atom_with_jacobian(const Vector& theta,
                                               Eigen::VectorXcd& a,
                                               Eigen::MatrixXcd& jacobian) const
{
    a = atom(theta);
    jacobian.resize(measurement_size(), 1);
    for (int l = -m_cutoff; l <= m_cutoff; ++l)
    {
        jacobian(l + m_cutoff, 0) = Complex(0.0, -two_pi * l) * a[l + m_cutoff];
    }
}

Correlation<Complex> StaticFourierOperator::correlate(
    const Eigen::VectorXcd& residual, const Vector& theta) const
{
    Eigen::VectorXcd a;
    Eigen::MatrixXcd jac;
    atom_with_jacobian(theta, a, jac);
    Correlation<Complex> out;
    out.value    = residual.dot(a);
    out.gradient = Eigen::VectorXcd(1);
    out.gradient[0] = residual.dot(jac.col(0));
    return out;
}

std::vector<Vector> StaticFourierOperator::candidates(const CandidateGrid& grid) const
{
    check_candidate_grid(grid);
    std::vector<Vector> out;
    for (int i = 0; i < grid.n_x; ++i)
    {
        out.push_back(Vector::Constant(1, static_cast<double>(i) / grid.n_x));
    }
    return out;
}

Vector StaticFourierOperator::project(const Vector& theta) const
{
    return Vector::Constant(1, std::clamp(theta[0], 0.0, 1.0));
}

bool StaticFourierOperator::contains(const Vector& theta) const
{
    return theta[0] >= 0.0 && theta[0] <= 1.0;
}

Vector StaticFourierOperator::scales() const
{
    return Vector::Constant(1, 1.0 / m_cutoff);
}

// --- forward maps ------------------------------------------------------------------

namespace {

template <typename Weight>
MeasurementTensor apply_fourier_impl(const FourierOperator& op,
                                     std::span<const BasicParticle<Weight>> particles)
{
    MeasurementTensor y(op.cutoff(), op.grid());
    const int fc = op.cutoff();
    for (const auto& p : particles)
    {
        if (p.position.size() != 1 || p.velocity.size() != 1)
        {
            throw InvalidArgument("Fourier operator expects d = 1 particles");
        }
        for (int k = -op.grid().K(); k <= op.grid().K(); ++k)
        {
            const double t = p.position[0] + k * op.grid().tau() * p.velocity[0];
            for (int l = -fc; l <= fc; ++l)
            {
                y(l, k) += Complex(p.weight) * std::polar(1.0, -two_pi * (l * t));
            }
        }
    }
    return y;
}

} // namespace

MeasurementTensor apply_fourier(const FourierOperator& op,
                                std::span<const Particle> particles)
{
    return apply_fourier_impl(op, particles);
}

MeasurementTensor apply_fourier(const FourierOperator& op,
                                std::span<const ComplexParticle> particles)
{
    return apply_fourier_impl(op, particles);
}

FourierCorrelation correlate(const FourierOperator& op,
                             const MeasurementTensor& residual, double x,
                             double v)
{
    if (residual.cutoff() != op.cutoff() || !(residual.grid() == op.grid()))
    {
        throw InvalidArgument("residual header does not match the operator");
    }
    Vector theta(2);
    theta << x, v;
    const auto c = op.correlate(residual.data(), theta);
    return FourierCorrelation{c.value, c.gradient[0], c.gradient[1]};
}

CurvedTrajectorySpec CurvedTrajectorySpec::from_curvature(
    std::span<const Particle> particles, double beta, const TimeGrid& grid)
{
    CurvedTrajectorySpec spec;
    for (const auto& p : particles)
    {
        spec.accelerations.push_back(2.0 * p.velocity[0] * beta / grid.half_window());
    }
    return spec;
}

MeasurementTensor apply_fourier_curved(const FourierOperator& op,
                                       std::span<const Particle> particles,
                                       const CurvedTrajectorySpec& curvature)
{
    if (curvature.accelerations.size() != particles.size())
    {
        throw InvalidArgument("one acceleration per particle is required");
    }
    MeasurementTensor y(op.cutoff(), op.grid());
    const int fc = op.cutoff();
    for (std::size_t i = 0; i < particles.size(); ++i)
    {
        const auto& p = particles[i];
        const double a = curvature.accelerations[i];
        for (int k = -op.grid().K(); k <= op.grid().K(); ++k)
        {
            const double s = k * op.grid().tau();
            const double t = p.position[0] + p.velocity[0] * s + 0.5 * a * s * s;
            if (t < 0.0 || t > 1.0)
            {
                throw DomainError("curved trajectory of particle " +
                                  std::to_string(i) + " leaves [0,1]");
            }
            for (int l = -fc; l <= fc; ++l)
            {
                y(l, k) += p.weight * std::polar(1.0, -two_pi * (l * t));
            }
        }
    }
    return y;
}

// --- FrameStack / PSF ----------------------------------------------------------------

Eigen::VectorXd FrameStack::flatten() const
{
    const Eigen::Index np = pixels.pixel_count();
    Eigen::VectorXd out(np * static_cast<Eigen::Index>(frames.size()));
    for (std::size_t f = 0; f < frames.size(); ++f)
    {
        for (int r = 0; r < pixels.height; ++r)
        {
            for (int c = 0; c < pixels.width; ++c)
            {
                out[static_cast<Eigen::Index>(f) * np + r * pixels.width + c] =
                    frames[f](r, c);
            }
        }
    }
    return out;
}

FrameStack FrameStack::unflatten(const PixelGrid& pixels, double sigma,
                                 const TimeGrid& grid, const Eigen::VectorXd& flat)
{
    const Eigen::Index np = pixels.pixel_count();
    if (flat.size() != np * grid.frame_count())
    {
        throw InvalidArgument("flat frame data size does not match header");
    }
    FrameStack out{pixels, sigma, grid, {}};
    for (int f = 0; f < grid.frame_count(); ++f)
    {
        Eigen::MatrixXd img(pixels.height, pixels.width);
        for (int r = 0; r < pixels.height; ++r)
        {
            for (int c = 0; c < pixels.width; ++c)
            {
                img(r, c) = flat[f * np + r * pixels.width + c];
            }
        }
        out.frames.push_back(std::move(img));
    }
    return out;
}

PSFOperator::PSFOperator(double sigma, PixelGrid pixels, TimeGrid grid)
    : m_sigma(sigma), m_pixels(pixels), m_grid(grid)
{
    if (!(sigma > 0.0))
    {
        throw InvalidArgument("PSF width sigma must be positive");
    }
    if (pixels.width < 1 || pixels.height < 1 || !(pixels.pitch > 0.0))
    {
        throw InvalidArgument("pixel grid needs positive counts and pitch");
    }
    if (grid.dim() != 2)
    {
        throw InvalidArgument("the PSF operator is implemented for d = 2");
    }
}

void PSFOperator::profile(double p, int count, Eigen::VectorXd& g,
                          Eigen::VectorXd* dg) const
{
    g.resize(count);
    if (dg)
    {
        dg->resize(count);
    }
    const double inv = 1.0 / (2.0 * m_sigma * m_sigma);
    for (int i = 0; i < count; ++i)
    {
        const double d = (i + 0.5) * m_pixels.pitch - p;
        g[i]           = std::exp(-d * d * inv);
        if (dg)
        {
            // derivative with respect to the source position p
            (*dg)[i] = g[i] * d / (m_sigma * m_sigma);
        }
    }
}

Eigen::VectorXd PSFOperator::atom(const Vector& theta) const
{
    Eigen::VectorXd a(measurement_size());
    Eigen::VectorXd gx, gy;
    const Eigen::Index np = m_pixels.pixel_count();
    for (int k = -m_grid.K(); k <= m_grid.K(); ++k)
    {
        const double s = k * m_grid.tau();
        profile(theta[0] + s * theta[2], m_pixels.width, gx, nullptr);
        profile(theta[1] + s * theta[3], m_pixels.height, gy, nullptr);
        const Eigen::Index base = (k + m_grid.K()) * np;
        for (int r = 0; r < m_pixels.height; ++r)
        {
            a.segment(base + r * m_pixels.width, m_pixels.width) = gy[r] * gx;
        }
    }
    return a;
}

void PSFOperator::atom_with_jacobian(const Vector& theta, Eigen::VectorXd& a,
                                     Eigen::MatrixXd& jacobian) const
{
    a.resize(measurement_size());
    jacobian.resize(measurement_size(), 4);
    Eigen::VectorXd gx, gy, dgx, dgy;
    const Eigen::Index np = m_pixels.pixel_count();
    const int w           = m_pixels.width;
    for (int k = -m_grid.K(); k <= m_grid.K(); ++k)
    {
        const double s = k * m_grid.tau();
        profile(theta[0] + s * theta[2], m_pixels.width, gx, &dgx);
        profile(theta[1] + s * theta[3], m_pixels.height, gy, &dgy);
        const Eigen::Index base = (k + m_grid.K()) * np;
        for (int r = 0; r < m_pixels.height; ++r)
        {
            const Eigen::Index row = base + r * w;
            a.segment(row, w)           = gy[r] * gx;
            jacobian.col(0).segment(row, w) = gy[r] * dgx;
            jacobian.col(1).segment(row, w) = dgy[r] * gx;
            jacobian.col(2).segment(row, w) = (s * gy[r]) * dgx;
            jacobian.col(3).segment(row, w) = (s * dgy[r]) * gx;
        }
    }
}

Correlation<double> PSFOperator::correlate(const Eigen::VectorXd& residual,
                                           const Vector& theta) const
{
    using RowMajor =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Correlation<double> out;
    out.gradient = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd gx, gy, dgx, dgy;
    const Eigen::Index np = m_pixels.pixel_count();
    for (int k = -m_grid.K(); k <= m_grid.K(); ++k)
    {
        const double s = k * m_grid.tau();
        profile(theta[0] + s * theta[2], m_pixels.width, gx, &dgx);
        profile(theta[1] + s * theta[3], m_pixels.height, gy, &dgy);
        Eigen::Map<const RowMajor> frame(residual.data() + (k + m_grid.K()) * np,
                                         m_pixels.height, m_pixels.width);
        const Eigen::VectorXd fx  = frame * gx;
        const Eigen::VectorXd fdx = frame * dgx;
        const double value        = gy.dot(fx);
        const double dx           = gy.dot(fdx);
        const double dy           = dgy.dot(fx);
        out.value += value;
        out.gradient[0] += dx;
        out.gradient[1] += dy;
        out.gradient[2] += s * dx;
        out.gradient[3] += s * dy;
    }
    return out;
}

std::vector<Vector> PSFOperator::candidates(const CandidateGrid& grid) const
{
    check_candidate_grid(grid);
    const PhaseSpaceDomain domain(m_grid);
    const double vb = grid.velocity_bound > 0.0
                          ? std::min(grid.velocity_bound, domain.velocity_bound())
                          : domain.velocity_bound();
    const double hx = std::min(1.0, m_pixels.extent_x());
    const double hy = std::min(1.0, m_pixels.extent_y());
    std::vector<double> xs, ys;
    for (int i = 0; i < grid.n_x; ++i)
    {
        xs.push_back((i + 0.5) * hx / grid.n_x);
        ys.push_back((i + 0.5) * hy / grid.n_x);
    }
    const auto vs = linspace(-vb, vb, grid.n_v);
    std::vector<Vector> out;
    for (double x : xs)
    {
        for (double y : ys)
        {
            for (double vx : vs)
            {
                for (double vy : vs)
                {
                    Vector theta(4);
                    theta << x, y, vx, vy;
                    if (contains(theta))
                    {
                        out.push_back(theta);
                    }
                }
            }
        }
    }
    return out;
}

Vector PSFOperator::project(const Vector& theta) const
{
    Vector x = theta.head(2);
    Vector v = theta.tail(2);
    PhaseSpaceDomain(m_grid).project(x, v);
    Vector out(4);
    out << x, v;
    return out;
}

bool PSFOperator::contains(const Vector& theta) const
{
    return in_domain(theta.head(2), theta.tail(2), m_grid);
}

Vector PSFOperator::scales() const
{
    Vector s(4);
    const double vs = m_sigma / m_grid.half_window();
    s << m_sigma, m_sigma, vs, vs;
    return s;
}

Particle PSFOperator::to_particle(const Vector& theta, double weight) const
{
    return Particle{theta.head(2), theta.tail(2), weight};
}

double PSFOperator::unit_energy() const
{
    Vector theta(4);
    theta << 0.5 * m_pixels.extent_x(), 0.5 * m_pixels.extent_y(), 0.0, 0.0;
    const Eigen::VectorXd a = atom(theta);
    return a.head(m_pixels.pixel_count()).squaredNorm();
}

FrameStack apply_psf(const PSFOperator& op, std::span<const Particle> particles)
{
    const TimeGrid& grid = op.grid();
    Eigen::VectorXd flat = Eigen::VectorXd::Zero(op.measurement_size());
    for (std::size_t i = 0; i < particles.size(); ++i)
    {
        const auto& p = particles[i];
        if (p.position.size() != 2 || p.velocity.size() != 2)
        {
            throw InvalidArgument("PSF operator expects d = 2 particles");
        }
        for (int k = -grid.K(); k <= grid.K(); ++k)
        {
            const Vector at = position_at(p, k, grid);
            if (!op.pixels().contains(at[0], at[1]))
            {
                throw DomainError("particle " + std::to_string(i) +
                                  " is outside the field of view at frame " +
                                  std::to_string(k));
            }
        }
        Vector theta(4);
        theta << p.position, p.velocity;
        flat += p.weight * op.atom(theta);
    }
    return FrameStack::unflatten(op.pixels(), op.sigma(), grid, flat);
}

// --- noise -----------------------------------------------------------------------------

MeasurementTensor add_noise(MeasurementTensor data, double alpha,
                            std::mt19937_64& rng)
{
    if (alpha == 0.0)
    {
        return data;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < data.size(); ++i)
    {
        const double re = normal(rng);
        const double im = normal(rng);
        data.data()[i] += alpha * Complex(re, im);
    }
    return data;
}

MeasurementTensor add_noise(MeasurementTensor data, const NoiseSpec& spec)
{
    std::mt19937_64 rng(spec.seed);
    return add_noise(std::move(data), spec.alpha, rng);
}

Eigen::MatrixXd add_noise(Eigen::MatrixXd image, double alpha,
                          std::mt19937_64& rng)
{
    if (alpha == 0.0)
    {
        return image;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index r = 0; r < image.rows(); ++r)
    {
        for (Eigen::Index c = 0; c < image.cols(); ++c)
        {
            image(r, c) += alpha * normal(rng);
        }
    }
    return image;
}

FrameStack add_noise(FrameStack data, double alpha, std::mt19937_64& rng)
{
    for (auto& f : data.frames)
    {
        f = add_noise(std::move(f), alpha, rng);
    }
    return data;
}

FrameStack add_noise(FrameStack data, const NoiseSpec& spec)
{
    std::mt19937_64 rng(spec.seed);
    return add_noise(std::move(data), spec.alpha, rng);
}

} // namespace dynspike
