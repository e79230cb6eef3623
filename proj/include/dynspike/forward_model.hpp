#pragma once

#include <dynspike/errors.hpp>
#include <dynspike/phase_space.hpp>

#include <Eigen/Core>

#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace dynspike {

using Complex = std::complex<double>;

/// Candidate lattice used by the spike-selection scan: n_x points per spatial
/// axis, n_v per velocity axis. velocity_bound > 0 narrows the velocity range
/// to [-velocity_bound, velocity_bound]; otherwise the domain bound is used.
struct CandidateGrid
{
    int n_x               = 64;
    int n_v               = 33;
    double velocity_bound = 0.0;
};

/// Value and parameter gradient of the pairing between a residual and an atom.
template <typename Scalar>
struct Correlation
{
    Scalar value{};
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gradient;
};

///
/// Complex data indexed by (l, k), l in -f_c..f_c, k in -K..K. Storage is
/// k-outer, l-inner.
///
class MeasurementTensor
{
public:
    MeasurementTensor(int cutoff, TimeGrid grid);
    MeasurementTensor(int cutoff, TimeGrid grid, Eigen::VectorXcd data);

    int cutoff() const noexcept { return m_cutoff; }
    const TimeGrid& grid() const noexcept { return m_grid; }
    int frequency_count() const noexcept { return 2 * m_cutoff + 1; }
    Eigen::Index size() const noexcept { return m_data.size(); }

    Eigen::Index index(int l, int k) const;
    Complex& operator()(int l, int k) { return m_data[index(l, k)]; }
    const Complex& operator()(int l, int k) const { return m_data[index(l, k)]; }

    const Eigen::VectorXcd& data() const noexcept { return m_data; }
    Eigen::VectorXcd& data() noexcept { return m_data; }

    /// The 2 f_c + 1 entries of frame k, ordered l = -f_c..f_c.
    Eigen::VectorXcd frame(int k) const;

    double norm() const { return m_data.norm(); }
    bool all_finite() const;

    MeasurementTensor& operator+=(const MeasurementTensor& other);
    MeasurementTensor& operator-=(const MeasurementTensor& other);

private:
    void check_compatible(const MeasurementTensor& other) const;

    int m_cutoff;
    TimeGrid m_grid;
    Eigen::VectorXcd m_data;
};

MeasurementTensor operator+(MeasurementTensor a, const MeasurementTensor& b);
MeasurementTensor operator-(MeasurementTensor a, const MeasurementTensor& b);

/// sum_j conj(a_j) b_j
Complex inner(const MeasurementTensor& a, const MeasurementTensor& b);

///
/// Lifted low-pass Fourier operator for d = 1:
///   (G omega)_{l,k} = sum_i w_i exp(-2 pi i l (x_i + k tau v_i)).
/// The phase-space parameters of an atom are theta = (x, v).
///
class FourierOperator
{
public:
    using Scalar = Complex;

    FourierOperator(int cutoff, TimeGrid grid);

    int cutoff() const noexcept { return m_cutoff; }
    const TimeGrid& grid() const noexcept { return m_grid; }
    Eigen::Index measurement_size() const noexcept
    {
        return static_cast<Eigen::Index>(2 * m_cutoff + 1) * m_grid.frame_count();
    }

    int parameter_dim() const noexcept { return 2; }
    Eigen::VectorXcd atom(const Vector& theta) const;
    void atom_with_jacobian(const Vector& theta, Eigen::VectorXcd& atom,
                            Eigen::MatrixXcd& jacobian) const;
    Correlation<Scalar> correlate(const Eigen::VectorXcd& residual,
                                  const Vector& theta) const;
    std::vector<Vector> candidates(const CandidateGrid& grid) const;
    Vector project(const Vector& theta) const;
    bool contains(const Vector& theta) const;
    /// Characteristic resolution along each parameter: 1/f_c and 1/(f_c K tau).
    Vector scales() const;
    Particle to_particle(const Vector& theta, double weight) const;

private:
    int m_cutoff;
    TimeGrid m_grid;
};

///
/// Single-frame Fourier operator exp(-2 pi i l x) on [0,1]; theta = (x).
///
class StaticFourierOperator
{
public:
    using Scalar = Complex;

    explicit StaticFourierOperator(int cutoff);

    int cutoff() const noexcept { return m_cutoff; }
    Eigen::Index measurement_size() const noexcept { return 2 * m_cutoff + 1; }

    int parameter_dim() const noexcept { return 1; }
    Eigen::VectorXcd atom(const Vector& theta) const;
    void atom_with_jacobian(const Vector& theta, Eigen::VectorXcd& atom,
                            Eigen::MatrixXcd& jacobian) const;
    Correlation<Scalar> correlate(const Eigen::VectorXcd& residual,
                                  const Vector& theta) const;
    std::vector<Vector> candidates(const CandidateGrid& grid) const;
    Vector project(const Vector& theta) const;
    bool contains(const Vector& theta) const;
    Vector scales() const;

private:
    int m_cutoff;
};

MeasurementTensor apply_fourier(const FourierOperator& op,
                                std::span<const Particle> particles);
MeasurementTensor apply_fourier(const FourierOperator& op,
                                std::span<const ComplexParticle> particles);

template <typename Weight>
MeasurementTensor apply_fourier(const FourierOperator& op,
                                const BasicConfiguration<Weight>& cfg)
{
    if (!(cfg.grid() == op.grid()))
    {
        throw InvalidArgument("configuration and operator use different grids");
    }
    return apply_fourier(op, cfg.particles());
}

/// Value of sum_{l,k} conj(r_{l,k}) exp(-2 pi i l (x + k tau v)) with its
/// exact partial derivatives.
struct FourierCorrelation
{
    Complex value;
    Complex d_position;
    Complex d_velocity;
};

FourierCorrelation correlate(const FourierOperator& op,
                             const MeasurementTensor& residual, double x,
                             double v);

/// Per-particle accelerations for quadratic trajectories
/// x(t) = x + v t + (a/2) t^2.
struct CurvedTrajectorySpec
{
    std::vector<double> accelerations;

    /// a = 2 v beta / (tau K): beta is the relative extra displacement at the
    /// window edge. Particles at rest get a = 0.
    static CurvedTrajectorySpec from_curvature(std::span<const Particle> particles,
                                               double beta,
                                               const TimeGrid& grid);
};

MeasurementTensor apply_fourier_curved(const FourierOperator& op,
                                       std::span<const Particle> particles,
                                       const CurvedTrajectorySpec& curvature);

// --- Gaussian point spread function, d = 2 ---------------------------------

/// Square pixels of side `pitch` (mm); pixel (row, col) is centred at
/// ((col + 1/2) pitch, (row + 1/2) pitch).
struct PixelGrid
{
    int width    = 25;
    int height   = 25;
    double pitch = 0.04;

    double center_x(int col) const noexcept { return (col + 0.5) * pitch; }
    double center_y(int row) const noexcept { return (row + 0.5) * pitch; }
    double extent_x() const noexcept { return width * pitch; }
    double extent_y() const noexcept { return height * pitch; }
    Eigen::Index pixel_count() const noexcept
    {
        return static_cast<Eigen::Index>(width) * height;
    }
    bool contains(double x, double y) const noexcept
    {
        return x >= 0.0 && x <= extent_x() && y >= 0.0 && y <= extent_y();
    }
};

/// 2K+1 real frames (rows = height, cols = width) plus acquisition metadata.
struct FrameStack
{
    PixelGrid pixels;
    double sigma = 0.04;
    TimeGrid grid{1, 1.0, 2};
    std::vector<Eigen::MatrixXd> frames;

    /// Frame-major, row-major pixels.
    Eigen::VectorXd flatten() const;
    static FrameStack unflatten(const PixelGrid& pixels, double sigma,
                                const TimeGrid& grid, const Eigen::VectorXd& flat);
};

///
/// Frame k pixel c reads sum_i w_i exp(-|c - (x_i + k tau v_i)|^2 / (2 sigma^2)).
/// theta = (x, y, v_x, v_y); positions in mm, velocities in mm per time unit.
///
class PSFOperator
{
public:
    using Scalar = double;

    PSFOperator(double sigma, PixelGrid pixels, TimeGrid grid);

    double sigma() const noexcept { return m_sigma; }
    const PixelGrid& pixels() const noexcept { return m_pixels; }
    const TimeGrid& grid() const noexcept { return m_grid; }
    Eigen::Index measurement_size() const noexcept
    {
        return m_pixels.pixel_count() * m_grid.frame_count();
    }

    int parameter_dim() const noexcept { return 4; }
    Eigen::VectorXd atom(const Vector& theta) const;
    void atom_with_jacobian(const Vector& theta, Eigen::VectorXd& atom,
                            Eigen::MatrixXd& jacobian) const;
    Correlation<Scalar> correlate(const Eigen::VectorXd& residual,
                                  const Vector& theta) const;
    std::vector<Vector> candidates(const CandidateGrid& grid) const;
    Vector project(const Vector& theta) const;
    bool contains(const Vector& theta) const;
    Vector scales() const;
    Particle to_particle(const Vector& theta, double weight) const;

    /// Sum of squared pixel values of one unit source at the field centre.
    double unit_energy() const;

private:
    void profile(double p, int count, Eigen::VectorXd& g, Eigen::VectorXd* dg) const;

    double m_sigma;
    PixelGrid m_pixels;
    TimeGrid m_grid;
};

/// Render particles through the PSF. Throws DomainError when a particle
/// leaves the field of view at some frame.
FrameStack apply_psf(const PSFOperator& op, std::span<const Particle> particles);

inline FrameStack apply_psf(const PSFOperator& op, const Configuration& cfg)
{
    return apply_psf(op, cfg.particles());
}

// --- noise -------------------------------------------------------------------

/// alpha (N1 + i N2) per complex entry, alpha N1 per real pixel; N standard normal.
struct NoiseSpec
{
    double alpha       = 0.0;
    std::uint64_t seed = 0;
};

MeasurementTensor add_noise(MeasurementTensor data, double alpha,
                            std::mt19937_64& rng);
MeasurementTensor add_noise(MeasurementTensor data, const NoiseSpec& spec);
FrameStack add_noise(FrameStack data, double alpha, std::mt19937_64& rng);
FrameStack add_noise(FrameStack data, const NoiseSpec& spec);
Eigen::MatrixXd add_noise(Eigen::MatrixXd image, double alpha,
                          std::mt19937_64& rng);

} // namespace dynspike
