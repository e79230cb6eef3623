#pragma once

#include <dynspike/errors.hpp>
#include <dynspike/phase_space.hpp>

#include <Eigen/Core>

#include <complex>
#include <span>
#include <vector>

namespace dynspike {

using Complex = std::complex<double>;

/// Separation constant for d = 1 interpolation.
inline constexpr double separation_constant = 1.87;
/// Constants of the stability estimate.
inline constexpr double stability_c1 = 0.3353;
inline constexpr double stability_c2 = 0.1649;

/// Distance between a and b on the unit circle.
double wrap_distance(double a, double b);

///
/// Fourth power of the normalised Fejer kernel,
///   K(t) = (sin(M pi t) / (M sin(pi t)))^4,  M = floor(f_c / 2) + 1,
/// a trigonometric polynomial of degree 2M - 2 <= f_c with K(0) = 1.
///
class FejerKernel
{
public:
    explicit FejerKernel(int cutoff);

    int cutoff() const noexcept { return m_cutoff; }
    /// g_l for l = -f_c..f_c.
    const Eigen::VectorXd& coefficients() const noexcept { return m_coeffs; }

    /// Closed-form value and first derivative.
    double value(double t) const;
    double derivative(double t) const;
    /// n-th derivative from the coefficient series.
    double series(double t, int order) const;

private:
    int m_cutoff;
    int m_M;
    Eigen::VectorXd m_coeffs;
};

///
/// q(t) = sum_i alpha_i K(t - t_i) + beta_i K'(t - t_i) interpolating
/// q(t_i) = gamma_i with q'(t_i) = 0; equivalently
/// q(t) = sum_l c_l exp(2 pi i l t).
///
class StaticCertificate
{
public:
    StaticCertificate(FejerKernel kernel, int frame, std::vector<double> nodes,
                      std::vector<Complex> values, Eigen::VectorXcd alpha,
                      Eigen::VectorXcd beta);

    int cutoff() const noexcept { return m_kernel.cutoff(); }
    int frame() const noexcept { return m_frame; }
    const std::vector<double>& nodes() const noexcept { return m_nodes; }
    const std::vector<Complex>& values() const noexcept { return m_values; }
    /// c_l for l = -f_c..f_c.
    const Eigen::VectorXcd& coefficients() const noexcept { return m_coeffs; }

    Complex operator()(double t) const;
    Complex derivative(double t) const;
    /// Evaluation through the coefficients c_l.
    Complex series(double t) const;
    Complex series_derivative(double t) const;

private:
    FejerKernel m_kernel;
    int m_frame;
    std::vector<double> m_nodes;
    std::vector<Complex> m_values;
    Eigen::VectorXcd m_alpha;
    Eigen::VectorXcd m_beta;
    Eigen::VectorXcd m_coeffs;
};

///
/// Solves the 2N x 2N interpolation system. Throws SeparationViolation when
/// nodes are closer than 1.87/f_c on the circle or the system's condition
/// number exceeds 1e10, InvalidArgument when f_c < 2N.
///
StaticCertificate build_static_certificate(std::span<const double> nodes,
                                           std::span<const Complex> values,
                                           int cutoff, int frame = 0);

///
/// q(x, v) = (1/|K_set|) sum_k q_k(x + k tau v) for per-frame certificates q_k.
///
class DynamicalCertificate
{
public:
    DynamicalCertificate(TimeGrid grid, std::vector<StaticCertificate> frames);

    const TimeGrid& grid() const noexcept { return m_grid; }
    const std::vector<StaticCertificate>& frames() const noexcept { return m_frames; }
    std::vector<int> frame_set() const;
    int cutoff() const { return m_frames.front().cutoff(); }

    Complex operator()(double x, double v) const;
    Complex series(double x, double v) const;
    /// gamma_{i,k} of particle i at the frame with slot j of frame_set().
    Complex gamma(std::size_t i, std::size_t j) const;

private:
    TimeGrid m_grid;
    std::vector<StaticCertificate> m_frames;
};

///
/// Builds the frame certificates with node values gamma(i, j), particle i,
/// frame frames[j].
///
DynamicalCertificate build_dynamical_certificate(const Configuration& cfg,
                                                 const Eigen::MatrixXcd& gamma,
                                                 std::vector<int> frames, int cutoff);

/// Every frame interpolates eta at the particle positions of that frame.
DynamicalCertificate build_static_average(const Configuration& cfg,
                                          std::span<const Complex> eta,
                                          std::vector<int> frames, int cutoff);

///
/// Three equispaced static particles, eta = 1, K = 1: the outer particles get
/// 1 - eps on frames -1, 1 and 1 + 2 eps on frame 0, the middle one 1 on
/// every frame. Ghost values drop to 1 - 2 eps / 3 while particle values
/// stay 1.
///
DynamicalCertificate build_perturbed_certificate(const Configuration& cfg,
                                                 double eps, int cutoff);

struct CertificatePoint
{
    double position;
    double velocity;
    double modulus;
};

struct VerificationReport
{
    double max_interpolation_error = 0.0;
    double max_modulus             = 0.0;
    /// Largest |q| outside the particle and ghost exclusion balls.
    double max_modulus_outside     = 0.0;
    bool interpolation_ok          = false;
    bool bounded_ok                = false;
    bool strict_ok                 = false;
    std::vector<GhostParticle> ghosts;
    std::vector<CertificatePoint> violations;
    int grid_points = 0;

    bool passed() const noexcept
    {
        return interpolation_ok && bounded_ok && strict_ok;
    }
};

///
/// Grid scan of the dynamical certificate over Omega: interpolation at the
/// particles, |q| <= 1 + 1e-6 everywhere, and |q| <= 1 - margin outside
/// exclusion balls |dx| + K tau |dv| < 0.3/f_c around particles and detected
/// ghosts. Each ghost is also evaluated exactly and counts as one violation
/// when it breaks the strict bound; grid points inside its ball are not
/// reported separately.
///
VerificationReport verify_certificate(const DynamicalCertificate& cert,
                                      const Configuration& cfg,
                                      std::span<const Complex> eta,
                                      int grid_resolution, double margin = 1e-3);

/// Smallest eps in (0, 0.2] (bisection, 30 steps) for which the perturbed
/// certificate passes verification with the requested margin.
double find_perturbation(const Configuration& cfg, int cutoff, double margin,
                         int grid_resolution);

struct StabilityInputs
{
    double delta_x;
    double delta_v;
    int cutoff;
    Configuration config;
    /// Samples per axis of the verification grid; 0 picks 4 f_c (2K + 1).
    int grid_resolution = 0;
};

struct StabilityReport
{
    bool relation_ok        = false;
    bool separation_ok      = false;
    bool ghost_condition_ok = false;
    double margin_bound     = 0.0;
    /// Smallest frame-averaged truncated squared distance seen.
    double min_ghost_sum    = 0.0;
    double srf_x            = 0.0;
};

StabilityReport check_stability_conditions(const StabilityInputs& inputs);

/// Frame average of min(min_i wrap_distance(x + k tau v, t_{i,k})^2, C2^2 / f_c^2).
double ghost_sum(const Configuration& cfg, int cutoff, double x, double v);

} // namespace dynspike
