#pragma once

#include <dynspike/errors.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dynspike {

using Vector = Eigen::VectorXd;

///
/// Sampling schedule of a dynamic acquisition: frames k = -K..K taken at
/// times t_k = k * tau, for particles living in dimension `dim`.
///
class TimeGrid
{
public:
    TimeGrid(int K, double tau, int dim = 1);

    int K() const noexcept { return m_K; }
    double tau() const noexcept { return m_tau; }
    int dim() const noexcept { return m_dim; }

    int frame_count() const noexcept { return 2 * m_K + 1; }
    bool has_frame(int k) const noexcept { return k >= -m_K && k <= m_K; }
    /// Position of frame k in 0..frame_count()-1.
    int frame_slot(int k) const;
    double time(int k) const;
    /// Half length of the observation window, K * tau.
    double half_window() const noexcept { return m_K * m_tau; }
    std::vector<int> frames() const;

    bool operator==(const TimeGrid& other) const noexcept = default;

private:
    int m_K;
    double m_tau;
    int m_dim;
};

/// x + k tau v, componentwise.
template <typename DerivedX, typename DerivedV>
Vector position_at(const Eigen::MatrixBase<DerivedX>& x,
                   const Eigen::MatrixBase<DerivedV>& v, int k,
                   const TimeGrid& grid)
{
    if (!grid.has_frame(k))
    {
        throw InvalidArgument("frame index " + std::to_string(k) +
                              " outside -K..K");
    }
    if (x.size() != v.size())
    {
        throw InvalidArgument("position and velocity dimensions differ");
    }
    return x + (static_cast<double>(k) * grid.tau()) * v;
}

/// Membership in the admissible set: x + k tau v in the closed box [0,1]^d for
/// every frame k of the grid.
bool in_domain(const Vector& x, const Vector& v, const TimeGrid& grid);

///
/// The admissible phase-space set for a time grid. Per coordinate the set is
/// a rhombus with vertices (0,0), (1,0), (1/2, +-1/(2 K tau)); in the
/// coordinates (x - K tau v, x + K tau v) it is the unit square, which gives
/// an exact Euclidean projection in those coordinates.
///
class PhaseSpaceDomain
{
public:
    explicit PhaseSpaceDomain(TimeGrid grid) : m_grid(grid) {}

    const TimeGrid& grid() const noexcept { return m_grid; }

    bool contains(const Vector& x, const Vector& v) const
    {
        return in_domain(x, v, m_grid);
    }

    /// Largest |v| component of any admissible point.
    double velocity_bound() const noexcept
    {
        return 0.5 / m_grid.half_window();
    }

    /// Nearest admissible point, distance measured in (x, K tau v).
    /// The result always passes contains().
    void project(Eigen::Ref<Vector> x, Eigen::Ref<Vector> v) const;

private:
    TimeGrid m_grid;
};

template <typename Weight = double>
struct BasicParticle
{
    Vector position;
    Vector velocity;
    Weight weight{1};
};

using Particle        = BasicParticle<double>;
using ComplexParticle = BasicParticle<std::complex<double>>;

template <typename Weight>
Vector position_at(const BasicParticle<Weight>& p, int k, const TimeGrid& grid)
{
    return position_at(p.position, p.velocity, k, grid);
}

namespace detail {

void validate_particles(const TimeGrid& grid, std::span<const Vector> xs,
                        std::span<const Vector> vs,
                        std::span<const double> weight_moduli);

double dynamic_separation(const TimeGrid& grid, std::span<const Vector> xs,
                          std::span<const Vector> vs);

} // namespace detail

///
/// Weighted point sources in phase space on a common time grid.
/// Invariants checked at construction: at least one particle, dimensions
/// match the grid, every particle inside the admissible set, nonzero
/// weights, pairwise distinct (position, velocity).
///
template <typename Weight = double>
class BasicConfiguration
{
public:
    using ParticleType = BasicParticle<Weight>;

    BasicConfiguration(TimeGrid grid, std::vector<ParticleType> particles)
        : m_grid(grid), m_particles(std::move(particles))
    {
        std::vector<Vector> xs, vs;
        std::vector<double> mods;
        for (const auto& p : m_particles)
        {
            xs.push_back(p.position);
            vs.push_back(p.velocity);
            mods.push_back(std::abs(p.weight));
        }
        detail::validate_particles(m_grid, xs, vs, mods);
    }

    const TimeGrid& grid() const noexcept { return m_grid; }
    std::span<const ParticleType> particles() const noexcept
    {
        return m_particles;
    }
    std::size_t size() const noexcept { return m_particles.size(); }
    const ParticleType& operator[](std::size_t i) const
    {
        return m_particles.at(i);
    }

    double tv_norm() const
    {
        double s = 0.0;
        for (const auto& p : m_particles)
        {
            s += std::abs(p.weight);
        }
        return s;
    }

    std::vector<Vector> positions() const
    {
        std::vector<Vector> out;
        for (const auto& p : m_particles)
        {
            out.push_back(p.position);
        }
        return out;
    }

    std::vector<Vector> velocities() const
    {
        std::vector<Vector> out;
        for (const auto& p : m_particles)
        {
            out.push_back(p.velocity);
        }
        return out;
    }

private:
    TimeGrid m_grid;
    std::vector<ParticleType> m_particles;
};

using Configuration        = BasicConfiguration<double>;
using ComplexConfiguration = BasicConfiguration<std::complex<double>>;

///
/// The affine set L_{i,k} of phase-space points that sit where particle i
/// sits at frame k: (x - x_i) + k tau (v - v_i) = 0.
///
struct Line
{
    int particle_index;
    int frame_index;
    Vector anchor_position;
    Vector anchor_velocity;
    double tau;

    /// (x - x_i) + k tau (v - v_i); zero on the line.
    Vector offset(const Vector& x, const Vector& v) const
    {
        return (x - anchor_position) +
               (frame_index * tau) * (v - anchor_velocity);
    }
};

template <typename Weight>
Line make_line(const BasicConfiguration<Weight>& cfg, int i, int k)
{
    if (!cfg.grid().has_frame(k))
    {
        throw InvalidArgument("frame index outside -K..K");
    }
    const auto& p = cfg[static_cast<std::size_t>(i)];
    return Line{i, k, p.position, p.velocity, cfg.grid().tau()};
}

/// A phase-space point explaining one particle per witnessed frame, with all
/// particle indices distinct. Planar (d = 1) only.
struct GhostParticle
{
    double position;
    double velocity;
    /// (particle index, frame index), one entry per frame of the frame set.
    std::vector<std::pair<int, int>> witness;
};

/// Absolute tolerance used when intersecting lines and merging ghosts.
inline constexpr double ghost_tolerance = 1e-9;

namespace detail {

std::vector<GhostParticle> detect_ghosts(const TimeGrid& grid,
                                         std::span<const Vector> xs,
                                         std::span<const Vector> vs,
                                         std::vector<int> frames);

} // namespace detail

///
/// Enumerate ghost particles of a planar configuration for the frame set
/// `frames` (at least three distinct frames of the grid). Brute force over
/// injections of the frames into particle indices, pruned by intersecting
/// the first two lines in closed form.
///
template <typename Weight>
std::vector<GhostParticle> detect_ghosts(const BasicConfiguration<Weight>& cfg,
                                         std::vector<int> frames)
{
    return detail::detect_ghosts(cfg.grid(), cfg.positions(),
                                 cfg.velocities(), std::move(frames));
}

///
/// Third largest over frames of the minimum pairwise distance between
/// particle positions at that frame (sup norm for d > 1).
///
template <typename Weight>
double dynamic_separation(const BasicConfiguration<Weight>& cfg)
{
    return detail::dynamic_separation(cfg.grid(), cfg.positions(),
                                      cfg.velocities());
}

/// Minimum pairwise distance between positions at frame k (sup norm).
double frame_separation(const TimeGrid& grid, std::span<const Vector> xs,
                        std::span<const Vector> vs, int k);

/// Particles plus the ghost configuration producing identical data on every
/// frame of a K = 1 grid.
struct UndetectablePair
{
    Configuration particles;
    Configuration ghosts;
};

///
/// Three particles P1 = (c - a, 0), P2 = (c + a, 0), P3 = (c, 3a/tau) and the
/// ghosts G1 = (c, -a/tau), G2 = (c - a, 2a/tau), G3 = (c + a, 2a/tau) with
/// c = 1/2. At each of the frames -1, 0, 1 the two position multisets agree.
/// The weights must be equal so that the weighted multisets agree as well.
///
UndetectablePair make_undetectable_config(const TimeGrid& grid,
                                          std::span<const double> weights,
                                          double scale = 0.1);

///
/// omega - beta * (sum of unit deltas at particles - sum at ghosts): same
/// measurements and same total variation for every beta in [0, min w].
/// Particles whose weight reaches zero are dropped.
///
std::vector<Particle> undetectable_family(const UndetectablePair& pair,
                                          double beta);

} // namespace dynspike
