#include <dynspike/phase_space.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace dynspike {

TimeGrid::TimeGrid(int K, double tau, int dim) : m_K(K), m_tau(tau), m_dim(dim)
{
    if (K < 1)
    {
        throw InvalidArgument("TimeGrid: K must be >= 1");
    }
    if (!(tau > 0.0) || !std::isfinite(tau))
    {
        throw InvalidArgument("TimeGrid: tau must be a positive finite number");
    }
    if (dim < 1)
    {
        throw InvalidArgument("TimeGrid: dimension must be >= 1");
    }
}

int TimeGrid::frame_slot(int k) const
{
    if (!has_frame(k))
    {
        throw InvalidArgument("frame index " + std::to_string(k) +
                              " outside -K..K");
    }
    return k + m_K;
}

double TimeGrid::time(int k) const
{
    return static_cast<double>(frame_slot(k) - m_K) * m_tau;
}

std::vector<int> TimeGrid::frames() const
{
    std::vector<int> out;
    for (int k = -m_K; k <= m_K; ++k)
    {
        out.push_back(k);
    }
    return out;
}

bool in_domain(const Vector& x, const Vector& v, const TimeGrid& grid)
{
    if (x.size() != v.size())
    {
        return false;
    }
    for (int k = -grid.K(); k <= grid.K(); ++k)
    {
        const double kt = k * grid.tau();
        for (Eigen::Index j = 0; j < x.size(); ++j)
        {
            const double p = x[j] + kt * v[j];
            if (!(p >= 0.0 && p <= 1.0))
            {
                return false;
            }
        }
    }
    return true;
}

void PhaseSpaceDomain::project(Eigen::Ref<Vector> x, Eigen::Ref<Vector> v) const
{
    const double h = m_grid.half_window();
    for (Eigen::Index j = 0; j < x.size(); ++j)
    {
        const double last  = std::clamp(x[j] + h * v[j], 0.0, 1.0);
        const double first = std::clamp(x[j] - h * v[j], 0.0, 1.0);
        x[j] = 0.5 * (last + first);
        v[j] = (last - first) / (2.0 * h);
    }
    // Rounding can leave a coordinate one ulp outside; pull toward the centre.
    for (int attempt = 0; attempt < 64 && !contains(x, v); ++attempt)
    {
        const double shrink = 1.0 - std::ldexp(1.0, attempt - 52);
        for (Eigen::Index j = 0; j < x.size(); ++j)
        {
            x[j] = 0.5 + (x[j] - 0.5) * shrink;
            v[j] *= shrink;
        }
    }
    if (!contains(x, v))
    {
        throw NumericalFailure("projection onto the admissible set failed");
    }
}

namespace detail {

void validate_particles(const TimeGrid& grid, std::span<const Vector> xs,
                        std::span<const Vector> vs,
                        std::span<const double> weight_moduli)
{
    if (xs.empty())
    {
        throw InvalidArgument("configuration needs at least one particle");
    }
    for (std::size_t i = 0; i < xs.size(); ++i)
    {
        if (xs[i].size() != grid.dim() || vs[i].size() != grid.dim())
        {
            throw InvalidArgument("particle " + std::to_string(i) +
                                  ": dimension does not match the grid");
        }
        if (!(weight_moduli[i] > 0.0) || !std::isfinite(weight_moduli[i]))
        {
            throw InvalidArgument("particle " + std::to_string(i) +
                                  ": weight must be nonzero and finite");
        }
        if (!in_domain(xs[i], vs[i], grid))
        {
            throw DomainError("particle " + std::to_string(i) +
                              " leaves [0,1]^d during the window");
        }
        for (std::size_t j = 0; j < i; ++j)
        {
            if (xs[i] == xs[j] && vs[i] == vs[j])
            {
                throw InvalidArgument("particles " + std::to_string(j) +
                                      " and " + std::to_string(i) +
                                      " coincide in phase space");
            }
        }
    }
}

double dynamic_separation(const TimeGrid& grid, std::span<const Vector> xs,
                          std::span<const Vector> vs)
{
    if (xs.size() < 2)
    {
        throw InvalidArgument("dynamic separation needs at least two particles");
    }
    std::vector<double> per_frame;
    for (int k = -grid.K(); k <= grid.K(); ++k)
    {
        per_frame.push_back(frame_separation(grid, xs, vs, k));
    }
    std::sort(per_frame.begin(), per_frame.end(), std::greater<>());
    return per_frame[2];
}

namespace {

struct GhostSearch
{
    const TimeGrid& grid;
    std::span<const Vector> xs;
    std::span<const Vector> vs;
    const std::vector<int>& frames;
    std::vector<GhostParticle>& found;

    double at(std::size_t i, int k) const
    {
        return xs[i][0] + k * grid.tau() * vs[i][0];
    }

    void extend(double g, double w, std::vector<int>& used,
                std::vector<std::pair<int, int>>& witness)
    {
        const std::size_t depth = witness.size();
        if (depth == frames.size())
        {
            record(g, w, witness);
            return;
        }
        const int k = frames[depth];
        for (std::size_t j = 0; j < xs.size(); ++j)
        {
            if (std::find(used.begin(), used.end(), static_cast<int>(j)) !=
                used.end())
            {
                continue;
            }
            if (std::abs(g + k * grid.tau() * w - at(j, k)) > ghost_tolerance)
            {
                continue;
            }
            used.push_back(static_cast<int>(j));
            witness.emplace_back(static_cast<int>(j), k);
            extend(g, w, used, witness);
            witness.pop_back();
            used.pop_back();
        }
    }

    void record(double g, double w,
                const std::vector<std::pair<int, int>>& witness)
    {
        for (int k = -grid.K(); k <= grid.K(); ++k)
        {
            const double p = g + k * grid.tau() * w;
            if (p < -ghost_tolerance || p > 1.0 + ghost_tolerance)
            {
                return;
            }
        }
        for (std::size_t i = 0; i < xs.size(); ++i)
        {
            if (std::abs(xs[i][0] - g) <= ghost_tolerance &&
                std::abs(vs[i][0] - w) <= ghost_tolerance)
            {
                return;
            }
        }
        for (const auto& existing : found)
        {
            if (std::abs(existing.position - g) <= ghost_tolerance &&
                std::abs(existing.velocity - w) <= ghost_tolerance)
            {
                return;
            }
        }
        found.push_back(GhostParticle{g, w, witness});
    }
};

} // namespace

std::vector<GhostParticle> detect_ghosts(const TimeGrid& grid,
                                         std::span<const Vector> xs,
                                         std::span<const Vector> vs,
                                         std::vector<int> frames)
{
    if (grid.dim() != 1)
    {
        throw InvalidArgument("ghost detection is implemented for d = 1 only");
    }
    std::sort(frames.begin(), frames.end());
    frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
    if (frames.size() < 3)
    {
        throw InvalidArgument("ghost detection needs at least three frames");
    }
    for (int k : frames)
    {
        (void)grid.frame_slot(k);
    }

    std::vector<GhostParticle> found;
    const std::size_t n = xs.size();
    if (n < frames.size())
    {
        return found;
    }

    GhostSearch search{grid, xs, vs, frames, found};
    const int k1 = frames[0];
    const int k2 = frames[1];
    for (std::size_t i1 = 0; i1 < n; ++i1)
    {
        for (std::size_t i2 = 0; i2 < n; ++i2)
        {
            if (i1 == i2)
            {
                continue;
            }
            // x + k1 tau v = p1 and x + k2 tau v = p2.
            const double p1 = search.at(i1, k1);
            const double p2 = search.at(i2, k2);
            const double w  = (p1 - p2) / ((k1 - k2) * grid.tau());
            const double g  = p1 - k1 * grid.tau() * w;
            std::vector<int> used{static_cast<int>(i1), static_cast<int>(i2)};
            std::vector<std::pair<int, int>> witness{
                {static_cast<int>(i1), k1}, {static_cast<int>(i2), k2}};
            search.extend(g, w, used, witness);
        }
    }
    return found;
}

} // namespace detail

double frame_separation(const TimeGrid& grid, std::span<const Vector> xs,
                        std::span<const Vector> vs, int k)
{
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < xs.size(); ++i)
    {
        const Vector pi = position_at(xs[i], vs[i], k, grid);
        for (std::size_t j = i + 1; j < xs.size(); ++j)
        {
            const Vector pj = position_at(xs[j], vs[j], k, grid);
            best = std::min(best, (pi - pj).cwiseAbs().maxCoeff());
        }
    }
    return best;
}

UndetectablePair make_undetectable_config(const TimeGrid& grid,
                                          std::span<const double> weights,
                                          double scale)
{
    if (grid.K() != 1 || grid.dim() != 1)
    {
        throw InvalidArgument(
            "undetectable fixture needs a planar grid with K = 1");
    }
    if (weights.size() != 3)
    {
        throw InvalidArgument("undetectable fixture needs exactly 3 weights");
    }
    for (double w : weights)
    {
        if (!(w > 0.0))
        {
            throw InvalidArgument("undetectable fixture needs positive weights");
        }
        if (std::abs(w - weights[0]) > 1e-12 * weights[0])
        {
            throw InvalidArgument(
                "undetectable fixture needs equal weights; use "
                "undetectable_family for unequal mixtures");
        }
    }
    if (!(scale > 0.0) || !(3.0 * scale < 0.5))
    {
        throw DomainError(
            "undetectable fixture does not fit strictly inside the domain");
    }
    const double c   = 0.5;
    const double a   = scale;
    const double tau = grid.tau();
    auto make        = [](double x, double v, double w) {
        return Particle{Vector::Constant(1, x), Vector::Constant(1, v), w};
    };
    std::vector<Particle> ps{make(c - a, 0.0, weights[0]),
                             make(c + a, 0.0, weights[1]),
                             make(c, 3.0 * a / tau, weights[2])};
    std::vector<Particle> gs{make(c, -a / tau, weights[0]),
                             make(c - a, 2.0 * a / tau, weights[1]),
                             make(c + a, 2.0 * a / tau, weights[2])};
    return UndetectablePair{Configuration(grid, std::move(ps)),
                            Configuration(grid, std::move(gs))};
}

std::vector<Particle> undetectable_family(const UndetectablePair& pair,
                                          double beta)
{
    double min_w = std::numeric_limits<double>::infinity();
    for (const auto& p : pair.particles.particles())
    {
        min_w = std::min(min_w, p.weight);
    }
    if (!(beta >= 0.0) || beta > min_w)
    {
        throw InvalidArgument("beta must lie in [0, min weight]");
    }
    std::vector<Particle> out;
    for (const auto& p : pair.particles.particles())
    {
        if (p.weight - beta > 0.0)
        {
            out.push_back(Particle{p.position, p.velocity, p.weight - beta});
        }
    }
    if (beta > 0.0)
    {
        for (const auto& g : pair.ghosts.particles())
        {
            out.push_back(Particle{g.position, g.velocity, beta});
        }
    }
    return out;
}

} // namespace dynspike
