#pragma once

#include <dynspike/errors.hpp>
#include <dynspike/forward_model.hpp>
#include <dynspike/nnls.hpp>
#include <dynspike/phase_space.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <span>
#include <type_traits>
#include <vector>

namespace dynspike {

///
/// Settings of the conditional-gradient solver for
///   min ||G mu - y||_2  over nonnegative discrete mu with ||mu||_TV <= tv_bound.
/// Zero for residual_tolerance / prune_threshold selects the defaults
/// 1e-6 ||y|| and 1e-3 tv_bound.
///
enum class RefineMethod
{
    gradient,
    levenberg_marquardt,
};

struct SolverConfig
{
    double tv_bound           = 1.0;
    int max_spikes            = 30;
    int max_outer_iterations  = 40;
    CandidateGrid candidate_grid{};
    int refine_steps          = 200;
    double refine_tolerance   = 1e-12;
    double residual_tolerance = 0.0;
    double prune_threshold    = 0.0;
    /// Spikes closer than this (sup norm, in units of the operator scales)
    /// are fused into one.
    double merge_distance     = 1e-2;
    RefineMethod refine_method = RefineMethod::gradient;
};

/// Expected residual norm of pure noise of level alpha on `entries` complex
/// entries: alpha sqrt(2 entries).
inline double noise_floor(double alpha, Eigen::Index entries)
{
    return alpha * std::sqrt(2.0 * static_cast<double>(entries));
}

struct Spike
{
    Vector theta;
    double weight;
};

struct SpikeSolution
{
    std::vector<Spike> spikes;
    double residual_norm = 0.0;
    int iterations       = 0;
    bool converged       = false;
    /// Residual after each outer iteration; non-increasing.
    std::vector<double> residual_history;
};

struct Reconstruction
{
    std::vector<Particle> particles;
    double residual_norm = 0.0;
    int iterations       = 0;
    bool converged       = false;
    std::vector<double> residual_history;

    double tv_norm() const
    {
        double s = 0.0;
        for (const auto& p : particles)
        {
            s += p.weight;
        }
        return s;
    }
};

struct StaticSpike
{
    double position;
    double weight;
};

struct StaticReconstruction
{
    std::vector<StaticSpike> spikes;
    double residual_norm = 0.0;
    int iterations       = 0;
    bool converged       = false;
};

/// Euclidean projection onto {w >= 0, sum w <= cap}.
Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& w, double cap);

namespace detail {

template <typename Scalar>
using VectorS = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Real and imaginary parts stacked vertically; real input passes through.
template <typename Derived>
Eigen::MatrixXd stack_real(const Eigen::MatrixBase<Derived>& m)
{
    using S = typename Derived::Scalar;
    if constexpr (std::is_same_v<S, std::complex<double>>)
    {
        Eigen::MatrixXd out(2 * m.rows(), m.cols());
        out.topRows(m.rows())    = m.real();
        out.bottomRows(m.rows()) = m.imag();
        return out;
    }
    else
    {
        return m;
    }
}

template <typename S>
double real_part(const S& s)
{
    return std::real(s);
}

template <typename Op>
class Adcg
{
public:
    using Scalar = typename Op::Scalar;
    using Data   = VectorS<Scalar>;

    Adcg(const Op& op, const Data& y, const SolverConfig& cfg)
        : m_op(op), m_y(y), m_cfg(cfg), m_y_real(stack_real(y)),
          m_scales(op.scales())
    {
        if (!y.allFinite())
        {
            throw NumericalFailure("measurements contain non-finite values");
        }
        if (!(cfg.tv_bound > 0.0) || !std::isfinite(cfg.tv_bound))
        {
            throw InvalidArgument("tv_bound M must be positive");
        }
        if (cfg.max_spikes < 1 || cfg.max_outer_iterations < 1 ||
            cfg.refine_steps < 1 || cfg.candidate_grid.n_x < 1 ||
            cfg.candidate_grid.n_v < 1)
        {
            throw InvalidArgument("solver counts must be positive");
        }
        if (y.size() != op.measurement_size())
        {
            throw InvalidArgument("measurement size does not match the operator");
        }
        m_tolerance = cfg.residual_tolerance > 0.0 ? cfg.residual_tolerance
                                                   : 1e-6 * m_y_real.norm();
        m_prune = cfg.prune_threshold > 0.0 ? cfg.prune_threshold
                                            : 1e-3 * cfg.tv_bound;
        m_candidates = op.candidates(cfg.candidate_grid);
        m_floor_cost = std::pow(1e-3 * m_tolerance, 2);
    }

    SpikeSolution run()
    {
        SpikeSolution out;
        std::vector<Spike> spikes;
        double residual = m_y_real.norm();
        int iter        = 0;
        while (residual > m_tolerance && iter < m_cfg.max_outer_iterations &&
               static_cast<int>(spikes.size()) < m_cfg.max_spikes)
        {
            ++iter;
            const double previous = residual;
            const Data r          = m_y - fit(spikes);

            Vector theta;
            const double gain = select(r, theta);
            if (!(gain > 0.0))
            {
                --iter;
                break;
            }
            spikes.push_back(Spike{theta, 0.0});
            residual = weight_step(spikes);
            residual = refine(spikes, residual);
            drop_zero(spikes);
            residual = try_simplify(spikes, residual, previous);
            check_feasible(spikes);
            out.residual_history.push_back(residual);
            if (previous - residual <= 1e-14 * previous)
            {
                break;
            }
        }

        residual = finalize(spikes, residual);
        check_feasible(spikes);
        out.spikes        = std::move(spikes);
        out.residual_norm = residual;
        out.iterations    = iter;
        out.converged     = residual <= m_tolerance;
        return out;
    }

private:
    Data fit(const std::vector<Spike>& spikes) const
    {
        Data f = Data::Zero(m_y.size());
        for (const auto& s : spikes)
        {
            f += s.weight * m_op.atom(s.theta);
        }
        return f;
    }

    double residual_of(const std::vector<Spike>& spikes) const
    {
        return stack_real(fit(spikes) - m_y).norm();
    }

    /// Grid scan of Re<r, a(theta)> followed by projected gradient ascent.
    double select(const Data& r, Vector& best) const
    {
        double best_value = -std::numeric_limits<double>::infinity();
        for (const auto& c : m_candidates)
        {
            const double v = real_part(m_op.correlate(r, c).value);
            if (v > best_value + 1e-12 ||
                (std::abs(v - best_value) <= 1e-12 && lex_less(c, best)))
            {
                best_value = v;
                best       = c;
            }
        }
        if (!(best_value > 0.0))
        {
            return best_value;
        }
        return ascend(r, best, best_value);
    }

    static bool lex_less(const Vector& a, const Vector& b)
    {
        return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    }

    double ascend(const Data& r, Vector& theta, double value) const
    {
        auto c      = m_op.correlate(r, theta);
        Vector grad = c.gradient.real();
        double step = 0.1 / std::max(std::abs(value), 1e-300);
        for (int it = 0; it < m_cfg.refine_steps; ++it)
        {
            const Vector gu = m_scales.cwiseProduct(grad);
            bool accepted   = false;
            for (int halving = 0; halving < 60; ++halving)
            {
                const Vector trial =
                    m_op.project(theta + step * m_scales.cwiseProduct(gu));
                const Vector du = (trial - theta).cwiseQuotient(m_scales);
                if (du.norm() <= m_cfg.refine_tolerance)
                {
                    return value;
                }
                const auto ct      = m_op.correlate(r, trial);
                const double vt    = real_part(ct.value);
                if (vt >= value + 1e-4 * gu.dot(du))
                {
                    theta    = trial;
                    value    = vt;
                    grad     = ct.gradient.real();
                    accepted = true;
                    step *= 2.0;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted)
            {
                break;
            }
        }
        return value;
    }

    Eigen::MatrixXd atom_matrix(const std::vector<Spike>& spikes) const
    {
        Eigen::MatrixXd A(m_y_real.size(), spikes.size());
        for (std::size_t i = 0; i < spikes.size(); ++i)
        {
            A.col(i) = stack_real(m_op.atom(spikes[i].theta));
        }
        return A;
    }

    /// Exact weights on the current support; returns the residual norm.
    double weight_step(std::vector<Spike>& spikes) const
    {
        if (spikes.empty())
        {
            return m_y_real.norm();
        }
        const Eigen::MatrixXd A = atom_matrix(spikes);
        const Eigen::VectorXd w = capped_nnls_gram(
            A.transpose() * A, A.transpose() * m_y_real, m_cfg.tv_bound);
        for (std::size_t i = 0; i < spikes.size(); ++i)
        {
            spikes[i].weight = w[i];
        }
        return (A * w - m_y_real).norm();
    }

    /// Jacobian (scaled parameters, then weights) and residual, real-stacked.
    void linearize(const std::vector<Spike>& spikes, Eigen::MatrixXd& Jr,
                   Eigen::VectorXd& fr) const
    {
        const int p  = m_op.parameter_dim();
        const auto m = static_cast<Eigen::Index>(spikes.size());
        Data a;
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> ja;
        Data f = -m_y;
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> J(m_y.size(), m * (p + 1));
        for (Eigen::Index i = 0; i < m; ++i)
        {
            m_op.atom_with_jacobian(spikes[i].theta, a, ja);
            f += spikes[i].weight * a;
            for (int j = 0; j < p; ++j)
            {
                J.col(i * p + j) = (spikes[i].weight * m_scales[j]) * ja.col(j);
            }
            J.col(m * p + i) = a;
        }
        Jr = stack_real(J);
        fr = stack_real(f);
    }

    /// spikes + delta, projected onto Omega and the capped simplex.
    std::vector<Spike> moved(const std::vector<Spike>& spikes,
                             const Eigen::VectorXd& delta) const
    {
        const int p  = m_op.parameter_dim();
        const auto m = static_cast<Eigen::Index>(spikes.size());
        std::vector<Spike> trial = spikes;
        Eigen::VectorXd w(m);
        for (Eigen::Index i = 0; i < m; ++i)
        {
            trial[i].theta = m_op.project(
                spikes[i].theta + m_scales.cwiseProduct(delta.segment(i * p, p)));
            w[i] = spikes[i].weight + delta[m * p + i];
        }
        w = project_capped_simplex(w, m_cfg.tv_bound);
        for (Eigen::Index i = 0; i < m; ++i)
        {
            trial[i].weight = w[i];
        }
        return trial;
    }

    /// Joint local descent over all positions, velocities and weights.
    double refine(std::vector<Spike>& spikes, double residual) const
    {
        if (spikes.empty())
        {
            return residual;
        }
        double cost = m_cfg.refine_method == RefineMethod::levenberg_marquardt
                          ? refine_lm(spikes, residual)
                          : refine_gradient(spikes, residual);
        // Exact weights at the refined support can only lower the residual.
        std::vector<Spike> exact = spikes;
        const double re          = weight_step(exact);
        if (re < std::sqrt(cost))
        {
            spikes = std::move(exact);
            return re;
        }
        return std::sqrt(cost);
    }

    /// Projected gradient descent, Armijo backtracking by halving. Returns the
    /// final squared residual.
    double refine_gradient(std::vector<Spike>& spikes, double residual) const
    {
        double cost = residual * residual;
        double step = 0.0;
        Eigen::MatrixXd Jr;
        Eigen::VectorXd fr;
        for (int it = 0; it < m_cfg.refine_steps && cost > m_floor_cost; ++it)
        {
            linearize(spikes, Jr, fr);
            const Eigen::VectorXd g = Jr.transpose() * fr;
            if (step == 0.0)
            {
                step = 1.0 / std::max(Jr.colwise().squaredNorm().sum(), 1e-300);
            }
            bool accepted = false;
            for (int halving = 0; halving < 60; ++halving)
            {
                const Eigen::VectorXd delta = -step * g;
                std::vector<Spike> trial    = moved(spikes, delta);
                Eigen::VectorXd d(delta.size());
                const int p = m_op.parameter_dim();
                for (std::size_t i = 0; i < spikes.size(); ++i)
                {
                    d.segment(i * p, p) =
                        (trial[i].theta - spikes[i].theta).cwiseQuotient(m_scales);
                    d[spikes.size() * p + i] = trial[i].weight - spikes[i].weight;
                }
                const double rt = residual_of(trial);
                const double ct = 0.5 * rt * rt;
                if (ct <= 0.5 * cost + 1e-4 * g.dot(d) && ct < 0.5 * cost)
                {
                    const double gain = 0.5 * cost - ct;
                    spikes            = std::move(trial);
                    cost              = rt * rt;
                    step *= 2.0;
                    accepted = true;
                    if (gain <= m_cfg.refine_tolerance * cost)
                    {
                        it = m_cfg.refine_steps;
                    }
                    break;
                }
                step *= 0.5;
            }
            if (!accepted)
            {
                break;
            }
        }
        return cost;
    }

    /// Projected Levenberg-Marquardt with Marquardt scaling. Returns the final
    /// squared residual.
    double refine_lm(std::vector<Spike>& spikes, double residual) const
    {
        double cost   = residual * residual;
        double lambda = 1e-3;
        Eigen::MatrixXd Jr;
        Eigen::VectorXd fr;
        for (int it = 0; it < m_cfg.refine_steps && cost > m_floor_cost; ++it)
        {
            linearize(spikes, Jr, fr);
            const Eigen::MatrixXd H = Jr.transpose() * Jr;
            const Eigen::VectorXd g = Jr.transpose() * fr;
            Eigen::VectorXd D       = H.diagonal();
            D = D.cwiseMax(1e-12 * std::max(D.maxCoeff(), 1e-300));

            bool accepted = false;
            while (lambda < 1e12)
            {
                Eigen::MatrixXd Hd = H;
                Hd.diagonal() += lambda * D;
                std::vector<Spike> trial = moved(spikes, -Hd.ldlt().solve(g));
                const double rt          = residual_of(trial);
                const double ct          = rt * rt;
                if (ct < cost)
                {
                    const double gain = cost - ct;
                    spikes            = std::move(trial);
                    cost              = ct;
                    lambda            = std::max(lambda / 3.0, 1e-12);
                    accepted          = true;
                    if (gain <= m_cfg.refine_tolerance * cost)
                    {
                        it = m_cfg.refine_steps;
                    }
                    break;
                }
                lambda *= 4.0;
            }
            if (!accepted)
            {
                break;
            }
        }
        return cost;
    }

    static void drop_zero(std::vector<Spike>& spikes)
    {
        std::erase_if(spikes, [](const Spike& s) { return !(s.weight > 0.0); });
    }

    bool close(const Spike& a, const Spike& b) const
    {
        return ((a.theta - b.theta).cwiseQuotient(m_scales)).cwiseAbs().maxCoeff() <
               m_cfg.merge_distance;
    }

    /// Fuse near-duplicate spikes and remove the ones below the prune
    /// threshold; re-optimise and keep the result only if it does not exceed
    /// the residual of the previous outer iteration.
    double try_simplify(std::vector<Spike>& spikes, double residual,
                        double previous) const
    {
        std::vector<Spike> trial = spikes;
        const bool changed       = simplify(trial);
        if (!changed)
        {
            return residual;
        }
        double rt = weight_step(trial);
        rt        = refine(trial, rt);
        drop_zero(trial);
        if (rt <= previous)
        {
            spikes = std::move(trial);
            return rt;
        }
        return residual;
    }

    bool simplify(std::vector<Spike>& spikes) const
    {
        bool changed = false;
        for (std::size_t i = 0; i < spikes.size(); ++i)
        {
            for (std::size_t j = i + 1; j < spikes.size();)
            {
                if (close(spikes[i], spikes[j]))
                {
                    const double wi = spikes[i].weight;
                    const double wj = spikes[j].weight;
                    const double ws = wi + wj;
                    if (ws > 0.0)
                    {
                        spikes[i].theta = m_op.project(
                            (wi * spikes[i].theta + wj * spikes[j].theta) / ws);
                    }
                    spikes[i].weight = ws;
                    spikes.erase(spikes.begin() + static_cast<std::ptrdiff_t>(j));
                    changed = true;
                }
                else
                {
                    ++j;
                }
            }
        }
        const auto before = spikes.size();
        std::erase_if(spikes, [&](const Spike& s) { return s.weight < m_prune; });
        return changed || spikes.size() != before;
    }

    double finalize(std::vector<Spike>& spikes, double residual) const
    {
        for (int round = 0; round < 4; ++round)
        {
            if (!simplify(spikes))
            {
                break;
            }
            residual = weight_step(spikes);
            residual = refine(spikes, residual);
            drop_zero(spikes);
        }
        if (spikes.empty())
        {
            residual = m_y_real.norm();
        }
        return residual;
    }

    void check_feasible(const std::vector<Spike>& spikes) const
    {
        double total = 0.0;
        for (const auto& s : spikes)
        {
            if (!m_op.contains(s.theta) || !(s.weight >= 0.0))
            {
                throw NumericalFailure("solver iterate left the feasible set");
            }
            total += s.weight;
        }
        if (total > m_cfg.tv_bound + 1e-9)
        {
            throw NumericalFailure("solver iterate exceeds the TV bound");
        }
    }

    const Op& m_op;
    const Data& m_y;
    const SolverConfig& m_cfg;
    Eigen::VectorXd m_y_real;
    Vector m_scales;
    double m_tolerance = 0.0;
    double m_prune     = 0.0;
    double m_floor_cost = 0.0;
    std::vector<Vector> m_candidates;
};

} // namespace detail

///
/// Conditional-gradient solver over any operator exposing atom,
/// atom_with_jacobian, correlate, candidates, project, contains, scales and
/// parameter_dim. Each outer iteration adds the best-correlated atom, solves
/// the weights exactly, refines everything jointly and prunes.
///
template <typename Op>
SpikeSolution solve_adcg(const Op& op,
                         const Eigen::Matrix<typename Op::Scalar, Eigen::Dynamic, 1>& y,
                         const SolverConfig& cfg)
{
    return detail::Adcg<Op>(op, y, cfg).run();
}

Reconstruction solve_dynamic(const MeasurementTensor& y, const FourierOperator& op,
                             const SolverConfig& cfg);
Reconstruction solve_dynamic(const FrameStack& y, const PSFOperator& op,
                             const SolverConfig& cfg);

/// Single-frame solve: y holds the 2 f_c + 1 entries of one frame.
StaticReconstruction solve_static(const Eigen::VectorXcd& y,
                                  const StaticFourierOperator& op,
                                  const SolverConfig& cfg);

struct MatchThresholds
{
    double position;
    double velocity;
    double weight;
};

struct MatchVerdict
{
    bool success = false;
    int matched  = 0;
    /// recon index per truth particle, -1 when unmatched.
    std::vector<int> assignment;
};

/// Maximum bipartite matching between truth and recon under the
/// thresholds; success needs every truth particle matched and exactly as
/// many recon particles as truth particles.
MatchVerdict match_reconstruction(const Configuration& truth,
                                  std::span<const Particle> recon,
                                  const MatchThresholds& thresholds);

/// Static counterpart at one frame: truth positions are the particles'
/// positions at frame k; velocities are ignored.
MatchVerdict match_static(const Configuration& truth, int k,
                          const StaticReconstruction& recon,
                          double position_threshold, double weight_threshold);

/// Maximum matching (augmenting paths); returns the right vertex matched to
/// each left vertex, or -1.
std::vector<int> maximum_matching(int n_left, int n_right,
                                  const std::function<bool(int, int)>& edge);

} // namespace dynspike
