#include <dynspike/solver.hpp>

#include <algorithm>
#include <numeric>

namespace dynspike {

Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& w, double cap)
{
    Eigen::VectorXd out = w.cwiseMax(0.0);
    if (out.sum() <= cap)
    {
        return out;
    }
    // Projection onto the simplex {sum = cap}: find the shift theta with
    // sum max(w_i - theta, 0) = cap.
    std::vector<double> sorted(w.begin(), w.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double running = 0.0;
    double theta   = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i)
    {
        running += sorted[i];
        const double t = (running - cap) / static_cast<double>(i + 1);
        if (i + 1 == sorted.size() || sorted[i + 1] <= t)
        {
            theta = t;
            break;
        }
    }
    return (w.array() - theta).cwiseMax(0.0).matrix();
}

Reconstruction solve_dynamic(const MeasurementTensor& y, const FourierOperator& op,
                             const SolverConfig& cfg)
{
    if (y.cutoff() != op.cutoff() || !(y.grid() == op.grid()))
    {
        throw InvalidArgument("measurement header does not match the operator");
    }
    const SpikeSolution sol = solve_adcg(op, y.data(), cfg);
    Reconstruction out;
    for (const auto& s : sol.spikes)
    {
        out.particles.push_back(op.to_particle(s.theta, s.weight));
    }
    out.residual_norm    = sol.residual_norm;
    out.iterations       = sol.iterations;
    out.converged        = sol.converged;
    out.residual_history = sol.residual_history;
    return out;
}

Reconstruction solve_dynamic(const FrameStack& y, const PSFOperator& op,
                             const SolverConfig& cfg)
{
    if (!(y.grid == op.grid()) || y.pixels.width != op.pixels().width ||
        y.pixels.height != op.pixels().height || y.pixels.pitch != op.pixels().pitch)
    {
        throw InvalidArgument("frame stack geometry does not match the operator");
    }
    const SpikeSolution sol = solve_adcg(op, y.flatten(), cfg);
    Reconstruction out;
    for (const auto& s : sol.spikes)
    {
        out.particles.push_back(op.to_particle(s.theta, s.weight));
    }
    out.residual_norm    = sol.residual_norm;
    out.iterations       = sol.iterations;
    out.converged        = sol.converged;
    out.residual_history = sol.residual_history;
    return out;
}

StaticReconstruction solve_static(const Eigen::VectorXcd& y,
                                  const StaticFourierOperator& op,
                                  const SolverConfig& cfg)
{
    const SpikeSolution sol = solve_adcg(op, y, cfg);
    StaticReconstruction out;
    for (const auto& s : sol.spikes)
    {
        out.spikes.push_back(StaticSpike{s.theta[0], s.weight});
    }
    out.residual_norm = sol.residual_norm;
    out.iterations    = sol.iterations;
    out.converged     = sol.converged;
    return out;
}

std::vector<int> maximum_matching(int n_left, int n_right,
                                  const std::function<bool(int, int)>& edge)
{
    std::vector<std::vector<int>> adj(n_left);
    for (int i = 0; i < n_left; ++i)
    {
        for (int j = 0; j < n_right; ++j)
        {
            if (edge(i, j))
            {
                adj[i].push_back(j);
            }
        }
    }
    std::vector<int> left(n_left, -1), right(n_right, -1);
    std::vector<char> seen;
    std::function<bool(int)> augment = [&](int i) {
        for (int j : adj[i])
        {
            if (seen[j])
            {
                continue;
            }
            seen[j] = 1;
            if (right[j] < 0 || augment(right[j]))
            {
                left[i]  = j;
                right[j] = i;
                return true;
            }
        }
        return false;
    };
    for (int i = 0; i < n_left; ++i)
    {
        seen.assign(n_right, 0);
        augment(i);
    }
    return left;
}

namespace {

MatchVerdict verdict_from(std::vector<int> assignment, std::size_t recon_size)
{
    MatchVerdict v;
    v.matched = static_cast<int>(
        std::count_if(assignment.begin(), assignment.end(), [](int j) { return j >= 0; }));
    v.success    = v.matched == static_cast<int>(assignment.size()) &&
                recon_size == assignment.size();
    v.assignment = std::move(assignment);
    return v;
}

} // namespace

MatchVerdict match_reconstruction(const Configuration& truth,
                                  std::span<const Particle> recon,
                                  const MatchThresholds& t)
{
    if (!(t.position > 0.0) || !(t.velocity > 0.0) || !(t.weight > 0.0))
    {
        throw InvalidArgument("matching thresholds must be positive");
    }
    const auto& tp = truth.particles();
    auto edge      = [&](int i, int j) {
        const auto& a = tp[i];
        const auto& b = recon[j];
        if (a.position.size() != b.position.size())
        {
            return false;
        }
        return (a.position - b.position).cwiseAbs().maxCoeff() <= t.position &&
               (a.velocity - b.velocity).cwiseAbs().maxCoeff() <= t.velocity &&
               std::abs(a.weight - b.weight) <= t.weight;
    };
    return verdict_from(maximum_matching(static_cast<int>(tp.size()),
                                         static_cast<int>(recon.size()), edge),
                        recon.size());
}

MatchVerdict match_static(const Configuration& truth, int k,
                          const StaticReconstruction& recon,
                          double position_threshold, double weight_threshold)
{
    if (!(position_threshold > 0.0) || !(weight_threshold > 0.0))
    {
        throw InvalidArgument("matching thresholds must be positive");
    }
    const auto& tp = truth.particles();
    auto edge      = [&](int i, int j) {
        const double x = position_at(tp[i], k, truth.grid())[0];
        return std::abs(x - recon.spikes[j].position) <= position_threshold &&
               std::abs(tp[i].weight - recon.spikes[j].weight) <= weight_threshold;
    };
    return verdict_from(maximum_matching(static_cast<int>(tp.size()),
                                         static_cast<int>(recon.spikes.size()), edge),
                        recon.spikes.size());
}

} // namespace dynspike
