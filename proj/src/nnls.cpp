#include <dynspike/nnls.hpp>
#include <dynspike/errors.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace dynspike {

namespace {

Eigen::MatrixXd sub_matrix(const Eigen::MatrixXd& G, const std::vector<int>& idx)
{
    Eigen::MatrixXd out(idx.size(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
    {
        for (std::size_t j = 0; j < idx.size(); ++j)
        {
            out(i, j) = G(idx[i], idx[j]);
        }
    }
    return out;
}

Eigen::VectorXd sub_vector(const Eigen::VectorXd& c, const std::vector<int>& idx)
{
    Eigen::VectorXd out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
    {
        out[i] = c[idx[i]];
    }
    return out;
}

double tolerance_for(const Eigen::MatrixXd& G, const Eigen::VectorXd& c)
{
    const double scale = std::max({1.0, c.cwiseAbs().maxCoeff(),
                                   G.diagonal().cwiseAbs().maxCoeff()});
    return 1e-13 * scale * static_cast<double>(std::max<Eigen::Index>(1, c.size()));
}

void check_inputs(const Eigen::MatrixXd& G, const Eigen::VectorXd& c)
{
    if (G.rows() != G.cols() || G.rows() != c.size())
    {
        throw InvalidArgument("nnls: Gram matrix and vector sizes differ");
    }
    if (!G.allFinite() || !c.allFinite())
    {
        throw NumericalFailure("nnls: non-finite input");
    }
}

} // namespace

Eigen::VectorXd nnls_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c)
{
    check_inputs(G, c);
    const Eigen::Index n = c.size();
    Eigen::VectorXd w    = Eigen::VectorXd::Zero(n);
    if (n == 0)
    {
        return w;
    }
    const double tol = tolerance_for(G, c);
    std::vector<bool> passive(n, false);

    for (int outer = 0; outer < 3 * n + 10; ++outer)
    {
        const Eigen::VectorXd grad = c - G * w;
        Eigen::Index best          = -1;
        for (Eigen::Index j = 0; j < n; ++j)
        {
            if (!passive[j] && grad[j] > tol && (best < 0 || grad[j] > grad[best]))
            {
                best = j;
            }
        }
        if (best < 0)
        {
            break;
        }
        passive[best] = true;

        for (int inner = 0; inner < 3 * n + 10; ++inner)
        {
            std::vector<int> idx;
            for (Eigen::Index j = 0; j < n; ++j)
            {
                if (passive[j])
                {
                    idx.push_back(static_cast<int>(j));
                }
            }
            const Eigen::VectorXd zp = sub_matrix(G, idx)
                                           .completeOrthogonalDecomposition()
                                           .solve(sub_vector(c, idx));
            bool all_positive = true;
            for (Eigen::Index i = 0; i < zp.size(); ++i)
            {
                all_positive = all_positive && zp[i] > 0.0;
            }
            if (all_positive)
            {
                w.setZero();
                for (std::size_t i = 0; i < idx.size(); ++i)
                {
                    w[idx[i]] = zp[i];
                }
                break;
            }
            double alpha = 1.0;
            for (std::size_t i = 0; i < idx.size(); ++i)
            {
                if (zp[i] <= 0.0)
                {
                    const double wi = w[idx[i]];
                    alpha           = std::min(alpha, wi / (wi - zp[i]));
                }
            }
            for (std::size_t i = 0; i < idx.size(); ++i)
            {
                w[idx[i]] += alpha * (zp[i] - w[idx[i]]);
                if (w[idx[i]] <= 1e-15 * std::max(1.0, std::abs(zp[i])))
                {
                    w[idx[i]]       = 0.0;
                    passive[idx[i]] = false;
                }
            }
        }
    }
    return w;
}

Eigen::VectorXd capped_nnls_gram(const Eigen::MatrixXd& G,
                                 const Eigen::VectorXd& c, double cap)
{
    if (!(cap > 0.0))
    {
        throw InvalidArgument("nnls: the sum cap must be positive");
    }
    Eigen::VectorXd w = nnls_gram(G, c);
    const double sum  = w.sum();
    if (sum <= cap)
    {
        return w;
    }

    // Feasible start on the face sum w = cap.
    const Eigen::Index n = c.size();
    w *= cap / sum;
    const double tol = tolerance_for(G, c);
    std::vector<bool> free(n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        free[i] = w[i] > 0.0;
    }

    for (int iter = 0; iter < 6 * n + 20; ++iter)
    {
        std::vector<int> idx;
        for (Eigen::Index j = 0; j < n; ++j)
        {
            if (free[j])
            {
                idx.push_back(static_cast<int>(j));
            }
        }
        const auto m = static_cast<Eigen::Index>(idx.size());
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
        kkt.topLeftCorner(m, m) = sub_matrix(G, idx);
        kkt.col(m).head(m).setOnes();
        kkt.row(m).head(m).setOnes();
        Eigen::VectorXd rhs(m + 1);
        rhs << sub_vector(c, idx), cap;
        const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
        const Eigen::VectorXd z   = sol.head(m);
        const double nu           = sol[m];

        if ((z.array() >= 0.0).all())
        {
            w.setZero();
            for (Eigen::Index i = 0; i < m; ++i)
            {
                w[idx[i]] = z[i];
            }
            // Multipliers of the inactive bounds: (Gw - c)_j + nu >= 0 at optimum.
            const Eigen::VectorXd mu = G * w - c;
            Eigen::Index worst       = -1;
            for (Eigen::Index j = 0; j < n; ++j)
            {
                if (!free[j] && mu[j] + nu < -tol &&
                    (worst < 0 || mu[j] < mu[worst]))
                {
                    worst = j;
                }
            }
            if (worst < 0)
            {
                return w;
            }
            free[worst] = true;
            continue;
        }

        double alpha = 1.0;
        for (Eigen::Index i = 0; i < m; ++i)
        {
            if (z[i] < 0.0)
            {
                const double wi = w[idx[i]];
                alpha           = std::min(alpha, wi / (wi - z[i]));
            }
        }
        int kept = 0;
        for (Eigen::Index i = 0; i < m; ++i)
        {
            w[idx[i]] += alpha * (z[i] - w[idx[i]]);
            if (w[idx[i]] <= 1e-15 * cap)
            {
                w[idx[i]]     = 0.0;
                free[idx[i]]  = false;
            }
            else
            {
                ++kept;
            }
        }
        if (kept == 0)
        {
            throw NumericalFailure("capped nnls lost every free variable");
        }
        w *= cap / w.sum();
    }
    return w;
}

Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b)
{
    if (A.rows() != b.size())
    {
        throw InvalidArgument("nnls: matrix rows and vector size differ");
    }
    return nnls_gram(A.transpose() * A, A.transpose() * b);
}

} // namespace dynspike
