#pragma once

#include <Eigen/Core>

namespace dynspike {

///
/// Minimizes 1/2 w'Gw - c'w over w >= 0 (Lawson-Hanson active set, Gram form).
/// G must be symmetric positive semidefinite. With G = A'A and c = A'b this is
/// nonnegative least squares for ||Aw - b||.
///
Eigen::VectorXd nnls_gram(const Eigen::MatrixXd& G, const Eigen::VectorXd& c);

///
/// Same objective over {w >= 0, sum w <= cap}. When the unconstrained NNLS
/// optimum overshoots the cap, the problem is re-solved exactly on the face
/// sum w = cap by a primal active-set method.
///
Eigen::VectorXd capped_nnls_gram(const Eigen::MatrixXd& G,
                                 const Eigen::VectorXd& c, double cap);

/// Dense convenience wrapper: nonnegative least squares for ||Aw - b||.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

} // namespace dynspike
