#pragma once

/// @file mmd.hpp Linear empirical Maximum Mean Discrepancy between a source and a
/// target sample set, in O(n) mean-difference form, plus per-sample gradients.
///
/// All matrices store one sample per column: H_s is (k x n_s), H_t is (k x n_t).

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "dtn/error.hpp"

namespace dtn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Explicit (n_s + n_t)^2 coefficient matrix M with MMD = Tr(H M H^T).
/// Quadratic in memory; production code uses the mean-difference forms below.
struct MmdMatrix {
    Index n_s = 0;
    Index n_t = 0;
    MatrixXd entries;
};

inline MmdMatrix mmd_matrix(Index n_s, Index n_t) {
    if (n_s < 1 || n_t < 1)
        throw ArgumentError("mmd_matrix: sample counts must be positive, got (" + std::to_string(n_s) + ", " +
                            std::to_string(n_t) + ")");
    const double ss = 1.0 / (static_cast<double>(n_s) * static_cast<double>(n_s));
    const double tt = 1.0 / (static_cast<double>(n_t) * static_cast<double>(n_t));
    const double st = -1.0 / (static_cast<double>(n_s) * static_cast<double>(n_t));
    MmdMatrix m{n_s, n_t, MatrixXd(n_s + n_t, n_s + n_t)};
    m.entries.topLeftCorner(n_s, n_s).setConstant(ss);
    m.entries.bottomRightCorner(n_t, n_t).setConstant(tt);
    m.entries.topRightCorner(n_s, n_t).setConstant(st);
    m.entries.bottomLeftCorner(n_t, n_s).setConstant(st);
    return m;
}

/// Per-sample gradients, one column per sample of the matching input.
struct MmdGradient {
    MatrixXd source;
    MatrixXd target;
};

struct MmdTerms {
    double mmd_mar = 0.0;
    double mmd_con = 0.0;
    MmdGradient grad_h;
    MmdGradient grad_p;
};

/// Tolerance on column sums when validating posterior matrices.
inline constexpr double kPosteriorTolerance = 1e-9;

namespace detail {

inline void check_pair(const MatrixXd& s, const MatrixXd& t, const char* what) {
    if (s.rows() != t.rows())
        throw ShapeError(std::string(what) + ": source has " + std::to_string(s.rows()) +
                         " rows, target has " + std::to_string(t.rows()));
    if (s.cols() < 1 || t.cols() < 1) throw ArgumentError(std::string(what) + ": empty sample set");
}

inline void check_posteriors(const MatrixXd& p, const char* domain) {
    for (Index j = 0; j < p.cols(); ++j) {
        double sum = p.col(j).sum();
        if (!(std::abs(sum - 1.0) <= kPosteriorTolerance) || p.col(j).minCoeff() < -kPosteriorTolerance)
            throw ArgumentError(std::string("conditional_mmd: ") + domain + " column " + std::to_string(j) +
                                " is not a probability vector (sum " + std::to_string(sum) + ")");
    }
}

inline VectorXd mean_difference(const MatrixXd& s, const MatrixXd& t) {
    return s.rowwise().mean() - t.rowwise().mean();
}

inline MmdGradient gradient_from_difference(const VectorXd& diff, Index n_s, Index n_t) {
    MmdGradient g;
    g.source = ((2.0 / static_cast<double>(n_s)) * diff).replicate(1, n_s);
    g.target = ((-2.0 / static_cast<double>(n_t)) * diff).replicate(1, n_t);
    return g;
}

}  // namespace detail

/// ||mean(H_s) - mean(H_t)||^2
inline double marginal_mmd(const MatrixXd& h_s, const MatrixXd& h_t) {
    detail::check_pair(h_s, h_t, "marginal_mmd");
    return detail::mean_difference(h_s, h_t).squaredNorm();
}

/// sum over classes of (mean source posterior - mean target posterior)^2
inline double conditional_mmd(const MatrixXd& p_s, const MatrixXd& p_t) {
    detail::check_pair(p_s, p_t, "conditional_mmd");
    detail::check_posteriors(p_s, "source");
    detail::check_posteriors(p_t, "target");
    return detail::mean_difference(p_s, p_t).squaredNorm();
}

inline MmdGradient marginal_mmd_grad(const MatrixXd& h_s, const MatrixXd& h_t) {
    detail::check_pair(h_s, h_t, "marginal_mmd_grad");
    return detail::gradient_from_difference(detail::mean_difference(h_s, h_t), h_s.cols(), h_t.cols());
}

inline MmdGradient conditional_mmd_grad(const MatrixXd& p_s, const MatrixXd& p_t) {
    detail::check_pair(p_s, p_t, "conditional_mmd_grad");
    detail::check_posteriors(p_s, "source");
    detail::check_posteriors(p_t, "target");
    return detail::gradient_from_difference(detail::mean_difference(p_s, p_t), p_s.cols(), p_t.cols());
}

/// Both discrepancies and their gradients in one pass over the batch.
inline MmdTerms compute_mmd_terms(const MatrixXd& h_s, const MatrixXd& h_t, const MatrixXd& p_s,
                                  const MatrixXd& p_t) {
    detail::check_pair(h_s, h_t, "marginal_mmd");
    detail::check_pair(p_s, p_t, "conditional_mmd");
    MmdTerms terms;
    VectorXd dh = detail::mean_difference(h_s, h_t);
    VectorXd dp = detail::mean_difference(p_s, p_t);
    terms.mmd_mar = dh.squaredNorm();
    terms.mmd_con = dp.squaredNorm();
    terms.grad_h = detail::gradient_from_difference(dh, h_s.cols(), h_t.cols());
    terms.grad_p = detail::gradient_from_difference(dp, p_s.cols(), p_t.cols());
    return terms;
}

}  // namespace dtn
