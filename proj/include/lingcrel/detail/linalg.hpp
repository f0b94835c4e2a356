#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <span>
#include <vector>

namespace lingcrel {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

namespace detail {

/// Singular values in non-increasing order.
inline VectorXd singular_values(const MatrixXd& m) {
    if (m.size() == 0) return VectorXd();
    return Eigen::JacobiSVD<MatrixXd>(m).singularValues();
}

inline double min_singular_value(const MatrixXd& m) {
    const VectorXd s = singular_values(m);
    return s.size() == 0 ? 0.0 : s(s.size() - 1);
}

/// Orthonormal basis (as columns) of the span of the rows of `rows`.
/// Column-pivoted Householder QR on the transpose; directions whose pivot
/// falls below `rel_tol` relative to the largest are discarded.
inline MatrixXd orthonormal_row_basis(const MatrixXd& rows, double rel_tol = 1e-12) {
    const Index n = rows.cols();
    if (rows.rows() == 0) return MatrixXd(n, 0);
    Eigen::ColPivHouseholderQR<MatrixXd> qr(rows.transpose());
    qr.setThreshold(rel_tol);
    const Index r = qr.rank();
    MatrixXd q = qr.householderQ() * MatrixXd::Identity(n, r);
    return q;
}

/// v - Q (Q^T v) for a matrix with orthonormal columns Q.
inline VectorXd project_out(const MatrixXd& q, const VectorXd& v) {
    if (q.cols() == 0) return v;
    return v - q * (q.transpose() * v);
}

/// Top-r right singular vectors of `rows` as columns of an n x r matrix.
inline MatrixXd leading_row_space(const MatrixXd& rows, Index r) {
    const Index n = rows.cols();
    if (r <= 0 || rows.rows() == 0) return MatrixXd(n, 0);
    Eigen::JacobiSVD<MatrixXd> svd(rows, Eigen::ComputeFullV);
    r = std::min<Index>(r, std::min(rows.rows(), n));
    return svd.matrixV().leftCols(r);
}

/// Moore-Penrose pseudoinverse via SVD.
inline MatrixXd pseudo_inverse(const MatrixXd& m, double rel_tol = 1e-12) {
    Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& s = svd.singularValues();
    const double cut = s.size() > 0 ? rel_tol * s(0) : 0.0;
    VectorXd inv = s;
    for (Index i = 0; i < s.size(); ++i) inv(i) = s(i) > cut ? 1.0 / s(i) : 0.0;
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline MatrixXd stack_rows(std::span<const VectorXd> vs) {
    if (vs.empty()) return MatrixXd();
    MatrixXd m(static_cast<Index>(vs.size()), vs.front().size());
    for (std::size_t k = 0; k < vs.size(); ++k) m.row(static_cast<Index>(k)) = vs[k].transpose();
    return m;
}

/// Orthogonal projector onto the span of the rows of `rows`.
inline MatrixXd row_span_projector(const MatrixXd& rows) {
    const MatrixXd q = orthonormal_row_basis(rows);
    return q * q.transpose();
}

}  // namespace detail
}  // namespace lingcrel
