#pragma once

// Scoring a recovered model against the ground truth.
//
// EDA error: residual of each estimated row after projecting onto the span
// of the true rows it may legitimately mix (its closed dom set). True error:
// residual after projecting onto the matching true row alone.

#include "lingcrel/detail/assignment.hpp"
#include "lingcrel/detail/linalg.hpp"
#include "lingcrel/error.hpp"
#include "lingcrel/graph.hpp"
#include "lingcrel/ica.hpp"
#include "lingcrel/io.hpp"
#include "lingcrel/recovery.hpp"
#include "lingcrel/scm.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace lingcrel {

struct ErrorReport {
    bool graph_recovered = false;
    std::vector<int> perm;  ///< truth node i is matched to estimate row perm[i]
    VectorXd eda_errors;
    VectorXd true_errors;
    double signal_min = std::numeric_limits<double>::quiet_NaN();
    double noise_max = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline MatrixXd unit_rows(const MatrixXd& m, const char* what) {
    MatrixXd out = m;
    for (Index r = 0; r < m.rows(); ++r) {
        const double norm = m.row(r).norm();
        if (!(norm > 0)) throw InvalidArgument(std::string(what) + ": zero row " + std::to_string(r + 1));
        out.row(r) /= norm;
    }
    return out;
}

}  // namespace detail

/// cost(i, r) = residual of the unit estimate row r outside
/// span{h_j : j in closed dom set of i}.
inline MatrixXd eda_cost_matrix(const Dag& g, const MatrixXd& H, const MatrixXd& H_hat) {
    if (H.rows() != g.d() || H_hat.rows() != H.rows() || H_hat.cols() != H.cols())
        throw InvalidArgument("eda_error: dimension mismatch");
    const MatrixXd est = detail::unit_rows(H_hat, "eda_error");
    const Index d = H.rows();
    MatrixXd cost(d, d);
    for (Node i = 0; i < d; ++i) {
        const NodeSet dom = g.dom_closure(i);
        MatrixXd rows(static_cast<Index>(dom.size()), H.cols());
        for (std::size_t c = 0; c < dom.size(); ++c) rows.row(static_cast<Index>(c)) = H.row(dom[c]);
        const MatrixXd q = detail::orthonormal_row_basis(rows);
        for (Index r = 0; r < d; ++r) cost(i, r) = detail::project_out(q, est.row(r).transpose()).norm();
    }
    return cost;
}

struct EdaResult {
    std::vector<int> perm;
    VectorXd errors;
};

/// Row matching minimizing the largest EDA error (bottleneck assignment);
/// row signs drop out since only norms enter.
inline EdaResult eda_error(const Dag& g, const MatrixXd& H, const MatrixXd& H_hat) {
    const MatrixXd cost = eda_cost_matrix(g, H, H_hat);
    EdaResult out;
    out.perm = detail::bottleneck_assignment(cost);
    out.errors.resize(cost.rows());
    for (Index i = 0; i < cost.rows(); ++i) out.errors(i) = cost(i, out.perm[static_cast<std::size_t>(i)]);
    return out;
}

inline EdaResult eda_error(const LinearScm& truth, const RecoveredModel& est) { return eda_error(truth.g, truth.H, est.H_hat); }

/// ||(I - h_i h_i^T) hhat_{perm[i]}|| on unit-normalized rows.
inline VectorXd true_error(const MatrixXd& H, const MatrixXd& H_hat, std::span<const int> perm) {
    if (H_hat.rows() != H.rows() || H_hat.cols() != H.cols() || static_cast<Index>(perm.size()) != H.rows())
        throw InvalidArgument("true_error: dimension mismatch");
    const MatrixXd h = detail::unit_rows(H, "true_error");
    const MatrixXd e = detail::unit_rows(H_hat, "true_error");
    VectorXd out(H.rows());
    for (Index i = 0; i < H.rows(); ++i) {
        const RowVectorXd v = e.row(perm[static_cast<std::size_t>(i)]);
        out(i) = (v - v.dot(h.row(i)) * h.row(i)).norm();
    }
    return out;
}

inline bool graph_match(const Dag& truth, const Dag& est) {
    if (truth.d() != est.d()) throw InvalidArgument("graph_match: node counts differ");
    return truth == est;
}

struct SignalNoise {
    double signal_min = std::numeric_limits<double>::infinity();
    double noise_max = 0.0;
};

/// Replays the parent search of every node along the true topological order.
/// With r = |closed parents of i outside the prefix|, the signal is the r-th
/// singular value on exact M_k and the noise the (r+1)-th on the estimate.
/// `est_M` must be in the truth's labeling.
inline SignalNoise signal_noise_diagnostics(const LinearScm& truth, std::span<const MatrixXd> est_M) {
    const std::vector<MatrixXd> exact = population_mixing(truth);
    if (est_M.size() != exact.size()) throw InvalidArgument("signal_noise_diagnostics: environment count mismatch");
    const auto& topo = truth.g.topological_order();
    SignalNoise out;
    for (std::size_t pos = 0; pos < topo.size(); ++pos) {
        const Node i = topo[pos];
        const std::span<const Node> S(topo.data(), pos);
        NodeSet remaining = truth.g.closed_parents(i);
        for (std::size_t m = 0; m <= S.size(); ++m) {
            if (m > 0) std::erase(remaining, S[m - 1]);
            const auto prefix = S.first(m);
            const int r = static_cast<int>(remaining.size());
            const VectorXd s_exact = detail::singular_values(detail::stack_rows(orthogonal_projections(prefix, i, exact)));
            const VectorXd s_est = detail::singular_values(detail::stack_rows(orthogonal_projections(prefix, i, est_M)));
            if (r >= 1 && s_exact.size() >= r) out.signal_min = std::min(out.signal_min, s_exact(r - 1));
            if (s_est.size() > r) out.noise_max = std::max(out.noise_max, s_est(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Labeling. Aligned estimates list components by ascending psi; position r
// corresponds to truth node canonical_order(truth)[r].

inline std::vector<MatrixXd> to_truth_labels(std::span<const MatrixXd> M, std::span<const Node> labels) {
    std::vector<MatrixXd> out;
    for (const auto& m : M) {
        MatrixXd t(m.rows(), m.cols());
        for (Index r = 0; r < m.rows(); ++r) t.row(labels[static_cast<std::size_t>(r)]) = m.row(r);
        out.push_back(std::move(t));
    }
    return out;
}

/// Rows of each exact M_k reordered into the canonical (ascending psi)
/// labeling, i.e. what a perfect ICA plus alignment would return.
inline std::vector<MatrixXd> canonical_population_mixing(const LinearScm& truth) {
    const auto order = canonical_order(truth);
    std::vector<MatrixXd> out;
    for (const auto& m : population_mixing(truth)) {
        MatrixXd t(m.rows(), m.cols());
        for (Index r = 0; r < m.rows(); ++r) t.row(r) = m.row(order[static_cast<std::size_t>(r)]);
        out.push_back(std::move(t));
    }
    return out;
}

/// Full report. `rm` and `est_M` are in canonical labeling; they are mapped
/// to the truth's labels before scoring. Pass an empty `est_M` to skip the
/// signal/noise diagnostics.
inline ErrorReport evaluate(const LinearScm& truth, const RecoveredModel& rm, std::span<const MatrixXd> est_M = {}) {
    const auto labels = canonical_order(truth);
    const RecoveredModel mapped = relabel(rm, labels);
    ErrorReport rep;
    rep.graph_recovered = graph_match(truth.g, mapped.g_hat);
    const EdaResult eda = eda_error(truth, mapped);
    rep.perm = eda.perm;
    rep.eda_errors = eda.errors;
    rep.true_errors = true_error(truth.H, mapped.H_hat, rep.perm);
    if (!est_M.empty()) {
        const auto sn = signal_noise_diagnostics(truth, to_truth_labels(est_M, labels));
        rep.signal_min = sn.signal_min;
        rep.noise_max = sn.noise_max;
    }
    return rep;
}

inline nlohmann::json to_json(const ErrorReport& rep) {
    nlohmann::json perm = nlohmann::json::array();
    for (int p : rep.perm) perm.push_back(p + 1);
    auto num = [](double v) -> nlohmann::json { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"recovered", rep.graph_recovered},
            {"perm", std::move(perm)},
            {"eda", io::vector_to_json(rep.eda_errors)},
            {"true", io::vector_to_json(rep.true_errors)},
            {"signal_min", num(rep.signal_min)},
            {"noise_max", num(rep.noise_max)}};
}

}  // namespace lingcrel
