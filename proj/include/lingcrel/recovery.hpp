#pragma once

// Step two: recover the causal graph and an unmixing matrix from aligned
// M_k = B_k H using subspace projections and rank drops.
//
// The main loop grows an ordered ancestral set S. Each round picks a node
// whose rows, projected away from the rows of S, span one dimension; its
// parents are the prefix positions of S where the projected span loses a
// dimension. Finally every h_i is read off the intersection of the row
// spans of i and its children.

#include "lingcrel/detail/linalg.hpp"
#include "lingcrel/error.hpp"
#include "lingcrel/graph.hpp"
#include "lingcrel/ica.hpp"
#include "lingcrel/io.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace lingcrel {

class RecoveryError : public Error {
public:
    using Error::Error;
};

enum class Mode { population, finite_sample };

/// c / sqrt(d) with c chosen so that d = 5 gives 0.15.
inline double default_tl(int d) { return 0.15 * std::sqrt(5.0) / std::sqrt(static_cast<double>(std::max(1, d))); }

struct RecoveryOptions {
    double tl = 0.15;
    Mode mode = Mode::finite_sample;
    /// Eigenvalues of the summed complement projectors below this count as
    /// zero when extracting h_i.
    double eig_tol = 1e-8;

    static RecoveryOptions population() { return {1e-8, Mode::population, 1e-8}; }
    static RecoveryOptions finite_sample(double tl) { return {tl, Mode::finite_sample, 1e-8}; }

    void validate() const {
        if (!(tl >= 0)) throw InvalidArgument("recovery: tl must be nonnegative");
        if (tl == 0 && mode != Mode::population) throw InvalidArgument("recovery: tl = 0 is only valid in population mode");
    }
};

// ---------------------------------------------------------------------------

namespace detail {

inline void check_shapes(std::span<const MatrixXd> M) {
    if (M.empty()) throw InvalidArgument("recovery: need at least one environment");
    for (const auto& m : M)
        if (m.rows() != M.front().rows() || m.cols() != M.front().cols()) throw InvalidArgument("recovery: M_k differ in shape");
}

}  // namespace detail

/// For each k, the component of row i of M_k orthogonal to the rows of M_k
/// indexed by S.
inline std::vector<VectorXd> orthogonal_projections(std::span<const Node> S, Node i, std::span<const MatrixXd> M) {
    detail::check_shapes(M);
    const Index d = M.front().rows();
    if (i < 0 || i >= d) throw InvalidArgument("orthogonal_projections: node out of range");
    for (Node s : S) {
        if (s == i) throw InvalidArgument("orthogonal_projections: node must not belong to S");
        if (s < 0 || s >= d) throw InvalidArgument("orthogonal_projections: S member out of range");
    }
    std::vector<VectorXd> out;
    out.reserve(M.size());
    for (const auto& m : M) {
        MatrixXd rows(static_cast<Index>(S.size()), m.cols());
        for (std::size_t r = 0; r < S.size(); ++r) rows.row(static_cast<Index>(r)) = m.row(S[r]);
        const MatrixXd q = detail::orthonormal_row_basis(rows);
        out.push_back(detail::project_out(q, m.row(i).transpose()));
    }
    return out;
}

struct SpanRank {
    int rank = 0;
    VectorXd singular_values;
};

/// Number of singular values >= tl of the stacked vectors.
inline SpanRank rank_of_span(std::span<const VectorXd> vectors, double tl) {
    if (vectors.empty()) throw InvalidArgument("rank_of_span: empty vector list");
    SpanRank out;
    out.singular_values = detail::singular_values(detail::stack_rows(vectors));
    out.rank = static_cast<int>((out.singular_values.array() >= tl).count());
    return out;
}

struct ParentSearch {
    NodeSet parents;
    std::vector<int> ranks;               ///< r_0 .. r_m
    std::vector<VectorXd> spectra;        ///< singular values per prefix
    std::vector<std::string> diagnostics; ///< rank inconsistencies
};

/// Parents of i among the ordered ancestral set S. r_0 counts singular
/// values >= tl; afterwards each prefix either keeps the previous rank r or
/// drops to r - 1 when its r-th singular value falls below tl, and a drop
/// marks the newly added prefix node as a parent. With exact M_k this equals
/// plain rank counting.
inline ParentSearch identify_parents(std::span<const Node> S, Node i, std::span<const MatrixXd> M, const RecoveryOptions& opts) {
    opts.validate();
    ParentSearch out;
    for (std::size_t m = 0; m <= S.size(); ++m) {
        const auto proj = orthogonal_projections(S.first(m), i, M);
        const SpanRank sr = rank_of_span(proj, opts.tl);
        int r = sr.rank;
        if (m == 0 && opts.mode == Mode::finite_sample) r = std::max(r, 1);
        if (m > 0) {
            const int prev = out.ranks.back();
            if (opts.mode == Mode::population) {
                if (r > prev) out.diagnostics.push_back("rank increased at prefix " + std::to_string(m) + " for node " + std::to_string(i + 1));
            } else {
                // Node i itself never leaves the closed parent set, so the
                // rank cannot fall below 1.
                const bool drop = prev >= 2 && sr.singular_values.size() >= prev && sr.singular_values(prev - 1) < opts.tl;
                if (sr.rank != (drop ? prev - 1 : prev))
                    out.diagnostics.push_back("node " + std::to_string(i + 1) + ", prefix " + std::to_string(m) + ": counted rank " +
                                              std::to_string(sr.rank) + " vs decided " + std::to_string(drop ? prev - 1 : prev));
                r = drop ? prev - 1 : prev;
            }
            if (r == prev - 1) out.parents.push_back(S[m - 1]);
        }
        out.ranks.push_back(r);
        out.spectra.push_back(sr.singular_values);
    }
    std::sort(out.parents.begin(), out.parents.end());
    return out;
}

struct Selection {
    Node node = -1;
    double score = 0.0;  ///< sigma_1 / sigma_2 of the winner (finite-sample mode)
};

/// Next node to append to S. Population mode: the lowest-index candidate
/// whose projected rows span exactly one dimension. Finite-sample mode: the
/// candidate maximizing sigma_1 / sigma_2 (lowest index on ties).
inline Selection select_next_node(std::span<const Node> S, std::span<const Node> candidates, std::span<const MatrixXd> M,
                                  const RecoveryOptions& opts) {
    opts.validate();
    if (candidates.empty()) throw InvalidArgument("select_next_node: no candidates");
    Selection best;
    for (Node c : candidates) {
        const auto q = orthogonal_projections(S, c, M);
        const SpanRank sr = rank_of_span(q, opts.tl);
        if (opts.mode == Mode::population) {
            if (sr.rank == 1) return {c, std::numeric_limits<double>::infinity()};
            continue;
        }
        const VectorXd& s = sr.singular_values;
        double ratio;
        if (s.size() < 2) ratio = std::numeric_limits<double>::infinity();
        else ratio = s(0) / std::max(s(1), std::numeric_limits<double>::epsilon());
        if (best.node < 0 || ratio > best.score) best = {c, ratio};
    }
    if (best.node < 0) throw RecoveryError("select_next_node: no candidate with a one-dimensional projected span");
    return best;
}

struct Intersection {
    VectorXd h;            ///< unit-norm
    VectorXd eigenvalues;  ///< of the summed complement projectors, ascending
    int null_dim = 0;      ///< eigenvalues below eig_tol
};

/// Unit vector minimizing sum_j ||Q_j h||^2, Q_j the projector onto the
/// orthogonal complement of span_bases[j], for j in {i} and the children of
/// i. `expected_dim`, when nonnegative, is the intersection dimension the
/// recovered graph predicts; population mode rejects any other.
inline Intersection intersect_subspaces(Node i, std::span<const MatrixXd> span_bases, std::span<const Node> children,
                                        const RecoveryOptions& opts, int expected_dim = -1) {
    if (i < 0 || static_cast<std::size_t>(i) >= span_bases.size()) throw InvalidArgument("intersect_subspaces: node out of range");
    const Index n = span_bases[i].rows();
    MatrixXd sum = MatrixXd::Zero(n, n);
    auto add = [&](Node j) {
        const MatrixXd& u = span_bases[j];
        sum += MatrixXd::Identity(n, n) - u * u.transpose();
    };
    add(i);
    for (Node c : children) add(c);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(sum);
    Intersection out;
    out.eigenvalues = es.eigenvalues();
    out.h = es.eigenvectors().col(0).normalized();
    out.null_dim = static_cast<int>((out.eigenvalues.array() < opts.eig_tol).count());
    if (opts.mode == Mode::population) {
        if (out.null_dim == 0)
            throw RecoveryError("intersect_subspaces: empty intersection for node " + std::to_string(i + 1) + " (smallest eigenvalue " +
                                io::format_double(out.eigenvalues(0)) + ")");
        if (expected_dim >= 0 && out.null_dim != expected_dim)
            throw RecoveryError("intersect_subspaces: node " + std::to_string(i + 1) + " intersection has dimension " +
                                std::to_string(out.null_dim) + ", graph predicts " + std::to_string(expected_dim));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct ParentDecision {
    Node node = 0;
    int prefix_len = 0;
    int rank = 0;
    VectorXd singular_values;
};

struct RecoveryDiagnostics {
    std::vector<ParentDecision> decisions;
    std::vector<Selection> selections;
    std::vector<VectorXd> intersection_eigenvalues;
    std::vector<std::string> warnings;
};

struct RecoveredModel {
    Dag g_hat;
    MatrixXd H_hat;  ///< d x n, unit-norm rows
    std::vector<Node> order;  ///< the order in which nodes entered S
    RecoveryDiagnostics diagnostics;
};

/// Called after each main-loop round with the current ordered set S.
using StepHook = std::function<void(std::span<const Node>)>;

inline RecoveredModel learn_causal_model(std::span<const MatrixXd> M, const RecoveryOptions& opts, const StepHook& hook = {}) {
    detail::check_shapes(M);
    opts.validate();
    const int d = static_cast<int>(M.front().rows());
    RecoveredModel out;
    std::vector<Edge> edges;
    std::vector<char> in_s(static_cast<std::size_t>(d), 0);
    std::vector<NodeSet> parents(static_cast<std::size_t>(d));

    while (static_cast<int>(out.order.size()) < d) {
        std::vector<Node> candidates;
        for (Node v = 0; v < d; ++v)
            if (!in_s[v]) candidates.push_back(v);
        const Selection sel = select_next_node(out.order, candidates, M, opts);
        out.diagnostics.selections.push_back(sel);
        ParentSearch ps = identify_parents(out.order, sel.node, M, opts);
        for (std::size_t m = 0; m < ps.ranks.size(); ++m)
            out.diagnostics.decisions.push_back({sel.node, static_cast<int>(m), ps.ranks[m], ps.spectra[m]});
        for (auto& w : ps.diagnostics) out.diagnostics.warnings.push_back(std::move(w));
        for (Node p : ps.parents) edges.emplace_back(p, sel.node);
        parents[sel.node] = std::move(ps.parents);
        out.order.push_back(sel.node);
        in_s[sel.node] = 1;
        if (hook) hook(out.order);
    }
    out.g_hat = Dag(d, std::move(edges));

    // E_j: leading (|P_j| + 1)-dimensional row space of the stacked (M_k)_j.
    std::vector<MatrixXd> bases;
    for (Node j = 0; j < d; ++j) {
        MatrixXd rows(static_cast<Index>(M.size()), M.front().cols());
        for (std::size_t k = 0; k < M.size(); ++k) rows.row(static_cast<Index>(k)) = M[k].row(j);
        bases.push_back(detail::leading_row_space(rows, static_cast<Index>(parents[j].size()) + 1));
    }
    out.H_hat.resize(d, M.front().cols());
    for (Node i = 0; i < d; ++i) {
        const int expected = static_cast<int>(out.g_hat.dom_closure(i).size());
        const Intersection x = intersect_subspaces(i, bases, out.g_hat.children(i), opts, expected);
        if (opts.mode == Mode::finite_sample && x.eigenvalues.size() > 1 && x.eigenvalues(1) - x.eigenvalues(0) < opts.eig_tol)
            out.diagnostics.warnings.push_back("node " + std::to_string(i + 1) + ": smallest eigenvalue not separated");
        out.diagnostics.intersection_eigenvalues.push_back(x.eigenvalues);
        out.H_hat.row(i) = x.h.transpose();
    }
    return out;
}

inline RecoveredModel learn_causal_model(const MixingEstimate& est, const RecoveryOptions& opts, const StepHook& hook = {}) {
    return learn_causal_model(std::span<const MatrixXd>(est.M), opts, hook);
}

/// Relabels a recovered model: node r becomes labels[r].
inline RecoveredModel relabel(const RecoveredModel& rm, std::span<const Node> labels) {
    const int d = rm.g_hat.d();
    if (static_cast<int>(labels.size()) != d) throw InvalidArgument("relabel: label count mismatch");
    RecoveredModel out = rm;
    std::vector<Edge> edges;
    for (const auto& [a, b] : rm.g_hat.edges()) edges.emplace_back(labels[a], labels[b]);
    out.g_hat = Dag(d, std::move(edges));
    for (Node r = 0; r < d; ++r) out.H_hat.row(labels[r]) = rm.H_hat.row(r);
    for (auto& v : out.order) v = labels[v];
    for (auto& dec : out.diagnostics.decisions) dec.node = labels[dec.node];
    for (auto& s : out.diagnostics.selections) s.node = labels[s.node];
    for (Node r = 0; r < d && static_cast<std::size_t>(r) < rm.diagnostics.intersection_eigenvalues.size(); ++r)
        out.diagnostics.intersection_eigenvalues[labels[r]] = rm.diagnostics.intersection_eigenvalues[r];
    return out;
}

inline nlohmann::json to_json(const RecoveredModel& rm) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [from, to] : rm.g_hat.edges()) edges.push_back({from + 1, to + 1});
    nlohmann::json decisions = nlohmann::json::array();
    for (const auto& dec : rm.diagnostics.decisions)
        decisions.push_back({{"node", dec.node + 1},
                             {"prefix_len", dec.prefix_len},
                             {"rank", dec.rank},
                             {"singular_values", io::vector_to_json(dec.singular_values)}});
    nlohmann::json order = nlohmann::json::array();
    for (Node v : rm.order) order.push_back(v + 1);
    return {{"d", rm.g_hat.d()},
            {"edges", std::move(edges)},
            {"H_hat", io::matrix_to_json(rm.H_hat)},
            {"order", std::move(order)},
            {"diagnostics", {{"decisions", std::move(decisions)}, {"warnings", rm.diagnostics.warnings}}}};
}

inline RecoveredModel recovered_from_json(const nlohmann::json& j) {
    RecoveredModel rm;
    rm.H_hat = io::matrix_from_json(j.at("H_hat"));
    const int d = j.contains("d") ? j.at("d").get<int>() : static_cast<int>(rm.H_hat.rows());
    rm.g_hat = Dag(d, edges_from_json(j.at("edges")));
    if (j.contains("order"))
        for (const auto& v : j.at("order")) rm.order.push_back(v.get<int>() - 1);
    if (j.contains("diagnostics")) {
        const auto& diag = j.at("diagnostics");
        for (const auto& dec : diag.value("decisions", nlohmann::json::array()))
            rm.diagnostics.decisions.push_back({dec.at("node").get<int>() - 1, dec.at("prefix_len").get<int>(), dec.value("rank", 0),
                                                io::vector_from_json(dec.at("singular_values"))});
        for (const auto& w : diag.value("warnings", nlohmann::json::array())) rm.diagnostics.warnings.push_back(w.get<std::string>());
    }
    return rm;
}

}  // namespace lingcrel
